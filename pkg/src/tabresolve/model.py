"""Tabular learned model of an abstracted game.

Trajectories are sampled on the compiled real tree; the fitted tables are
keyed only by public states and abstract indices, so the model knows nothing
about the real game beyond what the batch showed it.

Dynamics are two-stage: the next public state depends on the public state
and the joint action only, and the next abstract pair is then picked by
count argmax given the current pair.
"""
from __future__ import annotations

import gzip
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .abstraction import AbstractionMap
from .games import GameSpec, make_game
from .realgame import RealGame, real_game
from .solver import node_behavior, rows_from_policy
from .view import TERMINAL

MODEL_VERSION = 1


class ModelConflict(ValueError):
    """One ``(public state, joint action)`` led to two public successors."""


class ModelHole(KeyError):
    """A lookup hit a key the model never observed."""

    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"model hole at {self.key!r}"


@dataclass
class SampledBatch:
    """Sampled real-game paths stored as node ids of the compiled tree."""

    spec: GameSpec
    paths: np.ndarray          # (count, max_rounds + 1), -1 after the terminal node
    actions: np.ndarray        # (count, max_rounds, 2), -1 after the terminal node

    def __len__(self):
        return len(self.paths)

    def steps(self):
        """Flat arrays ``(parent, child, a1, a2)`` over every step of every path."""
        par = self.paths[:, :-1].ravel()
        ch = self.paths[:, 1:].ravel()
        act = self.actions.reshape(-1, 2)
        ok = ch >= 0
        return par[ok], ch[ok], act[ok, 0], act[ok, 1]

    def trajectory(self, i: int) -> list[tuple]:
        """Path ``i`` as ``(infoset keys, public key, joint action, reward, terminal)`` steps."""
        rg = real_game(self.spec)
        game = make_game(self.spec)
        out = []
        path = self.paths[i]
        for t in range(len(path) - 1):
            node, child = path[t], path[t + 1]
            if child < 0:
                break
            state = rg.states[node]
            keys = (game.infoset_key(state, 0), game.infoset_key(state, 1))
            joint = tuple(int(a) for a in self.actions[i, t])
            reward = float(rg.view.e_reward[rg.view.in_edge[child]])
            out.append((keys, game.public_state_key(state), joint, reward,
                        bool(rg.states[child].terminal)))
        return out


def mixed_node_behavior(rg: RealGame, profile, eps: float) -> list[np.ndarray]:
    """Per-node action distributions ``(1-eps) * policy + eps * uniform``."""
    view = rg.view
    out = []
    for p in (0, 1):
        legal = view.node_legal[p].astype(float)
        uni = legal / np.maximum(legal.sum(axis=1, keepdims=True), 1)
        pol = profile[p] if profile is not None else None
        behav = node_behavior(view, p, rows_from_policy(view, p, pol)) if pol else uni
        out.append((1 - eps) * behav + eps * uni)
    return out


def sample_trajectories(spec: GameSpec, profile, eps: float = 0.5, count: int = 1000,
                        seed=0) -> SampledBatch:
    """Sample ``count`` episodes; each decision is uniform with probability ``eps``."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    rg = real_game(spec)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    behav = mixed_node_behavior(rg, profile, eps)
    cum = [np.cumsum(b, axis=1) for b in behav]
    R = spec.max_rounds
    paths = np.full((count, R + 1), -1, dtype=np.int64)
    actions = np.full((count, R, 2), -1, dtype=np.int64)
    cur = np.full(count, rg.view.roots[0], dtype=np.int64)
    alive = np.ones(count, dtype=bool)
    paths[:, 0] = cur
    for t in range(R):
        idx = np.flatnonzero(alive)
        if len(idx) == 0:
            break
        nodes = cur[idx]
        u = rng.random((len(idx), 2))
        acts = []
        for p in (0, 1):
            c = cum[p][nodes]
            c = c / c[:, -1:]
            acts.append((u[:, p, None] >= c).sum(axis=1))
        child = rg.child_table[nodes, acts[0], acts[1]]
        if np.any(child < 0):
            raise RuntimeError("sampled an illegal action")
        actions[idx, t, 0] = acts[0]
        actions[idx, t, 1] = acts[1]
        paths[idx, t + 1] = child
        cur[idx] = child
        alive[idx] = rg.view.kind[child] != TERMINAL
    return SampledBatch(spec, paths, actions)


def exhaustive_batch(spec: GameSpec) -> SampledBatch:
    """One path per terminal node of the real game: full coverage, no sampling."""
    rg = real_game(spec)
    view = rg.view
    R = spec.max_rounds
    leaves = np.flatnonzero(view.kind == TERMINAL)
    paths = np.full((len(leaves), R + 1), -1, dtype=np.int64)
    actions = np.full((len(leaves), R, 2), -1, dtype=np.int64)
    for i, leaf in enumerate(leaves):
        chain = [leaf]
        while view.in_edge[chain[-1]] >= 0:
            chain.append(view.e_parent[view.in_edge[chain[-1]]])
        chain.reverse()
        paths[i, :len(chain)] = chain
        for t in range(len(chain) - 1):
            e = view.in_edge[chain[t + 1]]
            actions[i, t] = view.e_act[:, e]
    return SampledBatch(spec, paths, actions)


def node_abstraction(rg: RealGame, amap: AbstractionMap) -> np.ndarray:
    """``(2, n)`` abstract index of every node's infoset, -1 where none."""
    view = rg.view
    game = make_game(rg.spec)
    out = np.full((2, view.num_nodes), -1, dtype=np.int64)
    for p in (0, 1):
        per = np.empty(len(view.infoset_keys[p]), dtype=np.int64)
        for i, key in enumerate(view.infoset_keys[p]):
            a = amap.lookup(game.public_key_of(key), key)
            if a is None:
                raise KeyError(f"abstraction map misses infoset {key.hex()}")
            per[i] = a
        mask = view.iset[p] >= 0
        out[p, mask] = per[view.iset[p][mask]]
    return out


@dataclass
class LearnedModel:
    """Count tables of the abstract game.

    ``public[(pub, a1, a2)]`` is ``[pub', count]``;
    ``transitions[(pub, b1, b2, a1, a2)]`` counts successor pairs ``(b1', b2')``
    (-1 at terminal successors); ``rewards`` holds ``[sum, count]`` of
    player-1 rewards under the same key; ``terminal[(pub, a1, a2)]`` holds
    ``[terminal count, count]``; ``masks[(pub, player, b)]`` counts how often
    each action was legal.
    """

    spec: GameSpec
    L: int
    public: dict = field(default_factory=dict)
    transitions: dict = field(default_factory=dict)
    rewards: dict = field(default_factory=dict)
    terminal: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    root: bytes = b""

    # -- queries ---------------------------------------------------------------

    def public_successor(self, key) -> bytes:
        """Next public state; ``key`` is ``(pub, a1, a2)`` or a full step key."""
        entry = self.public.get((key[0], key[-2], key[-1]))
        if entry is None:
            raise ModelHole(key)
        return entry[0]

    def pair_successor(self, key) -> tuple[int, int]:
        counts = self.transitions.get(key)
        if not counts:
            raise ModelHole(key)
        best = max(counts.values())
        return min(s for s, c in counts.items() if c == best)

    def successor(self, key) -> tuple:
        """``(pub', b1', b2')`` for a step key ``(pub, b1, b2, a1, a2)``."""
        return (self.public_successor(key), *self.pair_successor(key))

    def reward(self, key) -> float:
        entry = self.rewards.get(key)
        if entry is None:
            raise ModelHole(key)
        return entry[0] / entry[1]

    def terminal_frequency(self, key) -> float:
        entry = self.terminal.get((key[0], key[-2], key[-1]))
        if entry is None:
            raise ModelHole(key)
        return entry[0] / entry[1]

    def mask(self, pub: bytes, player: int, index: int) -> np.ndarray:
        counts = self.masks.get((pub, player, index))
        if counts is None:
            raise ModelHole((pub, player, index))
        return counts > 0

    def legal(self, pub: bytes, player: int, index: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.flatnonzero(self.mask(pub, player, index)))

    def support(self, pub: bytes) -> list[tuple[int, int]]:
        """Abstract pairs observed acting at ``pub``."""
        return self._index().get(pub, [])

    def public_states(self) -> set:
        return set(self._index())

    def _index(self) -> dict:
        # rebuilt whenever the transition table grows
        cache = self.__dict__.get("_support")
        if cache is None or cache[0] != len(self.transitions):
            groups: dict = {}
            for k in self.transitions:
                groups.setdefault(k[0], set()).add((k[1], k[2]))
            cache = (len(self.transitions), {p: sorted(v) for p, v in groups.items()})
            self.__dict__["_support"] = cache
        return cache[1]

    # -- persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "spec": str(self.spec),
            "L": self.L,
            "root": self.root.hex(),
            "public": [[_key_out(k), v[0].hex(), v[1]] for k, v in sorted(self.public.items())],
            "transitions": [
                [_key_out(k), [[s[0], s[1], c] for s, c in sorted(v.items())]]
                for k, v in sorted(self.transitions.items())
            ],
            "rewards": [[_key_out(k), v[0], v[1]] for k, v in sorted(self.rewards.items())],
            "terminal": [[_key_out(k), v[0], v[1]] for k, v in sorted(self.terminal.items())],
            "masks": [[k[0].hex(), k[1], k[2], v.tolist()] for k, v in sorted(self.masks.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LearnedModel":
        if data.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {data.get('version')}")
        m = cls(GameSpec.parse(data["spec"]), int(data["L"]), root=bytes.fromhex(data["root"]))
        for k, nxt, c in data["public"]:
            m.public[_key_in(k)] = [bytes.fromhex(nxt), c]
        for k, succ in data["transitions"]:
            m.transitions[_key_in(k)] = Counter({(b1, b2): c for b1, b2, c in succ})
        for k, s, c in data["rewards"]:
            m.rewards[_key_in(k)] = [s, c]
        for k, t, c in data["terminal"]:
            m.terminal[_key_in(k)] = [t, c]
        for pub, p, b, counts in data["masks"]:
            m.masks[(bytes.fromhex(pub), p, b)] = np.array(counts, dtype=np.int64)
        return m

    def to_bytes(self) -> bytes:
        raw = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return gzip.compress(raw, mtime=0)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LearnedModel":
        return cls.from_dict(json.loads(gzip.decompress(blob)))

    def merge(self, other: "LearnedModel") -> "LearnedModel":
        """Count-wise sum of two fits of the same game and abstraction size."""
        if self.spec != other.spec or self.L != other.L:
            raise ValueError("cannot merge models of different games or abstraction sizes")
        out = LearnedModel(self.spec, self.L, root=self.root)
        for src in (self, other):
            for k, v in src.public.items():
                cur = out.public.get(k)
                if cur is not None and cur[0] != v[0]:
                    raise ModelConflict(f"public successor conflict at {k!r}")
                out.public[k] = [v[0], v[1] + (cur[1] if cur else 0)]
            for k, v in src.transitions.items():
                out.transitions.setdefault(k, Counter()).update(v)
            for table, dst in ((src.rewards, out.rewards), (src.terminal, out.terminal)):
                for k, v in table.items():
                    cur = dst.setdefault(k, [0.0 if table is src.rewards else 0, 0])
                    cur[0] += v[0]
                    cur[1] += v[1]
            for k, v in src.masks.items():
                out.masks[k] = out.masks.get(k, 0) + v
        return out


def _key_out(k):
    return [k[0].hex(), *[int(x) for x in k[1:]]]


def _key_in(k):
    return (bytes.fromhex(k[0]), *[int(x) for x in k[1:]])


def fit_model(batch: SampledBatch, amap: AbstractionMap) -> LearnedModel:
    """Fold a batch into count tables under ``amap``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    spec = batch.spec
    rg = real_game(spec)
    view = rg.view
    A = spec.num_actions
    ab = node_abstraction(rg, amap)
    par, ch, a1, a2 = batch.steps()
    pub = rg.node_pub
    model = LearnedModel(spec, amap.L, root=rg.pub_keys[pub[view.roots[0]]])

    # group identical steps: (parent pub, b1, b2, a1, a2, child pub, b1', b2')
    rows = np.stack([pub[par], ab[0, par], ab[1, par], a1, a2,
                     pub[ch], ab[0, ch], ab[1, ch]], axis=1)
    reward = view.e_reward[view.in_edge[ch]]
    term = (view.kind[ch] == TERMINAL).astype(np.int64)
    uniq, inv, counts = np.unique(rows, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    rsum = np.bincount(inv, reward, minlength=len(uniq))
    tsum = np.bincount(inv, term, minlength=len(uniq))
    keys = rg.pub_keys
    for row, c, rs, ts in zip(uniq.tolist(), counts.tolist(), rsum.tolist(), tsum.tolist()):
        pub_key, nxt = keys[row[0]], keys[row[5]]
        k = (pub_key, row[1], row[2], row[3], row[4])
        pk = (pub_key, row[3], row[4])
        entry = model.public.setdefault(pk, [nxt, 0])
        if entry[0] != nxt:
            raise ModelConflict(f"public state {pub_key.hex()} with joint action {pk[1:]} "
                                "has two successors")
        entry[1] += c
        model.transitions.setdefault(k, Counter())[(row[6], row[7])] += c
        r = model.rewards.setdefault(k, [0.0, 0])
        r[0] += rs
        r[1] += c
        t = model.terminal.setdefault(pk, [0, 0])
        t[0] += ts
        t[1] += c

    # legal masks: one observation per decision visit
    decision_visits = batch.paths[:, :-1].ravel()
    decision_visits = decision_visits[decision_visits >= 0]
    decision_visits = decision_visits[view.kind[decision_visits] != TERMINAL]
    for p in (0, 1):
        grp = np.stack([pub[decision_visits], ab[p, decision_visits]], axis=1)
        uniq, inv = np.unique(grp, axis=0, return_inverse=True)
        legal = np.zeros((len(uniq), A), dtype=np.int64)
        np.add.at(legal, inv.ravel(), view.node_legal[p][decision_visits].astype(np.int64))
        for (pid, b), counts in zip(uniq.tolist(), legal):
            model.masks[(keys[pid], p, b)] = counts
    return model


def unroll(model: LearnedModel, start: bytes, pair, actions) -> list[tuple]:
    """Roll the model forward; returns ``(pub, pair, reward, terminal)`` per step.

    The first entry is the start state (reward 0).  Stops at the first
    terminal; raises :class:`ModelHole` on an unseen key.
    """
    pub, b1, b2 = start, int(pair[0]), int(pair[1])
    out = [(pub, (b1, b2), 0.0, False)]
    for a in actions:
        key = (pub, b1, b2, int(a[0]), int(a[1]))
        nxt = model.successor(key)
        done = model.terminal_frequency(key) >= 0.5
        out.append((nxt[0], (nxt[1], nxt[2]), model.reward(key), done))
        if done:
            break
        pub, b1, b2 = nxt
    return out


@dataclass
class FidelityReport:
    transition_accuracy: float
    reward_mae: float
    terminal_accuracy: float
    mask_exactness: float
    holes: int
    edges: int

    @property
    def coverage(self) -> float:
        return 1.0 - self.holes / self.edges if self.edges else 1.0

    def as_dict(self) -> dict:
        return {
            "transition_accuracy": self.transition_accuracy,
            "reward_mae": self.reward_mae,
            "terminal_accuracy": self.terminal_accuracy,
            "mask_exactness": self.mask_exactness,
            "holes": self.holes,
            "coverage": self.coverage,
        }


def model_fidelity_report(model: LearnedModel, spec: GameSpec, amap: AbstractionMap) -> FidelityReport:
    """Compare the model with the real game on every real edge.

    Transition accuracy counts holes as misses; reward MAE and terminal
    accuracy are over covered edges; mask exactness is the share of real
    infosets whose abstract mask equals the true legal set.
    """
    rg = real_game(spec)
    view = rg.view
    ab = node_abstraction(rg, amap)
    keys = rg.pub_keys
    pub = rg.node_pub
    hits = holes = term_ok = 0
    abs_err = 0.0
    for e in range(view.num_edges):
        par, ch = view.e_parent[e], view.e_child[e]
        key = (keys[pub[par]], int(ab[0, par]), int(ab[1, par]),
               int(view.e_act[0, e]), int(view.e_act[1, e]))
        if key not in model.transitions:
            holes += 1
            continue
        truth = (keys[pub[ch]], int(ab[0, ch]), int(ab[1, ch]))
        hits += model.successor(key) == truth
        abs_err += abs(model.reward(key) - view.e_reward[e])
        is_term = view.kind[ch] == TERMINAL
        term_ok += (model.terminal_frequency(key) >= 0.5) == is_term
    covered = view.num_edges - holes

    exact = total = 0
    for p in (0, 1):
        seen = set()
        for node in np.flatnonzero(view.iset[p] >= 0):
            i = view.iset[p][node]
            if i in seen:
                continue
            seen.add(i)
            total += 1
            mk = (keys[pub[node]], p, int(ab[p, node]))
            if mk in model.masks:
                exact += np.array_equal(model.masks[mk] > 0, view.infoset_legal[p][i])
    return FidelityReport(
        transition_accuracy=hits / view.num_edges,
        reward_mae=float(abs_err / covered) if covered else 0.0,
        terminal_accuracy=float(term_ok / covered) if covered else 0.0,
        mask_exactness=exact / total if total else 1.0,
        holes=holes,
        edges=view.num_edges,
    )
