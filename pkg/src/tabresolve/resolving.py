"""Continual resolving and match play.

A :class:`Resolver` re-solves a gadget game at every public state it
reaches.  Solves depend only on the public path, so they are cached per
public state and shared across episodes.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import Bundle
from .depth_limited import (DECIDE, Expander, SubgameSolution, check_bounds,
                            collect_solution, root_pairs)
from .games import GameSpec, InfosetKey, extend_public_key, make_game
from .model import ModelHole
from .realgame import real_game
from .solver import cfr_plus
from .view import DECISION, ViewBuilder

log = logging.getLogger(__name__)

GADGET = "G"
FOLLOW, TERMINATE = 0, 1


@dataclass
class ResolverState:
    pub: bytes
    player: int
    own_reach: dict                      # own abstract index -> reach weight
    opp_range: dict                      # opponent abstract index -> estimated reach
    cfvs: dict                           # opponent abstract index -> stored CFV
    solution: SubgameSolution | None = None
    follow: dict = field(default_factory=dict)
    gadget: bool = False

    @property
    def fallback(self) -> bool:
        return self.solution is None


class Resolver:
    """Continual resolving for one seat of one bundle."""

    def __init__(self, bundle: Bundle, player: int, depth: int | None = None,
                 iterations: int | None = None):
        self.bundle = bundle
        self.player = player
        settings = bundle.settings
        self.depth = depth if depth is not None else int(settings.get("depth", 1))
        self.iterations = iterations if iterations is not None else int(settings.get("iterations", 1000))
        self.game = make_game(bundle.spec)
        self._cache: dict[bytes, ResolverState] = {}
        self.solves = 0

    # -- solving ---------------------------------------------------------------

    def root_state(self) -> ResolverState:
        model = self.bundle.model
        pub = model.root
        state = self._cache.get(pub)
        if state is not None:
            return state
        pairs = model.support(pub)
        own = {b: 1.0 for b in sorted({pr[self.player] for pr in pairs})}
        opp = {b: 1.0 for b in sorted({pr[1 - self.player] for pr in pairs})}
        state = ResolverState(pub, self.player, own, opp, {})
        self._solve(state)
        self._cache[pub] = state
        return state

    def state_at(self, pub: bytes, parent: ResolverState) -> ResolverState:
        """Resolver state after the public state moves from ``parent`` to ``pub``."""
        state = self._cache.get(pub)
        if state is None:
            state = self._advance(parent, pub)
            self._cache[pub] = state
        return state

    def _advance(self, prev: ResolverState, pub: bytes) -> ResolverState:
        me, opp = self.player, 1 - self.player
        if prev.fallback:
            return ResolverState(pub, me, {}, {}, {})
        sol = prev.solution
        own: dict = {}
        rng: dict = {}
        own_seen, opp_seen = set(), set()
        model = self.bundle.model
        for pair in model.support(prev.pub):
            for key in _keys_from(model, prev.pub, pair):
                a = (key[3], key[4])
                if model.public_successor(key) != pub:
                    continue
                for nb in model.transitions[key]:
                    t = (pair[me], a[me], nb[me])
                    if t not in own_seen and pair[me] in prev.own_reach:
                        own_seen.add(t)
                        pi = _prob(sol.root_policy[me], pair[me], a[me])
                        own[nb[me]] = own.get(nb[me], 0.0) + prev.own_reach[pair[me]] * pi
                    t = (pair[opp], a[opp], nb[opp])
                    if t not in opp_seen and pair[opp] in prev.opp_range:
                        opp_seen.add(t)
                        pi = _prob(sol.root_policy[opp], pair[opp], a[opp])
                        w = prev.opp_range[pair[opp]] * prev.follow.get(pair[opp], 1.0)
                        rng[nb[opp]] = rng.get(nb[opp], 0.0) + w * pi
        cfvs = {j: v for (p_, pl, j), v in sol.cfvs.items() if p_ == pub and pl == opp}
        state = ResolverState(pub, me, own, rng, cfvs)
        if not own or not any(v > 0 for v in own.values()):
            log.info("no own reach at %s; falling back to the blueprint", pub.hex())
            return state
        self._solve(state)
        return state

    def _solve(self, state: ResolverState) -> None:
        try:
            view, counts = self._build_gadget(state)
        except (KeyError, ModelHole) as exc:
            log.info("cannot resolve at %s (%s); falling back to the blueprint",
                     state.pub.hex() or "<root>", exc)
            state.solution = None
            return
        result = cfr_plus(view, self.iterations)
        self.solves += 1
        A = self.bundle.spec.num_actions
        state.solution = collect_solution(view, result, state.pub, A)
        opp = 1 - self.player
        state.follow = {}
        for key, vec in result.profile[opp].items():
            if key[0] == GADGET:
                state.follow[key[3]] = float(vec[FOLLOW])

    def _build_gadget(self, state: ResolverState):
        """Resolving gadget: the opponent may take its stored CFV or enter the subgame."""
        b = self.bundle
        me, opp = self.player, 1 - self.player
        A = b.spec.num_actions
        T = b.values.T
        reach = [None, None]
        reach[me] = state.own_reach
        reach[opp] = {j: 1.0 for j in {pr[opp] for pr in b.model.support(state.pub)}}
        pairs = root_pairs(b.model, state.pub, reach)
        if not pairs:
            raise KeyError(f"no modelled pairs at {state.pub.hex() or '<root>'}")
        builder = ViewBuilder((max(A, T),) * 2)
        ex = Expander(builder, b.model, b.values, self.depth, T)
        by_opp: dict = {}
        for pr in pairs:
            by_opp.setdefault(pr[opp], []).append(pr)
        weights = {j: state.opp_range.get(j, 0.0) for j in by_opp}
        total = sum(weights.values())
        if total <= 0:
            weights = {j: 1.0 for j in by_opp}
            total = float(len(by_opp))
        root = builder.weighting(owner=opp)
        builder.root(root)
        use_gadget = bool(state.cfvs)
        state.gadget = use_gadget
        for j in sorted(by_opp):
            follow = builder.weighting(owner=me)
            for pr in by_opp[j]:
                builder.edge(follow, ex.expand(state.pub, pr), weight=state.own_reach.get(pr[me], 0.0))
            if use_gadget and j in state.cfvs:
                choice = builder.decision(
                    ((GADGET, state.pub, 0, j), None) if opp == 0 else (None, (GADGET, state.pub, 1, j)),
                    ((FOLLOW, TERMINATE), None) if opp == 0 else (None, (FOLLOW, TERMINATE)))
                cfv = state.cfvs[j]
                acts = (lambda a: (a, -1)) if opp == 0 else (lambda a: (-1, a))
                builder.edge(choice, follow, acts(FOLLOW))
                builder.edge(choice, builder.terminal(), acts(TERMINATE),
                             reward=cfv if opp == 0 else -cfv)
                builder.edge(root, choice, weight=weights[j] / total)
            else:
                builder.edge(root, follow, weight=weights[j] / total)
        view = builder.build(kind="gadget")
        view.meta.pop("_new_id")
        check_bounds(ex.nodes, ex.terminals, b.model.L, A, self.depth, T)
        return view, (ex.nodes, ex.terminals)

    # -- acting ----------------------------------------------------------------

    def distribution(self, state: ResolverState, key: InfosetKey) -> tuple[np.ndarray, bool]:
        """Action distribution for a real infoset; second item flags a blueprint fallback."""
        game = self.game
        if game.public_key_of(key) != state.pub:
            raise ValueError("infoset does not belong to the resolver's public state")
        A = self.bundle.spec.num_actions
        legal = np.zeros(A)
        legal[list(game.legal_from_infoset(key))] = 1.0
        vec = None
        if not state.fallback:
            b = self.bundle.amap.lookup(state.pub, key)
            if b is not None:
                vec = state.solution.root_policy[self.player].get(b)
        if vec is None:
            bp = self.bundle.blueprint[self.player].get(key)
            vec = bp if bp is not None else legal
            return _renorm(vec, legal), True
        return _renorm(vec, legal), False


def _keys_from(model, pub, pair):
    legal = (model.legal(pub, 0, pair[0]), model.legal(pub, 1, pair[1]))
    for a1 in legal[0]:
        for a2 in legal[1]:
            key = (pub, pair[0], pair[1], a1, a2)
            if key in model.transitions:
                yield key


def _prob(policy: dict, b: int, a: int) -> float:
    vec = policy.get(b)
    return 0.0 if vec is None else float(vec[a])


def _renorm(vec, legal) -> np.ndarray:
    masked = np.asarray(vec, dtype=float)[: len(legal)] * legal
    total = masked.sum()
    return masked / total if total > 0 else legal / legal.sum()


def compose_strategy(bundle: Bundle, players=(0, 1), depth=None, iterations=None,
                     resolvers=None) -> tuple:
    """Resolve every public state of the real game and collect the lifted play.

    Returns a real-game profile; the entry for a player not in ``players`` is
    that player's blueprint.
    """
    rg = real_game(bundle.spec)
    view = rg.view
    parent_pub: dict[bytes, bytes] = {}
    order: list[bytes] = []
    for node in range(view.num_nodes):
        if view.kind[node] != DECISION:
            continue
        pub = rg.pub_keys[rg.node_pub[node]]
        if pub in parent_pub:
            continue
        e = view.in_edge[node]
        parent_pub[pub] = rg.pub_keys[rg.node_pub[view.e_parent[e]]] if e >= 0 else None
        order.append(pub)
    profile = [dict(bundle.blueprint[0]), dict(bundle.blueprint[1])]
    resolvers = resolvers or {}
    for p in players:
        res = resolvers.get(p) or Resolver(bundle, p, depth, iterations)
        states = {}
        for pub in order:
            par = parent_pub[pub]
            states[pub] = res.root_state() if par is None else res.state_at(pub, states[par])
        policy = {}
        for key in view.infoset_keys[p]:
            pub = res.game.public_key_of(key)
            policy[key] = res.distribution(states[pub], key)[0]
        profile[p] = policy
    return tuple(profile)


# -- agents and matches ---------------------------------------------------------

class Agent:
    name = "agent"

    def start_episode(self, spec: GameSpec, player: int, rng: np.random.Generator) -> None:
        self.spec, self.player, self.rng = spec, player, rng
        self.fallbacks = 0

    def act(self, key: InfosetKey, legal) -> int:
        raise NotImplementedError

    def observe(self, public_obs, private_obs) -> None:
        pass

    def episode_end(self, reward: float) -> None:
        pass


class UniformAgent(Agent):
    name = "uniform"

    def act(self, key, legal):
        return int(legal[self.rng.integers(len(legal))])


class PolicyAgent(Agent):
    """Samples from a fixed real-game profile; unknown infosets play uniform."""

    def __init__(self, profile, name="policy"):
        self.profile = profile
        self.name = name

    def act(self, key, legal):
        vec = self.profile[self.player].get(key)
        A = self.spec.num_actions
        mask = np.zeros(A)
        mask[list(legal)] = 1.0
        dist = _renorm(vec if vec is not None else mask, mask)
        return int(self.rng.choice(A, p=dist))


class ResolverAgent(Agent):
    """Plays a bundle by continual resolving; solves are cached across episodes."""

    def __init__(self, bundle: Bundle, depth=None, iterations=None, name="resolver"):
        self.bundle = bundle
        self.name = name
        self._resolvers = {p: Resolver(bundle, p, depth, iterations) for p in (0, 1)}

    def start_episode(self, spec, player, rng):
        if spec != self.bundle.spec:
            raise ValueError(f"bundle is for {self.bundle.spec}, not {spec}")
        super().start_episode(spec, player, rng)
        self.resolver = self._resolvers[player]
        self.state = self.resolver.root_state()

    def act(self, key, legal):
        dist, fell_back = self.resolver.distribution(self.state, key)
        self.fallbacks += fell_back
        return int(self.rng.choice(len(dist), p=dist))

    def observe(self, public_obs, private_obs):
        pub = extend_public_key(self.state.pub, public_obs)
        self.state = self.resolver.state_at(pub, self.state)


@dataclass
class MatchReport:
    episodes: int
    wins: int
    draws: int
    losses: int
    mean_reward: float
    reward_2sigma: float
    rows: list

    @property
    def win_rate(self) -> float:
        return self.wins / self.episodes

    @property
    def win_rate_2sigma(self) -> float:
        p = self.win_rate
        return 2.0 * math.sqrt(p * (1 - p) / self.episodes)

    @property
    def fallbacks(self) -> int:
        return sum(r["fallbacks_a"] for r in self.rows)

    LOG_COLUMNS = ("episode", "seed", "seat_a", "outcome_a", "reward_a", "fallbacks_a", "fallbacks_b")

    def write_log(self, fh) -> None:
        fh.write("# schema=match-log/1 reward_a in game payoff units from agent A's seat\n")
        writer = csv.DictWriter(fh, fieldnames=self.LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row)


def play_episode(spec: GameSpec, agents, rngs) -> float:
    """One episode; ``agents[p]`` sits in seat ``p``.  Returns player 1's total reward."""
    game = make_game(spec)
    for p in (0, 1):
        agents[p].start_episode(spec, p, rngs[p])
    state = game.new_game()
    while not state.terminal:
        joint = []
        for p in (0, 1):
            legal = game.legal_actions(state, p)
            a = agents[p].act(game.infoset_key(state, p), legal)
            if a not in legal:
                raise RuntimeError(f"{agents[p].name} played illegal action {a}")
            joint.append(a)
        step = game.apply(state, tuple(joint))
        for p in (0, 1):
            agents[p].observe(step.public_obs, step.private_obs[p])
        state = step.state
    for p in (0, 1):
        agents[p].episode_end(state.reward if p == 0 else -state.reward)
    return state.reward


def play_match(agent_a: Agent, agent_b: Agent, spec: GameSpec, episodes: int, seed: int) -> MatchReport:
    """Alternate seats each episode; outcomes are from agent A's side."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if agent_a is agent_b:
        raise ValueError("seat two separate agent instances; agents keep per-seat state")
    rows = []
    wins = draws = losses = 0
    rewards = np.empty(episodes)
    for k in range(episodes):
        seat_a = k % 2
        agents = [agent_b, agent_b]
        agents[seat_a] = agent_a
        rngs = [np.random.default_rng([seed, k, s]) for s in (0, 1)]
        try:
            r1 = play_episode(spec, agents, rngs)
        except Exception as exc:
            raise RuntimeError(f"episode {k} aborted: {exc}") from exc
        r = r1 if seat_a == 0 else -r1
        rewards[k] = r
        outcome = "win" if r > 0 else "loss" if r < 0 else "draw"
        wins += r > 0
        losses += r < 0
        draws += r == 0
        rows.append({"episode": k, "seed": seed, "seat_a": seat_a, "outcome_a": outcome,
                     "reward_a": r, "fallbacks_a": agent_a.fallbacks,
                     "fallbacks_b": agent_b.fallbacks})
    sd = float(rewards.std(ddof=1)) if episodes > 1 else 0.0
    return MatchReport(episodes, wins, draws, losses, float(rewards.mean()),
                       2.0 * sd / math.sqrt(episodes), rows)
