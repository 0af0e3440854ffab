"""Tabular equilibrium machinery on :class:`~tabresolve.view.GameView` trees.

Policies are plain dicts mapping an infoset key to a probability vector over
that player's whole action alphabet (zero on illegal actions).  A profile is
a pair of policies.  Values are player 1's unless stated otherwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .games import GameSpec
from .view import CHANCE, DECISION, WEIGHTING, GameView

log = logging.getLogger(__name__)

Policy = dict
Profile = tuple


def _normalize_rows(rows: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Renormalize over ``legal``; rows with no mass become uniform over legal."""
    rows = rows * legal
    total = rows.sum(axis=1, keepdims=True)
    uniform = legal / np.maximum(legal.sum(axis=1, keepdims=True), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, rows / np.where(total > 0, total, 1.0), uniform)
    return out


def uniform_rows(view: GameView, player: int) -> np.ndarray:
    legal = view.infoset_legal[player].astype(float)
    return legal / np.maximum(legal.sum(axis=1, keepdims=True), 1)


def rows_from_policy(view: GameView, player: int, policy: Policy | None) -> np.ndarray:
    """Per-infoset strategy matrix of ``policy``; missing infosets are uniform."""
    rows = uniform_rows(view, player)
    if policy:
        for i, key in enumerate(view.infoset_keys[player]):
            vec = policy.get(key)
            if vec is not None:
                rows[i] = vec
        rows = _normalize_rows(rows, view.infoset_legal[player])
    return rows


def policy_from_rows(view: GameView, player: int, rows: np.ndarray) -> Policy:
    return {key: rows[i].copy() for i, key in enumerate(view.infoset_keys[player])}


def uniform_policy(view: GameView, player: int) -> Policy:
    return policy_from_rows(view, player, uniform_rows(view, player))


def node_behavior(view: GameView, player: int, rows: np.ndarray) -> np.ndarray:
    """Behaviour at every node: the infoset strategy restricted to node-legal actions."""
    legal = view.node_legal[player]
    idx = view.iset[player]
    b = np.zeros(legal.shape)
    mask = idx >= 0
    if mask.any():
        b[mask] = _normalize_rows(rows[idx[mask]], legal[mask])
    return b


def edge_factors(view: GameView, behav) -> np.ndarray:
    """Per-edge probability factors ``(3, E)``: player 1, player 2, chance."""
    E = view.num_edges
    f = np.ones((3, E))
    par = view.e_parent
    for p in (0, 1):
        act = view.e_act[p]
        chosen = act >= 0
        f[p, chosen] = behav[p][par[chosen], act[chosen]]
    weighted = view.kind[par] == WEIGHTING
    if weighted.any():
        owner = view.owner[par]
        for p, who in ((0, 0), (1, 1), (2, CHANCE)):
            sel = weighted & (owner == who)
            f[p, sel] = view.e_weight[sel]
    return f


def forward(view: GameView, f: np.ndarray) -> np.ndarray:
    """Reach ``(3, n)`` of every node: each player's own and the chance part."""
    reach = np.zeros((3, view.num_nodes))
    reach[:, view.roots] = view.root_reach
    for lo, hi in view.node_slices[1:]:
        e = view.in_edge[lo:hi]
        reach[:, lo:hi] = reach[:, view.e_parent[e]] * f[:, e]
    return reach


def backward(view: GameView, f: np.ndarray) -> np.ndarray:
    """Expected future player-1 reward at every node."""
    v = np.zeros(view.num_nodes)
    prob = f[0] * f[1] * f[2]
    for d in range(len(view.edge_slices) - 1, -1, -1):
        lo, hi = view.edge_slices[d]
        if lo == hi:
            continue
        nlo, nhi = view.node_slices[d]
        contrib = prob[lo:hi] * (view.e_reward[lo:hi] + v[view.e_child[lo:hi]])
        v[nlo:nhi] += np.bincount(view.e_parent[lo:hi] - nlo, contrib, minlength=nhi - nlo)
    return v


class _PlayerIndex:
    """Precomputed scatter indices for one player's decision nodes."""

    def __init__(self, view: GameView, p: int):
        A = view.num_actions[p]
        self.A = A
        self.nodes = np.flatnonzero(view.iset[p] >= 0)
        self.iset = view.iset[p][self.nodes]
        row = np.full(view.num_nodes, -1, dtype=np.int64)
        row[self.nodes] = np.arange(len(self.nodes))
        self.edges = np.flatnonzero(view.e_act[p] >= 0)
        self.edge_flat = row[view.e_parent[self.edges]] * A + view.e_act[p][self.edges]
        self.legal = view.node_legal[p][self.nodes]
        self.iset_flat = (self.iset[:, None] * A + np.arange(A)[None, :]).ravel()
        self.n_isets = len(view.infoset_keys[p])

    def q_values(self, view: GameView, f: np.ndarray, v: np.ndarray, p: int) -> np.ndarray:
        """Action values at the player's nodes, from that player's perspective."""
        e = self.edges
        other = f[1 - p, e] * f[2, e]
        vals = other * (view.e_reward[e] + v[view.e_child[e]])
        q = np.bincount(self.edge_flat, vals, minlength=len(self.nodes) * self.A)
        q = q.reshape(len(self.nodes), self.A)
        return q if p == 0 else -q

    def scatter(self, per_node: np.ndarray) -> np.ndarray:
        out = np.bincount(self.iset_flat, per_node.ravel(), minlength=self.n_isets * self.A)
        return out.reshape(self.n_isets, self.A)


@dataclass
class CFRResult:
    profile: tuple
    cfvs: dict
    iterations: int
    root_value: float


class CFRPlus:
    """CFR+ with alternating updates, regret matching+ and linear averaging.

    Deterministic: the same view and iteration count give bit-identical
    average policies.
    """

    def __init__(self, view: GameView):
        if view.num_nodes == 0:
            raise ValueError("empty view")
        self.view = view
        self.index = (_PlayerIndex(view, 0), _PlayerIndex(view, 1))
        self.regrets = [np.zeros(view.infoset_legal[p].shape) for p in (0, 1)]
        self.strategy_sum = [np.zeros(view.infoset_legal[p].shape) for p in (0, 1)]
        self.iteration = 0

    def current_rows(self, p: int) -> np.ndarray:
        return _normalize_rows(np.maximum(self.regrets[p], 0.0), self.view.infoset_legal[p])

    def average_rows(self, p: int) -> np.ndarray:
        return _normalize_rows(self.strategy_sum[p], self.view.infoset_legal[p])

    def _update(self, p: int, rows) -> None:
        view = self.view
        behav = (node_behavior(view, 0, rows[0]), node_behavior(view, 1, rows[1]))
        f = edge_factors(view, behav)
        reach = forward(view, f)
        v = backward(view, f)
        idx = self.index[p]
        q = idx.q_values(view, f, v, p)
        own_v = v[idx.nodes] if p == 0 else -v[idx.nodes]
        cf = reach[1 - p, idx.nodes] * reach[2, idx.nodes]
        inc = cf[:, None] * (q - own_v[:, None]) * idx.legal
        self.regrets[p] = np.maximum(self.regrets[p] + idx.scatter(inc), 0.0)
        own = reach[p, idx.nodes][:, None] * behav[p][idx.nodes]
        self.strategy_sum[p] += self.iteration * idx.scatter(own)

    def iterate(self, iterations: int = 1) -> None:
        for _ in range(iterations):
            self.iteration += 1
            rows = [self.current_rows(0), self.current_rows(1)]
            self._update(0, rows)
            rows[0] = self.current_rows(0)
            self._update(1, rows)

    def average_profile(self) -> tuple[Policy, Policy]:
        return tuple(policy_from_rows(self.view, p, self.average_rows(p)) for p in (0, 1))

    def result(self) -> CFRResult:
        rows = (self.average_rows(0), self.average_rows(1))
        cfvs, root_value = _cfvs_from_rows(self.view, rows)
        profile = tuple(policy_from_rows(self.view, p, rows[p]) for p in (0, 1))
        return CFRResult(profile, cfvs, self.iteration, root_value)


def cfr_plus(view: GameView, iterations: int) -> CFRResult:
    """Run CFR+ and return the average profile with its counterfactual values."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    solver = CFRPlus(view)
    solver.iterate(iterations)
    return solver.result()


def _evaluate(view: GameView, rows):
    behav = (node_behavior(view, 0, rows[0]), node_behavior(view, 1, rows[1]))
    f = edge_factors(view, behav)
    return f, forward(view, f), backward(view, f)


def _root_value(view: GameView, reach: np.ndarray, v: np.ndarray) -> float:
    r = view.roots
    return float(np.sum(reach[0, r] * reach[1, r] * reach[2, r] * v[r]))


def _cfvs_from_rows(view: GameView, rows):
    _, reach, v = _evaluate(view, rows)
    cfvs = {}
    for p in (0, 1):
        nodes = np.flatnonzero(view.iset[p] >= 0)
        own_v = v[nodes] if p == 0 else -v[nodes]
        cf = reach[1 - p, nodes] * reach[2, nodes]
        per = np.bincount(view.iset[p][nodes], cf * own_v, minlength=len(view.infoset_keys[p]))
        for i, key in enumerate(view.infoset_keys[p]):
            cfvs[(p, key)] = float(per[i])
    return cfvs, _root_value(view, reach, v)


def counterfactual_values(view: GameView, profile) -> dict:
    """Map ``(player, infoset key)`` to its counterfactual value under ``profile``."""
    rows = (rows_from_policy(view, 0, profile[0]), rows_from_policy(view, 1, profile[1]))
    return _cfvs_from_rows(view, rows)[0]


def expected_value(view: GameView, profile) -> float:
    """Exact expected player-1 utility of ``profile`` over the whole view."""
    rows = (rows_from_policy(view, 0, profile[0]), rows_from_policy(view, 1, profile[1]))
    _, reach, v = _evaluate(view, rows)
    return _root_value(view, reach, v)


def node_values(view: GameView, profile) -> tuple[np.ndarray, np.ndarray]:
    """Per-node reach ``(3, n)`` and future player-1 value under ``profile``."""
    rows = (rows_from_policy(view, 0, profile[0]), rows_from_policy(view, 1, profile[1]))
    _, reach, v = _evaluate(view, rows)
    return reach, v


@dataclass
class BestResponse:
    policy: Policy
    value: float


def best_response(view: GameView, fixed: Policy, responder: int) -> BestResponse:
    """Exact pure best response of ``responder`` against the other player's ``fixed`` policy.

    Bottom-up over depth layers; every responder infoset must lie in a single
    layer.  Ties go to the lowest action index.
    """
    p, o = responder, 1 - responder
    A = view.num_actions[p]
    opp_rows = rows_from_policy(view, o, fixed)
    behav = [None, None]
    behav[o] = node_behavior(view, o, opp_rows)
    behav[p] = np.zeros_like(view.node_legal[p], dtype=float)
    f = edge_factors(view, behav)
    f[p] = 1.0
    weighted = view.kind[view.e_parent] == WEIGHTING
    own_w = weighted & (view.owner[view.e_parent] == p)
    f[p, own_w] = view.e_weight[own_w]
    reach = forward(view, f)

    isets = view.iset[p]
    layer_of = np.full(len(view.infoset_keys[p]), -1)
    for d, (lo, hi) in enumerate(view.node_slices):
        ids = np.unique(isets[lo:hi][isets[lo:hi] >= 0])
        if np.any((layer_of[ids] >= 0) & (layer_of[ids] != d)):
            raise ValueError("responder infosets must not span depth layers")
        layer_of[ids] = d

    sign = 1.0 if p == 0 else -1.0
    choice = np.zeros(len(view.infoset_keys[p]), dtype=np.int64)
    v = np.zeros(view.num_nodes)     # responder-perspective future value
    for d in range(len(view.edge_slices) - 1, -1, -1):
        lo, hi = view.edge_slices[d]
        if lo == hi:
            continue
        nlo, nhi = view.node_slices[d]
        par = view.e_parent[lo:hi]
        child_val = sign * view.e_reward[lo:hi] + v[view.e_child[lo:hi]]
        act = view.e_act[p, lo:hi]
        chooser = act >= 0
        # nodes where the responder does not choose: plain expectation
        w = f[0, lo:hi] * f[1, lo:hi] * f[2, lo:hi]
        passive = ~chooser
        v[nlo:nhi] += np.bincount(par[passive] - nlo, w[passive] * child_val[passive],
                                  minlength=nhi - nlo)
        if not chooser.any():
            continue
        nodes = np.arange(nlo, nhi)[isets[nlo:nhi] >= 0]
        row = np.full(nhi - nlo, -1)
        row[nodes - nlo] = np.arange(len(nodes))
        wo = f[o, lo:hi] * f[2, lo:hi]
        flat = row[par[chooser] - nlo] * A + act[chooser]
        q = np.bincount(flat, wo[chooser] * child_val[chooser], minlength=len(nodes) * A)
        q = q.reshape(len(nodes), A)
        legal = view.node_legal[p][nodes]
        # own reach here holds only range weights, which matter when an infoset
        # spans several own-weighted branches
        cf = reach[p, nodes] * reach[o, nodes] * reach[2, nodes]
        ids = isets[nodes]
        n_i = len(view.infoset_keys[p])
        tot = np.zeros((n_i, A))
        np.add.at(tot, ids, cf[:, None] * q)
        ilegal = view.infoset_legal[p]
        scored = np.where(ilegal, tot, -np.inf)
        best = np.argmax(scored, axis=1)
        present = np.unique(ids)
        choice[present] = best[present]
        a_star = choice[ids]
        ok = legal[np.arange(len(nodes)), a_star]
        # node-level fallback when the infoset choice is illegal at this node
        fallback = np.argmax(np.where(legal, q, -np.inf), axis=1)
        a_node = np.where(ok, a_star, fallback)
        v[nodes] = q[np.arange(len(nodes)), a_node]

    r = view.roots
    value = float(np.sum(reach[o, r] * reach[2, r] * view.root_reach[p] * v[r]))
    policy = {}
    for i, key in enumerate(view.infoset_keys[p]):
        vec = np.zeros(A)
        vec[choice[i]] = 1.0
        policy[key] = vec
    return BestResponse(policy, value)


def exploitability_of_view(view: GameView, profile) -> float:
    """Mean best-response gain ``(u1(BR, pi2) + u2(pi1, BR)) / 2``."""
    br1 = best_response(view, profile[1], 0).value
    br2 = best_response(view, profile[0], 1).value
    return 0.5 * (br1 + br2)


def exploitability(spec: GameSpec, profile) -> float:
    """Exploitability of a real-game profile, in the game's payoff units.

    The game value cancels in the sum of both best-response values, so no
    equilibrium is needed.
    """
    from .realgame import real_game

    return exploitability_of_view(real_game(spec).view, profile)


def solve_game(spec: GameSpec, iterations: int) -> CFRResult:
    from .realgame import real_game

    return cfr_plus(real_game(spec).view, iterations)
