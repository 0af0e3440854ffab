"""Depth-limited subgames over the learned abstract model.

A subgame starts at one public state with a weighted set of abstract pairs,
expands ``D`` joint-action steps through the model and closes every surviving
node with a simultaneous ``T x T`` stage whose payoffs come from the value
table.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import LearnedModel
from .solver import cfr_plus
from .valuation import ValueTable
from .view import GameView, ViewBuilder

log = logging.getLogger(__name__)

DECIDE, TRANSFORM = "D", "T"


class SizeBoundError(AssertionError):
    pass


@dataclass
class SubgameSpec:
    pub: bytes
    reach: tuple                      # per player: {abstract index: weight}
    depth: int
    model: LearnedModel
    values: ValueTable
    T: int | None = None
    terminal_threshold: float = 0.5

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth limit must be >= 1")
        if self.T is None:
            self.T = self.values.T
        for r in self.reach:
            if any(w < 0 for w in r.values()):
                raise ValueError("reach weights must be nonnegative")
        if not any(w > 0 for r in self.reach for w in r.values()):
            raise ValueError("at least one reach weight must be positive")


def size_bounds(L: int, A: int, D: int, T: int) -> tuple[int, int]:
    """Largest possible node and terminal counts of a depth-``D`` subgame."""
    nodes = sum(L * L * A ** (2 * d) for d in range(D + 1))
    return nodes, L * L * A ** (2 * D) * T * T


class Expander:
    """Writes model-driven subtrees into a :class:`ViewBuilder`."""

    def __init__(self, builder: ViewBuilder, model: LearnedModel, values: ValueTable,
                 depth: int, T: int, terminal_threshold: float = 0.5):
        self.b = builder
        self.model = model
        self.values = values
        self.D = depth
        self.T = T
        self.threshold = terminal_threshold
        self.nodes = 0          # nodes at subgame depth <= D
        self.terminals = 0
        self.holes = 0

    def _terminal(self) -> int:
        self.terminals += 1
        return self.b.terminal()

    def transform(self, pub: bytes, pair) -> int:
        T = self.T
        node = self.b.decision(((TRANSFORM, pub, 0, pair[0]), (TRANSFORM, pub, 1, pair[1])),
                               (range(T), range(T)))
        self.nodes += 1
        payoff = self.values.lookup(pub, pair)
        for i in range(T):
            for j in range(T):
                self.b.edge(node, self.b.terminal(), (i, j), reward=float(payoff[i, j]))
        self.terminals += T * T
        return node

    def expand(self, pub: bytes, pair, depth: int = 0) -> int:
        b1, b2 = pair
        model = self.model
        legal = (model.legal(pub, 0, b1), model.legal(pub, 1, b2))
        node = self.b.decision(((DECIDE, pub, 0, b1), (DECIDE, pub, 1, b2)), legal)
        self.nodes += 1
        for a1 in legal[0]:
            for a2 in legal[1]:
                key = (pub, b1, b2, a1, a2)
                if key not in model.transitions:
                    # unseen step: close it with the blueprint value of the parent
                    self.holes += 1
                    value = float(self.values.lookup(pub, pair)[0, 0])
                    self.nodes += 1
                    self.b.edge(node, self._terminal(), (a1, a2), reward=value)
                    continue
                reward = model.reward(key)
                if model.terminal_frequency(key) >= self.threshold:
                    self.nodes += 1
                    self.b.edge(node, self._terminal(), (a1, a2), reward=reward)
                    continue
                nxt, c1, c2 = model.successor(key)
                if depth + 1 >= self.D:
                    child = self.transform(nxt, (c1, c2))
                elif (nxt, 0, c1) in model.masks and (nxt, 1, c2) in model.masks:
                    child = self.expand(nxt, (c1, c2), depth + 1)
                else:
                    self.holes += 1
                    self.nodes += 1
                    child = self._terminal()
                    reward += float(self.values.lookup(nxt, (c1, c2))[0, 0])
                self.b.edge(node, child, (a1, a2), reward=reward)
        return node


def root_pairs(model: LearnedModel, pub: bytes, reach) -> list[tuple[int, int]]:
    """Observed abstract pairs at ``pub`` whose indices both carry a reach entry."""
    return [(b1, b2) for b1, b2 in model.support(pub)
            if b1 in reach[0] and b2 in reach[1]
            and (pub, 0, b1) in model.masks and (pub, 1, b2) in model.masks]


@dataclass
class DepthLimitedView:
    view: GameView
    spec: SubgameSpec
    num_actions: int                 # the game's action alphabet
    node_count: int
    terminal_count: int
    holes: int
    bounds: tuple
    pairs: list = field(default_factory=list)


def check_bounds(node_count: int, terminal_count: int, L: int, A: int, D: int, T: int):
    nodes, terms = size_bounds(L, A, D, T)
    if node_count > nodes or terminal_count > terms:
        raise SizeBoundError(
            f"subgame has {node_count} nodes / {terminal_count} terminals, "
            f"bound is {nodes} / {terms}")
    return nodes, terms


def build_subgame(spec: SubgameSpec) -> DepthLimitedView:
    model = spec.model
    A = model.spec.num_actions
    pairs = root_pairs(model, spec.pub, spec.reach)
    if not pairs:
        raise KeyError(f"public state {spec.pub.hex() or '<root>'} has no modelled pairs")
    builder = ViewBuilder((max(A, spec.T),) * 2)
    ex = Expander(builder, model, spec.values, spec.depth, spec.T, spec.terminal_threshold)
    for pair in pairs:
        node = ex.expand(spec.pub, pair)
        builder.root(node, (spec.reach[0][pair[0]], spec.reach[1][pair[1]]))
    view = builder.build(kind="depth-limited")
    view.meta.pop("_new_id")
    bounds = check_bounds(ex.nodes, ex.terminals, model.L, A, spec.depth, spec.T)
    if ex.holes:
        log.info("subgame at %s closed %d model holes", spec.pub.hex() or "<root>", ex.holes)
    return DepthLimitedView(view, spec, A, ex.nodes, ex.terminals, ex.holes, bounds, pairs)


@dataclass
class SubgameSolution:
    root_policy: tuple               # per player {abstract index: action distribution}
    policy: tuple                    # per player {view infoset key: distribution}
    cfvs: dict                       # (pub, player, abstract index) -> counterfactual value
    root_value: float
    iterations: int


def collect_solution(view: GameView, result, pub: bytes, A: int) -> SubgameSolution:
    root_policy: tuple = ({}, {})
    cfvs = {}
    for p in (0, 1):
        for key, vec in result.profile[p].items():
            if key[0] == DECIDE and key[1] == pub:
                root_policy[p][key[3]] = vec[:A].copy()
    for (p, key), v in result.cfvs.items():
        if key[0] in (DECIDE, TRANSFORM):
            cfvs.setdefault((key[1], p, key[3]), v)
    return SubgameSolution(root_policy, result.profile, cfvs, result.root_value, result.iterations)


def solve_subgame(dlv: DepthLimitedView, iterations: int = 1000) -> SubgameSolution:
    """CFR+ on the subgame; root policies are cut to the game's action alphabet."""
    result = cfr_plus(dlv.view, iterations)
    return collect_solution(dlv.view, result, dlv.spec.pub, dlv.num_actions)
