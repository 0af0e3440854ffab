"""Compiled full game trees of the real (unabstracted) games."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .games import BudgetExceeded, GameSpec, GameState, make_game
from .view import DECISION, GameView, ViewBuilder


@dataclass
class RealGame:
    spec: GameSpec
    view: GameView
    states: list[GameState]       # per node
    pub_keys: list[bytes]         # per public-state id (terminal ones included)
    node_pub: np.ndarray          # (n,) public-state id of each node
    child_table: np.ndarray       # (n, A, A) child node id or -1

    @property
    def num_actions(self) -> int:
        return self.spec.num_actions

    def pub_index(self) -> dict[bytes, int]:
        return {k: i for i, k in enumerate(self.pub_keys)}

    def decision_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.view.kind == DECISION)


@functools.lru_cache(maxsize=8)
def real_game(spec: GameSpec, budget: int = 2_000_000) -> RealGame:
    """Enumerate and compile the whole game tree of ``spec``."""
    game = make_game(spec)
    A = spec.num_actions
    builder = ViewBuilder((A, A))
    states: list[GameState] = []

    def add(state: GameState) -> int:
        if state.terminal:
            node = builder.terminal()
        else:
            keys = (game.infoset_key(state, 0), game.infoset_key(state, 1))
            legal = (game.legal_actions(state, 0), game.legal_actions(state, 1))
            node = builder.decision(keys, legal)
        states.append(state)
        if len(states) > budget:
            raise BudgetExceeded(f"{spec} exceeds node budget {budget}")
        return node

    root = add(game.new_game())
    builder.root(root)
    frontier = [root]
    while frontier:
        nxt = []
        for node in frontier:
            state = states[node]
            if state.terminal:
                continue
            for a1 in game.legal_actions(state, 0):
                for a2 in game.legal_actions(state, 1):
                    step = game.apply(state, (a1, a2))
                    child = add(step.state)
                    builder.edge(node, child, (a1, a2), reward=step.reward)
                    nxt.append(child)
        frontier = nxt
    view = builder.build(game=str(spec))
    new_id = view.meta.pop("_new_id")
    ordered = [None] * len(states)
    for old, new in enumerate(new_id):
        ordered[new] = states[old]

    pub_ids: dict[bytes, int] = {}
    node_pub = np.empty(len(ordered), dtype=np.int64)
    for i, state in enumerate(ordered):
        key = game.public_state_key(state)
        node_pub[i] = pub_ids.setdefault(key, len(pub_ids))
    child_table = np.full((len(ordered), A, A), -1, dtype=np.int64)
    child_table[view.e_parent, view.e_act[0], view.e_act[1]] = view.e_child
    return RealGame(spec, view, ordered, list(pub_ids), node_pub, child_table)
