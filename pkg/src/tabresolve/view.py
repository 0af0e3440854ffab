"""Flat-array game trees that every solver in the package runs on.

A :class:`GameView` is a finite tree of three node kinds:

* decision nodes, where each player either picks an action from its
  infoset or passes (no infoset, a single implicit action);
* weighting nodes, whose outgoing edges carry fixed weights.  The owner of a
  weighting node decides whose reach the weight multiplies: a player id
  (used for ranges in resolving gadgets) or ``CHANCE``;
* terminal nodes.

Rewards live on edges and are always player 1's.  Nodes are stored sorted
by depth so forward and backward sweeps are slices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DECISION, WEIGHTING, TERMINAL = 0, 1, 2
CHANCE = -1


class ViewError(ValueError):
    pass


@dataclass
class GameView:
    num_actions: tuple[int, int]
    kind: np.ndarray            # (n,) int8
    depth: np.ndarray           # (n,) int32
    owner: np.ndarray           # (n,) int8, weighting nodes only
    iset: np.ndarray            # (2, n) int32, -1 = no choice
    node_legal: tuple           # per player (n, A_p) bool
    in_edge: np.ndarray         # (n,) int32, -1 for roots
    e_parent: np.ndarray
    e_child: np.ndarray
    e_act: np.ndarray           # (2, E) int32, -1 = none
    e_weight: np.ndarray
    e_reward: np.ndarray
    roots: np.ndarray
    root_reach: np.ndarray      # (3, R): player 1, player 2, chance
    node_slices: list           # per depth (lo, hi)
    edge_slices: list           # per parent depth (lo, hi)
    infoset_keys: tuple         # per player list of keys
    infoset_legal: tuple        # per player (I_p, A_p) bool
    meta: dict

    @property
    def num_nodes(self) -> int:
        return len(self.kind)

    @property
    def num_edges(self) -> int:
        return len(self.e_parent)

    def infoset_index(self, player: int) -> dict:
        cache = self.meta.setdefault("_iset_index", {})
        if player not in cache:
            cache[player] = {k: i for i, k in enumerate(self.infoset_keys[player])}
        return cache[player]

    def terminal_count(self) -> int:
        return int(np.count_nonzero(self.kind == TERMINAL))

    def with_infosets(self, iset: np.ndarray, keys: tuple) -> "GameView":
        """Same tree, different information structure (imperfect recall allowed)."""
        legal = []
        for p in (0, 1):
            rows = np.zeros((len(keys[p]), self.num_actions[p]), dtype=bool)
            mask = iset[p] >= 0
            np.logical_or.at(rows, iset[p][mask], self.node_legal[p][mask])
            legal.append(rows)
        meta = {k: v for k, v in self.meta.items() if not k.startswith("_")}
        return GameView(
            self.num_actions, self.kind, self.depth, self.owner, iset, self.node_legal,
            self.in_edge, self.e_parent, self.e_child, self.e_act, self.e_weight,
            self.e_reward, self.roots, self.root_reach, self.node_slices,
            self.edge_slices, keys, tuple(legal), meta,
        )


class ViewBuilder:
    """Incrementally assemble a :class:`GameView`.

    Nodes may be added in any order; :meth:`build` sorts them by depth.
    """

    def __init__(self, num_actions: tuple[int, int]):
        self.num_actions = tuple(num_actions)
        self._kind: list[int] = []
        self._owner: list[int] = []
        self._keys: list[tuple] = []
        self._legal: list[tuple] = []
        self._edges: list[tuple] = []
        self._roots: list[tuple] = []

    def __len__(self):
        return len(self._kind)

    def decision(self, keys, legal) -> int:
        """Add a decision node; ``keys[p] is None`` means player ``p`` passes."""
        for p in (0, 1):
            if (keys[p] is None) != (legal[p] is None):
                raise ViewError("infoset key and legal actions must be given together")
            if legal[p] is not None and not legal[p]:
                raise ViewError("a choosing player needs at least one legal action")
        self._kind.append(DECISION)
        self._owner.append(CHANCE)
        self._keys.append(tuple(keys))
        self._legal.append(tuple(None if l is None else tuple(l) for l in legal))
        return len(self._kind) - 1

    def weighting(self, owner: int = CHANCE) -> int:
        self._kind.append(WEIGHTING)
        self._owner.append(owner)
        self._keys.append((None, None))
        self._legal.append((None, None))
        return len(self._kind) - 1

    def terminal(self) -> int:
        self._kind.append(TERMINAL)
        self._owner.append(CHANCE)
        self._keys.append((None, None))
        self._legal.append((None, None))
        return len(self._kind) - 1

    def edge(self, parent: int, child: int, actions=(-1, -1), weight: float = 1.0,
             reward: float = 0.0) -> None:
        self._edges.append((parent, child, actions[0], actions[1], weight, reward))

    def root(self, node: int, reach=(1.0, 1.0), chance: float = 1.0) -> None:
        self._roots.append((node, reach[0], reach[1], chance))

    def build(self, **meta) -> GameView:
        n = len(self._kind)
        if n == 0 or not self._roots:
            raise ViewError("empty view")
        kind = np.array(self._kind, dtype=np.int8)
        edges = self._edges
        parent_of = np.full(n, -1, dtype=np.int64)
        children: list[list[int]] = [[] for _ in range(n)]
        for ei, (par, ch, *_rest) in enumerate(edges):
            if parent_of[ch] != -1:
                raise ViewError(f"node {ch} has two parents")
            parent_of[ch] = par
            children[par].append(ei)
        depth = np.full(n, -1, dtype=np.int64)
        order = []
        frontier = [r[0] for r in self._roots]
        for r in frontier:
            if parent_of[r] != -1:
                raise ViewError("a root cannot have a parent")
            depth[r] = 0
        d = 0
        while frontier:
            order.extend(frontier)
            nxt = []
            for node in frontier:
                for ei in children[node]:
                    ch = edges[ei][1]
                    depth[ch] = d + 1
                    nxt.append(ch)
            frontier = nxt
            d += 1
        if len(order) != n:
            raise ViewError("view contains nodes unreachable from the roots")
        self._validate(kind, children)

        new_id = np.empty(n, dtype=np.int64)
        new_id[order] = np.arange(n)
        order_arr = np.array(order)
        kind = kind[order_arr]
        depth = depth[order_arr].astype(np.int32)
        owner = np.array(self._owner, dtype=np.int8)[order_arr]

        # edges sorted by the (new) parent id, hence by parent depth
        e_sorted = sorted(range(len(edges)), key=lambda ei: new_id[edges[ei][0]])
        e_parent = np.array([new_id[edges[ei][0]] for ei in e_sorted], dtype=np.int64)
        e_child = np.array([new_id[edges[ei][1]] for ei in e_sorted], dtype=np.int64)
        e_act = np.array([[edges[ei][2] for ei in e_sorted], [edges[ei][3] for ei in e_sorted]],
                         dtype=np.int64).reshape(2, -1)
        e_weight = np.array([edges[ei][4] for ei in e_sorted], dtype=float)
        e_reward = np.array([edges[ei][5] for ei in e_sorted], dtype=float)
        in_edge = np.full(n, -1, dtype=np.int64)
        in_edge[e_child] = np.arange(len(e_sorted))

        iset = np.full((2, n), -1, dtype=np.int64)
        keys: tuple[list, list] = ([], [])
        node_legal = []
        for p in (0, 1):
            index: dict = {}
            legal = np.zeros((n, self.num_actions[p]), dtype=bool)
            for new, old in enumerate(order):
                key = self._keys[old][p]
                if key is None:
                    continue
                i = index.get(key)
                if i is None:
                    i = index[key] = len(keys[p])
                    keys[p].append(key)
                iset[p, new] = i
                legal[new, list(self._legal[old][p])] = True
            node_legal.append(legal)

        node_slices = _slices(depth)
        parent_depth = depth[e_parent] if len(e_parent) else np.zeros(0, dtype=np.int32)
        edge_slices = _slices(parent_depth, len(node_slices))

        roots = np.array([new_id[r[0]] for r in self._roots], dtype=np.int64)
        root_reach = np.array([[r[1] for r in self._roots], [r[2] for r in self._roots],
                               [r[3] for r in self._roots]], dtype=float)
        view = GameView(
            self.num_actions, kind, depth, owner, iset, tuple(node_legal), in_edge,
            e_parent, e_child, e_act, e_weight, e_reward, roots, root_reach,
            node_slices, edge_slices, keys, (), dict(meta),
        )
        view = view.with_infosets(iset, keys)
        view.meta.update(meta)
        view.meta["_new_id"] = new_id
        return view

    def _validate(self, kind, children):
        edges = self._edges
        for node, k in enumerate(kind):
            outs = children[node]
            if k == TERMINAL:
                if outs:
                    raise ViewError("terminal node with children")
                continue
            if not outs:
                raise ViewError(f"non-terminal node {node} has no children")
            if k == WEIGHTING:
                if any(edges[e][4] < 0 for e in outs):
                    raise ViewError("negative weight")
                continue
            legal = self._legal[node]
            expected = 1
            for p in (0, 1):
                if legal[p] is not None:
                    expected *= len(legal[p])
            if len(outs) != expected:
                raise ViewError(f"decision node {node} must have one edge per joint action")
            for e in outs:
                for p in (0, 1):
                    a = edges[e][2 + p]
                    if legal[p] is None and a != -1:
                        raise ViewError("action given for a passing player")
                    if legal[p] is not None and a not in legal[p]:
                        raise ViewError(f"edge action {a} not legal for player {p}")


def _slices(depth: np.ndarray, count: int | None = None) -> list[tuple[int, int]]:
    if count is None:
        count = int(depth.max()) + 1 if len(depth) else 0
    bounds = np.searchsorted(depth, np.arange(count + 1), side="left")
    return [(int(bounds[d]), int(bounds[d + 1])) for d in range(count)]
