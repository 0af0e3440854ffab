"""Blueprint, strategy portfolio and the multi-valued state table."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .abstraction import AbstractionMap
from .games import GameSpec
from .model import mixed_node_behavior, node_abstraction
from .realgame import real_game
from .solver import (CFRPlus, backward, edge_factors, forward, node_behavior,
                     rows_from_policy, uniform_policy)
from .view import DECISION

log = logging.getLogger(__name__)

VALUES_VERSION = 1


def build_blueprint(spec: GameSpec, iterations: int):
    """CFR+ average profile of the real game."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    solver = CFRPlus(real_game(spec).view)
    solver.iterate(iterations)
    return solver.average_profile()


@dataclass
class Portfolio:
    """``members[p][i]`` is player ``p``'s ``i``-th strategy; index 0 is the blueprint."""

    members: tuple
    labels: list

    @property
    def T(self) -> int:
        return len(self.labels)

    def profile(self, i: int, j: int):
        return (self.members[0][i], self.members[1][j])


def geometric_checkpoints(start: int = 10, factor: int = 10):
    c = start
    while True:
        yield c
        c *= factor


def build_portfolio(spec: GameSpec, T: int, iterations: int = 1000, checkpoints=None,
                    blueprint=None) -> Portfolio:
    """``[blueprint, uniform, CFR+ averages at 10, 100, ...]`` cut to ``T`` entries.

    Checkpoints equal to the blueprint's iteration count are skipped so the
    members stay distinct.  ``blueprint`` overrides the CFR+ blueprint; an
    explicit ``checkpoints`` list that runs out is padded with the blueprint.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    view = real_game(spec).view
    solver = CFRPlus(view)
    members: tuple[list, list] = ([], [])
    labels: list[str] = []

    def add(profile, label):
        if len(labels) < T:
            members[0].append(profile[0])
            members[1].append(profile[1])
            labels.append(label)

    own_blueprint = blueprint is None
    if own_blueprint:
        solver.iterate(iterations)
        blueprint = solver.average_profile()
    add(blueprint, f"cfr+{iterations}" if own_blueprint else "blueprint")
    add((uniform_policy(view, 0), uniform_policy(view, 1)), "uniform")
    schedule = geometric_checkpoints() if checkpoints is None else iter(checkpoints)
    ckpt = CFRPlus(view)
    for c in schedule:
        if len(labels) >= T:
            break
        if own_blueprint and c == iterations:
            continue
        ckpt.iterate(c - ckpt.iteration)
        add(ckpt.average_profile(), f"cfr+{c}")
    while len(labels) < T:
        # a short explicit schedule pads with blueprint copies
        add(blueprint, "blueprint")
    return Portfolio(members, labels)


@dataclass
class ValueTable:
    """``entries[(pub, b1, b2)]`` is a ``T x T`` matrix of player-1 continuation values."""

    T: int
    entries: dict = field(default_factory=dict)
    warnings: int = 0

    def lookup(self, pub: bytes, pair) -> np.ndarray:
        """Stored matrix; else the mean over the public state's pairs; else zeros."""
        key = (pub, int(pair[0]), int(pair[1]))
        m = self.entries.get(key)
        if m is not None:
            return m
        same = self._by_pub().get(pub)
        if same:
            return np.mean(same, axis=0)
        self.warnings += 1
        log.warning("no value entries for public state %s; using zeros", pub.hex() or "<root>")
        return np.zeros((self.T, self.T))

    def _by_pub(self) -> dict:
        cache = self.__dict__.get("_pub_cache")
        if cache is None or cache[0] != len(self.entries):
            groups: dict = {}
            for k, v in self.entries.items():
                groups.setdefault(k[0], []).append(v)
            cache = (len(self.entries), groups)
            self.__dict__["_pub_cache"] = cache
        return cache[1]

    def to_dict(self) -> dict:
        return {
            "version": VALUES_VERSION,
            "T": self.T,
            "entries": [[k[0].hex(), k[1], k[2], v.tolist()] for k, v in sorted(self.entries.items())],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ValueTable":
        if data.get("version") != VALUES_VERSION:
            raise ValueError(f"unsupported value table version {data.get('version')}")
        table = cls(int(data["T"]))
        for pub, b1, b2, m in data["entries"]:
            table.entries[(bytes.fromhex(pub), b1, b2)] = np.array(m, dtype=float)
        return table


def belief_weights(spec: GameSpec, blueprint, eps: float = 0.5) -> np.ndarray:
    """Visit probability of every real node when both players mix ``eps`` uniform into the blueprint."""
    rg = real_game(spec)
    f = edge_factors(rg.view, mixed_node_behavior(rg, blueprint, eps))
    reach = forward(rg.view, f)
    return reach[0] * reach[1] * reach[2]


def continuation_values(spec: GameSpec, portfolio: Portfolio) -> np.ndarray:
    """``(T, T, n)`` expected future player-1 reward at every real node."""
    view = real_game(spec).view
    behav = [[node_behavior(view, p, rows_from_policy(view, p, pol)) for pol in portfolio.members[p]]
             for p in (0, 1)]
    T = portfolio.T
    out = np.empty((T, T, view.num_nodes))
    for i in range(T):
        for j in range(T):
            out[i, j] = backward(view, edge_factors(view, (behav[0][i], behav[1][j])))
    return out


def compute_value_table(spec: GameSpec, amap: AbstractionMap, portfolio: Portfolio,
                        blueprint=None, eps: float = 0.5) -> ValueTable:
    """Belief-weighted continuation values per ``(pub, b1, b2)``.

    The belief is the exact visit distribution of ``eps``-uniform sampling
    around ``blueprint`` (portfolio member 0 when omitted).
    """
    rg = real_game(spec)
    view = rg.view
    if blueprint is None:
        blueprint = portfolio.profile(0, 0)
    rho = belief_weights(spec, blueprint, eps)
    vals = continuation_values(spec, portfolio)
    ab = node_abstraction(rg, amap)
    nodes = np.flatnonzero(view.kind == DECISION)
    groups = np.stack([rg.node_pub[nodes], ab[0, nodes], ab[1, nodes]], axis=1)
    uniq, inv = np.unique(groups, axis=0, return_inverse=True)
    inv = inv.ravel()
    mass = np.bincount(inv, rho[nodes], minlength=len(uniq))
    T = portfolio.T
    table = ValueTable(T)
    sums = np.empty((T, T, len(uniq)))
    for i in range(T):
        for j in range(T):
            sums[i, j] = np.bincount(inv, rho[nodes] * vals[i, j, nodes], minlength=len(uniq))
    for g, (pid, b1, b2) in enumerate(uniq.tolist()):
        if mass[g] > 0:
            table.entries[(rg.pub_keys[pid], b1, b2)] = sums[:, :, g] / mass[g]
    return table

