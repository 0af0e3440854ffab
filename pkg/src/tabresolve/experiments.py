"""End-to-end experiment pipelines shared by the CLI and the acceptance tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .abstraction import (ClusterSet, PropertyKind, SoftParams, build_abstract_game,
                          clusters_to_map, identity_map, kmeans_map, lift_policy,
                          property_vector)
from .bundle import Bundle
from .games import GameSpec
from .model import exhaustive_batch, fit_model, model_fidelity_report, sample_trajectories
from .realgame import real_game
from .resolving import compose_strategy
from .solver import CFRPlus, cfr_plus, exploitability, uniform_policy
from .valuation import build_portfolio, compute_value_table

log = logging.getLogger(__name__)

# named sub-streams of the master seed
SAMPLING, CLUSTERING, KMEANS, MATCH = range(4)


def substream(seed: int, name: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), name])


def geometric_schedule(limit: int) -> list[int]:
    """1, 2, 5, 10, 20, 50, ... up to and including ``limit``."""
    out = []
    base = 1
    while base <= limit:
        for m in (1, 2, 5):
            if base * m <= limit:
                out.append(base * m)
        base *= 10
    if not out or out[-1] != limit:
        out.append(limit)
    return out


def solve_curve(spec: GameSpec, iterations: int) -> list[tuple[int, float]]:
    """CFR+ exploitability at geometric checkpoints."""
    solver = CFRPlus(real_game(spec).view)
    rows = []
    for c in geometric_schedule(iterations):
        solver.iterate(c - solver.iteration)
        rows.append((c, exploitability(spec, solver.average_profile())))
    return rows


def uniform_exploitability(spec: GameSpec) -> float:
    view = real_game(spec).view
    return exploitability(spec, (uniform_policy(view, 0), uniform_policy(view, 1)))


def abstract_solve(spec: GameSpec, amap, iterations: int) -> tuple:
    """Solve the abstracted tree and lift the result back to real infosets."""
    res = cfr_plus(build_abstract_game(spec, amap), iterations)
    return tuple(lift_policy(res.profile[p], amap, spec, p) for p in (0, 1))


def abstract_eval(spec: GameSpec, kind, L: int, seed: int, iterations: int = 1000,
                  strategy_iterations: int = 4000, strategy=None) -> float:
    """Tabular k-means abstraction, solve, lift; returns the real exploitability."""
    kind = PropertyKind(kind)
    if kind.uses_strategy and strategy is None:
        strategy = _cached_strategy(spec, strategy_iterations)
    amap = kmeans_map(spec, kind, L, strategy if kind.uses_strategy else None,
                      substream(seed, KMEANS))
    return exploitability(spec, abstract_solve(spec, amap, iterations))


_STRATEGIES: dict = {}


def _cached_strategy(spec: GameSpec, iterations: int):
    key = (spec, iterations)
    if key not in _STRATEGIES:
        solver = CFRPlus(real_game(spec).view)
        solver.iterate(iterations)
        _STRATEGIES[key] = solver.average_profile()
    return _STRATEGIES[key]


def online_map(spec: GameSpec, batch, kind, L: int, strategy, rng,
               params: SoftParams = SoftParams()):
    """Feed every visited infoset of ``batch`` through online clustering, in order."""
    kind = PropertyKind(kind)
    rg = real_game(spec)
    view = rg.view
    vectors = []
    for p in (0, 1):
        pol = strategy[p] if kind.uses_strategy else None
        vectors.append([property_vector(k, kind, pol, spec) for k in view.infoset_keys[p]])
    clusters = ClusterSet(L, params)
    pubs = rg.pub_keys
    isets = view.iset
    for path in batch.paths:
        for node in path:
            if node < 0 or isets[0, node] < 0:
                break
            pub = pubs[rg.node_pub[node]]
            for p in (0, 1):
                clusters.observe(pub, p, vectors[p][isets[p, node]], rng)
    clusters.finalize(rng)
    return clusters_to_map(spec, clusters, kind, strategy if kind.uses_strategy else None)


@dataclass
class PipelineConfig:
    game: str = "goofspiel:4"
    kind: str = "legal-strategy-history"
    L: int = 0                    # 0 = identity abstraction
    T: int = 4
    depth: int = 1
    iterations: int = 1000
    blueprint_iterations: int = 1000
    trajectories: int = 100_000   # 0 = exhaustive batch
    eps: float = 0.5
    seed: int = 0
    clustering: str = "online"    # online | kmeans
    gamma: float = 1.0
    hard_threshold: float = 0.3
    repulsion: float = 0.5
    noise: float = 0.02
    rate: float = 0.05


def build_bundle(cfg: PipelineConfig) -> tuple[Bundle, dict]:
    """Sample, cluster, fit the model, value the portfolio and pack a bundle."""
    spec = GameSpec.parse(cfg.game)
    portfolio = build_portfolio(spec, cfg.T, cfg.blueprint_iterations)
    blueprint = portfolio.profile(0, 0)
    if cfg.trajectories > 0:
        batch = sample_trajectories(spec, blueprint, cfg.eps, cfg.trajectories,
                                    substream(cfg.seed, SAMPLING))
    else:
        batch = exhaustive_batch(spec)
    kind = PropertyKind(cfg.kind)
    if cfg.L <= 0:
        amap = identity_map(spec)
    elif cfg.clustering == "kmeans":
        amap = kmeans_map(spec, kind, cfg.L, blueprint if kind.uses_strategy else None,
                          substream(cfg.seed, KMEANS))
    else:
        params = SoftParams(cfg.gamma, cfg.hard_threshold, cfg.repulsion, cfg.noise, cfg.rate)
        amap = online_map(spec, batch, kind, cfg.L, blueprint, substream(cfg.seed, CLUSTERING),
                          params)
    model = fit_model(batch, amap)
    values = compute_value_table(spec, amap, portfolio, blueprint, cfg.eps)
    settings = {"depth": cfg.depth, "iterations": cfg.iterations, "T": cfg.T,
                "kind": kind.value, "seed": cfg.seed, "trajectories": cfg.trajectories,
                "portfolio": portfolio.labels}
    bundle = Bundle(spec, amap, model, values, blueprint, settings)
    fidelity = model_fidelity_report(model, spec, amap)
    return bundle, fidelity.as_dict()


def pipeline_eval(cfg: PipelineConfig) -> dict:
    """Build a bundle, resolve every public state and measure the composed strategy."""
    bundle, fidelity = build_bundle(cfg)
    profile = compose_strategy(bundle)
    out = {"exploitability": exploitability(bundle.spec, profile),
           "blueprint_exploitability": exploitability(bundle.spec, bundle.blueprint)}
    out.update(fidelity)
    return out
