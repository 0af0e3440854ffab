"""Command-line experiment driver.

Exit codes: 0 success, 1 configuration error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys

from .bundle import Bundle, BundleError
from .config import ConfigError, ExperimentConfig
from .experiments import (MATCH, PipelineConfig, abstract_eval, build_bundle,
                          solve_curve, substream, uniform_exploitability)
from .games import GameSpec
from .resolving import PolicyAgent, ResolverAgent, UniformAgent, compose_strategy, play_match
from .solver import exploitability
from .valuation import build_blueprint

EXPLOIT_NOTE = "exploitability = mean of both players' best-response gains in game payoff units"


@contextlib.contextmanager
def _open_out(path: str):
    if path in ("", "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _write_csv(path: str, schema: str, note: str, columns, rows) -> None:
    with _open_out(path) as fh:
        fh.write(f"# schema={schema}; {note}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def _pipeline_cfg(cfg: ExperimentConfig, trajectories: int, seed: int) -> PipelineConfig:
    return PipelineConfig(
        game=cfg.game, kind=cfg.kind, L=cfg.L, T=cfg.T, depth=cfg.depth,
        iterations=cfg.iterations, blueprint_iterations=cfg.blueprint_iterations,
        trajectories=trajectories, eps=cfg.eps, seed=seed, clustering=cfg.clustering,
        gamma=cfg.gamma, hard_threshold=cfg.hard_threshold, repulsion=cfg.repulsion,
        noise=cfg.noise, rate=cfg.rate)


def cmd_solve(cfg: ExperimentConfig) -> None:
    rows = solve_curve(GameSpec.parse(cfg.game), cfg.iterations)
    _write_csv(cfg.output, "solve/1", EXPLOIT_NOTE, ["iteration", "exploitability"], rows)


def cmd_abstract_eval(cfg: ExperimentConfig) -> None:
    spec = GameSpec.parse(cfg.game)
    rows = []
    for L in cfg.limits:
        for seed in cfg.seeds:
            ex = abstract_eval(spec, cfg.kind, L, seed, cfg.iterations, cfg.strategy_iterations)
            rows.append((L, seed, ex))
    _write_csv(cfg.output, "abstract-eval/1", EXPLOIT_NOTE,
               ["L", "seed", "exploitability"], rows)


PIPELINE_COLUMNS = ["trajectories", "seed", "exploitability", "uniform_exploitability",
                    "blueprint_exploitability", "transition_accuracy", "reward_mae",
                    "terminal_accuracy", "mask_exactness", "holes", "coverage"]


def cmd_pipeline_eval(cfg: ExperimentConfig) -> None:
    spec = GameSpec.parse(cfg.game)
    uniform = uniform_exploitability(spec)
    rows = []
    for n in cfg.trajectories:
        for seed in cfg.seeds:
            bundle, fid = build_bundle(_pipeline_cfg(cfg, n, seed))
            if cfg.bundle:
                bundle.save(cfg.bundle.format(seed=seed, trajectories=n))
            composed = exploitability(spec, compose_strategy(bundle))
            rows.append((n, seed, composed, uniform, exploitability(spec, bundle.blueprint),
                         fid["transition_accuracy"], fid["reward_mae"], fid["terminal_accuracy"],
                         fid["mask_exactness"], fid["holes"], fid["coverage"]))
    _write_csv(cfg.output, "pipeline-eval/1",
               EXPLOIT_NOTE + "; reward_mae in game payoff units", PIPELINE_COLUMNS, rows)


def make_agent(text: str, cfg: ExperimentConfig):
    if text == "uniform":
        return UniformAgent()
    if text == "blueprint":
        spec = GameSpec.parse(cfg.game)
        return PolicyAgent(build_blueprint(spec, cfg.blueprint_iterations), name="blueprint")
    if text.startswith("bundle:"):
        bundle = Bundle.load(text[len("bundle:"):])
        if str(bundle.spec) != str(GameSpec.parse(cfg.game)):
            raise ConfigError(f"bundle is for {bundle.spec}, config game is {cfg.game}")
        return ResolverAgent(bundle, cfg.depth, cfg.iterations)
    raise ConfigError(f"unknown agent {text!r} (uniform, blueprint, bundle:PATH)")


MATCH_COLUMNS = ["agent_a", "agent_b", "episodes", "seed", "wins", "draws", "losses",
                 "win_rate", "win_rate_2sigma", "mean_reward", "mean_reward_2sigma", "fallbacks"]


def cmd_match(cfg: ExperimentConfig) -> None:
    spec = GameSpec.parse(cfg.game)
    a = make_agent(cfg.agent_a, cfg)
    b = make_agent(cfg.agent_b, cfg)
    seed = int(substream(cfg.seeds[0], MATCH).integers(2**31))
    rep = play_match(a, b, spec, cfg.episodes, seed)
    _write_csv(cfg.output, "match/1",
               "win_rate counts strict wins of agent A; 2sigma = 2*sqrt(p(1-p)/n); "
               "rewards in game payoff units from agent A's seat",
               MATCH_COLUMNS,
               [(cfg.agent_a, cfg.agent_b, rep.episodes, cfg.seeds[0], rep.wins, rep.draws,
                 rep.losses, rep.win_rate, rep.win_rate_2sigma, rep.mean_reward,
                 rep.reward_2sigma, rep.fallbacks)])
    if cfg.log:
        with open(cfg.log, "w", newline="") as fh:
            rep.write_log(fh)


def cmd_inspect_bundle(path: str) -> None:
    bundle = Bundle.load(path)
    info = bundle.manifest()
    info["settings"] = bundle.settings
    info["model"] = {"public_states": len(bundle.model.public_states()),
                     "public_edges": len(bundle.model.public),
                     "transitions": len(bundle.model.transitions)}
    info["values"] = {"entries": len(bundle.values.entries)}
    info["verified"] = True
    json.dump(info, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabresolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "abstract-eval", "pipeline-eval", "match"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective config and exit")
    p = sub.add_parser("inspect-bundle")
    p.add_argument("path")
    return parser


COMMANDS = {"solve": cmd_solve, "abstract-eval": cmd_abstract_eval,
            "pipeline-eval": cmd_pipeline_eval, "match": cmd_match}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect-bundle":
            cmd_inspect_bundle(args.path)
            return 0
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        cfg = ExperimentConfig.parse(text, args.set)
        if args.print_config:
            sys.stdout.write(cfg.format())
            return 0
        COMMANDS[args.command](cfg)
        return 0
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BundleError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any fault with its type
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
