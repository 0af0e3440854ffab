import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tabresolve.games import GameSpec  # noqa: E402


@pytest.fixture(scope="session")
def gs3():
    return GameSpec.parse("goofspiel:3")


@pytest.fixture(scope="session")
def gs4():
    return GameSpec.parse("goofspiel:4")


@pytest.fixture(scope="session")
def gs4_ne():
    from tabresolve.solver import solve_game
    return solve_game(GameSpec.parse("goofspiel:4"), 4000).profile


@pytest.fixture(scope="session")
def gs4_identity_bundle():
    from tabresolve.experiments import PipelineConfig, build_bundle
    bundle, _ = build_bundle(PipelineConfig(game="goofspiel:4", L=0, trajectories=0))
    return bundle


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with its measured detail."""
    lines = []
    for outcome in ("passed", "failed", "error", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or rep.when not in ("call", "setup"):
                continue
            if outcome == "skipped" and rep.when != "setup":
                continue
            name = nodeid.split("::")[-1]
            num = int(name.split("_")[2])
            detail = dict(rep.user_properties).get("detail", "")
            status = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
            lines.append((num, name, f"criterion {num:2d} {status}  {name}  {detail}".rstrip()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, _, text in sorted(lines):
            terminalreporter.write_line(text)
