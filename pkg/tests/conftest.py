from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("emberpipe", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("emberpipe")

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def scenario_dir() -> Path:
    return SCENARIOS


def run_cli_simulate(name: str, out: Path, plots: bool = True):
    """Run ``emberpipe simulate`` in-process; returns (exit code, output dir)."""
    from emberpipe.cli import main
    args = ["simulate", "--scenario", str(SCENARIOS / f"{name}.json"), "--out", str(out)]
    if not plots:
        args.append("--no-plots")
    return main(args), out


@pytest.fixture(scope="session")
def shipped_runs(tmp_path_factory):
    """One CLI run per shipped scenario, shared by the mission and acceptance tests."""
    import json

    from emberpipe.mission import MissionReport
    runs = {}
    for name in ("facade", "kitchen"):
        code, out = run_cli_simulate(name, tmp_path_factory.mktemp(f"{name}_run1"))
        rep = MissionReport.from_ndjson((out / "report.ndjson").read_text(encoding="utf-8"))
        wall = json.loads((out / "run_info.json").read_text())["wall_time_s"]
        runs[name] = {"code": code, "dir": out, "report": rep, "wall": wall}
    return runs


def scenario_doc(name: str) -> dict:
    import json
    return json.loads((SCENARIOS / f"{name}.json").read_text(encoding="utf-8"))
