from __future__ import annotations

from pathlib import Path

import pytest

from deepresearch.config import RunConfig
from deepresearch.engine import RunResult, run_episode
from deepresearch.fixtures import build_demo, build_long_run, build_stop_at_seven
from deepresearch.mocks import FixtureEnvironment, Scenario, ScriptedPolicy


@pytest.fixture(scope="session")
def demo_fixtures(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("fx") / "demo"
    build_demo(path)
    return path


@pytest.fixture(scope="session")
def stop7_fixtures(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("fx") / "stop7"
    build_stop_at_seven(path)
    return path


@pytest.fixture(scope="session")
def longrun_fixtures(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("fx") / "longrun"
    build_long_run(path)
    return path


def make_config(fixtures: Path, **overrides) -> RunConfig:
    base = dict(
        mock=True,
        fixtures_path=str(fixtures),
        critic_mode="none",
        max_steps=24,
        min_evidence_per_leaf=1,
    )
    base.update(overrides)
    return RunConfig(**base)


def run_scenario(fixtures: Path, out_dir: Path, *, query: str = "", **overrides) -> RunResult:
    scenario = Scenario.load(fixtures)
    config = make_config(fixtures, **overrides)
    return run_episode(
        query or scenario.default_query,
        config,
        ScriptedPolicy(scenario),
        FixtureEnvironment(scenario),
        None,
        out_dir=out_dir,
        fixtures_hash=scenario.manifest_hash(),
    )


@pytest.fixture(scope="session")
def demo_run(demo_fixtures, tmp_path_factory) -> RunResult:
    """One completed demo run, shared read-only across tests."""
    out = tmp_path_factory.mktemp("runs")
    result = run_scenario(demo_fixtures, out, critic_mode="llm")
    assert result.status == "done", result.error
    return result
