"""Command-line entry points: run, resume, replay, serve, fixtures."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .engine import replay_run, resume_run, run_episode
from .mocks import FixtureEnvironment, Scenario, ScriptedPolicy
from .providers import HttpEnvironment, HttpPolicy


def _build_providers(config: RunConfig):
    if config.mock:
        scenario = Scenario.load(config.fixtures_path)
        return (
            ScriptedPolicy(scenario),
            FixtureEnvironment(scenario),
            scenario,
        )
    if not config.policy_endpoint or not config.search_endpoint:
        raise ConfigError("live mode requires policy_endpoint and search_endpoint")
    return (
        HttpPolicy(config.policy_endpoint),
        HttpEnvironment(config.search_endpoint),
        None,
    )


def _load_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        config = RunConfig.from_file(args.config)
    else:
        config = RunConfig()
    if getattr(args, "mock", False):
        config.mock = True
    if getattr(args, "fixtures", None):
        config.fixtures_path = args.fixtures
        config.mock = True
    if getattr(args, "critic", None):
        config.critic_mode = args.critic
    if getattr(args, "max_steps", None) is not None:
        config.max_steps = args.max_steps
    if getattr(args, "no_vcm", False):
        config.vcm_enabled = False
    if getattr(args, "no_eam", False):
        config.eam_enabled = False
    if getattr(args, "step_delay_ms", None) is not None:
        config.step_delay_ms = args.step_delay_ms
    return config


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _load_config(args)
        policy, environment, scenario = _build_providers(config)
    except Exception as exc:  # surfaced as a diagnostic, exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2

    query = args.query or (scenario.default_query if scenario else "")
    if not query:
        print("error: no query given and fixtures carry no default_query", file=sys.stderr)
        return 2
    if config.critic_mode == "human":
        print(
            "error: critic_mode=human needs the review service; start `deepresearch "
            "serve` and create the run over HTTP",
            file=sys.stderr,
        )
        return 2

    fixtures_hash = scenario.manifest_hash() if scenario else ""
    out_dir = Path(args.out)
    result = run_episode(
        query,
        config,
        policy,
        environment,
        None,
        out_dir=out_dir,
        run_id=args.run_id,
        fixtures_hash=fixtures_hash,
    )
    print(f"run {result.run_id}: {result.status} after {result.steps} step(s)")
    if result.stop:
        print(f"stop: {result.stop.reason} at step {result.stop.step}")
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    print(f"artifacts: {result.run_dir}")
    return 0 if result.status == "done" else 1


def cmd_resume(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    try:
        header = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
        config = RunConfig.from_dict(header["config"])
        policy, environment, _ = _build_providers(config)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = resume_run(run_dir, policy, environment, None)
    print(f"run {result.run_id}: {result.status} after {result.steps} step(s)")
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    return 0 if result.status == "done" else 1


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.path)
    run_dir = path.parent if path.is_file() else path
    try:
        result = replay_run(run_dir)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.message)
    if result.ok:
        print(f"final state snapshot: {result.final_state_id}")
        return 0
    return 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args)
    app = create_app(runs_dir=args.runs_dir, default_config=config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_fixtures(args: argparse.Namespace) -> int:
    from .fixtures import build_demo, build_long_run, build_stop_at_seven

    builders = {
        "demo": build_demo,
        "stop7": build_stop_at_seven,
        "longrun": build_long_run,
    }
    target = Path(args.out)
    builders[args.name](target)
    print(f"wrote {args.name} fixtures to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepresearch",
        description="Checklist-gated, evidence-audited research runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one research run")
    run_p.add_argument("--query", default="", help="research question")
    run_p.add_argument("--config", help="config file (json or yaml)")
    run_p.add_argument("--mock", action="store_true", help="use offline fixtures")
    run_p.add_argument("--fixtures", help="fixture directory (implies --mock)")
    run_p.add_argument("--critic", choices=["human", "llm", "none"])
    run_p.add_argument("--max-steps", type=int, dest="max_steps")
    run_p.add_argument("--no-vcm", action="store_true", dest="no_vcm",
                       help="disable the checklist module")
    run_p.add_argument("--no-eam", action="store_true", dest="no_eam",
                       help="disable the evidence-audit module")
    run_p.add_argument("--step-delay-ms", type=int, dest="step_delay_ms")
    run_p.add_argument("--out", default="runs", help="runs directory")
    run_p.add_argument("--run-id", dest="run_id")
    run_p.set_defaults(func=cmd_run)

    resume_p = sub.add_parser("resume", help="resume an interrupted run")
    resume_p.add_argument("run_dir")
    resume_p.set_defaults(func=cmd_resume)

    replay_p = sub.add_parser("replay", help="verify a run's trace")
    replay_p.add_argument("path", help="run directory or trace file")
    replay_p.set_defaults(func=cmd_replay)

    serve_p = sub.add_parser("serve", help="start the review/monitoring service")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8400)
    serve_p.add_argument("--runs-dir", default="runs", dest="runs_dir")
    serve_p.add_argument("--config", help="default run config file")
    serve_p.add_argument("--mock", action="store_true")
    serve_p.add_argument("--fixtures", help="fixture directory (implies --mock)")
    serve_p.add_argument("--critic", choices=["human", "llm", "none"])
    serve_p.set_defaults(func=cmd_serve)

    fixtures_p = sub.add_parser("fixtures", help="write a bundled fixture set")
    fixtures_p.add_argument("name", choices=["demo", "stop7", "longrun"])
    fixtures_p.add_argument("--out", required=True)
    fixtures_p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
