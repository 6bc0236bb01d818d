"""Acceptance suite.

One test per acceptance criterion, each printing a PASS line with its
measured runtime. All comparisons are exact; oracles are independent
reimplementations (set arithmetic, exhaustive sorts, topological
checks), never the code paths they verify.
"""

from __future__ import annotations

import json
import os
import random
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest

from conftest import make_config, run_scenario
from deepresearch.config import RankWeights
from deepresearch.evidence import EvidenceStore, RawResult, ingest, normalize_text, rank_critic
from deepresearch.fixtures import build_synthetic
from deepresearch.ids import sha256_hex
from deepresearch.records import History, assemble_steps, genesis_hash, read_trace, verify_chain
from deepresearch.report import CLAIM_COMMENT_RE, CITATION_REF_RE, HEDGE_MARKER, lint_report_markdown


class Criterion:
    def __init__(self, name: str, budget_s: float) -> None:
        self.name = name
        self.budget_s = budget_s
        self.started = time.monotonic()

    def done(self) -> None:
        elapsed = time.monotonic() - self.started
        assert elapsed < self.budget_s, (
            f"{self.name}: took {elapsed:.1f}s, budget {self.budget_s}s"
        )
        print(f"ACCEPTANCE PASS — {self.name} ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------


def test_determinism_byte_identical_runs(demo_fixtures, tmp_path):
    crit = Criterion("determinism: byte-identical traces and reports", 30.0)
    first = run_scenario(demo_fixtures, tmp_path / "a", critic_mode="llm")
    second = run_scenario(demo_fixtures, tmp_path / "b", critic_mode="llm")
    assert first.status == second.status == "done"
    assert first.run_id == second.run_id
    for rel in ("trace.jsonl", "report/report.md", "report/report.json"):
        assert (first.run_dir / rel).read_bytes() == (second.run_dir / rel).read_bytes(), rel
    crit.done()


def test_ingestion_matches_set_union_oracle(tmp_path):
    crit = Criterion("ingestion: distinct-hash oracle and order insensitivity", 10.0)

    class OneLinePolicy:
        def complete(self, template, bindings):
            return bindings["text"].split(".")[0] + "."

    rng = random.Random(20_26)
    pool = [f"Document body {i} with shared content." for i in range(40)]
    batches: list[list[RawResult]] = []
    for batch_index in range(50):
        batch = []
        for doc_index in range(rng.randint(1, 20)):
            body = rng.choice(pool)
            status = "ok" if rng.random() > 0.15 else "error:500"
            batch.append(
                RawResult(
                    source=f"https://example.org/{batch_index}/{doc_index}",
                    fetched_at="2024-01-01T00:00:00+00:00",
                    status=status,
                    body=body,
                    search_task_id=f"task-{batch_index}",
                    step_index=batch_index,
                )
            )
        batches.append(batch)

    store = EvidenceStore(tmp_path / "a")
    oracle: set[str] = set()
    for batch in batches:
        ingest(batch, store, OneLinePolicy())
        oracle |= {
            f"ev-{sha256_hex(normalize_text(r.body))[:16]}" for r in batch if r.ok
        }
        assert len(store) == len(oracle)
        assert store.ids() == oracle

    permuted = EvidenceStore(tmp_path / "b")
    order = list(range(len(batches)))
    rng.shuffle(order)
    for index in order:
        ingest(batches[index], permuted, OneLinePolicy())
    assert permuted.ids() == store.ids()
    crit.done()


def test_rank_critic_matches_exhaustive_sort(tmp_path):
    crit = Criterion("rank critic: exhaustive weighted-sum oracle", 10.0)
    from test_rank import make_unit, oracle_rank

    rng = random.Random(4099)
    weights = RankWeights()
    for trial in range(100):
        candidates = [make_unit(rng, i) for i in range(rng.randint(1, 100))]
        context = "economic market data growth users"
        got = rank_critic(candidates, context, weights)
        want = oracle_rank(candidates, context, weights)
        assert [u.id for u, _ in got] == [u.id for u, _ in want], f"trial {trial}"
    crit.done()


def test_workspace_bounded_on_fifty_step_run(longrun_fixtures, tmp_path):
    crit = Criterion("workspace boundedness on a 50-step run", 30.0)
    budget = 10_000
    result = run_scenario(
        longrun_fixtures, tmp_path, max_steps=50, min_evidence_per_leaf=6,
        workspace_budget=budget,
    )
    assert result.status == "done"
    assert result.stop.reason == "horizon-reached"
    workspace_files = sorted((result.run_dir / "workspace").glob("step-*.txt"))
    assert len(workspace_files) == 50
    for path in workspace_files:
        assert len(path.read_text(encoding="utf-8")) <= budget, path.name
    records = assemble_steps(read_trace(result.run_dir / "trace.jsonl"))
    history = History("q", "s0")
    for record in records:
        history.append(record)
    assert history.serialized_size() > 10 * budget
    crit.done()


def test_checklist_gate_binding_and_topology():
    crit = Criterion("checklist gate: binding completeness and ordering", 5.0)
    from test_outline import leaf_positions, random_verified_checklist
    from deepresearch.outline import compile_outline

    rng = random.Random(77)
    for _ in range(25):
        checklist = random_verified_checklist(rng, rng.randint(1, 12))
        outline = compile_outline(checklist)
        verified = {item.id for item in checklist.items if item.status == "verified"}
        bound = {i for node in outline.leaves() for i in node.bound_items}
        assert bound == verified
        position = leaf_positions(outline)
        for item in checklist.items:
            for dep in item.depends_on:
                assert position[dep] < position[item.id]
    crit.done()


def _assert_citation_soundness(run_dir: Path) -> None:
    markdown = (run_dir / "report" / "report.md").read_text(encoding="utf-8")
    assert lint_report_markdown(markdown) == []
    report = json.loads((run_dir / "report" / "report.json").read_text(encoding="utf-8"))
    store = EvidenceStore(run_dir / "store")
    final_ids = store.ids()
    cited = {entry["evidence_id"] for entry in report["citations"]["entries"]}
    for spec in report.get("visuals", []):
        cited.update(spec["evidence_ids"])
        for row in spec["data"]:
            assert row["evidence_ids"]
    assert cited <= final_ids
    # zero unsupported unflagged claims: every rendered claim either cites or hedges
    for match in CLAIM_COMMENT_RE.finditer(markdown):
        _cid, _cat, rest = match.groups()
        assert CITATION_REF_RE.search(rest) or HEDGE_MARKER in rest
    # and structurally: non-hedged claims carry resolvable evidence
    for section in report["sections"]:
        for passage in section["passages"]:
            claim = passage.get("claim")
            if claim and not claim["hedged"]:
                assert claim["evidence_ids"]
                assert set(claim["evidence_ids"]) <= final_ids


def test_citation_soundness_three_scripted_runs(demo_fixtures, tmp_path):
    crit = Criterion("citation soundness across three scripted runs", 60.0)
    # run 1: fully supported demo
    first = run_scenario(demo_fixtures, tmp_path / "a", critic_mode="llm")
    # run 2: audit threshold forces hedged claims
    second = run_scenario(
        demo_fixtures, tmp_path / "b", critic_mode="llm", audit_threshold=0.99,
        unsupported_policy="hedge",
    )
    # run 3: missing corpus creates evidence gaps, horizon stop
    gap_fx = tmp_path / "fx-gaps"
    build_synthetic(gap_fx, n_items=4, evidence_per_item=1, docs_per_search=2,
                    drop_corpus_for={1, 2})
    third = run_scenario(gap_fx, tmp_path / "c", max_steps=10)
    for result in (first, second, third):
        assert result.status == "done", result.error
        _assert_citation_soundness(result.run_dir)
    hedged_md = (second.run_dir / "report" / "report.md").read_text()
    assert HEDGE_MARKER in hedged_md
    gap_md = (third.run_dir / "report" / "report.md").read_text()
    assert "EVIDENCE GAP" in gap_md
    crit.done()


def test_stop_signal_fires_at_step_seven(stop7_fixtures, tmp_path):
    crit = Criterion("stop signal: all goals at exactly step 7", 15.0)
    result = run_scenario(stop7_fixtures, tmp_path / "full", max_steps=20)
    assert result.status == "done"
    assert result.stop.reason == "all-goals-satisfied"
    assert result.stop.step == 7

    # removing one fixture delays the stop to the horizon
    lame_fx = tmp_path / "fx-miss"
    build_synthetic(lame_fx, n_items=7, evidence_per_item=1, docs_per_search=2,
                    pad_chars=300, drop_corpus_for={4})
    delayed = run_scenario(lame_fx, tmp_path / "miss", max_steps=12)
    assert delayed.status == "done"
    assert delayed.stop.reason == "horizon-reached"
    assert delayed.stop.step == 12
    crit.done()


def test_ablation_pipeline_shapes(demo_fixtures, tmp_path):
    crit = Criterion("ablation flags produce the four pipeline shapes", 60.0)
    conditions = {
        "full": dict(vcm_enabled=True, eam_enabled=True),
        "vcm-only": dict(vcm_enabled=True, eam_enabled=False),
        "eam-only": dict(vcm_enabled=False, eam_enabled=True),
        "neither": dict(vcm_enabled=False, eam_enabled=False),
    }
    for name, flags in conditions.items():
        result = run_scenario(demo_fixtures, tmp_path / name, max_steps=24, **flags)
        assert result.status == "done", (name, result.error)
        has_checklist = (result.run_dir / "checklist" / "version-final.json").exists()
        has_audit = (result.run_dir / "audit" / "bundle.json").exists()
        assert has_checklist == flags["vcm_enabled"], name
        assert has_audit == flags["eam_enabled"], name
        assert (result.run_dir / "report" / "report.md").exists(), name
    crit.done()


def _store_ids(run_dir: Path) -> set[str]:
    ids = set()
    units_log = run_dir / "store" / "units.jsonl"
    for line in units_log.read_text(encoding="utf-8").splitlines():
        event = json.loads(line)
        if event["event"] == "unit":
            ids.add(event["unit"]["id"])
    return ids


def test_crash_resume_store_equivalence(stop7_fixtures, tmp_path):
    crit = Criterion("crash-resume: SIGKILL then identical store id-set", 60.0)
    base_args = [
        sys.executable, "-m", "deepresearch.cli", "run",
        "--fixtures", str(stop7_fixtures), "--critic", "none",
        "--max-steps", "20", "--step-delay-ms", "300",
    ]
    reference = subprocess.run(
        base_args + ["--out", str(tmp_path / "ref")],
        capture_output=True, text=True, timeout=120,
    )
    assert reference.returncode == 0, reference.stderr
    reference_dir = next((tmp_path / "ref").iterdir())

    process = subprocess.Popen(
        base_args + ["--out", str(tmp_path / "crash")],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
    )
    kill_after = random.Random(8088).uniform(0.7, 1.5)
    time.sleep(kill_after)
    process.send_signal(signal.SIGKILL)
    process.wait()

    crashed_dir = next((tmp_path / "crash").iterdir())
    status = json.loads((crashed_dir / "status.json").read_text(encoding="utf-8"))
    assert status["phase"] != "done", "kill landed after completion; nothing recovered"
    resumed = subprocess.run(
        [sys.executable, "-m", "deepresearch.cli", "resume", str(crashed_dir)],
        capture_output=True, text=True, timeout=120,
    )
    assert resumed.returncode == 0, resumed.stderr
    final_status = json.loads((crashed_dir / "status.json").read_text(encoding="utf-8"))
    assert final_status["phase"] == "done"
    assert _store_ids(crashed_dir) == _store_ids(reference_dir)
    # the resumed trace must still verify end to end
    header = json.loads((crashed_dir / "run.json").read_text(encoding="utf-8"))
    check = verify_chain(read_trace(crashed_dir / "trace.jsonl"), genesis_hash(header))
    assert check.ok
    print(f"  (killed during phase {status['phase']!r} after {kill_after:.2f}s)")
    crit.done()
