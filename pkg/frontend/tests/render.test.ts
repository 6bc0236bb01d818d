import { describe, expect, it } from "vitest";

import { StepFeed } from "../src/feed.js";
import {
  escapeHtml,
  renderChecklistItem,
  renderReport,
  renderReviewPanel,
  renderStatus,
  renderStep,
} from "../src/render.js";
import { ReviewSession } from "../src/reviewModel.js";
import type {
  ChecklistItem,
  ReportView,
  ReviewDocument,
  RunStatus,
  StepBatch,
  StepRecord,
} from "../src/types.js";

function item(id: string, goal: string, criteria: string[] = ["c"]): ChecklistItem {
  return {
    id,
    goal,
    inclusions: [],
    exclusions: [],
    acceptance_criteria: criteria,
    priority: 1,
    depends_on: [],
    status: criteria.length ? "draft" : "needs-clarification",
    bound_nodes: [],
  };
}

function reviewDoc(items: ChecklistItem[]): ReviewDocument {
  items.forEach((row, index) => (row.priority = index + 1));
  return {
    schema: "review-document@1",
    run_id: "run-x",
    phase: "awaiting-review",
    checklist_version: "clv-abc",
    round_index: 0,
    query: "the question",
    items,
    intents: [
      { item_id: items[0].id, kind: "refine-scope", prompt_text: "clarify scope", resolution: null },
    ],
    verdict_slots: items.map((row) => ({ item_id: row.id, verdict: null, payload: {} })),
    lineage: [],
  };
}

describe("renderers", () => {
  it("escapes user text", () => {
    expect(escapeHtml("<b>&\"'</b>")).toBe("&lt;b&gt;&amp;&quot;&#39;&lt;/b&gt;");
  });

  it("review panel shows goals verbatim with verdict slots", () => {
    const doc = reviewDoc([item("item-a", 'Goal with <angle> & "quotes"'), item("item-b", "plain")]);
    const html = renderReviewPanel(doc);
    expect(html).toContain('data-version="clv-abc"');
    expect(html).toContain("Goal with &lt;angle&gt; &amp; &quot;quotes&quot;");
    expect((html.match(/verdict-slot/g) ?? []).length).toBe(2);
    expect(html).toContain("refine-scope");
  });

  it("items without criteria are visibly unclarified", () => {
    const html = renderChecklistItem(item("item-a", "goal", []), []);
    expect(html).toContain("no acceptance criteria yet");
  });

  it("status renders phase and stop reason", () => {
    const status: RunStatus = {
      schema: "run-status@1",
      run_id: "run-1",
      query: "q",
      phase: "done",
      step_index: 7,
      stop_reason: "all-goals-satisfied",
      error: null,
    };
    const html = renderStatus(status);
    expect(html).toContain('data-phase="done"');
    expect(html).toContain("all-goals-satisfied");
  });

  it("step record renders all five components", () => {
    const record: StepRecord = {
      step_index: 3,
      thought: "think <hard>",
      action_thought: "because",
      action_code: { tool: "search", parameters: { task_ids: ["t1"] }, task_descriptor: "d" },
      observation: { tool: "search", digest: "2 ok", effects: {} },
      state_snapshot_id: "state-abc",
      wall_time: "",
      prev_hash: "",
    };
    const html = renderStep(record);
    expect(html).toContain("think &lt;hard&gt;");
    expect(html).toContain("state-abc");
    expect(html).toContain('data-step="3"');
  });
});

function reportView(): ReportView {
  return {
    schema: "report-view@1",
    run_id: "run-x",
    markdown: "",
    report: {
      schema: "report@1",
      run_id: "run-x",
      outline_version: 3,
      sections: [
        {
          node_id: "n1",
          title: "Covered section",
          gap: false,
          passages: [
            { text: "lead", claim: null },
            {
              text: "a cited claim",
              claim: {
                id: "claim-1", category: "cost", hedged: false,
                evidence_ids: ["ev-1"], citation_numbers: [1], audit_score: 0.9,
              },
            },
            {
              text: "a weak claim",
              claim: {
                id: "claim-2", category: "general", hedged: true,
                evidence_ids: [], citation_numbers: [], audit_score: 0.1,
              },
            },
          ],
        },
        { node_id: "n2", title: "Empty section", gap: true, passages: [] },
      ],
      visuals: [
        {
          kind: "table", node_id: "n1", caption: "figures",
          data: [{ label: "src", value: 42, unit: "%", evidence_ids: ["ev-1"] }],
          evidence_ids: ["ev-1"],
        },
      ],
      citations: {
        entries: [{ locator: ["n1", "claim-1"], evidence_id: "ev-1", reference_number: 1 }],
        references: [{ number: 1, source: "https://example.org", excerpt_hash: "x", formatted: "https://example.org (fetched 2024-05-01)" }],
      },
    },
    evidence: {
      "ev-1": {
        source: "https://example.org",
        summary: "summary",
        excerpt: "the excerpt",
        timestamp: "2024-05-01T00:00:00+00:00",
        confidence: 0.8,
      },
    },
  };
}

describe("report rendering", () => {
  it("citations carry evidence ids; hedged claims are marked; gaps call out", () => {
    const html = renderReport(reportView());
    expect(html).toContain('data-evidence-id="ev-1"');
    expect(html).toContain('mark class="hedge"');
    expect(html).toContain("gap-callout");
    expect(html).toContain("figures");
    expect(html).toContain('<li value="1">');
  });
});

describe("review session model", () => {
  it("approveAll approves items with criteria and waives the rest", () => {
    const doc = reviewDoc([item("item-a", "a"), item("item-b", "b", [])]);
    const session = new ReviewSession(doc);
    session.approveAll();
    const decision = session.buildDecision();
    const byId = new Map(decision.verdicts.map((v) => [v.item_id, v.verdict]));
    expect(byId.get("item-a")).toBe("approve");
    expect(byId.get("item-b")).toBe("waive");
    expect(decision.checklist_version).toBe("clv-abc");
    expect(decision.schema).toBe("review-decision@1");
  });

  it("approve refuses items without criteria", () => {
    const session = new ReviewSession(reviewDoc([item("item-a", "a", [])]));
    expect(() => session.approve("item-a")).toThrow(/waive/);
  });

  it("split requires two children and merge absorbs verdicts", () => {
    const doc = reviewDoc([item("item-a", "a"), item("item-b", "b")]);
    const session = new ReviewSession(doc);
    expect(() => session.split("item-a", [{ goal: "only", acceptance_criteria: [] }]))
      .toThrow(/two children/);
    session.waive("item-b");
    session.merge("item-a", ["item-b"]);
    const decision = session.buildDecision();
    expect(decision.verdicts.length).toBe(1);
    expect(decision.verdicts[0].verdict).toBe("merge");
  });

  it("buildDecision fails while unresolved items have no verdicts", () => {
    const session = new ReviewSession(reviewDoc([item("item-a", "a"), item("item-b", "b")]));
    session.approve("item-a");
    expect(() => session.buildDecision()).toThrow(/item-b/);
  });
});

describe("step feed gap detection", () => {
  function stubApi(batches: StepBatch[]): { steps: () => Promise<StepBatch> } {
    let call = 0;
    return {
      steps: async () => batches[Math.min(call++, batches.length - 1)],
    };
  }

  function rec(index: number): StepRecord {
    return {
      step_index: index,
      thought: "t", action_thought: "a",
      action_code: { tool: "noop", parameters: {}, task_descriptor: "" },
      observation: { tool: "noop", digest: "", effects: {} },
      state_snapshot_id: `s${index}`, wall_time: "", prev_hash: "",
    };
  }

  it("appends in order and rejects gaps", async () => {
    const ok = stubApi([
      { schema: "step-batch@1", start: 0, next: 2, records: [rec(0), rec(1)] },
      { schema: "step-batch@1", start: 2, next: 3, records: [rec(2)] },
    ]);
    const feed = new StepFeed(ok as never, "run-x");
    expect(await feed.poll()).toBe(2);
    expect(await feed.poll()).toBe(1);
    expect(feed.isGapFree()).toBe(true);

    const gappy = stubApi([
      { schema: "step-batch@1", start: 0, next: 2, records: [rec(0), rec(2)] },
    ]);
    const broken = new StepFeed(gappy as never, "run-x");
    await expect(broken.poll()).rejects.toThrow(/feed gap/);
  });
});
