// Browser bootstrap: wires the API client, review session, step feed,
// and report view onto the page. All markup comes from render.ts.

import { ApiClient } from "./api.js";
import { StepFeed } from "./feed.js";
import {
  renderCitationPopover,
  renderFeed,
  renderReport,
  renderReviewPanel,
  renderStatus,
} from "./render.js";
import { ReviewSession } from "./reviewModel.js";
import type { ReportView } from "./types.js";

const api = new ApiClient("");

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

let activeRun: string | null = null;
let session: ReviewSession | null = null;
let feed: StepFeed | null = null;
let reportView: ReportView | null = null;

async function refreshStatus(): Promise<void> {
  if (!activeRun) return;
  const status = await api.status(activeRun);
  element("status").innerHTML = renderStatus(status);
  if (status.phase === "awaiting-review" && !session) {
    const doc = await api.pendingChecklist(activeRun);
    session = new ReviewSession(doc);
    element("review").innerHTML = renderReviewPanel(doc);
    wireReviewPanel();
  }
  if (status.phase === "done" && !reportView) {
    reportView = await api.report(activeRun);
    element("report").innerHTML = renderReport(reportView);
    wirePopovers();
  }
}

function wireReviewPanel(): void {
  const panel = element("review");
  panel.querySelectorAll<HTMLButtonElement>("button[data-verdict]").forEach((button) => {
    button.addEventListener("click", () => {
      if (!session) return;
      const slot = button.closest<HTMLElement>(".verdict-slot");
      const itemId = slot?.dataset.itemId;
      if (!itemId) return;
      const verdict = button.dataset.verdict;
      const input = panel.querySelector<HTMLInputElement>(
        `input.goal-input[data-item-id="${itemId}"]`,
      );
      if (verdict === "approve") session.approve(itemId);
      if (verdict === "waive") session.waive(itemId);
      if (verdict === "edit" && input) {
        session.edit(itemId, { goal: input.value });
      }
      if (verdict === "split" && input) {
        session.split(itemId, [
          { goal: `${input.value} — part 1`, acceptance_criteria: ["covers part 1"] },
          { goal: `${input.value} — part 2`, acceptance_criteria: ["covers part 2"] },
        ]);
      }
      const chosen = panel.querySelector<HTMLElement>(`.chosen[data-item-id="${itemId}"]`);
      if (chosen && verdict) chosen.textContent = verdict;
    });
  });
  element("approve-all").addEventListener("click", () => session?.approveAll());
  element("submit-review").addEventListener("click", async () => {
    if (!session || !activeRun) return;
    const outcome = await session.submit(api);
    if (outcome.conflict) {
      element("review").innerHTML =
        `<p class="conflict">Review rejected (${outcome.conflict.error}); ` +
        `run is now in phase ${outcome.conflict.phase}.</p>`;
    } else {
      element("review").innerHTML = "<p>Decision submitted; run resumed.</p>";
    }
    session = null;
    await refreshStatus();
  });
}

function wirePopovers(): void {
  element("report")
    .querySelectorAll<HTMLElement>(".cite[data-evidence-id]")
    .forEach((cite) => {
      cite.addEventListener("click", () => {
        if (!reportView) return;
        const evidenceId = cite.dataset.evidenceId ?? "";
        const detail = reportView.evidence[evidenceId];
        const holder = element("popover-holder");
        holder.innerHTML = detail
          ? renderCitationPopover(evidenceId, detail)
          : `<div class="popover">unknown evidence ${evidenceId}</div>`;
      });
    });
}

async function pollLoop(): Promise<void> {
  if (activeRun) {
    await refreshStatus();
    if (feed) {
      await feed.poll();
      element("feed").innerHTML = renderFeed(feed.records);
    }
  }
  setTimeout(pollLoop, 500);
}

export function start(): void {
  element("create-run").addEventListener("click", async () => {
    const query = element<HTMLInputElement>("query").value;
    const { run_id } = await api.createRun(query);
    activeRun = run_id;
    session = null;
    reportView = null;
    feed = new StepFeed(api, run_id);
    element("run-id").textContent = run_id;
  });
  element("abort-run").addEventListener("click", async () => {
    if (activeRun) await api.abort(activeRun);
  });
  void pollLoop();
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
