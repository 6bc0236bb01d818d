// Pure HTML renderers. All view construction happens here as string
// templates so behavior is testable without a DOM; main.ts only wires
// events onto the rendered markup.

import type {
  ChecklistItem,
  EvidenceDetail,
  FinalSection,
  PlanIntent,
  ReportView,
  ReviewDocument,
  RunStatus,
  StepRecord,
  VizSpec,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

export function renderStatus(status: RunStatus): string {
  const stop = status.stop_reason ? ` · stop: ${escapeHtml(status.stop_reason)}` : "";
  const error = status.error ? ` · error: ${escapeHtml(status.error)}` : "";
  return (
    `<div class="run-status" data-phase="${status.phase}">` +
    `<span class="phase phase-${status.phase}">${status.phase}</span>` +
    ` <span class="step">step ${status.step_index}</span>${stop}${error}</div>`
  );
}

function renderCriteria(item: ChecklistItem): string {
  if (!item.acceptance_criteria.length) {
    return '<em class="needs-clarification">no acceptance criteria yet</em>';
  }
  const rows = item.acceptance_criteria
    .map((criterion) => `<li>${escapeHtml(criterion)}</li>`)
    .join("");
  return `<ul class="criteria">${rows}</ul>`;
}

export function renderChecklistItem(item: ChecklistItem, intents: PlanIntent[]): string {
  const itemIntents = intents.filter((intent) => intent.item_id === item.id);
  const intentHtml = itemIntents
    .map(
      (intent) =>
        `<div class="intent intent-${intent.kind}">${escapeHtml(intent.kind)}: ` +
        `${escapeHtml(intent.prompt_text)}</div>`,
    )
    .join("");
  return (
    `<article class="item" data-item-id="${item.id}" data-status="${item.status}">` +
    `<header><span class="priority">#${item.priority}</span>` +
    `<input class="goal-input" data-item-id="${item.id}" value="${escapeHtml(item.goal)}"></header>` +
    renderCriteria(item) +
    intentHtml +
    `<footer class="verdict-slot" data-item-id="${item.id}">` +
    `<button data-verdict="approve">approve</button>` +
    `<button data-verdict="edit">save edit</button>` +
    `<button data-verdict="split">split</button>` +
    `<button data-verdict="waive">waive</button>` +
    `<span class="chosen" data-item-id="${item.id}"></span>` +
    `</footer></article>`
  );
}

export function renderReviewPanel(doc: ReviewDocument): string {
  const items = doc.items
    .map((item) => renderChecklistItem(item, doc.intents))
    .join("");
  return (
    `<section class="review" data-version="${doc.checklist_version}">` +
    `<h2>Checklist review (round ${doc.round_index + 1})</h2>` +
    `<p class="query">${escapeHtml(doc.query)}</p>` +
    items +
    `<div class="review-actions">` +
    `<button id="approve-all">Approve all</button>` +
    `<button id="submit-review">Submit decision</button>` +
    `</div></section>`
  );
}

export function renderStep(record: StepRecord): string {
  return (
    `<article class="step-record" data-step="${record.step_index}">` +
    `<h4>Step ${record.step_index} · ${escapeHtml(record.action_code.tool)}</h4>` +
    `<div class="component thought"><b>thought</b> ${escapeHtml(record.thought)}</div>` +
    `<div class="component action-thought"><b>action thought</b> ${escapeHtml(record.action_thought)}</div>` +
    `<div class="component action-code"><b>action code</b> <code>${escapeHtml(
      JSON.stringify(record.action_code),
    )}</code></div>` +
    `<div class="component observation"><b>observation</b> ${escapeHtml(
      record.observation.digest,
    )}</div>` +
    `<div class="component state"><b>state</b> <code>${escapeHtml(
      record.state_snapshot_id,
    )}</code></div>` +
    `</article>`
  );
}

export function renderFeed(records: StepRecord[]): string {
  return `<section class="feed">${records.map(renderStep).join("")}</section>`;
}

function renderViz(spec: VizSpec): string {
  const rows = spec.data
    .map(
      (row) =>
        `<tr><td>${escapeHtml(row.label)}</td><td>${row.value}</td>` +
        `<td>${escapeHtml(row.unit ?? "")}</td>` +
        `<td>${row.evidence_ids
          .map((id) => `<span class="cite" data-evidence-id="${id}">${id}</span>`)
          .join(" ")}</td></tr>`,
    )
    .join("");
  return (
    `<figure class="viz viz-${spec.kind}"><figcaption>${escapeHtml(spec.caption)}</figcaption>` +
    `<table><thead><tr><th>label</th><th>value</th><th>unit</th><th>evidence</th></tr></thead>` +
    `<tbody>${rows}</tbody></table></figure>`
  );
}

function renderSection(section: FinalSection, view: ReportView): string {
  if (section.gap) {
    return (
      `<section class="report-section gap" data-node="${section.node_id}">` +
      `<h3>${escapeHtml(section.title)}</h3>` +
      `<div class="gap-callout">⚠ Evidence gap: no audited evidence for this section.</div>` +
      `</section>`
    );
  }
  const passages = section.passages
    .map((passage) => {
      if (!passage.claim) return `<p class="lead">${escapeHtml(passage.text)}</p>`;
      const claim = passage.claim;
      if (claim.hedged) {
        return (
          `<p class="claim hedged" data-claim-id="${claim.id}" data-category="${claim.category}">` +
          `${escapeHtml(passage.text)} <mark class="hedge">unverified</mark></p>`
        );
      }
      const cites = claim.citation_numbers
        .map((num, index) => {
          const evidenceId = claim.evidence_ids[index] ?? claim.evidence_ids[0];
          return (
            `<sup class="cite" data-evidence-id="${evidenceId}" ` +
            `data-ref="${num}">[${num}]</sup>`
          );
        })
        .join("");
      return (
        `<p class="claim" data-claim-id="${claim.id}" data-category="${claim.category}">` +
        `${escapeHtml(passage.text)} ${cites}</p>`
      );
    })
    .join("");
  const visuals = view.report.visuals
    .filter((spec) => spec.node_id === section.node_id)
    .map(renderViz)
    .join("");
  return (
    `<section class="report-section" data-node="${section.node_id}">` +
    `<h3>${escapeHtml(section.title)}</h3>${passages}${visuals}</section>`
  );
}

export function renderCitationPopover(evidenceId: string, detail: EvidenceDetail): string {
  return (
    `<div class="popover" data-evidence-id="${evidenceId}">` +
    `<div class="popover-source"><a href="${escapeHtml(detail.source)}">${escapeHtml(
      detail.source,
    )}</a></div>` +
    `<div class="popover-excerpt">${escapeHtml(detail.excerpt)}</div>` +
    `<div class="popover-meta">fetched ${escapeHtml(detail.timestamp)} · confidence ${
      detail.confidence
    }</div></div>`
  );
}

export function renderReport(view: ReportView): string {
  const sections = view.report.sections
    .map((section) => renderSection(section, view))
    .join("");
  const references = view.report.citations.references
    .map(
      (ref) =>
        `<li value="${ref.number}"><span class="cite" data-evidence-id="${
          view.report.citations.entries.find((e) => e.reference_number === ref.number)
            ?.evidence_id ?? ""
        }">${escapeHtml(ref.formatted)}</span></li>`,
    )
    .join("");
  return (
    `<section class="report" data-run="${view.run_id}">` +
    `<h2>Report · ${view.run_id}</h2>${sections}` +
    `<h3>References</h3><ol class="references">${references}</ol></section>`
  );
}
