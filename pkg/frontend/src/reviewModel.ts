// Review-session state: collects per-item verdicts while a run is paused
// and submits exactly the service's decision schema. Optimistic state is
// reconciled against the returned run status after submission.

import { ApiClient, PhaseConflictError } from "./api.js";
import type {
  ChecklistItem,
  ReviewDecision,
  ReviewDocument,
  RunStatus,
  Verdict,
  VerdictKind,
} from "./types.js";

export interface SplitChild {
  goal: string;
  acceptance_criteria: string[];
  inclusions?: string[];
  exclusions?: string[];
}

export interface SubmitOutcome {
  accepted: boolean;
  idempotent: boolean;
  status: RunStatus;
  conflict?: { error: string; phase?: string };
}

export class ReviewSession {
  readonly verdicts = new Map<string, Verdict>();
  submitted = false;

  constructor(readonly doc: ReviewDocument) {}

  item(itemId: string): ChecklistItem {
    const item = this.doc.items.find((row) => row.id === itemId);
    if (!item) throw new Error(`unknown checklist item ${itemId}`);
    return item;
  }

  private set(itemId: string, verdict: VerdictKind, payload: Record<string, unknown> = {}): void {
    this.item(itemId);
    this.verdicts.set(itemId, { item_id: itemId, verdict, payload });
  }

  approve(itemId: string): void {
    if (!this.item(itemId).acceptance_criteria.length) {
      throw new Error(
        `item ${itemId} has no acceptance criteria; edit or waive it instead`,
      );
    }
    this.set(itemId, "approve");
  }

  waive(itemId: string): void {
    this.set(itemId, "waive");
  }

  edit(
    itemId: string,
    payload: {
      goal?: string;
      inclusions?: string[];
      exclusions?: string[];
      acceptance_criteria?: string[];
      priority?: number;
    },
  ): void {
    this.set(itemId, "edit", { ...payload });
  }

  split(itemId: string, children: SplitChild[]): void {
    if (children.length < 2) throw new Error("a split needs at least two children");
    this.set(itemId, "split", { children });
  }

  merge(itemId: string, withIds: string[], merged: Record<string, unknown> = {}): void {
    for (const other of withIds) this.item(other);
    this.set(itemId, "merge", { with: withIds, merged });
    // absorbed items must not carry their own verdicts
    for (const other of withIds) this.verdicts.delete(other);
  }

  /** Approve every item that can be approved; waive the unclarified rest. */
  approveAll(): void {
    for (const item of this.doc.items) {
      if (this.verdicts.has(item.id)) continue;
      if (item.status === "verified" || item.status === "waived") continue;
      if (item.acceptance_criteria.length) this.approve(item.id);
      else this.waive(item.id);
    }
  }

  /** Items that still need a verdict before submission is complete. */
  pendingItems(): ChecklistItem[] {
    const absorbed = new Set<string>();
    for (const verdict of this.verdicts.values()) {
      if (verdict.verdict === "merge") {
        for (const other of (verdict.payload.with as string[]) ?? []) absorbed.add(other);
      }
    }
    return this.doc.items.filter(
      (item) =>
        item.status !== "verified" &&
        item.status !== "waived" &&
        !this.verdicts.has(item.id) &&
        !absorbed.has(item.id),
    );
  }

  buildDecision(): ReviewDecision {
    const pending = this.pendingItems();
    if (pending.length) {
      throw new Error(
        `unresolved items without verdicts: ${pending.map((item) => item.id).join(", ")}`,
      );
    }
    return {
      schema: "review-decision@1",
      checklist_version: this.doc.checklist_version,
      verdicts: [...this.verdicts.values()],
    };
  }

  async submit(api: ApiClient): Promise<SubmitOutcome> {
    const decision = this.buildDecision();
    try {
      const ack = await api.postReview(this.doc.run_id, decision);
      this.submitted = true;
      const status = await api.status(this.doc.run_id);
      return { accepted: ack.accepted, idempotent: ack.idempotent, status };
    } catch (error) {
      if (error instanceof PhaseConflictError) {
        // service moved on: refresh truth and explain instead of guessing
        const status = await api.status(this.doc.run_id);
        return {
          accepted: false,
          idempotent: false,
          status,
          conflict: { error: error.body.error, phase: error.body.phase },
        };
      }
      throw error;
    }
  }
}
