// Resumable step feed: polls the service by index, keeps a gap-free,
// ordered record list, and survives disconnects by re-asking from the
// last index it has seen.

import { ApiClient } from "./api.js";
import type { StepRecord } from "./types.js";

export class StepFeed {
  readonly records: StepRecord[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly runId: string,
  ) {}

  get next(): number {
    return this.records.length;
  }

  /** One poll cycle; returns the number of new records appended. */
  async poll(): Promise<number> {
    const batch = await this.api.steps(this.runId, this.next);
    let appended = 0;
    for (const record of batch.records) {
      if (record.step_index < this.next) continue; // overlap from a retried poll
      if (record.step_index !== this.records.length) {
        throw new Error(
          `feed gap: expected step ${this.records.length}, got ${record.step_index}`,
        );
      }
      this.records.push(record);
      appended += 1;
    }
    return appended;
  }

  /** Poll until the run reaches a terminal phase; resolves with the feed. */
  async follow(pollMs = 200, timeoutMs = 60_000): Promise<StepRecord[]> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      await this.poll();
      const status = await this.api.status(this.runId);
      if (["done", "failed", "aborted"].includes(status.phase)) {
        await this.poll();
        return this.records;
      }
      if (Date.now() > deadline) throw new Error("feed follow timed out");
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }

  /** Invariant check: indices rendered are exactly 0..current. */
  isGapFree(): boolean {
    return this.records.every((record, index) => record.step_index === index);
  }
}
