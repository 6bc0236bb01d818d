// Thin typed client over the service HTTP API. The UI never touches run
// state except through these endpoints.

import type {
  ReportView,
  ReviewAck,
  ReviewDecision,
  ReviewDocument,
  RunStatus,
  ServiceError,
  StepBatch,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: ServiceError,
  ) {
    super(body.error ?? `HTTP ${status}`);
  }
}

export class PhaseConflictError extends ApiError {}

async function parseError(response: Response): Promise<never> {
  let body: ServiceError = { error: `HTTP ${response.status}` };
  try {
    body = (await response.json()) as ServiceError;
  } catch {
    // keep the fallback body
  }
  if (response.status === 409) {
    throw new PhaseConflictError(response.status, body);
  }
  throw new ApiError(response.status, body);
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly token: string = "",
  ) {}

  private headers(): Record<string, string> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) headers.Authorization = `Bearer ${this.token}`;
    return headers;
  }

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.base}${path}`, { headers: this.headers() });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(`${this.base}${path}`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return (await response.json()) as T;
  }

  createRun(query: string, config: Record<string, unknown> = {}): Promise<{ run_id: string }> {
    return this.post("/api/runs", { query, config });
  }

  listRuns(): Promise<{ runs: RunStatus[] }> {
    return this.get("/api/runs");
  }

  status(runId: string): Promise<RunStatus> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}/status`);
  }

  pendingChecklist(runId: string): Promise<ReviewDocument> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}/checklist`);
  }

  finalChecklist(runId: string): Promise<{ items: { id: string; goal: string; status: string }[]; lineage: unknown[] }> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}/checklist/final`);
  }

  postReview(runId: string, decision: ReviewDecision): Promise<ReviewAck> {
    return this.post(`/api/runs/${encodeURIComponent(runId)}/review`, decision);
  }

  steps(runId: string, start = 0): Promise<StepBatch> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}/steps?start=${start}`);
  }

  report(runId: string): Promise<ReportView> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}/report`);
  }

  abort(runId: string): Promise<{ aborted: boolean }> {
    return this.post(`/api/runs/${encodeURIComponent(runId)}/abort`, {});
  }
}
