// Wire types mirroring the service's versioned payload schemas.

export type Phase =
  | "checklisting"
  | "awaiting-review"
  | "researching"
  | "drafting"
  | "writing"
  | "done"
  | "failed"
  | "aborted";

export interface RunStatus {
  schema: string;
  run_id: string;
  query: string;
  phase: Phase;
  step_index: number;
  stop_reason: string | null;
  error: string | null;
}

export interface ChecklistItem {
  id: string;
  goal: string;
  inclusions: string[];
  exclusions: string[];
  acceptance_criteria: string[];
  priority: number;
  depends_on: string[];
  status: string;
  bound_nodes: string[];
}

export interface PlanIntent {
  item_id: string;
  kind: string;
  prompt_text: string;
  resolution: string | null;
}

export interface LineageEvent {
  round_index: number;
  kind: string;
  sources: string[];
  targets: string[];
  source_goals: string[];
}

export interface ReviewDocument {
  schema: string;
  run_id: string;
  phase: string;
  checklist_version: string;
  round_index: number;
  query: string;
  items: ChecklistItem[];
  intents: PlanIntent[];
  verdict_slots: { item_id: string; verdict: string | null; payload: object }[];
  lineage: LineageEvent[];
}

export type VerdictKind = "approve" | "edit" | "split" | "merge" | "waive";

export interface Verdict {
  item_id: string;
  verdict: VerdictKind;
  payload: Record<string, unknown>;
}

export interface ReviewDecision {
  schema: "review-decision@1";
  checklist_version: string;
  verdicts: Verdict[];
}

export interface ReviewAck {
  schema: string;
  accepted: boolean;
  idempotent: boolean;
}

export interface StepRecord {
  step_index: number;
  thought: string;
  action_thought: string;
  action_code: { tool: string; parameters: Record<string, unknown>; task_descriptor: string };
  observation: { tool: string; digest: string; effects: Record<string, unknown> };
  state_snapshot_id: string;
  wall_time: string;
  prev_hash: string;
}

export interface StepBatch {
  schema: string;
  start: number;
  next: number;
  records: StepRecord[];
}

export interface FinalClaim {
  id: string;
  category: string;
  hedged: boolean;
  evidence_ids: string[];
  citation_numbers: number[];
  audit_score: number;
}

export interface FinalPassage {
  text: string;
  claim: FinalClaim | null;
}

export interface FinalSection {
  node_id: string;
  title: string;
  gap: boolean;
  passages: FinalPassage[];
}

export interface VizSpec {
  kind: "table" | "bar" | "line" | "timeline";
  node_id: string;
  data: { label: string; value: number; unit?: string; evidence_ids: string[] }[];
  evidence_ids: string[];
  caption: string;
}

export interface Reference {
  number: number;
  source: string;
  excerpt_hash: string;
  formatted: string;
}

export interface StructuredReport {
  schema: string;
  run_id: string;
  outline_version: number;
  sections: FinalSection[];
  visuals: VizSpec[];
  citations: {
    entries: { locator: string[]; evidence_id: string; reference_number: number }[];
    references: Reference[];
  };
}

export interface EvidenceDetail {
  source: string;
  summary: string;
  excerpt: string;
  timestamp: string;
  confidence: number;
}

export interface ReportView {
  schema: string;
  run_id: string;
  markdown: string;
  report: StructuredReport;
  evidence: Record<string, EvidenceDetail>;
}

export interface ServiceError {
  schema?: string;
  error: string;
  phase?: Phase;
  expected_version?: string;
}
