/**
 * Wire types for the eval service HTTP API.
 *
 * These mirror the JSON bodies the service sends and accepts, field for
 * field. The console consumes the API exactly as served — it never sees
 * (and must never render) a policy identity, only blinding codes.
 */

export type Role = "evaluator" | "qa_reviewer" | "analyst";

export const TERMINAL_REASONS = [
  "success",
  "timeout",
  "dangerous",
  "stuck",
  "operator_stop",
] as const;

export type TerminalReason = (typeof TERMINAL_REASONS)[number];

/** Terminal reasons that rule out a successful rollout by definition. */
export const REASONS_FORCING_FAILURE: ReadonlySet<TerminalReason> = new Set(["stuck"]);

export interface InitialConditionWire {
  ic_id: string;
  task_id: string;
  overlay_asset: string;
  source: string;
  seed?: number;
}

export interface AssignmentWire {
  bundle_id: string;
  slot: number;
  blinding_code: string;
  ic: InitialConditionWire;
}

/** GET /sessions/{id}/next — an assignment plus the rubric questions for its task. */
export interface NextAssignment extends AssignmentWire {
  questions: string[];
}

export interface Progress {
  done: number;
  total: number;
}

export type SessionStatus = "active" | "complete" | "bundle_busy";

/** GET /sessions/{id} */
export interface SessionView {
  session_id: string;
  progress: Progress;
  current: AssignmentWire | null;
  overlay_asset: string | null;
  status: SessionStatus;
}

/** POST /sessions (analyst only). */
export interface CreateSessionRequest {
  policies: string[];
  tasks: string[];
  condition?: string;
  n_bundles: number;
  rng_seed?: number;
  evaluator_ids?: string[];
  qa_reviewer_ids?: string[];
}

export interface SessionReceipt {
  session_id: string;
  bundles: number;
  total_slots: number;
}

/** POST /rollouts — what the evaluator submits for the current slot. */
export interface RolloutSubmission {
  session_id: string;
  bundle_id: string;
  blinding_code: string;
  rollout_id: string;
  success?: boolean;
  terminal_reason?: TerminalReason;
  started_at?: string;
  ended_at?: string;
  station?: string;
  aborted?: boolean;
}

export interface RolloutReceipt {
  rollout_id: string;
  slot_status: "done" | "aborted";
  progress: Progress;
}

/** POST /rollouts/{id}/rubric */
export interface RubricReceipt {
  rollout_id: string;
  answers_recorded: number;
  tc: number | null;
}

/** One entry in GET /qa/queue — deliberately blank: no answers, no success. */
export interface QaQueueItem {
  rollout_id: string;
  task: string;
  question_count: number;
  questions: string[];
  reviewed: boolean;
}

export interface QaDashboard {
  reviewed: number;
  success_discrepancy: number | null;
  question_discrepancy: number | null;
}

export interface QaQueue {
  items: QaQueueItem[];
  dashboard: QaDashboard;
}

/** POST /qa/{rollout_id} — originals are revealed only in this response. */
export interface QaReviewReceipt {
  rollout_id: string;
  original_success: boolean;
  original_answers: boolean[];
  success_mismatch: boolean;
  question_mismatches: number;
  dashboard: QaDashboard;
}

/** GET /reports/{task}/{condition} */
export interface ReportDoc {
  sr_posterior?: Record<string, unknown>;
  tc_raw?: Record<string, unknown>;
  comparisons?: Record<string, unknown>;
  cld_csv?: string;
}

export interface HealthResponse {
  status: string;
  version: string;
}
