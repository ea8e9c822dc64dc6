/**
 * In-memory fakes for the eval service wire contract.
 *
 * The bundle fake keeps real slot-sequencing state (strict order, stale
 * 409s, duplicate detection) so flow tests exercise the same rejection
 * paths the live service produces. Network failures are injected per
 * step: "drop" raises before the server sees the request, "record-then-drop"
 * processes it and then loses the response — the case idempotent rollout
 * ids exist for.
 */

import type { FetchLike } from "../src/api";
import type { InitialConditionWire, QaDashboard, QaQueueItem } from "../src/types";

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export interface FakeBundle {
  bundle_id: string;
  codes: string[];
  ic?: Partial<InitialConditionWire>;
}

export type FailStep = "next" | "rollouts" | "rubric" | "session";

export interface Failure {
  step: FailStep;
  mode: "drop" | "record-then-drop";
  remaining: number;
}

interface StoredRollout {
  success: boolean;
  terminal_reason: string;
  started_at: string;
  ended_at: string;
  answers: boolean[] | null;
}

export interface FakeServiceState {
  cursor: number;
  slots: { bundle_id: string; slot: number; blinding_code: string; ic: InitialConditionWire }[];
  records: Map<string, StoredRollout>;
  acceptedOrder: string[];
  failures: Failure[];
}

function takeFailure(state: FakeServiceState, step: FailStep): Failure | null {
  const failure = state.failures.find((f) => f.step === step && f.remaining > 0);
  if (failure) {
    failure.remaining -= 1;
    return failure;
  }
  return null;
}

export function makeFakeService(options: {
  sessionId: string;
  bundles: FakeBundle[];
  questions: string[];
}): { fetchImpl: FetchLike; state: FakeServiceState } {
  const state: FakeServiceState = {
    cursor: 0,
    slots: [],
    records: new Map(),
    acceptedOrder: [],
    failures: [],
  };
  for (const bundle of options.bundles) {
    bundle.codes.forEach((code, slot) => {
      state.slots.push({
        bundle_id: bundle.bundle_id,
        slot,
        blinding_code: code,
        ic: {
          ic_id: bundle.ic?.ic_id ?? `${bundle.bundle_id}-ic`,
          task_id: bundle.ic?.task_id ?? "stack-dishes",
          overlay_asset: bundle.ic?.overlay_asset ?? `assets/${bundle.bundle_id}.png`,
          source: bundle.ic?.source ?? "manual",
        },
      });
    });
  }

  const fetchImpl: FetchLike = async (url, init) => {
    const { pathname } = new URL(url);
    const method = init?.method ?? "GET";
    const headers = (init?.headers ?? {}) as Record<string, string>;
    if (!headers.Authorization?.startsWith("Bearer ")) {
      return jsonResponse(401, { detail: "missing bearer token" });
    }
    const body = init?.body !== undefined ? JSON.parse(init.body as string) : undefined;

    if (method === "GET" && pathname === `/sessions/${options.sessionId}/next`) {
      if (takeFailure(state, "next")) throw new TypeError("fetch failed");
      const slot = state.slots[state.cursor];
      if (slot === undefined) {
        return jsonResponse(404, {
          detail: `session ${options.sessionId} has no pending slots`,
        });
      }
      return jsonResponse(200, { ...slot, questions: options.questions });
    }

    if (method === "GET" && pathname === `/sessions/${options.sessionId}`) {
      if (takeFailure(state, "session")) throw new TypeError("fetch failed");
      const current = state.slots[state.cursor] ?? null;
      return jsonResponse(200, {
        session_id: options.sessionId,
        progress: { done: state.cursor, total: state.slots.length },
        current,
        overlay_asset: current ? current.ic.overlay_asset : null,
        status: current ? "active" : "complete",
      });
    }

    if (method === "POST" && pathname === "/rollouts") {
      const failure = takeFailure(state, "rollouts");
      if (failure?.mode === "drop") throw new TypeError("fetch failed");
      const slot = state.slots[state.cursor];
      if (slot === undefined) {
        return jsonResponse(409, { detail: "session has no pending slots" });
      }
      if (slot.bundle_id !== body.bundle_id || slot.blinding_code !== body.blinding_code) {
        return jsonResponse(409, {
          detail: `stale slot: current assignment is ${slot.bundle_id}/${slot.blinding_code}`,
        });
      }
      if (state.records.has(body.rollout_id)) {
        return jsonResponse(409, { detail: `duplicate rollout_id: ${body.rollout_id}` });
      }
      state.records.set(body.rollout_id, {
        success: body.success,
        terminal_reason: body.terminal_reason,
        started_at: body.started_at,
        ended_at: body.ended_at,
        answers: null,
      });
      state.acceptedOrder.push(body.rollout_id);
      state.cursor += 1;
      if (failure?.mode === "record-then-drop") throw new TypeError("fetch failed");
      return jsonResponse(201, {
        rollout_id: body.rollout_id,
        slot_status: "done",
        progress: { done: state.cursor, total: state.slots.length },
      });
    }

    const rubricMatch = /^\/rollouts\/([^/]+)\/rubric$/.exec(pathname);
    if (method === "POST" && rubricMatch) {
      if (takeFailure(state, "rubric")) throw new TypeError("fetch failed");
      const rolloutId = decodeURIComponent(rubricMatch[1] as string);
      const record = state.records.get(rolloutId);
      if (record === undefined) {
        return jsonResponse(404, { detail: `unknown rollout: ${rolloutId}` });
      }
      record.answers = body.answers;
      const tc =
        body.answers.length === 0
          ? null
          : body.answers.filter(Boolean).length / body.answers.length;
      return jsonResponse(200, {
        rollout_id: rolloutId,
        answers_recorded: body.answers.length,
        tc,
      });
    }

    return jsonResponse(404, { detail: `no route for ${method} ${pathname}` });
  };

  return { fetchImpl, state };
}

/** Scripted QA backend: a fixed queue plus per-rollout review outcomes. */
export function makeFakeQaService(options: {
  items: QaQueueItem[];
  dashboard: QaDashboard;
  originals: Map<string, { success: boolean; answers: boolean[] }>;
  selfOwned?: Set<string>;
  dashboards?: QaDashboard[];
}): { fetchImpl: FetchLike; reviews: Map<string, { success: boolean; answers: boolean[] }> } {
  const reviews = new Map<string, { success: boolean; answers: boolean[] }>();
  let dashboardIndex = 0;

  const fetchImpl: FetchLike = async (url, init) => {
    const { pathname } = new URL(url);
    const method = init?.method ?? "GET";

    if (method === "GET" && pathname === "/qa/queue") {
      return jsonResponse(200, { items: options.items, dashboard: options.dashboard });
    }

    const reviewMatch = /^\/qa\/([^/]+)$/.exec(pathname);
    if (method === "POST" && reviewMatch) {
      const rolloutId = decodeURIComponent(reviewMatch[1] as string);
      const body = JSON.parse(init?.body as string);
      if (options.selfOwned?.has(rolloutId)) {
        return jsonResponse(403, { detail: "reviewers may not review their own rollouts" });
      }
      const original = options.originals.get(rolloutId);
      if (original === undefined) {
        return jsonResponse(404, { detail: `unknown rollout: ${rolloutId}` });
      }
      if (reviews.has(rolloutId)) {
        return jsonResponse(409, { detail: `rollout already reviewed: ${rolloutId}` });
      }
      reviews.set(rolloutId, { success: body.success, answers: body.answers });
      const mismatches = original.answers.filter((a, i) => a !== body.answers[i]).length;
      const dashboard =
        options.dashboards?.[dashboardIndex++] ?? options.dashboard;
      return jsonResponse(200, {
        rollout_id: rolloutId,
        original_success: original.success,
        original_answers: original.answers,
        success_mismatch: body.success !== original.success,
        question_mismatches: mismatches,
        dashboard,
      });
    }

    return jsonResponse(404, { detail: `no route for ${method} ${pathname}` });
  };

  return { fetchImpl, reviews };
}

/** Deterministic, strictly increasing ISO timestamps for tests. */
export function makeClock(startMs = Date.UTC(2026, 0, 5, 9, 0, 0)): () => string {
  let tick = 0;
  return () => new Date(startMs + 1000 * tick++).toISOString();
}
