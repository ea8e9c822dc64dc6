/**
 * Typed client for the eval service HTTP API.
 *
 * One small fetch wrapper per endpoint; bearer-token auth on every call.
 * Service-side rejections (4xx/5xx) become ApiError carrying the status
 * and the `detail` string from the body, so flows can distinguish a
 * stale-slot 409 from a network drop (which surfaces as the underlying
 * fetch rejection and leaves the local draft intact).
 */

import type {
  CreateSessionRequest,
  HealthResponse,
  NextAssignment,
  QaQueue,
  QaReviewReceipt,
  ReportDoc,
  RolloutReceipt,
  RolloutSubmission,
  RubricReceipt,
  SessionReceipt,
  SessionView,
} from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClientOptions {
  baseUrl: string;
  token: string;
  /** Injectable for tests; defaults to the global fetch. */
  fetchImpl?: FetchLike;
}

export class ConsoleClient {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchImpl: FetchLike;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.token = options.token;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
    };
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const doc = (await response.json()) as { detail?: unknown };
        if (typeof doc.detail === "string") detail = doc.detail;
      } catch {
        // Non-JSON error body; keep the status text.
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  healthz(): Promise<HealthResponse> {
    return this.request("GET", "/healthz");
  }

  createSession(body: CreateSessionRequest): Promise<SessionReceipt> {
    return this.request("POST", "/sessions", body);
  }

  session(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}`);
  }

  nextAssignment(sessionId: string): Promise<NextAssignment> {
    return this.request("GET", `/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  submitRollout(body: RolloutSubmission): Promise<RolloutReceipt> {
    return this.request("POST", "/rollouts", body);
  }

  submitRubric(rolloutId: string, answers: boolean[]): Promise<RubricReceipt> {
    return this.request("POST", `/rollouts/${encodeURIComponent(rolloutId)}/rubric`, {
      answers,
    });
  }

  qaQueue(fraction = 1.0, seed?: number): Promise<QaQueue> {
    const params = new URLSearchParams({ fraction: String(fraction) });
    if (seed !== undefined) params.set("seed", String(seed));
    return this.request("GET", `/qa/queue?${params.toString()}`);
  }

  submitQaReview(
    rolloutId: string,
    success: boolean,
    answers: boolean[],
  ): Promise<QaReviewReceipt> {
    return this.request("POST", `/qa/${encodeURIComponent(rolloutId)}`, {
      success,
      answers,
    });
  }

  report(task: string, condition: string): Promise<ReportDoc> {
    return this.request(
      "GET",
      `/reports/${encodeURIComponent(task)}/${encodeURIComponent(condition)}`,
    );
  }
}
