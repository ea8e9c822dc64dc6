/**
 * The evaluator's main loop: next assignment → live rubric → submit.
 *
 * The service hands out slots strictly in order, looping within a bundle
 * (same initial condition) before the next bundle starts, so this flow
 * just keeps asking for the next assignment until the session is drained.
 * Submission is optimistic: the server rejects a stale slot with a 409
 * and that error surfaces to the caller unchanged.
 *
 * Offline safety: the in-progress form is saved as a draft (keyed by
 * slot) before and after filling, and the rollout id is minted into the
 * draft before the first POST. A network drop triggers the retry prompt;
 * declining leaves the draft in place for a later resume. When a retried
 * POST is rejected with a conflict, the first attempt may have landed
 * just before the response was lost — the rubric submission doubles as
 * the probe: it succeeds only if the rollout exists under our own minted
 * id, and a 404 there means the conflict was real, so it is re-raised.
 */

import { ApiError, type ConsoleClient } from "./api";
import { DraftStore, MemoryStore, type DraftRecord } from "./drafts";
import { FormError, RubricForm } from "./rubricForm";
import { renderAssignmentView } from "./render";
import type { NextAssignment, Progress, RolloutReceipt, RubricReceipt } from "./types";

export class NetworkRetryError extends Error {
  constructor(
    public readonly step: string,
    public readonly cause_: unknown,
  ) {
    super(`network loss during ${step}; draft retained — retry when back online`);
    this.name = "NetworkRetryError";
  }
}

export interface AssignmentContext {
  assignment: NextAssignment;
  form: RubricForm;
  draftRestored: boolean;
}

export interface SubmittedRollout {
  rolloutId: string;
  bundleId: string;
  slot: number;
  blindingCode: string;
  tc: number | null;
  answersRecorded: number;
  progress: Progress;
}

export interface BundleFlowOptions {
  /** Fill the rubric for the slot on screen; called once per assignment. */
  fillRubric: (context: AssignmentContext) => void | Promise<void>;
  /** Receives every rendered frame (assignment views as HTML). */
  onRender?: (html: string) => void;
  /** Asked after a network failure; return true to retry the step. */
  onNetworkError?: (step: string, error: unknown) => boolean | Promise<boolean>;
  drafts?: DraftStore;
  clock?: () => string;
  makeRolloutId?: (assignment: NextAssignment) => string;
  maxRollouts?: number;
  slotsPerBundle?: number;
  station?: string;
}

function defaultClock(): string {
  return new Date().toISOString();
}

function defaultRolloutId(assignment: NextAssignment): string {
  const suffix =
    typeof crypto !== "undefined" && "randomUUID" in crypto
      ? crypto.randomUUID().slice(0, 8)
      : Math.random().toString(16).slice(2, 10);
  return `ro-${assignment.bundle_id}-s${assignment.slot}-${suffix}`;
}

type DraftWithRollout = DraftRecord & { rolloutId?: string };

export async function runBundleFlow(
  client: ConsoleClient,
  sessionId: string,
  options: BundleFlowOptions,
): Promise<SubmittedRollout[]> {
  const clock = options.clock ?? defaultClock;
  const makeRolloutId = options.makeRolloutId ?? defaultRolloutId;
  const drafts = options.drafts ?? new DraftStore(new MemoryStore());
  const askRetry = options.onNetworkError ?? (() => false);
  const submitted: SubmittedRollout[] = [];

  async function withRetry<T>(
    step: string,
    call: () => Promise<T>,
    onFailure?: () => void,
  ): Promise<T> {
    for (;;) {
      try {
        return await call();
      } catch (error) {
        if (error instanceof ApiError) throw error;
        onFailure?.();
        if (await askRetry(step, error)) continue;
        throw new NetworkRetryError(step, error);
      }
    }
  }

  async function currentProgress(): Promise<Progress> {
    const view = await withRetry("session progress", () => client.session(sessionId));
    return view.progress;
  }

  while (options.maxRollouts === undefined || submitted.length < options.maxRollouts) {
    let assignment: NextAssignment;
    try {
      assignment = await withRetry("next assignment", () => client.nextAssignment(sessionId));
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) break; // session drained
      throw error;
    }

    const form = new RubricForm(assignment.questions);
    let draft = drafts.load(
      sessionId,
      assignment.bundle_id,
      assignment.blinding_code,
    ) as DraftWithRollout | null;
    let draftRestored = false;
    if (draft !== null) {
      try {
        form.restore(draft.form);
        draftRestored = true;
      } catch {
        draft = null; // stale draft from a different rubric shape; start fresh
      }
    }
    if (draft === null) {
      draft = {
        sessionId,
        bundleId: assignment.bundle_id,
        blindingCode: assignment.blinding_code,
        startedAt: clock(),
        form: form.snapshot(),
        savedAt: clock(),
      };
      drafts.save(draft);
    }

    options.onRender?.(
      renderAssignmentView(assignment, form, await currentProgress(), {
        slotsPerBundle: options.slotsPerBundle,
        draftRestored,
      }),
    );

    await options.fillRubric({ assignment, form, draftRestored });

    if (!form.canSubmit) {
      const missing = form.missingAnswers();
      throw new FormError(
        missing.length > 0
          ? `submit disabled: ${missing.length} unanswered question(s)`
          : "submit disabled: terminal reason and success are required",
      );
    }
    const payload = form.payload();
    if (draft.rolloutId === undefined) {
      draft.rolloutId = makeRolloutId(assignment);
    }
    draft.form = form.snapshot();
    draft.savedAt = clock();
    drafts.save(draft);

    const rolloutId = draft.rolloutId;
    const startedAt = draft.startedAt;
    let sawNetworkFailure = false;
    let conflict: ApiError | null = null;
    let receipt: RolloutReceipt | null = null;
    try {
      receipt = await withRetry(
        "rollout submission",
        () =>
          client.submitRollout({
            session_id: sessionId,
            bundle_id: assignment.bundle_id,
            blinding_code: assignment.blinding_code,
            rollout_id: rolloutId,
            success: payload.success,
            terminal_reason: payload.terminal_reason,
            started_at: startedAt,
            ended_at: clock(),
            ...(options.station !== undefined ? { station: options.station } : {}),
          }),
        () => {
          sawNetworkFailure = true;
        },
      );
    } catch (error) {
      if (error instanceof ApiError && error.status === 409 && sawNetworkFailure) {
        // The first attempt may have landed just before its response was
        // lost; defer to the rubric submission below as the probe.
        conflict = error;
      } else {
        throw error;
      }
    }

    let rubric: RubricReceipt;
    try {
      rubric = await withRetry("rubric submission", () =>
        client.submitRubric(rolloutId, payload.answers),
      );
    } catch (error) {
      if (conflict !== null && error instanceof ApiError && error.status === 404) {
        // Our rollout never landed — the conflict was a real stale slot.
        throw conflict;
      }
      throw error;
    }
    if (receipt === null) {
      receipt = { rollout_id: rolloutId, slot_status: "done", progress: await currentProgress() };
    }

    drafts.clear(sessionId, assignment.bundle_id, assignment.blinding_code);
    submitted.push({
      rolloutId,
      bundleId: assignment.bundle_id,
      slot: assignment.slot,
      blindingCode: assignment.blinding_code,
      tc: rubric.tc,
      answersRecorded: rubric.answers_recorded,
      progress: receipt.progress,
    });
  }

  return submitted;
}

/**
 * Resume path for a draft whose rollout landed but whose rubric did not
 * (crash or network loss between the two POSTs). Loads the draft, submits
 * the saved answers for its rollout id, and clears it.
 */
export async function submitDraftRubric(
  client: ConsoleClient,
  drafts: DraftStore,
  sessionId: string,
  bundleId: string,
  blindingCode: string,
): Promise<{ rolloutId: string; answersRecorded: number; tc: number | null }> {
  const draft = drafts.load(sessionId, bundleId, blindingCode) as DraftWithRollout | null;
  if (draft === null) {
    throw new FormError(`no draft for ${bundleId}/${blindingCode}`);
  }
  if (draft.rolloutId === undefined) {
    throw new FormError("draft has no rollout id — the rollout was never submitted");
  }
  const answers = draft.form.answers;
  if (answers.some((a) => a === null)) {
    throw new FormError("draft rubric is incomplete");
  }
  const receipt = await client.submitRubric(
    draft.rolloutId,
    answers.map((a) => a as boolean),
  );
  drafts.clear(sessionId, bundleId, blindingCode);
  return {
    rolloutId: receipt.rollout_id,
    answersRecorded: receipt.answers_recorded,
    tc: receipt.tc,
  };
}
