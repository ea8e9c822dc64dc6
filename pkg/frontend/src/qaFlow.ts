/**
 * The reviewer's loop: sampled queue → blank form → submit → diff.
 *
 * Blank-form-first is structural here: the queue payload never contains
 * the original answers, the review view renders from an empty form, and
 * the originals only exist client-side inside the submission response —
 * which is when the diff panel appears. Rollouts the reviewer may not
 * touch (their own work, already-reviewed items) are skipped and
 * reported, not fatal.
 */

import { ApiError, type ConsoleClient } from "./api";
import { FormError, QaReviewForm, type QaReviewPayload } from "./rubricForm";
import { renderDashboard, renderDiffPanel, renderQaReviewView } from "./render";
import type { QaDashboard, QaQueueItem, QaReviewReceipt } from "./types";

export interface ReviewContext {
  item: QaQueueItem;
  form: QaReviewForm;
}

export interface CompletedReview {
  rolloutId: string;
  submitted: QaReviewPayload;
  receipt: QaReviewReceipt;
}

export interface SkippedReview {
  rolloutId: string;
  reason: string;
}

export interface QaFlowResult {
  completed: CompletedReview[];
  skipped: SkippedReview[];
  dashboard: QaDashboard;
}

export interface QaFlowOptions {
  /** Fill the blank review form; called once per queue item. */
  fillReview: (context: ReviewContext) => void | Promise<void>;
  /** Receives every rendered frame (blank forms, diff panels, dashboard). */
  onRender?: (html: string) => void;
  fraction?: number;
  seed?: number;
  maxReviews?: number;
}

export async function runQaFlow(
  client: ConsoleClient,
  options: QaFlowOptions,
): Promise<QaFlowResult> {
  const queue = await client.qaQueue(options.fraction ?? 1.0, options.seed);
  let dashboard = queue.dashboard;
  options.onRender?.(renderDashboard(dashboard));

  const completed: CompletedReview[] = [];
  const skipped: SkippedReview[] = [];

  for (const item of queue.items) {
    if (options.maxReviews !== undefined && completed.length >= options.maxReviews) break;
    if (item.reviewed) {
      skipped.push({ rolloutId: item.rollout_id, reason: "already reviewed" });
      continue;
    }

    const form = new QaReviewForm(item.questions);
    options.onRender?.(renderQaReviewView(item, form));

    await options.fillReview({ item, form });
    if (!form.canSubmit) {
      throw new FormError(`submit disabled: review of ${item.rollout_id} is incomplete`);
    }
    const payload = form.payload();

    let receipt: QaReviewReceipt;
    try {
      receipt = await client.submitQaReview(item.rollout_id, payload.success, payload.answers);
    } catch (error) {
      if (error instanceof ApiError && (error.status === 403 || error.status === 409)) {
        skipped.push({ rolloutId: item.rollout_id, reason: error.detail });
        continue;
      }
      throw error;
    }

    options.onRender?.(renderDiffPanel(payload, receipt, item.questions));
    options.onRender?.(renderDashboard(receipt.dashboard));
    dashboard = receipt.dashboard;
    completed.push({ rolloutId: item.rollout_id, submitted: payload, receipt });
  }

  return { completed, skipped, dashboard };
}
