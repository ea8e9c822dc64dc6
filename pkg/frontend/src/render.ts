/**
 * View rendering for the evaluator console.
 *
 * Views are rendered to HTML strings from wire payloads plus form state;
 * the host page swaps them into the document. Keeping renderers pure
 * makes the blinding invariant checkable: a test can scan every rendered
 * frame for policy identifiers. Assignment views show only the blinded
 * code — the service never sends a policy identity to this console, and
 * nothing here would have a place to put one.
 */

import type { RubricForm, QaReviewForm, QaReviewPayload } from "./rubricForm";
import {
  TERMINAL_REASONS,
  type NextAssignment,
  type Progress,
  type QaDashboard,
  type QaQueueItem,
  type QaReviewReceipt,
  type SessionView,
} from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

/**
 * Human-readable slot position, e.g. "bundle 12, slot 2 of 3".
 *
 * Bundle ids end in a zero-based index ("…-b00011"); both it and the slot
 * index are shown one-based. The group size is a station-level setting
 * (one slot per arm under evaluation), so "of N" appears only when known.
 */
export function bundlePosition(
  assignment: { bundle_id: string; slot: number },
  slotsPerBundle?: number,
): string {
  const match = /-b(\d+)$/.exec(assignment.bundle_id);
  const bundleLabel = match ? `bundle ${parseInt(match[1] as string, 10) + 1}` : assignment.bundle_id;
  const slotLabel =
    slotsPerBundle !== undefined
      ? `slot ${assignment.slot + 1} of ${slotsPerBundle}`
      : `slot ${assignment.slot + 1}`;
  return `${bundleLabel}, ${slotLabel}`;
}

function yesNoControl(name: string, index: number, value: boolean | null): string {
  const yes = value === true ? ' aria-pressed="true" class="answer-btn selected"' : ' class="answer-btn"';
  const no = value === false ? ' aria-pressed="true" class="answer-btn selected"' : ' class="answer-btn"';
  return (
    `<span class="yes-no" data-question="${index}">` +
    `<button type="button" data-action="${name}-yes"${yes}>yes</button>` +
    `<button type="button" data-action="${name}-no"${no}>no</button>` +
    `</span>`
  );
}

function questionRows(questions: readonly string[], answerAt: (i: number) => boolean | null, name: string): string {
  return questions
    .map(
      (q, i) =>
        `<li class="question-row">` +
        `<span class="question-text">${escapeHtml(q)}</span>` +
        yesNoControl(name, i, answerAt(i)) +
        `</li>`,
    )
    .join("\n");
}

export interface AssignmentViewOptions {
  slotsPerBundle?: number;
  draftRestored?: boolean;
}

/**
 * The evaluator's working screen for one slot: position, blinded code,
 * IC overlay reference, the live rubric, terminal-reason selector, and
 * the success toggle (disabled while the selected reason forces failure).
 */
export function renderAssignmentView(
  assignment: NextAssignment,
  form: RubricForm,
  progress: Progress,
  options: AssignmentViewOptions = {},
): string {
  const position = bundlePosition(assignment, options.slotsPerBundle);
  const reasonOptions = TERMINAL_REASONS.map((reason) => {
    const selected = form.reason === reason ? " selected" : "";
    return `<option value="${reason}"${selected}>${reason.replace("_", " ")}</option>`;
  }).join("");
  const successDisabled = form.successLocked ? " disabled" : "";
  const successState =
    form.successValue === null ? "unset" : form.successValue ? "success" : "failure";
  const submitDisabled = form.canSubmit ? "" : " disabled";
  const draftNote = options.draftRestored
    ? `<p class="draft-note">Draft restored — answers were kept from the interrupted attempt.</p>`
    : "";
  return `<section class="assignment-view" data-bundle="${escapeHtml(assignment.bundle_id)}" data-code="${escapeHtml(assignment.blinding_code)}">
  <header>
    <h2>${escapeHtml(position)}</h2>
    <p class="blinded-code">Running blinded code <code>${escapeHtml(assignment.blinding_code)}</code></p>
    <p class="progress">${progress.done} of ${progress.total} rollouts done</p>
  </header>
  <figure class="ic-overlay">
    <img src="${escapeHtml(assignment.ic.overlay_asset)}" alt="Initial-condition overlay for ${escapeHtml(assignment.ic.task_id)}" />
    <figcaption>Reset the scene to match the overlay before starting.</figcaption>
  </figure>
  ${draftNote}
  <form class="rubric-form">
    <ol class="questions">
${questionRows(form.questions, (i) => form.answerAt(i), "answer")}
    </ol>
    <label class="terminal-reason">Terminal reason
      <select data-field="terminal-reason">
        <option value=""${form.reason === null ? " selected" : ""}>choose…</option>${reasonOptions}
      </select>
    </label>
    <label class="success-toggle">Success
      <button type="button" data-field="success" data-state="${successState}"${successDisabled}>${successState}</button>
    </label>
    <button type="submit" data-action="submit"${submitDisabled}>Submit rollout</button>
  </form>
</section>`;
}

/** The reviewer's screen for one sampled rollout: a blank form, nothing else. */
export function renderQaReviewView(item: QaQueueItem, form: QaReviewForm): string {
  const successState =
    form.successValue === null ? "unset" : form.successValue ? "success" : "failure";
  const submitDisabled = form.canSubmit ? "" : " disabled";
  return `<section class="qa-review-view" data-rollout="${escapeHtml(item.rollout_id)}">
  <header>
    <h2>QA review: ${escapeHtml(item.rollout_id)}</h2>
    <p class="task">Task: ${escapeHtml(item.task)}</p>
    <p class="note">Fill the form from the recording alone; the original answers appear after you submit.</p>
  </header>
  <form class="qa-form">
    <label class="success-toggle">Success
      <button type="button" data-field="success" data-state="${successState}">${successState}</button>
    </label>
    <ol class="questions">
${questionRows(form.questions, (i) => form.answerAt(i), "review")}
    </ol>
    <button type="submit" data-action="submit-review"${submitDisabled}>Submit review</button>
  </form>
</section>`;
}

/** Post-submission diff: the reviewer's answers against the originals. */
export function renderDiffPanel(
  submitted: QaReviewPayload,
  receipt: QaReviewReceipt,
  questions: readonly string[],
): string {
  const rows = questions
    .map((q, i) => {
      const ours = submitted.answers[i] === true ? "yes" : "no";
      const theirs = receipt.original_answers[i] === true ? "yes" : "no";
      const cls = ours === theirs ? "match" : "mismatch";
      return (
        `<tr class="${cls}"><td>${escapeHtml(q)}</td>` +
        `<td>${ours}</td><td>${theirs}</td></tr>`
      );
    })
    .join("\n");
  const successClass = receipt.success_mismatch ? "mismatch" : "match";
  const ourSuccess = submitted.success ? "success" : "failure";
  const theirSuccess = receipt.original_success ? "success" : "failure";
  return `<section class="diff-panel" data-rollout="${escapeHtml(receipt.rollout_id)}">
  <h3>Review vs. original — ${receipt.question_mismatches} mismatched answer(s)</h3>
  <table>
    <thead><tr><th>Question</th><th>Your answer</th><th>Original</th></tr></thead>
    <tbody>
      <tr class="${successClass}"><td>Outcome</td><td>${ourSuccess}</td><td>${theirSuccess}</td></tr>
${rows}
    </tbody>
  </table>
</section>`;
}

function formatRate(rate: number | null): string {
  return rate === null ? "—" : `${(100 * rate).toFixed(2)}%`;
}

/** Live discrepancy counters shown beside the review queue. */
export function renderDashboard(dashboard: QaDashboard): string {
  return `<aside class="qa-dashboard">
  <dl>
    <dt>Rollouts reviewed</dt><dd>${dashboard.reviewed}</dd>
    <dt>Success discrepancy</dt><dd>${formatRate(dashboard.success_discrepancy)}</dd>
    <dt>Question discrepancy</dt><dd>${formatRate(dashboard.question_discrepancy)}</dd>
  </dl>
</aside>`;
}

/** Session banner: progress plus whether another slot is available. */
export function renderSessionProgress(view: SessionView): string {
  const status =
    view.status === "complete"
      ? "session complete"
      : view.status === "bundle_busy"
        ? "current bundle is being run elsewhere"
        : "slots available";
  return `<header class="session-banner" data-session="${escapeHtml(view.session_id)}">
  <span class="progress">${view.progress.done} / ${view.progress.total}</span>
  <span class="status">${escapeHtml(status)}</span>
</header>`;
}
