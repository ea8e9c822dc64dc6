/**
 * Form models for live rubric entry and QA review.
 *
 * A rubric is an ordered list of yes/no milestone questions plus a
 * terminal-reason selector and a success toggle. The models hold exactly
 * what the form shows: answers stay positional, submission is disabled
 * until every control is set, and payload() emits the answers in question
 * order with no reordering.
 *
 * Consistency rule: a rollout that terminated because the robot was stuck
 * cannot have succeeded, so selecting "stuck" forces the success toggle to
 * false and locks it until another reason is chosen.
 */

import { REASONS_FORCING_FAILURE, TERMINAL_REASONS, type TerminalReason } from "./types";

export class FormError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormError";
  }
}

export interface RubricPayload {
  success: boolean;
  terminal_reason: TerminalReason;
  answers: boolean[];
}

export interface RubricSnapshot {
  answers: (boolean | null)[];
  terminalReason: TerminalReason | null;
  success: boolean | null;
}

export class RubricForm {
  readonly questions: readonly string[];
  private answers: (boolean | null)[];
  private terminalReason: TerminalReason | null = null;
  private success: boolean | null = null;

  constructor(questions: readonly string[]) {
    if (questions.length === 0) {
      throw new FormError("a rubric needs at least one question");
    }
    this.questions = [...questions];
    this.answers = new Array(questions.length).fill(null);
  }

  answerAt(index: number): boolean | null {
    this.checkIndex(index);
    return this.answers[index] ?? null;
  }

  setAnswer(index: number, value: boolean): void {
    this.checkIndex(index);
    this.answers[index] = value;
  }

  get reason(): TerminalReason | null {
    return this.terminalReason;
  }

  setTerminalReason(reason: TerminalReason): void {
    if (!TERMINAL_REASONS.includes(reason)) {
      throw new FormError(`unknown terminal reason: ${reason}`);
    }
    this.terminalReason = reason;
    if (this.successLocked) {
      this.success = false;
    }
  }

  /** True while the selected terminal reason pins the success toggle to false. */
  get successLocked(): boolean {
    return this.terminalReason !== null && REASONS_FORCING_FAILURE.has(this.terminalReason);
  }

  get successValue(): boolean | null {
    return this.success;
  }

  /**
   * Toggle success. While locked, attempts to set true are ignored — the
   * toggle stays false. Returns the effective value after the attempt.
   */
  setSuccess(value: boolean): boolean {
    if (this.successLocked && value) {
      return false;
    }
    this.success = value;
    return value;
  }

  /** Indices of questions still unanswered, in form order. */
  missingAnswers(): number[] {
    const missing: number[] = [];
    this.answers.forEach((a, i) => {
      if (a === null) missing.push(i);
    });
    return missing;
  }

  get canSubmit(): boolean {
    return (
      this.missingAnswers().length === 0 &&
      this.terminalReason !== null &&
      this.success !== null
    );
  }

  /** The submission body — exactly the form state, answers in question order. */
  payload(): RubricPayload {
    if (!this.canSubmit) {
      const missing = this.missingAnswers();
      if (missing.length > 0) {
        throw new FormError(
          `submit disabled: ${missing.length} unanswered question(s) at ${missing.join(", ")}`,
        );
      }
      throw new FormError("submit disabled: terminal reason and success are required");
    }
    return {
      success: this.success as boolean,
      terminal_reason: this.terminalReason as TerminalReason,
      answers: this.answers.map((a) => a as boolean),
    };
  }

  snapshot(): RubricSnapshot {
    return {
      answers: [...this.answers],
      terminalReason: this.terminalReason,
      success: this.success,
    };
  }

  restore(snapshot: RubricSnapshot): void {
    if (snapshot.answers.length !== this.questions.length) {
      throw new FormError(
        `draft has ${snapshot.answers.length} answers for a ` +
          `${this.questions.length}-question rubric`,
      );
    }
    this.answers = [...snapshot.answers];
    this.terminalReason = snapshot.terminalReason;
    this.success = snapshot.success;
    if (this.successLocked) {
      this.success = false;
    }
  }

  private checkIndex(index: number): void {
    if (!Number.isInteger(index) || index < 0 || index >= this.questions.length) {
      throw new FormError(
        `question index ${index} out of range for ${this.questions.length} questions`,
      );
    }
  }
}

export interface QaReviewPayload {
  success: boolean;
  answers: boolean[];
}

/**
 * The reviewer's form starts blank by design: the queue never carries the
 * original answers, so there is nothing to anchor on until submission.
 */
export class QaReviewForm {
  readonly questions: readonly string[];
  private answers: (boolean | null)[];
  private success: boolean | null = null;

  constructor(questions: readonly string[]) {
    this.questions = [...questions];
    this.answers = new Array(questions.length).fill(null);
  }

  answerAt(index: number): boolean | null {
    if (!Number.isInteger(index) || index < 0 || index >= this.questions.length) {
      throw new FormError(
        `question index ${index} out of range for ${this.questions.length} questions`,
      );
    }
    return this.answers[index] ?? null;
  }

  setAnswer(index: number, value: boolean): void {
    if (!Number.isInteger(index) || index < 0 || index >= this.questions.length) {
      throw new FormError(
        `question index ${index} out of range for ${this.questions.length} questions`,
      );
    }
    this.answers[index] = value;
  }

  get successValue(): boolean | null {
    return this.success;
  }

  setSuccess(value: boolean): void {
    this.success = value;
  }

  get canSubmit(): boolean {
    return this.success !== null && this.answers.every((a) => a !== null);
  }

  payload(): QaReviewPayload {
    if (!this.canSubmit) {
      throw new FormError("submit disabled: review form is incomplete");
    }
    return {
      success: this.success as boolean,
      answers: this.answers.map((a) => a as boolean),
    };
  }
}
