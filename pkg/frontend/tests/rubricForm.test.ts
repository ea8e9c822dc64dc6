import { describe, expect, it } from "vitest";

import { FormError, QaReviewForm, RubricForm } from "../src/rubricForm";

const QUESTIONS = [
  "grasped the first dish",
  "placed it on the rack",
  "released without collision",
];

describe("RubricForm", () => {
  it("starts blank and rejects an empty question list", () => {
    const form = new RubricForm(QUESTIONS);
    expect(form.questions).toEqual(QUESTIONS);
    expect(form.answerAt(0)).toBeNull();
    expect(form.reason).toBeNull();
    expect(form.successValue).toBeNull();
    expect(() => new RubricForm([])).toThrow(FormError);
  });

  it("round-trips answers positionally and bounds-checks indices", () => {
    const form = new RubricForm(QUESTIONS);
    form.setAnswer(1, true);
    form.setAnswer(0, false);
    expect(form.answerAt(0)).toBe(false);
    expect(form.answerAt(1)).toBe(true);
    expect(form.answerAt(2)).toBeNull();
    expect(() => form.setAnswer(3, true)).toThrow(FormError);
    expect(() => form.setAnswer(-1, true)).toThrow(FormError);
    expect(() => form.answerAt(0.5)).toThrow(FormError);
  });

  it("keeps submit disabled until every control is set", () => {
    const form = new RubricForm(QUESTIONS);
    expect(form.canSubmit).toBe(false);
    expect(form.missingAnswers()).toEqual([0, 1, 2]);
    form.setAnswer(0, true);
    form.setAnswer(2, false);
    expect(form.missingAnswers()).toEqual([1]);
    expect(() => form.payload()).toThrow(/submit disabled/);
    form.setAnswer(1, true);
    expect(form.canSubmit).toBe(false); // reason and success still unset
    form.setTerminalReason("timeout");
    form.setSuccess(false);
    expect(form.canSubmit).toBe(true);
  });

  it("emits the payload exactly as entered, in question order", () => {
    const form = new RubricForm(QUESTIONS);
    form.setAnswer(0, true);
    form.setAnswer(1, false);
    form.setAnswer(2, true);
    form.setTerminalReason("success");
    form.setSuccess(true);
    const payload = form.payload();
    expect(payload).toEqual({
      success: true,
      terminal_reason: "success",
      answers: [true, false, true],
    });
    payload.answers[0] = false; // the payload is a copy, not a view
    expect(form.payload().answers).toEqual([true, false, true]);
  });

  it("forces the success toggle to false when the reason is stuck", () => {
    const form = new RubricForm(QUESTIONS);
    form.setSuccess(true);
    expect(form.successValue).toBe(true);
    form.setTerminalReason("stuck");
    expect(form.successLocked).toBe(true);
    expect(form.successValue).toBe(false);
    expect(form.setSuccess(true)).toBe(false); // forced, not honored
    expect(form.successValue).toBe(false);
    form.setTerminalReason("timeout"); // unlock
    expect(form.successLocked).toBe(false);
    expect(form.setSuccess(true)).toBe(true);
    expect(form.successValue).toBe(true);
  });

  it("rejects unknown terminal reasons", () => {
    const form = new RubricForm(QUESTIONS);
    expect(() => form.setTerminalReason("paused" as never)).toThrow(FormError);
  });

  it("snapshots and restores including unanswered holes", () => {
    const form = new RubricForm(QUESTIONS);
    form.setAnswer(0, true);
    form.setTerminalReason("operator_stop");
    form.setSuccess(false);
    const snapshot = form.snapshot();

    const fresh = new RubricForm(QUESTIONS);
    fresh.restore(snapshot);
    expect(fresh.answerAt(0)).toBe(true);
    expect(fresh.answerAt(1)).toBeNull();
    expect(fresh.reason).toBe("operator_stop");
    expect(fresh.successValue).toBe(false);
  });

  it("re-applies the stuck lock when restoring a tampered draft", () => {
    const form = new RubricForm(QUESTIONS);
    form.restore({
      answers: [true, true, true],
      terminalReason: "stuck",
      success: true, // inconsistent by hand-editing; the lock wins
    });
    expect(form.successValue).toBe(false);
    expect(form.successLocked).toBe(true);
  });

  it("rejects drafts from a different rubric shape", () => {
    const form = new RubricForm(QUESTIONS);
    expect(() =>
      form.restore({ answers: [true], terminalReason: null, success: null }),
    ).toThrow(/3-question rubric/);
  });
});

describe("QaReviewForm", () => {
  it("needs success plus every answer before submitting", () => {
    const form = new QaReviewForm(["milestone 0", "milestone 1"]);
    expect(form.canSubmit).toBe(false);
    form.setSuccess(true);
    expect(form.canSubmit).toBe(false);
    form.setAnswer(0, true);
    form.setAnswer(1, false);
    expect(form.canSubmit).toBe(true);
    expect(form.payload()).toEqual({ success: true, answers: [true, false] });
  });

  it("supports rollouts that never got a rubric (zero questions)", () => {
    const form = new QaReviewForm([]);
    expect(form.canSubmit).toBe(false);
    form.setSuccess(false);
    expect(form.canSubmit).toBe(true);
    expect(form.payload()).toEqual({ success: false, answers: [] });
  });

  it("throws on out-of-range answers and incomplete payloads", () => {
    const form = new QaReviewForm(["only question"]);
    expect(() => form.setAnswer(1, true)).toThrow(FormError);
    expect(() => form.payload()).toThrow(/submit disabled/);
  });
});
