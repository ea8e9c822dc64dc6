import { describe, expect, it } from "vitest";

import { DraftStore, MemoryStore, type DraftRecord } from "../src/drafts";

function makeDraft(overrides: Partial<DraftRecord> = {}): DraftRecord {
  return {
    sessionId: "sess-b-111111",
    bundleId: "sess-b-111111-b00004",
    blindingCode: "code-deadbeef",
    startedAt: "2026-01-05T09:00:00Z",
    form: { answers: [true, null, false], terminalReason: null, success: null },
    savedAt: "2026-01-05T09:02:00Z",
    ...overrides,
  };
}

describe("DraftStore", () => {
  it("saves and loads a draft under its slot key", () => {
    const store = new MemoryStore();
    const drafts = new DraftStore(store);
    const draft = makeDraft();
    drafts.save(draft);
    const loaded = drafts.load(draft.sessionId, draft.bundleId, draft.blindingCode);
    expect(loaded).toEqual(draft);
    expect(store.size).toBe(1);
  });

  it("keys drafts by session, bundle, and blinding code", () => {
    const drafts = new DraftStore(new MemoryStore(), "console/draft");
    expect(drafts.key("s1", "s1-b00000", "code-aa")).toBe(
      "console/draft/s1/s1-b00000/code-aa",
    );
    const a = makeDraft({ blindingCode: "code-aa" });
    const b = makeDraft({ blindingCode: "code-bb", startedAt: "2026-01-05T10:00:00Z" });
    drafts.save(a);
    drafts.save(b);
    expect(drafts.load(a.sessionId, a.bundleId, "code-aa")?.startedAt).toBe(a.startedAt);
    expect(drafts.load(b.sessionId, b.bundleId, "code-bb")?.startedAt).toBe(b.startedAt);
  });

  it("returns null for missing or cleared drafts", () => {
    const drafts = new DraftStore(new MemoryStore());
    expect(drafts.load("s", "b", "c")).toBeNull();
    const draft = makeDraft();
    drafts.save(draft);
    drafts.clear(draft.sessionId, draft.bundleId, draft.blindingCode);
    expect(drafts.load(draft.sessionId, draft.bundleId, draft.blindingCode)).toBeNull();
  });

  it("treats a corrupt entry as no draft", () => {
    const store = new MemoryStore();
    const drafts = new DraftStore(store);
    store.setItem(drafts.key("s", "b", "c"), "{not json");
    expect(drafts.load("s", "b", "c")).toBeNull();
  });

  it("keeps extra fields (like a minted rollout id) through the round trip", () => {
    const drafts = new DraftStore(new MemoryStore());
    const draft = { ...makeDraft(), rolloutId: "ro-00042" };
    drafts.save(draft);
    const loaded = drafts.load(draft.sessionId, draft.bundleId, draft.blindingCode);
    expect((loaded as typeof draft).rolloutId).toBe("ro-00042");
  });
});
