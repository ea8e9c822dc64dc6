/**
 * Offline-safe drafts for in-progress rubrics.
 *
 * The console saves the form state under a key derived from the slot it
 * belongs to (session, bundle, blinding code) after every edit. If the
 * network drops mid-submission, the draft survives a reload and the flow
 * offers a retry instead of losing the evaluator's answers. Drafts live
 * in any Storage-shaped key-value store — window.localStorage in the
 * browser, an in-memory map under test.
 */

import type { RubricSnapshot } from "./rubricForm";

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

/** Storage-shaped in-memory store for tests and non-browser callers. */
export class MemoryStore implements KeyValueStore {
  private readonly entries = new Map<string, string>();

  getItem(key: string): string | null {
    return this.entries.has(key) ? (this.entries.get(key) as string) : null;
  }

  setItem(key: string, value: string): void {
    this.entries.set(key, value);
  }

  removeItem(key: string): void {
    this.entries.delete(key);
  }

  get size(): number {
    return this.entries.size;
  }
}

export interface DraftRecord {
  sessionId: string;
  bundleId: string;
  blindingCode: string;
  /** When the slot was first shown — becomes the rollout's started_at. */
  startedAt: string;
  form: RubricSnapshot;
  savedAt: string;
}

const DEFAULT_PREFIX = "evaluator-console/draft";

export class DraftStore {
  constructor(
    private readonly store: KeyValueStore,
    private readonly prefix: string = DEFAULT_PREFIX,
  ) {}

  key(sessionId: string, bundleId: string, blindingCode: string): string {
    return `${this.prefix}/${sessionId}/${bundleId}/${blindingCode}`;
  }

  save(draft: DraftRecord): void {
    this.store.setItem(
      this.key(draft.sessionId, draft.bundleId, draft.blindingCode),
      JSON.stringify(draft),
    );
  }

  load(sessionId: string, bundleId: string, blindingCode: string): DraftRecord | null {
    const raw = this.store.getItem(this.key(sessionId, bundleId, blindingCode));
    if (raw === null) return null;
    try {
      return JSON.parse(raw) as DraftRecord;
    } catch {
      // A corrupt entry is treated as no draft; the form starts fresh.
      return null;
    }
  }

  clear(sessionId: string, bundleId: string, blindingCode: string): void {
    this.store.removeItem(this.key(sessionId, bundleId, blindingCode));
  }
}
