/**
 * Client-side session state: one item at a time, a rating draft that must
 * be complete before it can be submitted, a single in-flight request, and
 * an optimistic progress bump that is rolled back if submission fails.
 */

import type {
  Comparison,
  ItemPayload,
  Progress,
  RatingDraft,
  Score,
} from "./api.js";

export interface Draft {
  comparison: Comparison | null;
  r: Score | null;
  fcc: Score | null;
  oq: Score | null;
}

export const EMPTY_DRAFT: Draft = { comparison: null, r: null, fcc: null, oq: null };

export class UiSessionState {
  readonly sessionId: string;
  item: ItemPayload | null = null;
  progress: Progress = { rated: 0, total: 0 };
  draft: Draft = { ...EMPTY_DRAFT };
  inflight = false;
  submitError: string | null = null;
  private pendingItemId: string | null = null;

  constructor(sessionId: string) {
    this.sessionId = sessionId;
  }

  /** Installs a freshly fetched item and clears the previous draft. */
  setItem(item: ItemPayload): void {
    this.item = item;
    this.progress = item.progress;
    this.draft = { ...EMPTY_DRAFT };
    this.submitError = null;
  }

  setDraft(patch: Partial<Draft>): void {
    this.draft = { ...this.draft, ...patch };
  }

  canSubmit(): boolean {
    const { comparison, r, fcc, oq } = this.draft;
    return (
      this.item !== null &&
      !this.inflight &&
      comparison !== null &&
      r !== null &&
      fcc !== null &&
      oq !== null
    );
  }

  /**
   * Marks the draft in flight and applies the optimistic progress bump.
   * Returns the completed draft, or null when submission is not allowed
   * (incomplete draft, no item, or another request already in flight).
   */
  beginSubmit(): RatingDraft | null {
    const { comparison, r, fcc, oq } = this.draft;
    if (
      this.item === null ||
      this.inflight ||
      comparison === null ||
      r === null ||
      fcc === null ||
      oq === null
    ) {
      return null;
    }
    this.inflight = true;
    this.pendingItemId = this.item.itemId;
    this.progress = { ...this.progress, rated: this.progress.rated + 1 };
    this.submitError = null;
    return { comparison, r, fcc, oq };
  }

  /**
   * Confirms the in-flight rating and advances past the item. A duplicate
   * or stale acknowledgment is ignored, so progress can never advance
   * twice for one rating.
   */
  acknowledge(itemId: string, progress?: Progress): boolean {
    if (!this.inflight || itemId !== this.pendingItemId) {
      return false;
    }
    this.inflight = false;
    this.pendingItemId = null;
    if (progress !== undefined) {
      this.progress = progress;
    }
    this.item = null;
    this.draft = { ...EMPTY_DRAFT };
    return true;
  }

  /** Rolls back the optimistic bump; the draft is retained for retry. */
  failSubmit(message: string): void {
    if (!this.inflight) {
      return;
    }
    this.inflight = false;
    this.pendingItemId = null;
    this.progress = {
      ...this.progress,
      rated: Math.max(0, this.progress.rated - 1),
    };
    this.submitError = message;
  }
}
