/** Session store: server-state mirror with an optimistic submit window.
 *
 * Cards always end up equal to the most recent server response: a submit
 * optimistically flips the card, then reconciles by re-fetching it (both on
 * success and on conflict); transport failures roll the card back.
 */

import { ApiClient, ApiError, ClusterCard, SessionSummary, VerdictRequest } from './api.js';

export type Listener = () => void;

export interface CardSlot {
  card: ClusterCard;
  inflight: boolean;
  error: string | null;
}

export class SessionStore {
  summary: SessionSummary | null = null;
  slots: Map<number, CardSlot> = new Map();
  unreachable = false;
  finalizing = false;
  dictionaryPath: string | null = null;
  selected = 0;

  private listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
  ) {}

  onChange(fn: Listener): void {
    this.listeners.push(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  /** Cards ordered by descending cluster size (biggest impact first). */
  orderedCards(): CardSlot[] {
    return [...this.slots.values()].sort(
      (a, b) => b.card.size - a.card.size || a.card.cluster_index - b.card.cluster_index,
    );
  }

  async load(): Promise<void> {
    try {
      const [summary, listing] = await Promise.all([
        this.api.getSummary(this.sessionId),
        this.api.getClusters(this.sessionId),
      ]);
      this.summary = summary;
      this.slots = new Map(
        listing.clusters.map((card) => [
          card.cluster_index,
          { card, inflight: false, error: null },
        ]),
      );
      this.unreachable = false;
    } catch (e) {
      if (e instanceof ApiError) throw e;
      this.unreachable = true; // transport-level failure, not a service reply
    }
    this.notify();
  }

  /** Optimistic submit: flip locally, POST, then reconcile with the server. */
  async submit(index: number, request: VerdictRequest): Promise<void> {
    const slot = this.slots.get(index);
    if (!slot || slot.inflight) return;
    const before = slot.card;

    slot.card = {
      ...before,
      status: 'decided',
      verdict: {
        cluster_index: index,
        decision: request.decision,
        class_id: request.class_id ?? null,
        decided_by: 'human',
        inspected_patch_ids: before.representatives.map((r) => r.patch_id),
      },
    };
    slot.inflight = true;
    slot.error = null;
    this.notify();

    try {
      await this.api.postVerdict(this.sessionId, index, request);
      await this.reconcile(index);
    } catch (e) {
      if (e instanceof ApiError && e.code === 'conflict') {
        // someone else decided first: adopt the server's card
        await this.reconcile(index);
        slot.error = e.message;
      } else if (e instanceof ApiError) {
        slot.card = before; // rejected: roll back, surface inline
        slot.error = e.message;
      } else {
        slot.card = before; // offline: roll back quietly into retryable state
        slot.error = 'service unreachable, change not saved';
      }
    } finally {
      slot.inflight = false;
      this.notify();
    }
  }

  /** Replace one card and the summary with fresh server state. */
  private async reconcile(index: number): Promise<void> {
    const slot = this.slots.get(index);
    if (!slot) return;
    const [card, summary] = await Promise.all([
      this.api.getCluster(this.sessionId, index),
      this.api.getSummary(this.sessionId),
    ]);
    slot.card = card;
    this.summary = summary;
  }

  async finalize(): Promise<void> {
    if (!this.summary?.complete || this.finalizing) return;
    this.finalizing = true;
    this.notify();
    try {
      const result = await this.api.finalize(this.sessionId);
      this.dictionaryPath = result.dictionary_path;
      this.summary = await this.api.getSummary(this.sessionId);
    } catch (e) {
      if (e instanceof ApiError) {
        this.summary = await this.api.getSummary(this.sessionId);
      }
    } finally {
      this.finalizing = false;
      this.notify();
    }
  }

  moveSelection(delta: number): void {
    const ordered = this.orderedCards();
    if (!ordered.length) return;
    const position = ordered.findIndex((s) => s.card.cluster_index === this.selected);
    const next = Math.min(Math.max((position < 0 ? 0 : position) + delta, 0), ordered.length - 1);
    this.selected = ordered[next].card.cluster_index;
    this.notify();
  }
}
