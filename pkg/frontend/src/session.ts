/**
 * Triage session state: the current queue window, optimistic decision
 * posting with an offline retry queue, and the uncertain revisit tab.
 *
 * The server is the source of truth. Decisions post immediately; on network
 * failure they are retained locally (visible as an unsynced count) and
 * re-posted until the service accepts them. Refreshing the page rebuilds the
 * session from /queue and /progress, so nothing is lost client-side.
 */

import { ReviewApi, buildDecisionPayload } from './api.js';
import type { DecisionKind, DecisionPayload, Progress, QueueFilter, QueueItem } from './types.js';

/** Fields the UI may render. Anything else the server might send is dropped. */
const VISIBLE_FIELDS = [
  'sample_id',
  'image_ref',
  'image_url',
  'caption',
  'visual_description',
  'machine_verdict',
  'parse_path',
  'findings',
] as const;

/**
 * Whitelist-copy a queue item. This is the blinding guarantee: even if a
 * misconfigured server leaked extra fields (ground truth above all), they
 * never reach the DOM because rendering only ever sees sanitized items.
 */
export function sanitizeItem(raw: Record<string, unknown>): QueueItem {
  const item: Record<string, unknown> = {};
  for (const field of VISIBLE_FIELDS) {
    item[field] = raw[field] ?? null;
  }
  item.findings = Array.isArray(raw.findings) ? raw.findings : [];
  return item as unknown as QueueItem;
}

export interface SessionEvents {
  onItemChanged: (item: QueueItem | null) => void;
  onProgress: (progress: Progress) => void;
  onUnsyncedChanged: (count: number) => void;
}

export class TriageSession {
  private items: QueueItem[] = [];
  private cursor = 0;
  private retryQueue: DecisionPayload[] = [];
  private flushing = false;
  filter: QueueFilter = 'pending';
  reviewerId = 'reviewer';

  constructor(
    private readonly api: ReviewApi,
    private readonly events: SessionEvents,
  ) {}

  get unsyncedCount(): number {
    return this.retryQueue.length;
  }

  current(): QueueItem | null {
    return this.items[this.cursor] ?? null;
  }

  async load(filter: QueueFilter = this.filter): Promise<void> {
    this.filter = filter;
    this.items = [];
    this.cursor = 0;
    let page = 0;
    let totalPages = 1;
    while (page < totalPages) {
      const window = await this.api.fetchQueue(page, filter);
      totalPages = window.total_pages;
      this.items.push(...window.items.map((i) => sanitizeItem(i as unknown as Record<string, unknown>)));
      page += 1;
    }
    this.events.onItemChanged(this.current());
    await this.refreshProgress();
  }

  async refreshProgress(): Promise<void> {
    try {
      this.events.onProgress(await this.api.fetchProgress());
    } catch {
      // progress is cosmetic; never block triage on it
    }
  }

  /** Record a decision for the current item and advance. */
  async decide(decision: DecisionKind, note?: string): Promise<void> {
    const item = this.current();
    if (item === null) {
      return;
    }
    const payload = buildDecisionPayload(item.sample_id, decision, this.reviewerId, note);
    this.items.splice(this.cursor, 1);
    if (this.cursor >= this.items.length) {
      this.cursor = Math.max(0, this.items.length - 1);
    }
    this.events.onItemChanged(this.current());
    await this.submit(payload);
    await this.refreshProgress();
  }

  skip(): void {
    if (this.items.length === 0) {
      return;
    }
    this.cursor = (this.cursor + 1) % this.items.length;
    this.events.onItemChanged(this.current());
  }

  private async submit(payload: DecisionPayload): Promise<void> {
    try {
      await this.api.postDecision(payload);
    } catch {
      this.retryQueue.push(payload);
      this.events.onUnsyncedChanged(this.retryQueue.length);
    }
  }

  /** Re-post everything the service has not yet accepted, oldest first. */
  async flushRetries(): Promise<void> {
    if (this.flushing) {
      return;
    }
    this.flushing = true;
    try {
      while (this.retryQueue.length > 0) {
        const payload = this.retryQueue[0];
        try {
          await this.api.postDecision(payload);
        } catch {
          break; // still offline; keep the rest queued
        }
        this.retryQueue.shift();
        this.events.onUnsyncedChanged(this.retryQueue.length);
      }
    } finally {
      this.flushing = false;
    }
    if (this.retryQueue.length === 0) {
      await this.refreshProgress();
    }
  }
}
