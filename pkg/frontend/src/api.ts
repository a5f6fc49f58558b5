/** Thin client over the review service JSON API. */

import type { DecisionKind, DecisionPayload, Progress, QueueFilter, QueuePage } from './types.js';

/**
 * The one place a decision control becomes a wire payload. Every button and
 * keyboard shortcut funnels through this; the contract test pins its shape.
 */
export function buildDecisionPayload(
  sampleId: string,
  decision: DecisionKind,
  reviewerId: string,
  note?: string,
): DecisionPayload {
  const payload: DecisionPayload = {
    sample_id: sampleId,
    decision,
    reviewer_id: reviewerId,
  };
  if (note !== undefined && note !== '') {
    payload.note = note;
  }
  return payload;
}

export class ReviewApi {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async fetchQueue(page: number, filter: QueueFilter = 'pending'): Promise<QueuePage> {
    const resp = await this.fetchFn(`${this.baseUrl}/queue?page=${page}&filter=${filter}`);
    if (!resp.ok) {
      throw new Error(`queue fetch failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as QueuePage;
  }

  async fetchProgress(): Promise<Progress> {
    const resp = await this.fetchFn(`${this.baseUrl}/progress`);
    if (!resp.ok) {
      throw new Error(`progress fetch failed: HTTP ${resp.status}`);
    }
    return (await resp.json()) as Progress;
  }

  async postDecision(payload: DecisionPayload): Promise<void> {
    const resp = await this.fetchFn(`${this.baseUrl}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    });
    if (!resp.ok) {
      throw new Error(`decision post failed: HTTP ${resp.status}`);
    }
  }
}
