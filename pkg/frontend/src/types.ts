/** Shapes of the review service API (see docs/review_api.md). */

export type DecisionKind = 'keep' | 'remove' | 'uncertain';

export type QueueFilter = 'pending' | 'uncertain';

export interface Finding {
  kind: string;
  severity: string;
  evidence: Record<string, unknown>;
}

/** A queue item as the UI is allowed to see it. Ground truth is never part of this. */
export interface QueueItem {
  sample_id: string;
  image_ref: string;
  image_url: string | null;
  caption: string | null;
  visual_description: string | null;
  machine_verdict: string | null;
  parse_path: string | null;
  findings: Finding[];
}

export interface QueuePage {
  page: number;
  page_size: number;
  total_pages: number;
  total_items: number;
  filter: QueueFilter;
  items: QueueItem[];
}

export interface Progress {
  total: number;
  decided: number;
  pending: number;
  uncertain: number;
}

export interface DecisionPayload {
  sample_id: string;
  decision: DecisionKind;
  reviewer_id: string;
  note?: string;
}
