/** Pure HTML builders for the triage screen; testable without a DOM. */

import type { Progress, QueueItem } from './types.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
    .replace(/'/g, '&#39;');
}

export function verdictBadge(verdict: string | null): string {
  if (verdict === null) {
    return '<span class="badge badge-none">no machine verdict</span>';
  }
  const cls = verdict === 'positive' ? 'badge-positive' : verdict === 'negative' ? 'badge-negative' : 'badge-quarantined';
  return `<span class="badge ${cls}">${escapeHtml(verdict)}</span>`;
}

export function renderItem(item: QueueItem | null, showVerdict: boolean): string {
  if (item === null) {
    return '<div class="done">Queue empty. Nothing left to review in this tab.</div>';
  }
  const image = item.image_url
    ? `<img class="subject" src="${escapeHtml(item.image_url)}" alt="image under review" />`
    : `<p class="remote-ref">Remote image (not proxied): <a href="${escapeHtml(item.image_ref)}" target="_blank" rel="noreferrer noopener">${escapeHtml(item.image_ref)}</a></p>`;
  const caption = item.caption
    ? `<p class="caption"><strong>Caption:</strong> ${escapeHtml(item.caption)}</p>`
    : '<p class="caption caption-missing">No caption.</p>';
  const description = item.visual_description
    ? `<p class="description"><strong>Description:</strong> ${escapeHtml(item.visual_description)}</p>`
    : '';
  const verdict = showVerdict
    ? `<div class="verdict-row">${verdictBadge(item.machine_verdict)}${
        item.parse_path ? ` <span class="parse-path">${escapeHtml(item.parse_path)}</span>` : ''
      }</div>`
    : '';
  const findings = item.findings.length
    ? `<ul class="findings">${item.findings
        .map((f) => `<li class="finding finding-${escapeHtml(f.severity)}">${escapeHtml(f.kind)} (${escapeHtml(f.severity)})</li>`)
        .join('')}</ul>`
    : '';
  return [
    `<div class="item" data-sample-id="${escapeHtml(item.sample_id)}">`,
    image,
    caption,
    description,
    verdict,
    findings,
    '</div>',
  ].join('\n');
}

export function renderProgress(progress: Progress): string {
  const pct = progress.total === 0 ? 100 : Math.round((progress.decided / progress.total) * 100);
  return (
    `<div class="bar"><div class="bar-fill" style="width:${pct}%"></div></div>` +
    `<span class="counts">${progress.decided}/${progress.total} decided - ${progress.pending} pending - ${progress.uncertain} uncertain</span>`
  );
}
