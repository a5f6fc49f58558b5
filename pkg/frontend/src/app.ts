/** DOM shell: wires the triage session to the page and the keyboard. */

import { ReviewApi } from './api.js';
import { renderItem, renderProgress } from './render.js';
import { TriageSession } from './session.js';
import type { QueueFilter } from './types.js';

const RETRY_INTERVAL_MS = 4000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function main(): void {
  const api = new ReviewApi('');
  const stage = el<HTMLDivElement>('stage');
  const progressBox = el<HTMLDivElement>('progress');
  const unsynced = el<HTMLSpanElement>('unsynced');
  const verdictToggle = el<HTMLInputElement>('show-verdict');
  const reviewerInput = el<HTMLInputElement>('reviewer');
  const noteInput = el<HTMLInputElement>('note');

  // Machine verdicts anchor human judgment, so they stay hidden unless asked for.
  let showVerdict = false;

  const session = new TriageSession(api, {
    onItemChanged: (item) => {
      stage.innerHTML = renderItem(item, showVerdict);
      noteInput.value = '';
    },
    onProgress: (progress) => {
      progressBox.innerHTML = renderProgress(progress);
    },
    onUnsyncedChanged: (count) => {
      unsynced.textContent = count > 0 ? `${count} unsynced` : '';
      unsynced.classList.toggle('visible', count > 0);
    },
  });

  session.reviewerId = localStorage.getItem('kindersafe-reviewer') || 'reviewer';
  reviewerInput.value = session.reviewerId;
  reviewerInput.addEventListener('change', () => {
    session.reviewerId = reviewerInput.value.trim() || 'reviewer';
    localStorage.setItem('kindersafe-reviewer', session.reviewerId);
  });

  verdictToggle.addEventListener('change', () => {
    showVerdict = verdictToggle.checked;
    stage.innerHTML = renderItem(session.current(), showVerdict);
  });

  const decide = (decision: 'keep' | 'remove' | 'uncertain') => {
    void session.decide(decision, noteInput.value.trim() || undefined);
  };
  el<HTMLButtonElement>('btn-keep').addEventListener('click', () => decide('keep'));
  el<HTMLButtonElement>('btn-remove').addEventListener('click', () => decide('remove'));
  el<HTMLButtonElement>('btn-uncertain').addEventListener('click', () => decide('uncertain'));
  el<HTMLButtonElement>('btn-skip').addEventListener('click', () => session.skip());

  document.addEventListener('keydown', (event) => {
    if (event.target instanceof HTMLInputElement) {
      return; // typing a note or a name, not triaging
    }
    const key = event.key.toLowerCase();
    if (key === 'k') decide('keep');
    else if (key === 'r') decide('remove');
    else if (key === 'u') decide('uncertain');
    else if (key === 's') session.skip();
  });

  for (const tab of document.querySelectorAll<HTMLButtonElement>('[data-filter]')) {
    tab.addEventListener('click', () => {
      for (const other of document.querySelectorAll('[data-filter]')) {
        other.classList.toggle('active', other === tab);
      }
      void session.load(tab.dataset.filter as QueueFilter);
    });
  }

  window.setInterval(() => void session.flushRetries(), RETRY_INTERVAL_MS);
  void session.load('pending');
}

window.addEventListener('load', main);
