// DOM rendering. Every number written into a cell is read straight off the
// model's stored service responses.

import { FeedbackEntry, ViewModel } from './state.js';

function el(doc: Document, tag: string, className?: string, text?: string): HTMLElement {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function bandText(band: { lower: number; upper: number } | null): string {
  return band ? `[${band.lower.toFixed(1)}, ${band.upper.toFixed(1)}]` : '-';
}

export function renderCounts(model: ViewModel, doc: Document): HTMLElement {
  const container = el(doc, 'div', 'counts-view');
  if (model.banner) {
    container.appendChild(el(doc, 'div', 'banner error', model.banner));
    return container;
  }
  if (model.validationError) {
    container.appendChild(el(doc, 'div', 'validation error', model.validationError));
  }
  if (!model.counts) {
    container.appendChild(el(doc, 'div', 'empty', 'no segment loaded'));
    return container;
  }
  container.appendChild(
    el(doc, 'h2', 'segment-title', `segment ${model.counts.segment}`),
  );
  const table = el(doc, 'table', 'counts') as HTMLTableElement;
  const head = el(doc, 'tr');
  for (const title of ['intersection', 'approach', 'movement', 'count',
                       'camera band', 'loop band']) {
    head.appendChild(el(doc, 'th', undefined, title));
  }
  table.appendChild(head);
  for (const row of model.counts.locations) {
    const tr = el(doc, 'tr', row.in_band ? 'in-band' : 'out-of-band');
    tr.setAttribute('data-location', String(row.location));
    tr.appendChild(el(doc, 'td', undefined, String(row.intersection)));
    tr.appendChild(el(doc, 'td', undefined, row.approach));
    tr.appendChild(el(doc, 'td', undefined, row.movement));
    tr.appendChild(el(doc, 'td', 'count', String(row.count)));
    tr.appendChild(el(doc, 'td', 'band', bandText(row.bands.cv)));
    tr.appendChild(el(doc, 'td', 'band', bandText(row.bands.ld)));
    table.appendChild(tr);
  }
  container.appendChild(table);
  return container;
}

export function renderVerdicts(entry: FeedbackEntry, doc: Document): HTMLElement {
  const wrap = el(doc, 'div', 'verdicts');
  for (const name of ['syntactic', 'feasible', 'semantic'] as const) {
    const ok = entry.verdicts[name];
    wrap.appendChild(el(doc, 'span', `verdict ${ok ? 'pass' : 'fail'}`,
                        `${name}: ${ok ? 'pass' : 'fail'}`));
  }
  return wrap;
}

export function renderDiff(entry: FeedbackEntry, doc: Document): HTMLElement {
  const wrap = el(doc, 'div', 'diff');
  if (!entry.accepted || !entry.before || !entry.after) {
    wrap.appendChild(el(doc, 'div', 'state-unchanged',
                        `rejected: ${entry.detail ?? 'constraint discarded'} ` +
                        '(simulation unchanged)'));
    return wrap;
  }
  const table = el(doc, 'table', 'diff-table') as HTMLTableElement;
  const head = el(doc, 'tr');
  for (const title of ['location', 'before', 'after']) {
    head.appendChild(el(doc, 'th', undefined, title));
  }
  table.appendChild(head);
  for (const key of Object.keys(entry.before).sort((a, b) => Number(a) - Number(b))) {
    const tr = el(doc, 'tr');
    tr.setAttribute('data-location', key);
    tr.appendChild(el(doc, 'td', undefined, key));
    tr.appendChild(el(doc, 'td', 'before', String(entry.before[key])));
    tr.appendChild(el(doc, 'td', 'after', String(entry.after[key])));
    table.appendChild(tr);
  }
  wrap.appendChild(table);
  return wrap;
}

export function renderHistory(model: ViewModel, doc: Document): HTMLElement {
  const wrap = el(doc, 'div', 'history');
  for (const entry of model.history) {
    const item = el(doc, 'div', `feedback-entry ${entry.accepted ? 'accepted' : 'rejected'}`);
    item.appendChild(el(doc, 'div', 'feedback-text',
                        `#${entry.intersection} @${entry.segment}: ${entry.text}`));
    item.appendChild(renderVerdicts(entry, doc));
    item.appendChild(renderDiff(entry, doc));
    wrap.appendChild(item);
  }
  return wrap;
}
