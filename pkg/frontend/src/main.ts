// Console bootstrap: wires the form controls to the view model and redraws
// after every state change. The API base defaults to same-origin and can be
// overridden with ?api=http://host:port.

import { ApiClient } from './api.js';
import { renderCounts, renderHistory } from './render.js';
import {
  createModel,
  loadIntersections,
  loadSegment,
  submitFeedback,
} from './state.js';

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get('api');
  return param ?? '';
}

async function start() {
  const client = new ApiClient(apiBase());
  const model = createModel();
  const countsHost = document.getElementById('counts')!;
  const historyHost = document.getElementById('history')!;
  const segmentInput = document.getElementById('segment') as HTMLInputElement;
  const intersectionSelect = document.getElementById('intersection') as HTMLSelectElement;
  const textInput = document.getElementById('feedback-text') as HTMLTextAreaElement;
  const submitButton = document.getElementById('submit') as HTMLButtonElement;

  function redraw() {
    countsHost.replaceChildren(renderCounts(model, document));
    historyHost.replaceChildren(renderHistory(model, document));
    submitButton.disabled = model.pending;
  }

  await loadIntersections(model, client);
  for (const info of model.intersections) {
    const option = document.createElement('option');
    option.value = String(info.id);
    option.textContent = `intersection ${info.id}`;
    intersectionSelect.appendChild(option);
  }
  await loadSegment(model, client, Number(segmentInput.value || '0'));
  redraw();

  segmentInput.addEventListener('change', async () => {
    await loadSegment(model, client, Number(segmentInput.value));
    redraw();
  });
  submitButton.addEventListener('click', async () => {
    await submitFeedback(model, client,
                         Number(intersectionSelect.value), textInput.value);
    redraw();
  });
}

window.addEventListener('DOMContentLoaded', () => {
  void start();
});
