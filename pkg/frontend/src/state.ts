// View model for the review console. Counts shown to the user are always a
// verbatim copy of the latest counts response; the model never derives or
// adjusts a number on its own.

import {
  ApiClient,
  CountsResponse,
  FeedbackResult,
  IntersectionInfo,
  Verdicts,
} from './api.js';

export interface FeedbackEntry {
  intersection: number;
  segment: number;
  text: string;
  verdicts: Verdicts;
  accepted: boolean;
  detail: string | null;
  before: Record<string, number> | null;
  after: Record<string, number> | null;
}

export interface ViewModel {
  segment: number;
  counts: CountsResponse | null;
  intersections: IntersectionInfo[];
  history: FeedbackEntry[];
  banner: string | null;
  validationError: string | null;
  pending: boolean;
}

export const SEGMENTS_PER_DAY = 96;

export function createModel(): ViewModel {
  return {
    segment: 0,
    counts: null,
    intersections: [],
    history: [],
    banner: null,
    validationError: null,
    pending: false,
  };
}

export async function loadIntersections(model: ViewModel, client: ApiClient) {
  try {
    model.intersections = (await client.intersections()).intersections;
    model.banner = null;
  } catch (err) {
    model.banner = `service unreachable: ${err}`;
  }
}

export async function loadSegment(
  model: ViewModel,
  client: ApiClient,
  segment: number,
): Promise<void> {
  if (!Number.isInteger(segment) || segment < 0 || segment >= SEGMENTS_PER_DAY) {
    model.validationError = `segment must be an integer in 0..${SEGMENTS_PER_DAY - 1}`;
    return;
  }
  model.validationError = null;
  try {
    model.counts = await client.counts(segment);
    model.segment = segment;
    model.banner = null;
  } catch (err) {
    model.banner = `service unreachable: ${err}`;
  }
}

export async function submitFeedback(
  model: ViewModel,
  client: ApiClient,
  intersection: number,
  text: string,
): Promise<FeedbackEntry | null> {
  if (!text.trim()) {
    model.validationError = 'feedback text must not be empty';
    return null;
  }
  if (!model.intersections.some((x) => x.id === intersection)) {
    model.validationError = `unknown intersection ${intersection}`;
    return null;
  }
  if (model.pending) {
    return null; // one in-flight mutation at a time
  }
  model.validationError = null;
  model.pending = true;
  try {
    const result: FeedbackResult = await client.submitFeedback(
      model.segment,
      intersection,
      text,
    );
    const entry: FeedbackEntry = result.accepted
      ? {
          intersection,
          segment: model.segment,
          text,
          verdicts: result.verdicts,
          accepted: true,
          detail: null,
          before: result.before,
          after: result.after,
        }
      : {
          intersection,
          segment: model.segment,
          text,
          verdicts: result.verdicts,
          accepted: false,
          detail: result.detail,
          before: null,
          after: null,
        };
    model.history.push(entry);
    if (entry.accepted) {
      // counts changed server-side; re-fetch rather than patching locally
      await loadSegment(model, client, model.segment);
    }
    return entry;
  } catch (err) {
    model.banner = `service unreachable: ${err}`;
    return null;
  } finally {
    model.pending = false;
  }
}
