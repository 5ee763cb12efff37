// Typed client for the demand service. The console never computes counts
// itself: everything rendered comes back from these calls.

export interface Band {
  lower: number;
  upper: number;
}

export interface CountRow {
  location: number;
  intersection: number;
  approach: string;
  movement: string;
  count: number;
  bands: { cv: Band | null; ld: Band | null };
  in_band: boolean;
}

export interface CountsResponse {
  segment: number;
  locations: CountRow[];
}

export interface IntersectionInfo {
  id: number;
  locations: { location: number; approach: string; movement: string }[];
}

export interface Verdicts {
  syntactic: boolean;
  feasible: boolean;
  semantic: boolean;
}

export interface FeedbackAccepted {
  accepted: true;
  verdicts: Verdicts;
  spec: unknown;
  before: Record<string, number>;
  after: Record<string, number>;
}

export interface FeedbackRejected {
  accepted: false;
  status: number;
  verdicts: Verdicts;
  detail: string;
}

export type FeedbackResult = FeedbackAccepted | FeedbackRejected;

export interface StatusResponse {
  state: 'idle' | 'solving';
  done: number;
  total: number;
  error: string | null;
}

export class ApiClient {
  constructor(readonly base: string) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await fetch(`${this.base}${path}`);
    if (!response.ok) {
      throw new Error(`GET ${path} failed: ${response.status}`);
    }
    return (await response.json()) as T;
  }

  counts(segment: number): Promise<CountsResponse> {
    return this.getJson<CountsResponse>(`/api/counts?segment=${segment}`);
  }

  intersections(): Promise<{ intersections: IntersectionInfo[] }> {
    return this.getJson(`/api/intersections`);
  }

  status(): Promise<StatusResponse> {
    return this.getJson(`/api/status`);
  }

  report(): Promise<unknown> {
    return this.getJson(`/api/report`);
  }

  async resolve(): Promise<StatusResponse> {
    const response = await fetch(`${this.base}/api/resolve`, { method: 'POST' });
    return (await response.json()) as StatusResponse;
  }

  async submitFeedback(
    segment: number,
    intersection: number,
    text: string,
  ): Promise<FeedbackResult> {
    const response = await fetch(`${this.base}/api/feedback`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ segment, intersection, text }),
    });
    const body = await response.json();
    if (response.ok) {
      return body as FeedbackAccepted;
    }
    // 422 bodies carry {detail: {error, detail, verdicts}} or a plain string
    const detail = body?.detail ?? {};
    const verdicts: Verdicts =
      typeof detail === 'object' && detail.verdicts
        ? detail.verdicts
        : { syntactic: false, feasible: false, semantic: false };
    const message =
      typeof detail === 'string'
        ? detail
        : (detail.detail ?? detail.error ?? JSON.stringify(body));
    return {
      accepted: false,
      status: response.status,
      verdicts,
      detail: String(message),
    };
  }
}
