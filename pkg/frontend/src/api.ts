/** Typed client for the labeling-session HTTP API. */

export interface LabelEntry {
  id: number;
  name: string;
}

export interface SessionSummary {
  session_id: string;
  k: number;
  t: number;
  strategy: string;
  label_map: LabelEntry[];
  decided: number;
  pending: number;
  complete: boolean;
  finalized: boolean;
}

export interface Verdict {
  cluster_index: number;
  decision: 'tissue' | 'drop';
  class_id: number | null;
  decided_by: string;
  inspected_patch_ids: number[];
}

export interface ClusterCard {
  cluster_index: number;
  size: number;
  status: 'pending' | 'decided';
  verdict: Verdict | null;
  representatives: { patch_id: number; thumbnail_url: string }[];
}

export interface VerdictRequest {
  decision: 'tissue' | 'drop';
  class_id?: number;
  revise?: boolean;
}

export interface VerdictResponse {
  status: string;
  cluster_index: number;
  remaining_pending: number;
  complete: boolean;
}

export interface FinalizeResponse {
  session_id: string;
  dictionary_path: string;
  dictionary: unknown;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

/** Error carrying the service's {code, message} payload and HTTP status. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { 'Content-Type': 'application/json' } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const payload = await resp.json();
    if (!resp.ok) {
      const err = payload as ApiErrorBody;
      throw new ApiError(resp.status, err.code ?? 'unknown', err.message ?? 'request failed');
    }
    return payload as T;
  }

  getSummary(sessionId: string): Promise<SessionSummary> {
    return this.request('GET', `/sessions/${sessionId}`);
  }

  getClusters(sessionId: string): Promise<{ session_id: string; clusters: ClusterCard[] }> {
    return this.request('GET', `/sessions/${sessionId}/clusters`);
  }

  getCluster(sessionId: string, index: number): Promise<ClusterCard> {
    return this.request('GET', `/sessions/${sessionId}/clusters/${index}`);
  }

  postVerdict(sessionId: string, index: number, body: VerdictRequest): Promise<VerdictResponse> {
    return this.request('POST', `/sessions/${sessionId}/clusters/${index}/verdict`, body);
  }

  finalize(sessionId: string): Promise<FinalizeResponse> {
    return this.request('POST', `/sessions/${sessionId}/finalize`);
  }

  thumbnailUrl(card: ClusterCard, repIndex: number): string {
    return this.baseUrl + card.representatives[repIndex].thumbnail_url;
  }
}
