import type {
  DecisionAck,
  DecisionPayload,
  QueueStats,
  ReviewCandidate,
  TestSetExport,
} from './types.js';
import { parseCandidate } from './validate.js';

/** Another reviewer holds a live lease on the scene; re-fetch, don't retry. */
export class LeaseConflictError extends Error {
  constructor(public leaseHolder: string) {
    super(`scene is leased to ${leaseHolder}`);
    this.name = 'LeaseConflictError';
  }
}

/** Network-level failure: the request may never have reached the service. */
export class ServiceUnreachableError extends Error {
  constructor(cause: unknown) {
    super(`review service unreachable: ${String(cause)}`);
    this.name = 'ServiceUnreachableError';
  }
}

/** The service answered with a non-retryable error. */
export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = 'ServiceError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify(body),
      });
    } catch (cause) {
      throw new ServiceUnreachableError(cause);
    }
    const payload = (await response.json()) as Record<string, unknown>;
    if (response.status === 409) {
      throw new LeaseConflictError(String(payload.lease_holder ?? 'unknown'));
    }
    if (response.status >= 500) {
      // transient server-side failure: let the retry queue resubmit
      throw new ServiceUnreachableError(`status ${response.status}`);
    }
    if (!response.ok) {
      throw new ServiceError(response.status, String(payload.error ?? response.status));
    }
    return payload;
  }

  private async get(path: string): Promise<unknown> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`);
    } catch (cause) {
      throw new ServiceUnreachableError(cause);
    }
    const payload = (await response.json()) as Record<string, unknown>;
    if (!response.ok) {
      throw new ServiceError(response.status, String(payload.error ?? response.status));
    }
    return payload;
  }

  async stats(): Promise<QueueStats> {
    return (await this.get('/api/stats')) as QueueStats;
  }

  async next(reviewerId: string): Promise<ReviewCandidate | null> {
    const payload = (await this.post('/api/next', { reviewer_id: reviewerId })) as {
      candidate: unknown;
    };
    if (payload.candidate === null) {
      return null;
    }
    return parseCandidate(payload.candidate);
  }

  async submitDecision(payload: DecisionPayload): Promise<DecisionAck> {
    return (await this.post('/api/decision', payload)) as DecisionAck;
  }

  async exportTestSet(targetSize?: number): Promise<TestSetExport> {
    const body = targetSize === undefined ? {} : { target_size: targetSize };
    return (await this.post('/api/export', body)) as TestSetExport;
  }

  imageUrl(sceneId: string): string {
    return `${this.baseUrl}/api/image/${encodeURIComponent(sceneId)}`;
  }
}
