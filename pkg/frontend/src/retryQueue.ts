import { ServiceUnreachableError } from './api.js';
import type { DecisionAck, DecisionPayload } from './types.js';

export interface RetryOptions {
  /** Give up (reject) after this many attempts; Infinity = never drop. */
  maxAttempts?: number;
  /** Base delay between attempts, doubled per retry up to 10x. */
  delayMs?: number;
  /** Injectable for tests. */
  sleep?: (ms: number) => Promise<void>;
}

interface PendingSubmit {
  payload: DecisionPayload;
  attempts: number;
  resolve: (ack: DecisionAck) => void;
  reject: (error: unknown) => void;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * FIFO queue of unacknowledged decision submissions.
 *
 * Transient failures (network, 5xx) are retried with backoff and the
 * decision is never dropped; permanent rejections (validation, lease
 * conflict) surface to the caller immediately. Submissions stay ordered:
 * a stuck head blocks the tail, so the service always sees decisions in
 * the order the reviewer made them.
 */
export class PendingSubmitQueue {
  private readonly pending: PendingSubmit[] = [];
  private flushing = false;
  private readonly maxAttempts: number;
  private readonly delayMs: number;
  private readonly sleep: (ms: number) => Promise<void>;

  constructor(
    private readonly submit: (payload: DecisionPayload) => Promise<DecisionAck>,
    options: RetryOptions = {},
  ) {
    this.maxAttempts = options.maxAttempts ?? Infinity;
    this.delayMs = options.delayMs ?? 500;
    this.sleep = options.sleep ?? defaultSleep;
  }

  get size(): number {
    return this.pending.length;
  }

  push(payload: DecisionPayload): Promise<DecisionAck> {
    return new Promise<DecisionAck>((resolve, reject) => {
      this.pending.push({ payload, attempts: 0, resolve, reject });
      void this.flush();
    });
  }

  private async flush(): Promise<void> {
    if (this.flushing) {
      return;
    }
    this.flushing = true;
    try {
      while (this.pending.length > 0) {
        const head = this.pending[0]!;
        try {
          head.attempts += 1;
          const ack = await this.submit(head.payload);
          this.pending.shift();
          head.resolve(ack);
        } catch (error) {
          // lease conflicts and validation errors are permanent: surface them
          if (!(error instanceof ServiceUnreachableError)) {
            this.pending.shift();
            head.reject(error);
            continue;
          }
          if (head.attempts >= this.maxAttempts) {
            this.pending.shift();
            head.reject(error);
            continue;
          }
          const backoff = Math.min(head.attempts, 10) * this.delayMs;
          await this.sleep(backoff);
        }
      }
    } finally {
      this.flushing = false;
    }
  }
}
