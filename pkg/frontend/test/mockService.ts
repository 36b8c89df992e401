/**
 * In-memory stand-in for the review service, mirroring its HTTP semantics:
 * score-ordered leasing, 409 on foreign-lease decisions, supersession by
 * sequence number, and export of accepted scenes with their effective
 * (corrected when present) annotations.
 */

import type { FetchLike } from '../src/api.js';
import type {
  DecisionPayload,
  ExportedScene,
  MachineAnnotation,
  ReviewCandidate,
  TestSetExport,
} from '../src/types.js';

interface StoredDecision {
  payload: DecisionPayload;
  sequence_no: number;
}

function annotationValid(annotation: MachineAnnotation | null): boolean {
  if (annotation === null) return true;
  if (typeof annotation.scene_description !== 'string' || !annotation.scene_description.trim()) {
    return false;
  }
  return (
    Array.isArray(annotation.noteworthy_objects) &&
    annotation.noteworthy_objects.every((o) => typeof o === 'string' && o.trim().length > 0)
  );
}

export class MockReviewService {
  candidates = new Map<string, ReviewCandidate>();
  effective = new Map<string, StoredDecision>();
  log: StoredDecision[] = [];
  leases = new Map<string, string>();
  seq = 0;
  /** Every request body the service received, for contract assertions. */
  requests: Array<{ path: string; body: unknown }> = [];

  enqueue(candidates: ReviewCandidate[]): void {
    for (const candidate of candidates) {
      this.candidates.set(candidate.scene_id, { ...candidate, status: 'pending' });
    }
  }

  next(reviewerId: string): ReviewCandidate | null {
    for (const [sceneId, holder] of this.leases) {
      if (holder === reviewerId) {
        return this.candidates.get(sceneId) ?? null;
      }
    }
    const pending = [...this.candidates.values()]
      .filter((c) => c.status === 'pending')
      .sort((a, b) => b.score - a.score || a.scene_id.localeCompare(b.scene_id));
    const candidate = pending[0];
    if (!candidate) return null;
    candidate.status = 'in_review';
    this.leases.set(candidate.scene_id, reviewerId);
    return candidate;
  }

  decide(payload: DecisionPayload): { status: number; body: unknown } {
    const candidate = this.candidates.get(payload.scene_id);
    if (!candidate) {
      return { status: 404, body: { error: `unknown scene_id '${payload.scene_id}'` } };
    }
    const holder = this.leases.get(payload.scene_id);
    if (holder !== undefined && holder !== payload.reviewer_id) {
      return { status: 409, body: { error: 'lease_conflict', lease_holder: holder } };
    }
    if (payload.verdict !== 'accept' && payload.verdict !== 'reject') {
      return { status: 400, body: { error: `bad verdict '${payload.verdict}'` } };
    }
    if (!annotationValid(payload.corrected_annotation)) {
      return { status: 400, body: { error: 'corrected_annotation failed schema validation' } };
    }
    this.seq += 1;
    const decision = { payload, sequence_no: this.seq };
    this.log.push(decision);
    this.effective.set(payload.scene_id, decision);
    candidate.status = 'decided';
    this.leases.delete(payload.scene_id);
    return { status: 200, body: { sequence_no: this.seq, scene_id: payload.scene_id } };
  }

  stats(): unknown {
    const byStatus = { pending: 0, in_review: 0, decided: 0 };
    for (const candidate of this.candidates.values()) {
      byStatus[candidate.status] += 1;
    }
    let accepted = 0;
    let rejected = 0;
    for (const decision of this.effective.values()) {
      if (decision.payload.verdict === 'accept') accepted += 1;
      else rejected += 1;
    }
    return { total: this.candidates.size, ...byStatus, accepted, rejected };
  }

  export(targetSize: number): TestSetExport {
    const scenes: ExportedScene[] = [];
    for (const [sceneId, decision] of this.effective) {
      if (decision.payload.verdict !== 'accept') continue;
      const candidate = this.candidates.get(sceneId)!;
      scenes.push({
        scene_id: sceneId,
        image_ref: candidate.image_ref,
        score: candidate.score,
        annotation: decision.payload.corrected_annotation ?? candidate.machine_annotation,
        qa: candidate.qa,
      });
    }
    scenes.sort((a, b) => b.score - a.score || a.scene_id.localeCompare(b.scene_id));
    const chosen = scenes.slice(0, targetSize);
    return {
      scenes: chosen,
      target_size: targetSize,
      checksum: `mock-${JSON.stringify(chosen).length}-${this.seq}`,
    };
  }
}

export interface FetchOptions {
  /** Returns true when the next request should fail at the network level. */
  failNow?: () => boolean;
}

export function makeFetch(service: MockReviewService, options: FetchOptions = {}): FetchLike {
  return async (url: string, init?: RequestInit): Promise<Response> => {
    if (options.failNow?.()) {
      throw new TypeError('fetch failed (injected)');
    }
    const path = url.replace(/^https?:\/\/[^/]+/, '');
    const body = init?.body ? (JSON.parse(init.body as string) as Record<string, unknown>) : {};
    service.requests.push({ path, body });

    const json = (status: number, payload: unknown) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { 'Content-Type': 'application/json' },
      });

    if (path === '/api/stats') {
      return json(200, service.stats());
    }
    if (path === '/api/next') {
      const candidate = service.next(String(body.reviewer_id ?? ''));
      return json(200, { candidate });
    }
    if (path === '/api/decision') {
      const { status, body: payload } = service.decide(body as unknown as DecisionPayload);
      return json(status, payload);
    }
    if (path === '/api/export') {
      const size = typeof body.target_size === 'number' ? body.target_size : 1000;
      return json(200, service.export(size));
    }
    return json(404, { error: `unknown endpoint ${path}` });
  };
}

export function makeCandidate(
  sceneId: string,
  score: number,
  objects: string[] = ['car', 'goose'],
): ReviewCandidate {
  return {
    scene_id: sceneId,
    image_ref: `images/${sceneId}.jpg`,
    score,
    machine_annotation: {
      scene_description: `scene ${sceneId} with ${objects.join(', ')}`,
      noteworthy_objects: [...objects],
    },
    status: 'pending',
    element_rarities: Object.fromEntries(objects.map((o, i) => [o, 1 + i * 0.5])),
    qa: { question: `what is in ${sceneId}?`, answer: objects.join(', ') },
  };
}
