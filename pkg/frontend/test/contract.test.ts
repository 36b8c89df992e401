import { describe, expect, it } from 'vitest';

import { ReviewApiClient } from '../src/api.js';
import { parseCandidate, validateAnnotation } from '../src/validate.js';
import { MockReviewService, makeCandidate, makeFetch } from './mockService.js';

// Captured verbatim from a live review service response (POST /api/next).
const FROZEN_SERVICE_CANDIDATE = {
  element_rarities: {
    bus: 1.2992829841302609,
    crosswalk: 1.0116009116784799,
    deer: 2.833213344056216,
    excavator: 2.833213344056216,
  },
  image_ref: 'images/fx-050.jpg',
  machine_annotation: {
    noteworthy_objects: ['bus', 'crosswalk', 'deer', 'excavator'],
    scene_description:
      'The road ahead shows bus, crosswalk, deer, excavator. Traffic is moving at moderate speed.',
  },
  qa: {
    answer: 'Visible ahead: bus, crosswalk, deer, excavator.',
    question: 'What objects are visible ahead?',
  },
  scene_id: 'fx-050',
  score: 8.003162708078495,
  status: 'in_review',
};

const CANDIDATE_FIELDS = [
  'scene_id',
  'image_ref',
  'score',
  'machine_annotation',
  'status',
  'element_rarities',
  'qa',
].sort();

const DECISION_FIELDS = ['scene_id', 'verdict', 'reviewer_id', 'corrected_annotation'].sort();

describe('service schema contract', () => {
  it('parses a frozen live-service candidate without transformation', () => {
    const candidate = parseCandidate(FROZEN_SERVICE_CANDIDATE);
    expect(candidate).toEqual(FROZEN_SERVICE_CANDIDATE);
    expect(Object.keys(candidate).sort()).toEqual(CANDIDATE_FIELDS);
  });

  it('mock-service candidates carry exactly the same field set', () => {
    const candidate = makeCandidate('s1', 2.0);
    expect(Object.keys(candidate).sort()).toEqual(CANDIDATE_FIELDS);
  });

  it('fetch-next sends exactly {reviewer_id}', async () => {
    const service = new MockReviewService();
    service.enqueue([makeCandidate('s1', 2.0)]);
    const client = new ReviewApiClient('', makeFetch(service));
    await client.next('rev-1');
    const request = service.requests.find((r) => r.path === '/api/next');
    expect(request).toBeDefined();
    expect(request!.body).toEqual({ reviewer_id: 'rev-1' });
  });

  it('decision payload is field-for-field the service schema', async () => {
    const service = new MockReviewService();
    service.enqueue([makeCandidate('s1', 2.0)]);
    const client = new ReviewApiClient('', makeFetch(service));
    const candidate = await client.next('rev-1');
    expect(candidate).not.toBeNull();

    const ack = await client.submitDecision({
      scene_id: candidate!.scene_id,
      verdict: 'accept',
      reviewer_id: 'rev-1',
      corrected_annotation: {
        scene_description: 'corrected',
        noteworthy_objects: ['goose'],
      },
    });
    expect(ack.scene_id).toBe('s1');
    expect(ack.sequence_no).toBeGreaterThan(0);

    const sent = service.requests.find((r) => r.path === '/api/decision')!.body as Record<
      string,
      unknown
    >;
    expect(Object.keys(sent).sort()).toEqual(DECISION_FIELDS);
    const correction = sent.corrected_annotation as Record<string, unknown>;
    expect(Object.keys(correction).sort()).toEqual(
      ['scene_description', 'noteworthy_objects'].sort(),
    );
    // what the service stored is exactly what the client sent
    expect(service.log[0]!.payload).toEqual(sent);
  });

  it('uncorrected decisions send corrected_annotation: null', async () => {
    const service = new MockReviewService();
    service.enqueue([makeCandidate('s1', 2.0)]);
    const client = new ReviewApiClient('', makeFetch(service));
    await client.next('rev-1');
    await client.submitDecision({
      scene_id: 's1',
      verdict: 'reject',
      reviewer_id: 'rev-1',
      corrected_annotation: null,
    });
    const sent = service.requests.find((r) => r.path === '/api/decision')!.body as Record<
      string,
      unknown
    >;
    expect(sent.corrected_annotation).toBeNull();
  });

  it('annotation validation mirrors the service schema', () => {
    expect(validateAnnotation({ scene_description: 'ok', noteworthy_objects: ['a'] })).toEqual([]);
    expect(
      validateAnnotation({ scene_description: '  ', noteworthy_objects: ['a'] }).length,
    ).toBeGreaterThan(0);
    expect(
      validateAnnotation({ scene_description: 'ok', noteworthy_objects: [''] }).length,
    ).toBeGreaterThan(0);
  });

  it('rejects candidates with missing fields', () => {
    const broken: Record<string, unknown> = { ...FROZEN_SERVICE_CANDIDATE };
    delete broken.element_rarities;
    expect(() => parseCandidate(broken)).toThrow(/element_rarities/);
  });
});
