import type { MachineAnnotation, ReviewCandidate } from './types.js';

/**
 * Client-side mirror of the service's annotation schema. Submit stays
 * disabled while this returns errors, so the service never sees a payload
 * it would reject.
 */
export function validateAnnotation(annotation: MachineAnnotation): string[] {
  const errors: string[] = [];
  if (typeof annotation.scene_description !== 'string' || !annotation.scene_description.trim()) {
    errors.push('scene description must not be empty');
  }
  if (!Array.isArray(annotation.noteworthy_objects)) {
    errors.push('noteworthy objects must be a list');
    return errors;
  }
  annotation.noteworthy_objects.forEach((obj, i) => {
    if (typeof obj !== 'string' || !obj.trim()) {
      errors.push(`noteworthy object ${i + 1} must not be empty`);
    }
  });
  return errors;
}

/** Parse and shape-check a candidate payload from the service. */
export function parseCandidate(raw: unknown): ReviewCandidate {
  if (typeof raw !== 'object' || raw === null) {
    throw new Error('candidate payload is not an object');
  }
  const record = raw as Record<string, unknown>;
  const required = [
    'scene_id',
    'image_ref',
    'score',
    'machine_annotation',
    'status',
    'element_rarities',
    'qa',
  ];
  for (const key of required) {
    if (!(key in record)) {
      throw new Error(`candidate payload missing field ${key}`);
    }
  }
  const annotation = record.machine_annotation as MachineAnnotation;
  const annotationErrors = validateAnnotation(annotation);
  if (annotationErrors.length > 0) {
    throw new Error(`candidate annotation invalid: ${annotationErrors.join('; ')}`);
  }
  return record as unknown as ReviewCandidate;
}
