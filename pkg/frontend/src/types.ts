/**
 * Wire types for the review service: field names mirror the service payloads
 * exactly (snake_case), so a candidate or decision can be passed through
 * without any mapping layer. The contract tests assert this key-for-key.
 */

export interface MachineAnnotation {
  scene_description: string;
  noteworthy_objects: string[];
}

export interface QAPreview {
  question: string;
  answer: string;
}

export type CandidateStatus = 'pending' | 'in_review' | 'decided';

export interface ReviewCandidate {
  scene_id: string;
  image_ref: string;
  score: number;
  machine_annotation: MachineAnnotation;
  status: CandidateStatus;
  element_rarities: Record<string, number>;
  qa: QAPreview | null;
}

export type Verdict = 'accept' | 'reject';

export interface DecisionPayload {
  scene_id: string;
  verdict: Verdict;
  reviewer_id: string;
  corrected_annotation: MachineAnnotation | null;
}

export interface DecisionAck {
  sequence_no: number;
  scene_id: string;
}

export interface QueueStats {
  total: number;
  pending: number;
  in_review: number;
  decided: number;
  accepted: number;
  rejected: number;
}

export interface ExportedScene {
  scene_id: string;
  image_ref: string;
  score: number;
  annotation: MachineAnnotation;
  qa: QAPreview | null;
}

export interface TestSetExport {
  scenes: ExportedScene[];
  target_size: number;
  checksum: string;
}

/** A candidate plus its client-side display state. */
export interface CandidateView {
  candidate: ReviewCandidate;
  imageLoaded: boolean;
  editing: boolean;
  /** Draft annotation while editing; becomes the correction on submit. */
  editBuffer: MachineAnnotation;
  bufferErrors: string[];
}

export function cloneAnnotation(annotation: MachineAnnotation): MachineAnnotation {
  return {
    scene_description: annotation.scene_description,
    noteworthy_objects: [...annotation.noteworthy_objects],
  };
}

export function annotationsEqual(a: MachineAnnotation, b: MachineAnnotation): boolean {
  return (
    a.scene_description === b.scene_description &&
    a.noteworthy_objects.length === b.noteworthy_objects.length &&
    a.noteworthy_objects.every((obj, i) => obj === b.noteworthy_objects[i])
  );
}
