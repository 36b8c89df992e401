import { LeaseConflictError, ReviewApiClient, ServiceUnreachableError } from './api.js';
import { PendingSubmitQueue, type RetryOptions } from './retryQueue.js';
import {
  annotationsEqual,
  cloneAnnotation,
  type CandidateView,
  type DecisionAck,
  type Verdict,
} from './types.js';
import { validateAnnotation } from './validate.js';

export type ViewState =
  | { kind: 'loading' }
  | { kind: 'reviewing'; view: CandidateView }
  | { kind: 'complete' }
  | { kind: 'unreachable'; message: string };

export type StateListener = (state: ViewState) => void;

/**
 * Review flow state machine: fetch next -> (edit) -> submit -> fetch next.
 *
 * A lease conflict on submit triggers an automatic re-fetch; a service
 * outage shows a retry banner without losing the current candidate or
 * edit buffer. Decisions go through the pending-submit queue, so transient
 * failures retry until the service acknowledges with a sequence number.
 */
export class ReviewController {
  state: ViewState = { kind: 'loading' };
  private readonly queue: PendingSubmitQueue;

  constructor(
    private readonly client: ReviewApiClient,
    private readonly reviewerId: string,
    private readonly onChange: StateListener = () => {},
    retryOptions: RetryOptions = {},
  ) {
    this.queue = new PendingSubmitQueue(
      (payload) => this.client.submitDecision(payload),
      retryOptions,
    );
  }

  private setState(state: ViewState): void {
    this.state = state;
    this.onChange(state);
  }

  async fetchNext(): Promise<void> {
    this.setState({ kind: 'loading' });
    try {
      const candidate = await this.client.next(this.reviewerId);
      if (candidate === null) {
        this.setState({ kind: 'complete' });
        return;
      }
      this.setState({
        kind: 'reviewing',
        view: {
          candidate,
          imageLoaded: false,
          editing: false,
          editBuffer: cloneAnnotation(candidate.machine_annotation),
          bufferErrors: [],
        },
      });
    } catch (error) {
      if (error instanceof ServiceUnreachableError) {
        this.setState({ kind: 'unreachable', message: error.message });
        return;
      }
      throw error;
    }
  }

  private get view(): CandidateView {
    if (this.state.kind !== 'reviewing') {
      throw new Error(`no candidate in state ${this.state.kind}`);
    }
    return this.state.view;
  }

  startEdit(): void {
    const view = this.view;
    this.setState({ kind: 'reviewing', view: { ...view, editing: true } });
  }

  cancelEdit(): void {
    const view = this.view;
    this.setState({
      kind: 'reviewing',
      view: {
        ...view,
        editing: false,
        editBuffer: cloneAnnotation(view.candidate.machine_annotation),
        bufferErrors: [],
      },
    });
  }

  setDescription(text: string): void {
    const view = this.view;
    const editBuffer = { ...view.editBuffer, scene_description: text };
    this.setState({
      kind: 'reviewing',
      view: { ...view, editBuffer, bufferErrors: validateAnnotation(editBuffer) },
    });
  }

  setObject(index: number, text: string): void {
    const view = this.view;
    const objects = [...view.editBuffer.noteworthy_objects];
    objects[index] = text;
    const editBuffer = { ...view.editBuffer, noteworthy_objects: objects };
    this.setState({
      kind: 'reviewing',
      view: { ...view, editBuffer, bufferErrors: validateAnnotation(editBuffer) },
    });
  }

  removeObject(index: number): void {
    const view = this.view;
    const objects = view.editBuffer.noteworthy_objects.filter((_, i) => i !== index);
    const editBuffer = { ...view.editBuffer, noteworthy_objects: objects };
    this.setState({
      kind: 'reviewing',
      view: { ...view, editBuffer, bufferErrors: validateAnnotation(editBuffer) },
    });
  }

  addObject(text: string): void {
    const view = this.view;
    const editBuffer = {
      ...view.editBuffer,
      noteworthy_objects: [...view.editBuffer.noteworthy_objects, text],
    };
    this.setState({
      kind: 'reviewing',
      view: { ...view, editBuffer, bufferErrors: validateAnnotation(editBuffer) },
    });
  }

  /** Submit is blocked while the edit buffer fails schema validation. */
  canSubmit(): boolean {
    const view = this.view;
    return !view.editing || validateAnnotation(view.editBuffer).length === 0;
  }

  async submit(verdict: Verdict): Promise<DecisionAck | null> {
    const view = this.view;
    if (view.editing) {
      const errors = validateAnnotation(view.editBuffer);
      if (errors.length > 0) {
        this.setState({ kind: 'reviewing', view: { ...view, bufferErrors: errors } });
        return null;
      }
    }
    const edited =
      view.editing && !annotationsEqual(view.editBuffer, view.candidate.machine_annotation);
    const payload = {
      scene_id: view.candidate.scene_id,
      verdict,
      reviewer_id: this.reviewerId,
      corrected_annotation: edited ? cloneAnnotation(view.editBuffer) : null,
    };
    try {
      const ack = await this.queue.push(payload);
      await this.fetchNext();
      return ack;
    } catch (error) {
      if (error instanceof LeaseConflictError) {
        // someone else decided this scene; move on automatically
        await this.fetchNext();
        return null;
      }
      throw error;
    }
  }
}
