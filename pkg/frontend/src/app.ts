import { ReviewApiClient } from './api.js';
import { ReviewController, type ViewState } from './controller.js';
import { bindHotkeys } from './hotkeys.js';
import type { CandidateView } from './types.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderRarityTable(view: CandidateView): HTMLElement {
  // per-element rarity lets the reviewer judge whether a high score is
  // genuine or an extraction artifact
  const table = el('table', 'rarity');
  const sorted = Object.entries(view.candidate.element_rarities).sort(
    (a, b) => b[1] - a[1] || a[0].localeCompare(b[0]),
  );
  for (const [name, value] of sorted) {
    const row = el('tr');
    row.append(el('td', 'rarity-name', name), el('td', 'rarity-value', value.toFixed(4)));
    table.append(row);
  }
  return table;
}

function renderCandidate(
  view: CandidateView,
  controller: ReviewController,
  client: ReviewApiClient,
): HTMLElement {
  const root = el('div', 'candidate');
  const header = el('div', 'header');
  header.append(
    el('span', 'scene-id', view.candidate.scene_id),
    el('span', 'score', `score ${view.candidate.score.toFixed(4)}`),
  );
  root.append(header);

  const image = el('img', 'scene-image') as HTMLImageElement;
  image.src = client.imageUrl(view.candidate.scene_id);
  image.alt = view.candidate.scene_id;
  image.onerror = () => {
    image.replaceWith(el('div', 'image-missing', `image unavailable: ${view.candidate.image_ref}`));
  };
  root.append(image);

  if (view.editing) {
    const editor = el('div', 'editor');
    const description = el('textarea', 'description-edit') as HTMLTextAreaElement;
    description.value = view.editBuffer.scene_description;
    description.addEventListener('input', () => controller.setDescription(description.value));
    editor.append(el('h3', undefined, 'Scene description'), description);

    const list = el('ul', 'objects-edit');
    view.editBuffer.noteworthy_objects.forEach((obj, i) => {
      const item = el('li');
      const input = el('input') as HTMLInputElement;
      input.value = obj;
      input.addEventListener('input', () => controller.setObject(i, input.value));
      const remove = el('button', 'remove', 'remove');
      remove.addEventListener('click', () => controller.removeObject(i));
      item.append(input, remove);
      list.append(item);
    });
    const add = el('button', 'add', 'add object');
    add.addEventListener('click', () => controller.addObject('new object'));
    editor.append(el('h3', undefined, 'Noteworthy objects'), list, add);

    if (view.bufferErrors.length > 0) {
      const errors = el('ul', 'errors');
      for (const message of view.bufferErrors) {
        errors.append(el('li', undefined, message));
      }
      editor.append(errors);
    }
    root.append(editor);
  } else {
    root.append(
      el('h3', undefined, 'Scene description'),
      el('p', 'description', view.candidate.machine_annotation.scene_description),
      el('h3', undefined, 'Noteworthy objects'),
    );
    const list = el('ul', 'objects');
    for (const obj of view.candidate.machine_annotation.noteworthy_objects) {
      list.append(el('li', undefined, obj));
    }
    root.append(list);
  }

  root.append(el('h3', undefined, 'Element rarity'), renderRarityTable(view));

  const actions = el('div', 'actions');
  const accept = el('button', 'accept', 'accept (a)');
  accept.disabled = !controller.canSubmit();
  accept.addEventListener('click', () => void controller.submit('accept'));
  const reject = el('button', 'reject', 'reject (r)');
  reject.addEventListener('click', () => void controller.submit('reject'));
  const edit = el('button', 'edit', view.editing ? 'cancel edit (Esc)' : 'edit (e)');
  edit.addEventListener('click', () =>
    view.editing ? controller.cancelEdit() : controller.startEdit(),
  );
  actions.append(accept, reject, edit);
  root.append(actions);
  return root;
}

function renderState(
  state: ViewState,
  controller: ReviewController,
  client: ReviewApiClient,
  container: HTMLElement,
): void {
  container.replaceChildren();
  switch (state.kind) {
    case 'loading':
      container.append(el('div', 'banner', 'loading next candidate...'));
      break;
    case 'complete':
      container.append(
        el('div', 'banner complete', 'review complete: no pending candidates (g to re-check)'),
      );
      break;
    case 'unreachable': {
      const banner = el('div', 'banner error');
      banner.append(el('span', undefined, `service unreachable: ${state.message} `));
      const retry = el('button', 'retry', 'retry (g)');
      retry.addEventListener('click', () => void controller.fetchNext());
      banner.append(retry);
      container.append(banner);
      break;
    }
    case 'reviewing':
      container.append(renderCandidate(state.view, controller, client));
      break;
  }
}

export function startApp(root: HTMLElement, reviewerId: string, baseUrl = ''): ReviewController {
  const client = new ReviewApiClient(baseUrl);
  const controller = new ReviewController(client, reviewerId, (state) =>
    renderState(state, controller, client, root),
  );
  bindHotkeys(document, {
    accept: () => {
      if (controller.state.kind === 'reviewing') void controller.submit('accept');
    },
    reject: () => {
      if (controller.state.kind === 'reviewing') void controller.submit('reject');
    },
    edit: () => {
      if (controller.state.kind === 'reviewing') controller.startEdit();
    },
    cancel: () => {
      if (controller.state.kind === 'reviewing' && controller.state.view.editing) {
        controller.cancelEdit();
      }
    },
    refetch: () => void controller.fetchNext(),
  });
  void controller.fetchNext();
  return controller;
}

declare global {
  interface Window {
    sceneforgeReview?: ReviewController;
  }
}

if (typeof document !== 'undefined') {
  const mount = document.getElementById('review-root');
  if (mount) {
    const params = new URLSearchParams(window.location.search);
    const reviewerId = params.get('reviewer') ?? `reviewer-${Math.random().toString(36).slice(2, 8)}`;
    window.sceneforgeReview = startApp(mount, reviewerId);
  }
}
