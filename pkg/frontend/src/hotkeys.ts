/**
 * Keyboard-first bindings: reviewers work through thousands of candidates,
 * so every common action has a single-key shortcut.
 *
 *   a  accept          r  reject
 *   e  edit annotation Escape  cancel edit
 *   g  re-fetch (after an outage or completion check)
 */

export interface HotkeyHandlers {
  accept: () => void;
  reject: () => void;
  edit: () => void;
  cancel: () => void;
  refetch: () => void;
}

export function bindHotkeys(target: EventTarget, handlers: HotkeyHandlers): () => void {
  const onKeyDown = (event: Event) => {
    const key = (event as KeyboardEvent).key;
    const element = event.target as HTMLElement | null;
    // never steal keys from an active text field, except Escape
    const typing =
      element instanceof HTMLInputElement || element instanceof HTMLTextAreaElement;
    if (typing && key !== 'Escape') {
      return;
    }
    switch (key) {
      case 'a':
        event.preventDefault();
        handlers.accept();
        break;
      case 'r':
        event.preventDefault();
        handlers.reject();
        break;
      case 'e':
        event.preventDefault();
        handlers.edit();
        break;
      case 'Escape':
        handlers.cancel();
        break;
      case 'g':
        event.preventDefault();
        handlers.refetch();
        break;
    }
  };
  target.addEventListener('keydown', onKeyDown);
  return () => target.removeEventListener('keydown', onKeyDown);
}
