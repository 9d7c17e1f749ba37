/** Bootstrap: wire the store, renderer, and keyboard shortcuts.
 *
 * Usage: index.html?api=http://127.0.0.1:8765&session=session-0001
 * Shortcuts: digits 1-9 label the selected cluster with that class,
 * `d` drops it, arrows/j/k move the selection, `f` finalizes.
 */

import { ApiClient } from './api.js';
import { SessionStore } from './state.js';
import { DROP_VALUE, render } from './view.js';

function shortcutValue(key: string, classCount: number): string | null {
  if (key === 'd') return DROP_VALUE;
  const digit = Number(key);
  if (Number.isInteger(digit) && digit >= 1 && digit <= Math.min(9, classCount)) {
    return String(digit - 1);
  }
  return null;
}

export function installKeyboard(store: SessionStore): (ev: KeyboardEvent) => void {
  const handler = (ev: KeyboardEvent) => {
    if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
    if (ev.key === 'ArrowDown' || ev.key === 'j') {
      store.moveSelection(1);
      ev.preventDefault();
      return;
    }
    if (ev.key === 'ArrowUp' || ev.key === 'k') {
      store.moveSelection(-1);
      ev.preventDefault();
      return;
    }
    if (ev.key === 'f') {
      void store.finalize();
      return;
    }
    const value = shortcutValue(ev.key, store.summary?.label_map.length ?? 0);
    if (value === null) return;
    const slot = store.slots.get(store.selected);
    if (!slot) return;
    void store.submit(store.selected, {
      decision: value === DROP_VALUE ? 'drop' : 'tissue',
      ...(value === DROP_VALUE ? {} : { class_id: Number(value) }),
      ...(slot.card.status === 'decided' ? { revise: true } : {}),
    });
  };
  document.addEventListener('keydown', handler);
  return handler;
}

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(params.get('api') ?? 'http://127.0.0.1:8765');
  const sessionId = params.get('session') ?? 'session-0001';
  const store = new SessionStore(api, sessionId);
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');

  store.onChange(() => render(root, store, api));
  installKeyboard(store);
  void store.load();
}

if (typeof window !== 'undefined' && document.getElementById('app')) {
  boot();
}
