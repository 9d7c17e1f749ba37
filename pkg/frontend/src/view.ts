/** DOM rendering: progress header, cluster cards, class picker, banner. */

import { ApiClient, ClusterCard, LabelEntry } from './api.js';
import { CardSlot, SessionStore } from './state.js';

export const DROP_VALUE = 'drop';

export function pickerOptions(labelMap: LabelEntry[]): { value: string; text: string }[] {
  return [
    ...labelMap.map((e) => ({ value: String(e.id), text: `${e.name} (${e.id + 1})` })),
    { value: DROP_VALUE, text: 'Drop (mixture)' },
  ];
}

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

function statusBadge(card: ClusterCard): HTMLElement {
  const badge = el('span', `badge ${card.status}`, card.status);
  if (card.verdict && card.verdict.decision === 'tissue') {
    badge.textContent = `tissue ${card.verdict.class_id}`;
  } else if (card.verdict) {
    badge.textContent = 'dropped';
  }
  return badge;
}

function renderCard(store: SessionStore, api: ApiClient, slot: CardSlot): HTMLElement {
  const { card } = slot;
  const root = el('section', `cluster-card ${card.status}`);
  root.dataset.cluster = String(card.cluster_index);
  if (card.cluster_index === store.selected) root.classList.add('selected');
  root.addEventListener('click', () => {
    store.selected = card.cluster_index;
    store.moveSelection(0);
  });

  const head = el('header');
  head.append(
    el('h3', 'title', `Cluster ${card.cluster_index}`),
    el('span', 'size', `${card.size} patches`),
    statusBadge(card),
  );
  root.append(head);

  const grid = el('div', 'thumbs');
  for (let i = 0; i < card.representatives.length; i++) {
    const img = el('img', 'thumb');
    img.loading = 'lazy'; // t <= 10 per card, but a 30-cluster session is ~300 images
    img.src = api.thumbnailUrl(card, i);
    img.alt = `patch ${card.representatives[i].patch_id}`;
    grid.append(img);
  }
  root.append(grid);

  const controls = el('div', 'controls');
  const picker = el('select', 'class-picker') as HTMLSelectElement;
  for (const option of pickerOptions(store.summary?.label_map ?? [])) {
    const node = el('option', undefined, option.text) as HTMLOptionElement;
    node.value = option.value;
    picker.append(node);
  }
  const submit = el('button', 'submit', card.status === 'pending' ? 'Label' : 'Revise') as HTMLButtonElement;
  submit.disabled = slot.inflight || store.summary?.finalized === true;
  submit.addEventListener('click', () => {
    const value = picker.value;
    const revise = card.status === 'decided';
    void store.submit(card.cluster_index, {
      decision: value === DROP_VALUE ? 'drop' : 'tissue',
      ...(value === DROP_VALUE ? {} : { class_id: Number(value) }),
      ...(revise ? { revise: true } : {}),
    });
  });
  controls.append(picker, submit);
  root.append(controls);

  if (slot.error) root.append(el('p', 'error', slot.error));
  return root;
}

export function render(root: HTMLElement, store: SessionStore, api: ApiClient): void {
  root.replaceChildren();

  if (store.unreachable) {
    const banner = el('div', 'banner unreachable');
    banner.append(el('span', undefined, 'Labeling service unreachable.'));
    const retry = el('button', 'retry', 'Retry');
    retry.addEventListener('click', () => void store.load());
    banner.append(retry);
    root.append(banner);
    return;
  }
  if (!store.summary) {
    root.append(el('div', 'banner loading', 'Loading session...'));
    return;
  }

  const header = el('header', 'session-header');
  header.append(
    el('h2', undefined, `Session ${store.sessionId}`),
    el('span', 'progress', `${store.summary.decided}/${store.summary.k} decided`),
  );
  const finalize = el('button', 'finalize', store.summary.finalized ? 'Finalized' : 'Finalize') as HTMLButtonElement;
  finalize.disabled = !store.summary.complete || store.summary.finalized || store.finalizing;
  finalize.addEventListener('click', () => void store.finalize());
  header.append(finalize);
  if (store.dictionaryPath) {
    header.append(el('span', 'dictionary-path', `dictionary: ${store.dictionaryPath}`));
  }
  root.append(header);

  const list = el('main', 'cluster-list');
  for (const slot of store.orderedCards()) {
    list.append(renderCard(store, api, slot));
  }
  root.append(list);
}
