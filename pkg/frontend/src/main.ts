/**
 * App wiring: one tile on screen, edit tools (align drag / add / remove),
 * submit-and-advance. Local edits are optimistic; the server is the source of
 * truth and a reload loses only unsubmitted edits.
 *
 * Keys: a = align (drag), d = draw/add, r = remove selected, u = undo,
 * Enter = submit, n = verify-correct (submit with no edits).
 */

import { MaploopClient } from './api';
import {
  addVertex,
  cancelDraft,
  closeDraft,
  createEditor,
  dragAlign,
  pendingEdits,
  removeSelected,
  selectAt,
  undo,
  type EditorState,
} from './editor';
import type { NextTile } from './types';
import { completionMessage, render, statusLine, toRaster, type ViewContext } from './view';

type Tool = 'align' | 'add' | 'remove';

interface App {
  client: MaploopClient;
  sessionId: string;
  state: EditorState;
  view: ViewContext | null;
  tool: Tool;
  dragStart: [number, number] | null;
}

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function setMessage(text: string | null): void {
  $('message').textContent = text ?? '';
}

function redraw(app: App): void {
  if (app.view) render(app.view, app.state);
  setMessage(app.state.message);
  $('pending').textContent = `${pendingEdits(app.state).length} unsubmitted edit(s)`;
}

async function refreshStatus(app: App): Promise<void> {
  try {
    const status = await app.client.status(app.sessionId);
    $('status').textContent = statusLine(status);
  } catch {
    /* status is advisory; next action will surface real failures */
  }
}

function showCompletion(next: NextTile & ({ kind: 'stopped' } | { kind: 'exhausted' })): void {
  $('editor').hidden = true;
  $('complete').hidden = false;
  $('complete').textContent = completionMessage(next.status, next.kind === 'exhausted');
}

async function loadNext(app: App): Promise<void> {
  let next: NextTile;
  try {
    next = await app.client.nextTile(app.sessionId);
  } catch {
    setMessage('network failure — press Enter to retry (no edits were lost)');
    return;
  }
  if (next.kind !== 'tile') {
    showCompletion(next);
    return;
  }
  const canvas = $('tile') as HTMLCanvasElement;
  const [x0, y0, x1, y1] = next.tile.pixel_bounds;
  canvas.width = x1 - x0;
  canvas.height = y1 - y0;
  app.state = createEditor(next.footprints);
  app.view = { canvas, tile: next.tile, image: null };
  $('tile-label').textContent = `tile (${next.tile.row}, ${next.tile.col}) · score ${next.score.toFixed(2)}`;
  redraw(app);
  const img = new Image();
  img.onload = () => {
    if (app.view) app.view.image = img;
    redraw(app);
  };
  img.src = next.imageUrl;
  await refreshStatus(app);
}

async function submitAndAdvance(app: App): Promise<void> {
  if (!app.view) {
    await loadNext(app);
    return;
  }
  const { row, col } = app.view.tile;
  const edits = pendingEdits(app.state);
  try {
    const res = await app.client.submitEdits(app.sessionId, row, col, edits);
    app.state = createEditor([]); // cleared on 2xx; server holds the truth now
    if (res.stopped) {
      const status = await app.client.status(app.sessionId);
      showCompletion({ kind: 'stopped', status });
      return;
    }
    await loadNext(app);
  } catch {
    setMessage('submit failed — press Enter to retry with the same edits');
  }
}

function canvasPoint(view: ViewContext, ev: MouseEvent): [number, number] {
  const rect = view.canvas.getBoundingClientRect();
  return toRaster(view.tile, ev.clientX - rect.left, ev.clientY - rect.top);
}

function bindCanvas(app: App): void {
  const canvas = $('tile') as HTMLCanvasElement;
  canvas.addEventListener('mousedown', (ev) => {
    if (!app.view) return;
    const [x, y] = canvasPoint(app.view, ev);
    if (app.tool === 'add') {
      app.state = addVertex(app.state, x, y);
    } else {
      app.state = selectAt(app.state, x, y);
      if (app.tool === 'remove') {
        app.state = removeSelected(app.state);
      } else if (app.state.selected !== null) {
        app.dragStart = [x, y];
      }
    }
    redraw(app);
  });
  canvas.addEventListener('mouseup', (ev) => {
    if (!app.view || app.dragStart === null) return;
    const [x, y] = canvasPoint(app.view, ev);
    app.state = dragAlign(app.state, x - app.dragStart[0], y - app.dragStart[1]);
    app.dragStart = null;
    redraw(app);
  });
  canvas.addEventListener('dblclick', () => {
    if (app.tool === 'add') {
      app.state = closeDraft(app.state);
      redraw(app);
    }
  });
}

function bindKeys(app: App): void {
  document.addEventListener('keydown', (ev) => {
    switch (ev.key) {
      case 'a':
        app.tool = 'align';
        break;
      case 'd':
        app.tool = 'add';
        break;
      case 'r':
        app.tool = 'remove';
        break;
      case 'u':
        app.state = undo(app.state);
        break;
      case 'Escape':
        app.state = cancelDraft(app.state);
        break;
      case 'n':
        app.state = createEditor(app.state.base); // verify-correct: drop local edits
        void submitAndAdvance(app);
        break;
      case 'Enter':
        void submitAndAdvance(app);
        break;
      default:
        return;
    }
    $('tool').textContent = `tool: ${app.tool}`;
    redraw(app);
  });
}

export async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get('session');
  if (!sessionId) {
    setMessage('open with ?session=<id> (create one via POST /api/v1/sessions)');
    return;
  }
  const app: App = {
    client: new MaploopClient(params.get('api') ?? ''),
    sessionId,
    state: createEditor([]),
    view: null,
    tool: 'align',
    dragStart: null,
  };
  bindCanvas(app);
  bindKeys(app);
  await loadNext(app);
}

if (typeof document !== 'undefined' && document.getElementById('tile')) {
  void start();
}
