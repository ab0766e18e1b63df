/**
 * Pure editor state for one tile: the server's footprints plus a local list
 * of unsubmitted edits with undo. No DOM here — the view renders snapshots of
 * this state and the tests drive it directly.
 *
 * Invariant: `overlay` always equals the server footprints with the local
 * edit list applied, so reloading (server footprints + empty edit list)
 * reconstructs exactly what the server knows.
 */

import type { Edit, Footprint, Point } from './types';

export interface EditorState {
  /** Footprints as last fetched from the server. */
  base: Footprint[];
  /** Unsubmitted local edits, in order. */
  edits: Edit[];
  /** Currently selected footprint id, if any. */
  selected: number | null;
  /** Vertices of an in-progress add polygon. */
  draft: Point[];
  /** Inline validation message, cleared by the next action. */
  message: string | null;
}

export function createEditor(base: Footprint[]): EditorState {
  return { base, edits: [], selected: null, draft: [], message: null };
}

/** The footprints to draw: base + local edits applied in order. */
export function overlay(state: EditorState): Footprint[] {
  let feats = state.base.map((f) => ({ ...f, ring: f.ring.map((v) => [...v] as Point) }));
  for (const e of state.edits) {
    if (e.kind === 'remove') {
      feats = feats.filter((f) => f.id !== e.target_id);
    } else if (e.kind === 'align') {
      feats = feats.map((f) =>
        f.id === e.target_id
          ? {
              ...f,
              ring: f.ring.map(([x, y]) => [x + e.shift[0], y + e.shift[1]] as Point),
            }
          : f,
      );
    } else {
      feats.push({
        id: localIdFor(e, state),
        ring: e.polygon.map((v) => [...v] as Point),
        provenance: 'local',
      });
    }
  }
  return feats;
}

function localIdFor(edit: Edit & { kind: 'add' }, state: EditorState): number {
  // stable per position in the edit list
  let n = 0;
  for (const e of state.edits) {
    if (e === edit) break;
    if (e.kind === 'add') n++;
  }
  return -(n + 1);
}

export function signedArea(ring: Point[]): number {
  let a = 0;
  for (let i = 0; i < ring.length; i++) {
    const [x0, y0] = ring[i];
    const [x1, y1] = ring[(i + 1) % ring.length];
    a += x0 * y1 - x1 * y0;
  }
  return a / 2;
}

function pointInRing(x: number, y: number, ring: Point[]): boolean {
  let inside = false;
  for (let i = 0, j = ring.length - 1; i < ring.length; j = i++) {
    const [xi, yi] = ring[i];
    const [xj, yj] = ring[j];
    if (yi > y !== yj > y && x < ((xj - xi) * (y - yi)) / (yj - yi) + xi) {
      inside = !inside;
    }
  }
  return inside;
}

/** Select the topmost footprint under (x, y), or clear the selection. */
export function selectAt(state: EditorState, x: number, y: number): EditorState {
  const feats = overlay(state);
  for (let i = feats.length - 1; i >= 0; i--) {
    if (pointInRing(x, y, feats[i].ring)) {
      return { ...state, selected: feats[i].id, message: null };
    }
  }
  return { ...state, selected: null, message: null };
}

/**
 * Finish a drag of the selected footprint. The raw delta snaps to whole
 * pixels (the server model is integer-pixel); a zero-pixel drag is a no-op.
 */
export function dragAlign(state: EditorState, rawDx: number, rawDy: number): EditorState {
  if (state.selected === null) {
    return { ...state, message: 'select a footprint to drag' };
  }
  if (state.selected < 0) {
    return { ...state, message: 'submit the new footprint before aligning it' };
  }
  const dx = Math.round(rawDx);
  const dy = Math.round(rawDy);
  if (dx === 0 && dy === 0) return state;
  const edit: Edit = { kind: 'align', target_id: state.selected, shift: [dx, dy] };
  return { ...state, edits: [...state.edits, edit], message: null };
}

/** Delete the selected footprint. */
export function removeSelected(state: EditorState): EditorState {
  if (state.selected === null) {
    return { ...state, message: 'select a footprint to remove' };
  }
  const id = state.selected;
  if (id < 0) {
    // removing an unsubmitted add: drop that add edit instead
    const adds = state.edits.filter((e) => e.kind === 'add');
    const victim = adds[-id - 1];
    return {
      ...state,
      edits: state.edits.filter((e) => e !== victim),
      selected: null,
      message: null,
    };
  }
  const edit: Edit = { kind: 'remove', target_id: id };
  return { ...state, edits: [...state.edits, edit], selected: null, message: null };
}

/** Add one vertex to the in-progress polygon, snapped to whole pixels. */
export function addVertex(state: EditorState, x: number, y: number): EditorState {
  return {
    ...state,
    draft: [...state.draft, [Math.round(x), Math.round(y)]],
    message: null,
  };
}

/** Close the draft polygon into an add edit; needs >= 3 non-degenerate vertices. */
export function closeDraft(state: EditorState): EditorState {
  if (state.draft.length < 3) {
    return { ...state, message: 'a polygon needs at least 3 vertices' };
  }
  if (signedArea(state.draft) === 0) {
    return { ...state, message: 'polygon has zero area' };
  }
  const edit: Edit = { kind: 'add', polygon: state.draft };
  return { ...state, edits: [...state.edits, edit], draft: [], message: null };
}

export function cancelDraft(state: EditorState): EditorState {
  return { ...state, draft: [], message: null };
}

/** Drop the most recent edit (or the in-progress draft vertex, if drawing). */
export function undo(state: EditorState): EditorState {
  if (state.draft.length > 0) {
    return { ...state, draft: state.draft.slice(0, -1), message: null };
  }
  if (state.edits.length === 0) {
    return { ...state, message: 'nothing to undo' };
  }
  return { ...state, edits: state.edits.slice(0, -1), message: null };
}

/** The payload submit sends: exactly the local edit list, never invented. */
export function pendingEdits(state: EditorState): Edit[] {
  return state.edits.slice();
}
