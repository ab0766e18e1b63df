/** Canvas rendering for one tile: image, magenta tile box, footprint overlay. */

import { overlay, type EditorState } from './editor';
import type { SessionStatus, TileInfo } from './types';

export interface ViewContext {
  canvas: HTMLCanvasElement;
  tile: TileInfo;
  image: HTMLImageElement | null;
}

/** Raster pixel -> canvas pixel (the canvas shows exactly the tile window). */
export function toCanvas(tile: TileInfo, x: number, y: number): [number, number] {
  return [x - tile.pixel_bounds[0], y - tile.pixel_bounds[1]];
}

export function toRaster(tile: TileInfo, cx: number, cy: number): [number, number] {
  return [cx + tile.pixel_bounds[0], cy + tile.pixel_bounds[1]];
}

export function render(view: ViewContext, state: EditorState): void {
  const ctx = view.canvas.getContext('2d');
  if (!ctx) return;
  const [x0, y0, x1, y1] = view.tile.pixel_bounds;
  const w = x1 - x0;
  const h = y1 - y0;
  ctx.clearRect(0, 0, view.canvas.width, view.canvas.height);
  if (view.image) {
    ctx.drawImage(view.image, 0, 0, w, h);
  }
  // tile extent highlighted in magenta
  ctx.strokeStyle = 'magenta';
  ctx.lineWidth = 3;
  ctx.strokeRect(1, 1, w - 2, h - 2);

  for (const f of overlay(state)) {
    ctx.beginPath();
    for (let i = 0; i < f.ring.length; i++) {
      const [cx, cy] = toCanvas(view.tile, f.ring[i][0], f.ring[i][1]);
      if (i === 0) ctx.moveTo(cx, cy);
      else ctx.lineTo(cx, cy);
    }
    ctx.closePath();
    const selected = f.id === state.selected;
    ctx.strokeStyle = selected ? '#ffd400' : f.provenance === 'local' ? '#4caf50' : '#29b6f6';
    ctx.lineWidth = selected ? 2.5 : 1.5;
    ctx.stroke();
    ctx.fillStyle = selected ? 'rgba(255, 212, 0, 0.15)' : 'rgba(41, 182, 246, 0.10)';
    ctx.fill();
  }

  if (state.draft.length > 0) {
    ctx.beginPath();
    ctx.setLineDash([4, 3]);
    for (let i = 0; i < state.draft.length; i++) {
      const [cx, cy] = toCanvas(view.tile, state.draft[i][0], state.draft[i][1]);
      if (i === 0) ctx.moveTo(cx, cy);
      else ctx.lineTo(cx, cy);
    }
    ctx.strokeStyle = '#4caf50';
    ctx.lineWidth = 1.5;
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function statusLine(status: SessionStatus): string {
  const pct = (status.pct_tiles_analyzed * 100).toFixed(1);
  return (
    `tiles analyzed: ${status.tiles_analyzed} (${pct}%) · ` +
    `p_k = ${status.p_k.toFixed(3)} · model generation ${status.generation}`
  );
}

export function completionMessage(status: SessionStatus, exhausted: boolean): string {
  const head = exhausted ? 'All tiles analyzed.' : 'Session complete — correction rate below threshold.';
  return `${head} ${statusLine(status)}`;
}
