/** Shared wire and editor types for the maploop web client. */

export type Point = [number, number];

/** An edit as the server understands it. */
export type Edit =
  | { kind: 'align'; target_id: number; shift: [number, number] }
  | { kind: 'remove'; target_id: number }
  | { kind: 'add'; polygon: Point[] };

/** One footprint in the editable overlay. */
export interface Footprint {
  id: number;
  /** Open ring of integer pixel vertices (no repeated closing vertex). */
  ring: Point[];
  provenance: string;
}

export interface TileInfo {
  row: number;
  col: number;
  /** [x0, y0, x1, y1] in raster pixels. */
  pixel_bounds: [number, number, number, number];
}

export interface SessionStatus {
  tiles_analyzed: number;
  p_k: number;
  stopped: boolean;
  generation: number;
  pct_tiles_analyzed: number;
}

/** Result of asking for the next tile. */
export type NextTile =
  | { kind: 'tile'; tile: TileInfo; imageUrl: string; footprints: Footprint[]; score: number }
  | { kind: 'stopped'; status: SessionStatus }
  | { kind: 'exhausted'; status: SessionStatus };

export interface SubmitResult {
  accepted: boolean;
  p_k: number;
  stopped: boolean;
}
