/**
 * Typed client for the maploop HTTP API (/api/v1).
 *
 * Submissions carry a client-generated idempotency key, so a timed-out POST
 * can be retried with the same payload and the server applies it at most once.
 */

import type { Edit, Footprint, NextTile, SessionStatus, SubmitResult } from './types';

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

function newIdempotencyKey(): string {
  if (typeof crypto !== 'undefined' && 'randomUUID' in crypto) {
    return crypto.randomUUID();
  }
  return `key-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let message = `HTTP ${res.status}`;
    try {
      const body = (await res.json()) as { error?: string };
      if (body.error) message = body.error;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, message);
  }
  return res.json() as Promise<T>;
}

/** Convert a closed GeoJSON ring to the open integer ring the editor uses. */
function toOpenRing(coords: number[][]): [number, number][] {
  const ring = coords.slice();
  const first = ring[0];
  const last = ring[ring.length - 1];
  if (ring.length > 1 && first[0] === last[0] && first[1] === last[1]) {
    ring.pop();
  }
  return ring.map((v) => [v[0], v[1]]);
}

interface FeatureWire {
  id: number;
  geometry: { coordinates: number[][][] };
  properties: { provenance?: string };
}

export class MaploopClient {
  constructor(
    private baseUrl = '',
    private fetchFn: typeof fetch = fetch,
  ) {}

  async createSession(scenario: unknown): Promise<string> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/sessions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ scenario }),
    });
    const body = await asJson<{ session_id: string }>(res);
    return body.session_id;
  }

  async nextTile(sessionId: string): Promise<NextTile> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/sessions/${sessionId}/next-tile`);
    if (res.status === 409) {
      const body = (await res.json()) as SessionStatus & { error: string };
      return { kind: 'stopped', status: body };
    }
    const body = await asJson<Record<string, unknown>>(res);
    if (body.tile === null) {
      return { kind: 'exhausted', status: body as unknown as SessionStatus };
    }
    const tile = body.tile as NextTile extends { tile: infer T } ? T : never;
    const footprints = (body.footprints as FeatureWire[]).map((f) => ({
      id: f.id,
      ring: toOpenRing(f.geometry.coordinates[0]),
      provenance: f.properties.provenance ?? 'original',
    }));
    return {
      kind: 'tile',
      tile,
      imageUrl: `${this.baseUrl}${body.image_url as string}`,
      footprints,
      score: body.score as number,
    };
  }

  /**
   * Submit a tile's edits. Retries after a network failure reuse the same
   * idempotency key; the server replays its stored response instead of
   * applying the edits twice.
   */
  async submitEdits(
    sessionId: string,
    row: number,
    col: number,
    edits: Edit[],
    opts: { retries?: number; key?: string } = {},
  ): Promise<SubmitResult> {
    const key = opts.key ?? newIdempotencyKey();
    const retries = opts.retries ?? 2;
    const url = `${this.baseUrl}/api/v1/sessions/${sessionId}/tiles/${row}/${col}/edits`;
    let lastError: unknown;
    for (let attempt = 0; attempt <= retries; attempt++) {
      try {
        const res = await this.fetchFn(url, {
          method: 'POST',
          headers: { 'Content-Type': 'application/json' },
          body: JSON.stringify({ edits, idempotency_key: key }),
        });
        return await asJson<SubmitResult>(res);
      } catch (err) {
        if (err instanceof ApiError) throw err; // server answered; don't retry
        lastError = err; // network failure: same key, try again
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  async status(sessionId: string): Promise<SessionStatus> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/sessions/${sessionId}/status`);
    return asJson<SessionStatus>(res);
  }

  async footprints(sessionId: string): Promise<Footprint[]> {
    const res = await this.fetchFn(`${this.baseUrl}/api/v1/sessions/${sessionId}/footprints`);
    const fc = await asJson<{ features: FeatureWire[] }>(res);
    return fc.features.map((f) => ({
      id: f.id,
      ring: toOpenRing(f.geometry.coordinates[0]),
      provenance: f.properties.provenance ?? 'original',
    }));
  }
}
