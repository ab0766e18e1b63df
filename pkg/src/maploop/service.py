"""HTTP service exposing sessions to the browser UI.

Persistence is an append-only JSON-lines event log per session (serve and
submit events) next to the scenario file; every mutation is fsync'd before it
is acknowledged, and restart replays the log to reconstruct state exactly.
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .annotations import Edit, to_geojson
from .errors import MaploopError, ProtocolError, SessionClosedError
from .raster import crop
from .scenario import Scenario, load_scenario
from .session import (
    SessionState,
    align_footprints,
    create_session,
    evaluate,
    next_tiles,
    submit_tile,
)


def bootstrap_session(sc: Scenario) -> SessionState:
    """Deterministically build the initial session state from a scenario."""
    working = sc.annotations
    if sc.config.align_first and len(working) and sc.truth is not None:
        state0 = create_session(
            sc.config, working, sc.provider, head=sc.head, truth_set=sc.truth
        )
        working, _, _ = align_footprints(working, state0.prob, sc.config)
        return create_session(
            sc.config, working, sc.provider, head=sc.head,
            truth_set=sc.truth, prob=state0.prob,
        )
    return create_session(
        sc.config, working, sc.provider, head=sc.head, truth_set=sc.truth
    )


class SessionRuntime:
    """One live session: scenario, in-memory state, durable event log."""

    def __init__(self, session_dir: str, scenario_obj: dict):
        self.dir = session_dir
        self.scenario_obj = scenario_obj
        self.scenario = load_scenario(scenario_obj, base_dir=session_dir)
        self.state = bootstrap_session(self.scenario)
        self.idempotency: dict[str, dict] = {}
        self.lock = threading.Lock()
        self.log_path = os.path.join(session_dir, "events.log")

    def append_event(self, event: dict) -> None:
        with open(self.log_path, "a") as f:
            f.write(json.dumps(event) + "\n")
            f.flush()
            os.fsync(f.fileno())

    def replay(self) -> None:
        if not os.path.exists(self.log_path):
            return
        with open(self.log_path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                ev = json.loads(line)
                if ev["type"] == "serve":
                    tiles = next_tiles(self.state, 1)
                    assert tiles and list(tiles[0]) == ev["tile"], "log diverged"
                elif ev["type"] == "submit":
                    tile = (ev["tile"][0], ev["tile"][1])
                    edits = [Edit.from_json(e) for e in ev["edits"]]
                    submit_tile(self.state, tile, edits)
                    if ev.get("key"):
                        self.idempotency[ev["key"]] = ev["response"]

    def status(self) -> dict:
        st = self.state
        return {
            "tiles_analyzed": st.tiles_analyzed,
            "p_k": st.p_k,
            "stopped": st.stopped,
            "generation": st.provider.generation,
            "pct_tiles_analyzed": st.tiles_analyzed / len(st.grid),
        }


def create_app(data_dir: str) -> FastAPI:
    os.makedirs(os.path.join(data_dir, "sessions"), exist_ok=True)
    app = FastAPI(title="maploop")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    runtimes: dict[str, SessionRuntime] = {}

    def get_runtime(sid: str) -> SessionRuntime | None:
        if sid in runtimes:
            return runtimes[sid]
        sdir = os.path.join(data_dir, "sessions", sid)
        spath = os.path.join(sdir, "scenario.json")
        if not os.path.exists(spath):
            return None
        with open(spath) as f:
            rt = SessionRuntime(sdir, json.load(f))
        rt.replay()
        runtimes[sid] = rt
        return rt

    async def parse_json(request: Request):
        try:
            return await request.json()
        except Exception:
            return None

    def err(status: int, message: str, **extra) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message, **extra})

    @app.post("/api/v1/sessions")
    async def create_session_ep(request: Request):
        body = await parse_json(request)
        if body is None or "scenario" not in body:
            return err(400, "body must be JSON with a 'scenario' object")
        sid = uuid.uuid4().hex[:12]
        sdir = os.path.join(data_dir, "sessions", sid)
        os.makedirs(sdir, exist_ok=True)
        spath = os.path.join(sdir, "scenario.json")
        with open(spath, "w") as f:
            json.dump(body["scenario"], f)
            f.flush()
            os.fsync(f.fileno())
        try:
            runtimes[sid] = SessionRuntime(sdir, body["scenario"])
        except (MaploopError, OSError, KeyError, ValueError) as e:
            os.remove(spath)
            return err(400, f"invalid scenario: {e}")
        return {"session_id": sid}

    @app.get("/api/v1/sessions/{sid}/next-tile")
    def next_tile_ep(sid: str):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        with rt.lock:
            st = rt.state
            if st.stopped:
                return err(409, "session stopped", **rt.status())
            if st.ranked.remaining() == 0:
                return {"tile": None, "exhausted": True, **rt.status()}
            score = st.ranked.entries[st.ranked.cursor]
            tiles = next_tiles(st, 1)
            tile = tiles[0]
            rt.append_event({"type": "serve", "tile": list(tile)})
            feats = _tile_footprints(st, tile)
            x0, y0, x1, y1 = st.grid.bounds(tile)
            return {
                "tile": {
                    "row": tile[0],
                    "col": tile[1],
                    "pixel_bounds": [x0, y0, x1, y1],
                },
                "image_url": f"/api/v1/tiles/{sid}/{tile[0]}/{tile[1]}.png",
                "footprints": feats,
                "score": score.value,
            }

    @app.post("/api/v1/sessions/{sid}/tiles/{row}/{col}/edits")
    async def submit_ep(sid: str, row: int, col: int, request: Request):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        body = await parse_json(request)
        if body is None or not isinstance(body.get("edits"), list):
            return err(400, "body must be JSON with an 'edits' list")
        key = body.get("idempotency_key")
        with rt.lock:
            st = rt.state
            if key and key in rt.idempotency:
                return rt.idempotency[key]
            if not (0 <= row < st.grid.rows and 0 <= col < st.grid.cols):
                return err(404, "unknown tile")
            if st.stopped:
                return err(409, "session stopped", **rt.status())
            tile = (row, col)
            if tile not in st.pending:
                return err(409, "tile was not served")
            try:
                edits = []
                for e in body["edits"]:
                    e = dict(e)
                    e.setdefault("tile", [row, col])
                    edits.append(Edit.from_json(e))
            except (MaploopError, KeyError, TypeError, ValueError) as e:
                return err(400, f"invalid edit: {e}")
            try:
                submit_tile(st, tile, edits)
            except (SessionClosedError, ProtocolError) as e:
                return err(409, str(e))
            except MaploopError as e:
                return err(400, str(e))
            response = {"accepted": True, "p_k": st.p_k, "stopped": st.stopped}
            rt.append_event(
                {
                    "type": "submit",
                    "tile": [row, col],
                    "edits": [e.to_json() for e in edits],
                    "key": key,
                    "response": response,
                }
            )
            if key:
                rt.idempotency[key] = response
            return response

    @app.get("/api/v1/sessions/{sid}/status")
    def status_ep(sid: str):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        with rt.lock:
            return rt.status()

    @app.get("/api/v1/sessions/{sid}/footprints")
    def footprints_ep(sid: str):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        with rt.lock:
            return to_geojson(rt.state.current_set)

    @app.get("/api/v1/sessions/{sid}/report")
    def report_ep(sid: str):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        with rt.lock:
            st = rt.state
            if st.truth_set is None:
                return err(404, "no ground truth attached to this session")
            rep = evaluate(
                st.current_set,
                st.truth_set,
                pct_corrected=0.0,
                pct_tiles_analyzed=st.tiles_analyzed / len(st.grid),
            )
            return rep.to_json()

    @app.get("/api/v1/tiles/{sid}/{row}/{col}.png")
    def tile_png_ep(sid: str, row: int, col: int):
        rt = get_runtime(sid)
        if rt is None:
            return err(404, "unknown session")
        with rt.lock:
            st = rt.state
            if not (0 <= row < st.grid.rows and 0 <= col < st.grid.cols):
                return err(404, "unknown tile")
            tp = crop(st.prob, (row, col), st.grid)
        from PIL import Image

        img = Image.fromarray((tp.values * 255).astype(np.uint8), mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    return app


def _tile_footprints(state: SessionState, tile) -> list[dict]:
    from .annotations import footprints_in_tile

    feats = []
    for fid in footprints_in_tile(state.current_set, tile, state.grid):
        fp = state.current_set.get(fid)
        ring = [list(v) for v in fp.polygon.vertices]
        ring.append(list(fp.polygon.vertices[0]))
        feats.append(
            {
                "type": "Feature",
                "id": fid,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"provenance": fp.provenance},
            }
        )
    return feats
