"""Interactive annotation loop: serve ranked tiles, ingest edits, track the
sliding correction window (p_k), retrain the provider every batch of verified
tiles, and stop once the windowed correction rate falls below threshold.

Also hosts the simulated user, dataset degradation, and object-level
evaluation used by the simulation experiments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .alignment import (
    apply_alignment,
    build_problem,
    group_cores,
    solve_icm_cores,
)
from .annotations import (
    Edit,
    FootprintSet,
    Polygon,
    apply_edit,
    footprints_in_tile,
    group_by_proximity,
)
from .errors import ContractError, ProtocolError, SessionClosedError
from .raster import BinaryMask, ProbMap, TileGrid, TileIndex, crop, rasterize
from .seg_gate import DetectionHead, ProviderState, build_prob_map, update_model
from .triage import RankedList, TileScore, rank_tiles_from_mask

METRIC_CHOICES = ("MI", "NDP", "SAD", "RANDOM")


@dataclass(frozen=True)
class SessionConfig:
    k: int = 100
    r_k: float = 0.02  # 0 disables stopping
    retrain_every: int = 20
    metric: str = "SAD"
    t: int = 1
    seed: int = 0
    tile_size: int = 256
    theta: float = 0.1
    beta: float = 2.0
    radius: int = 30
    align_first: bool = True
    retrain_enabled: bool = True
    iou_match: float = 0.05
    min_component: int = 20
    mi_bins: int = 16
    group_dist: float = 100.0
    icm_max_iters: int = 50

    def __post_init__(self):
        if self.k < 1:
            raise ContractError("k must be >= 1")
        if not 0.0 <= self.r_k < 1.0:
            raise ContractError("r_k must be in [0, 1)")
        if self.retrain_every < 1:
            raise ContractError("retrain_every must be >= 1")
        if self.t < 1:
            raise ContractError("t must be >= 1")
        if self.metric not in METRIC_CHOICES:
            raise ContractError(f"metric must be one of {METRIC_CHOICES}")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, obj: dict) -> "SessionConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


@dataclass
class EvalReport:
    pct_corrected: float
    pct_tiles_analyzed: float
    object_precision: float
    object_recall: float
    object_f1: float
    overlap_accuracy: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


class SessionState:
    """Single-writer loop state; all mutation flows through submit_tile."""

    def __init__(self, config, grid, current_set, provider, head, prob,
                 truth_set=None, truth_mask=None):
        self.config = config
        self.grid = grid
        self.current_set = current_set
        self.provider = provider
        self.head = head
        self.prob = prob
        self.truth_set = truth_set
        self.truth_mask = truth_mask
        self.analyzed: list[tuple[TileIndex, bool]] = []
        self.pending: set[TileIndex] = set()
        self.edits: list[Edit] = []
        self.errors_found = 0
        self.discovery: list[tuple[int, int]] = []
        self.stopped = False
        self._seq = 0
        self._rng = np.random.default_rng(config.seed)
        self.ranked: RankedList = RankedList()
        self._rerank()

    # -- ranking -------------------------------------------------------------

    def _exclusion(self) -> set[TileIndex]:
        return {t for t, _ in self.analyzed} | set(self.pending)

    def _rerank(self) -> None:
        exclude = self._exclusion()
        if self.config.metric == "RANDOM":
            tiles = [t for t in self.grid.tiles() if t not in exclude]
            self._rng.shuffle(tiles)
            entries = [
                TileScore(tile=tuple(t), metric="SAD", value=0.0, priority=0.0)
                for t in tiles
            ]
            self.ranked = RankedList(entries=entries)
            return
        mask = rasterize(
            self.current_set.polygons(), self.prob.width, self.prob.height
        )
        self.ranked = rank_tiles_from_mask(
            mask,
            self.prob,
            self.grid,
            self.config.metric,
            exclude=exclude,
            min_component=self.config.min_component,
            bins=self.config.mi_bins,
        )

    # -- bookkeeping -----------------------------------------------------------

    @property
    def tiles_analyzed(self) -> int:
        return len(self.analyzed)

    @property
    def p_k(self) -> float:
        n = len(self.analyzed)
        if n == 0:
            return 0.0
        w = min(self.config.k, n)
        flags = [corrected for _, corrected in self.analyzed[-w:]]
        return sum(flags) / w


def create_session(
    config: SessionConfig,
    initial_set: FootprintSet,
    provider: ProviderState,
    head: DetectionHead | None = None,
    truth_set: FootprintSet | None = None,
    prob: ProbMap | None = None,
) -> SessionState:
    meta = initial_set.raster_meta
    grid = TileGrid.for_raster(meta.width, meta.height, config.tile_size)
    head = head or DetectionHead(theta=config.theta)
    truth_mask = None
    if truth_set is not None:
        truth_mask = rasterize(truth_set.polygons(), meta.width, meta.height)
    if prob is None:
        prob = build_prob_map(provider, head, grid, truth_mask, meta.width, meta.height)
    return SessionState(
        config, grid, initial_set, provider, head, prob,
        truth_set=truth_set, truth_mask=truth_mask,
    )


def next_tiles(state: SessionState, t: int) -> list[TileIndex]:
    """Serve the t highest-priority unserved tiles and mark them pending."""
    if state.stopped:
        raise SessionClosedError("session already stopped")
    scores = state.ranked.take(t)
    tiles = [s.tile for s in scores]
    state.pending.update(tiles)
    return tiles


def submit_tile(state: SessionState, tile: TileIndex, edits) -> SessionState:
    """Ingest the verification result for one served tile."""
    if state.stopped:
        raise SessionClosedError("session already stopped")
    tile = (int(tile[0]), int(tile[1]))
    if tile not in state.pending:
        raise ProtocolError(f"tile {tile} was not served")
    stamped = []
    for e in edits:
        state._seq += 1
        stamped.append(replace(e, tile=tile, seq=state._seq))
    # validate + apply; a bad edit leaves the session untouched
    new_set = state.current_set
    for e in stamped:
        new_set = apply_edit(new_set, e)
    state.current_set = new_set
    state.edits.extend(stamped)
    state.pending.discard(tile)
    state.analyzed.append((tile, len(stamped) > 0))
    state.errors_found += len(stamped)
    state.discovery.append((len(state.analyzed), state.errors_found))

    cfg = state.config
    if len(state.analyzed) >= cfg.k and cfg.r_k > 0 and state.p_k < cfg.r_k:
        state.stopped = True
        return state
    if cfg.retrain_enabled and len(state.analyzed) % cfg.retrain_every == 0:
        _retrain(state)
    return state


def _retrain(state: SessionState) -> None:
    cfg = state.config
    meta = state.current_set.raster_meta
    mask = rasterize(state.current_set.polygons(), meta.width, meta.height)
    newly = [
        (t, crop(mask, t, state.grid))
        for t, _ in state.analyzed[-cfg.retrain_every :]
    ]
    state.provider = update_model(state.provider, newly)
    state.prob = build_prob_map(
        state.provider, state.head, state.grid, state.truth_mask,
        meta.width, meta.height,
    )
    state._rerank()


# --- geometry matching ------------------------------------------------------


def _shapely(poly: Polygon) -> ShapelyPolygon:
    sp = ShapelyPolygon(poly.vertices)
    return sp if sp.is_valid else sp.buffer(0)


def polygon_iou(a: Polygon, b: Polygon) -> float:
    ax0, ay0, ax1, ay1 = a.bbox()
    bx0, by0, bx1, by1 = b.bbox()
    if ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0:
        return 0.0
    sa, sb = _shapely(a), _shapely(b)
    inter = sa.intersection(sb).area
    if inter == 0.0:
        return 0.0
    return inter / sa.union(sb).area


def greedy_match(current_polys: dict, truth_polys: dict, min_iou: float):
    """One-to-one greedy pairing by descending IoU.

    Returns (pairs, unmatched_current_ids, unmatched_truth_ids) where pairs
    is a list of (current_id, truth_id, iou) with iou > min_iou.
    """
    cand = []
    for cid, cp in current_polys.items():
        for tid, tp in truth_polys.items():
            iou = polygon_iou(cp, tp)
            if iou > min_iou:
                cand.append((iou, cid, tid))
    cand.sort(key=lambda x: (-x[0], x[1], x[2]))
    used_c, used_t, pairs = set(), set(), []
    for iou, cid, tid in cand:
        if cid in used_c or tid in used_t:
            continue
        used_c.add(cid)
        used_t.add(tid)
        pairs.append((cid, tid, iou))
    un_c = [c for c in current_polys if c not in used_c]
    un_t = [t for t in truth_polys if t not in used_t]
    return pairs, un_c, un_t


# --- simulated user ---------------------------------------------------------


def simulate_user(
    state: SessionState,
    truth: FootprintSet,
    tile: TileIndex,
    iou_match: float = 0.05,
) -> list[Edit]:
    return simulate_user_edits(state.current_set, truth, tile, state.grid, iou_match)


def simulate_user_edits(
    current: FootprintSet,
    truth: FootprintSet,
    tile: TileIndex,
    grid: TileGrid,
    iou_match: float = 0.05,
) -> list[Edit]:
    """Minimal edit set transforming the tile's current footprints into truth:
    align translated matches, remove unmatched/misshapen, add missing."""
    cids = footprints_in_tile(current, tile, grid)
    tids = footprints_in_tile(truth, tile, grid)
    cpolys = {i: current.get(i).polygon for i in cids}
    tpolys = {i: truth.get(i).polygon for i in tids}
    pairs, un_c, un_t = greedy_match(cpolys, tpolys, min_iou=iou_match)
    edits: list[Edit] = []
    for cid, tid, _ in pairs:
        tr = cpolys[cid].translation_to(tpolys[tid])
        if tr is not None:
            dx, dy = round(tr[0]), round(tr[1])
            if (dx, dy) != (0, 0):
                edits.append(Edit(kind="align", tile=tile, target_id=cid, shift=(dx, dy)))
        else:
            edits.append(Edit(kind="remove", tile=tile, target_id=cid))
            edits.append(Edit(kind="add", tile=tile, polygon=tpolys[tid]))
    for cid in un_c:
        edits.append(Edit(kind="remove", tile=tile, target_id=cid))
    for tid in un_t:
        edits.append(Edit(kind="add", tile=tile, polygon=tpolys[tid]))
    return edits


def count_total_errors(
    current: FootprintSet, truth: FootprintSet, iou_match: float = 0.05
) -> int:
    """Edits a full exhaustive verification pass would apply (global greedy
    matching, mirroring simulate_user's per-pair edit counting)."""
    cpolys = {i: current.get(i).polygon for i in current.ids()}
    tpolys = {i: truth.get(i).polygon for i in truth.ids()}
    pairs, un_c, un_t = greedy_match(cpolys, tpolys, min_iou=iou_match)
    n = len(un_c) + len(un_t)
    for cid, tid, _ in pairs:
        tr = cpolys[cid].translation_to(tpolys[tid])
        if tr is None:
            n += 2  # remove + add
        elif (round(tr[0]), round(tr[1])) != (0, 0):
            n += 1  # align
    return n


# --- degradation ------------------------------------------------------------


def degrade(
    truth: FootprintSet,
    add_pct: float,
    remove_pct: float,
    max_shift: int,
    seed: int,
) -> FootprintSet:
    """Simulated annotation damage: remove a fraction, add copies of random
    truth shapes at random free spots near existing buildings, then shift every
    footprint independently by integer offsets in [-max_shift, max_shift]."""
    if not (0 <= add_pct <= 100 and 0 <= remove_pct <= 100):
        raise ContractError("percentages must be in [0, 100]")
    if max_shift < 0:
        raise ContractError("max_shift must be >= 0")
    rng = np.random.default_rng(seed)
    meta = truth.raster_meta
    ids = truth.ids()
    n = len(ids)
    n_remove = int(remove_pct * n // 100)
    n_add = int(add_pct * n // 100)

    keep = list(ids)
    if n_remove:
        removed = set(rng.choice(ids, size=n_remove, replace=False).tolist())
        keep = [i for i in ids if i not in removed]

    polys = [truth.get(i).polygon for i in keep]
    bboxes = [p.bbox() for p in polys]

    def overlaps(b):
        for ox0, oy0, ox1, oy1 in bboxes:
            if b[2] > ox0 and b[0] < ox1 and b[3] > oy0 and b[1] < oy1:
                return True
        return False

    anchors = [truth.get(i).polygon.centroid() for i in ids] or [
        (meta.width / 2, meta.height / 2)
    ]
    for _ in range(n_add):
        shape = truth.get(ids[int(rng.integers(n))]).polygon if n else None
        if shape is None:
            break
        placed = False
        for _attempt in range(100):
            ax, ay = anchors[int(rng.integers(len(anchors)))]
            tx = ax + float(rng.uniform(-64, 64))
            ty = ay + float(rng.uniform(-64, 64))
            cx, cy = shape.centroid()
            cand = shape.translate(round(tx - cx), round(ty - cy))
            b = cand.bbox()
            if b[0] < 0 or b[1] < 0 or b[2] > meta.width or b[3] > meta.height:
                continue
            if overlaps(b):
                continue
            polys.append(cand)
            bboxes.append(b)
            placed = True
            break
        if not placed:
            continue

    if max_shift > 0:
        shifted = []
        for p in polys:
            dx = int(rng.integers(-max_shift, max_shift + 1))
            dy = int(rng.integers(-max_shift, max_shift + 1))
            shifted.append(p.translate(dx, dy))
        polys = shifted
    return FootprintSet.build(polys, meta)


# --- evaluation -------------------------------------------------------------


def evaluate(
    current: FootprintSet,
    truth: FootprintSet,
    pct_corrected: float = 0.0,
    pct_tiles_analyzed: float = 0.0,
) -> EvalReport:
    """Object-level greedy IoU matching: a prediction is correct iff matched
    at IoU > 0.5; overlap accuracy restricts to matches with IoU > 0.05."""
    cpolys = {i: current.get(i).polygon for i in current.ids()}
    tpolys = {i: truth.get(i).polygon for i in truth.ids()}
    pairs, _, _ = greedy_match(cpolys, tpolys, min_iou=0.0)
    m50 = sum(1 for _, _, iou in pairs if iou > 0.5)
    m05 = sum(1 for _, _, iou in pairs if iou > 0.05)
    precision = m50 / len(cpolys) if cpolys else 0.0
    recall = m50 / len(tpolys) if tpolys else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    if m05 > 0:
        overlap = m50 / m05
    else:
        overlap = 1.0 if not cpolys and not tpolys else 0.0
    return EvalReport(
        pct_corrected=pct_corrected,
        pct_tiles_analyzed=pct_tiles_analyzed,
        object_precision=precision,
        object_recall=recall,
        object_f1=f1,
        overlap_accuracy=overlap,
    )


# --- full pipeline ----------------------------------------------------------


def align_footprints(
    fset: FootprintSet,
    prob: ProbMap,
    config: SessionConfig,
):
    """Group, solve the shift MRF, and apply the solution."""
    meta = fset.raster_meta
    groups = group_by_proximity(fset, config.group_dist)
    if not groups:
        return fset, groups, None
    problem = build_problem(
        groups, radius=config.radius, beta=config.beta
    )
    cores = group_cores(fset, groups, meta.width, meta.height)
    sol = solve_icm_cores(problem, prob, cores, max_iters=config.icm_max_iters)
    return apply_alignment(fset, groups, sol), groups, sol


def run_simulation(
    config: SessionConfig,
    truth: FootprintSet,
    degraded: FootprintSet,
    provider: ProviderState,
    head: DetectionHead | None = None,
):
    """Align, rank, then loop simulated-user submissions until stop or
    exhaustion.  Returns (EvalReport, discovery curve)."""
    meta = truth.raster_meta
    grid = TileGrid.for_raster(meta.width, meta.height, config.tile_size)
    head = head or DetectionHead(theta=config.theta)
    truth_mask = rasterize(truth.polygons(), meta.width, meta.height)
    prob = build_prob_map(provider, head, grid, truth_mask, meta.width, meta.height)

    working = degraded
    if config.align_first and len(working):
        working, _, _ = align_footprints(working, prob, config)

    total_errors = count_total_errors(working, truth, config.iou_match)
    state = create_session(
        config, working, provider, head=head, truth_set=truth, prob=prob
    )
    while not state.stopped and state.ranked.remaining() > 0:
        tiles = next_tiles(state, config.t)
        if not tiles:
            break
        for tile in tiles:
            if state.stopped:
                break
            edits = simulate_user(state, truth, tile, config.iou_match)
            submit_tile(state, tile, edits)
    pct_corrected = state.errors_found / total_errors if total_errors else 1.0
    pct_tiles = len(state.analyzed) / len(grid)
    report = evaluate(
        state.current_set,
        truth,
        pct_corrected=pct_corrected,
        pct_tiles_analyzed=pct_tiles,
    )
    return report, list(state.discovery)


def discovery_auc(curve) -> float:
    """Area under the cumulative errors-found curve (unit step per tile)."""
    return float(sum(errors for _, errors in curve))


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tiles_analyzed", "errors_found"])
        for n, e in curve:
            w.writerow([n, e])


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_json(), f, indent=2)
