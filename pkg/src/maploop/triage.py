"""Tile incorrectness scoring (MI / NDP / SAD) and the ranked tile list."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .annotations import FootprintSet
from .errors import ContractError
from .raster import BinaryMask, ProbMap, TileGrid, TileIndex, crop, rasterize

METRICS = ("MI", "NDP", "SAD")

# area threshold (pixels) below which a prediction blob is treated as noise
DEFAULT_MIN_COMPONENT = 20


def _check_dims(a, b):
    if (a.width, a.height) != (b.width, b.height):
        raise ContractError("image dimensions differ")


def mutual_information(a: BinaryMask, b: ProbMap, bins: int = 16) -> float:
    """MI in bits between the mask and the probability map quantized into
    `bins` equal-width bins over [0, 1]."""
    _check_dims(a, b)
    if bins < 2:
        raise ContractError("bins must be >= 2")
    q = np.minimum((b.values * bins).astype(np.int64), bins - 1)
    joint = np.zeros((2, bins), dtype=np.float64)
    flat = a.bits.ravel().astype(np.int64) * bins + q.ravel()
    counts = np.bincount(flat, minlength=2 * bins)
    joint = counts.reshape(2, bins).astype(np.float64)
    pxy = joint / joint.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def normalized_dot_product(a: BinaryMask, b: ProbMap) -> float:
    _check_dims(a, b)
    size = a.width * a.height
    return float((a.bits * b.values).sum()) / size


def sum_absolute_differences(a: BinaryMask, b: ProbMap) -> float:
    _check_dims(a, b)
    return float(np.abs(a.bits.astype(np.float64) - b.values).sum())


@dataclass(frozen=True)
class TileScore:
    tile: TileIndex
    metric: str
    value: float
    priority: float  # larger = more suspicious

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric {self.metric!r}")


def guarded_score(
    tile_mask: BinaryMask,
    tile_prob: ProbMap,
    metric: str,
    min_component: int = DEFAULT_MIN_COMPONENT,
    bins: int = 16,
) -> TileScore:
    """Raw metric, except the tiny-prediction guard for MI/NDP: a tile with no
    annotations whose prediction blobs (4-connected, prob > 0.5) are all
    smaller than `min_component` pixels scores value 1 = lowest priority."""
    if min_component < 0:
        raise ContractError("min_component must be >= 0")
    if metric in ("MI", "NDP") and tile_mask.popcount() == 0:
        blobs = tile_prob.values > 0.5
        labels, n = ndimage.label(blobs)  # default structure is 4-connected
        areas = ndimage.sum_labels(blobs, labels, index=range(1, n + 1)) if n else []
        if all(area < min_component for area in areas):
            return TileScore(tile=(0, 0), metric=metric, value=1.0, priority=-1.0)
    if metric == "MI":
        value = mutual_information(tile_mask, tile_prob, bins=bins)
        priority = -value
    elif metric == "NDP":
        value = normalized_dot_product(tile_mask, tile_prob)
        priority = -value
    elif metric == "SAD":
        value = sum_absolute_differences(tile_mask, tile_prob)
        priority = value
    else:
        raise ContractError(f"unknown metric {metric!r}")
    return TileScore(tile=(0, 0), metric=metric, value=value, priority=priority)


@dataclass
class RankedList:
    """Tile scores sorted by descending priority, ties by ascending tile
    index; `cursor` marks the next unserved position."""

    entries: list[TileScore] = field(default_factory=list)
    cursor: int = 0

    def remaining(self) -> int:
        return len(self.entries) - self.cursor

    def take(self, t: int) -> list[TileScore]:
        if t < 1:
            raise ContractError("t must be >= 1")
        got = self.entries[self.cursor : self.cursor + t]
        self.cursor += len(got)
        return got


def rank_tiles(
    fset: FootprintSet,
    prob: ProbMap,
    grid: TileGrid,
    metric: str,
    exclude=frozenset(),
    min_component: int = DEFAULT_MIN_COMPONENT,
    bins: int = 16,
) -> RankedList:
    """Score every non-excluded tile and sort per the RankedList invariant."""
    mask = rasterize(fset.polygons(), prob.width, prob.height)
    return rank_tiles_from_mask(
        mask, prob, grid, metric, exclude=exclude, min_component=min_component, bins=bins
    )


def rank_tiles_from_mask(
    mask: BinaryMask,
    prob: ProbMap,
    grid: TileGrid,
    metric: str,
    exclude=frozenset(),
    min_component: int = DEFAULT_MIN_COMPONENT,
    bins: int = 16,
) -> RankedList:
    entries = []
    exclude = set(exclude)
    for tile in grid.tiles():
        if tile in exclude:
            continue
        tm = crop(mask, tile, grid)
        tp = crop(prob, tile, grid)
        s = guarded_score(tm, tp, metric, min_component=min_component, bins=bins)
        entries.append(TileScore(tile=tile, metric=metric, value=s.value, priority=s.priority))
    entries.sort(key=lambda s: (-s.priority, grid.index_of(s.tile)))
    return RankedList(entries=entries)


def ranking_to_csv(ranked: RankedList, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["tile_row", "tile_col", "metric", "value", "priority", "rank"])
        for rank, s in enumerate(ranked.entries, start=1):
            w.writerow([s.tile[0], s.tile[1], s.metric, s.value, s.priority, rank])
