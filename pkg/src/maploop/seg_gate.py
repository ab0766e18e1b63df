"""Probability-map providers, the early-exit detection gate, and loss ops.

The synthetic oracle provider stands in for a trained segmentation model at
desk scale: blurred truth plus seeded noise and optional false blobs.  The
file-backed provider serves pre-computed per-tile PGMs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .raster import (
    BinaryMask,
    ProbMap,
    TileGrid,
    TileIndex,
    crop,
    read_probmap_pgm,
)


@dataclass(frozen=True)
class ProviderState:
    kind: str = "synthetic_oracle"  # or "file_backed"
    noise_sigma: float = 0.0
    blur_radius: int = 0
    false_blob_rate: float = 0.0
    seed: int = 0
    generation: int = 0
    sigma_floor: float = 0.05
    blob_floor: float = 0.0
    gamma: float = 0.8  # improvement factor per model update
    tiles_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic_oracle", "file_backed"):
            raise ContractError(f"unknown provider kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "noise_sigma": self.noise_sigma,
            "blur_radius": self.blur_radius,
            "false_blob_rate": self.false_blob_rate,
            "seed": self.seed,
            "generation": self.generation,
            "sigma_floor": self.sigma_floor,
            "blob_floor": self.blob_floor,
            "gamma": self.gamma,
            "tiles_dir": self.tiles_dir,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProviderState":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class DetectionHead:
    """Early-exit gate: skip segmentation when the per-tile building-presence
    score falls below theta and emit an all-zero tile instead."""

    theta: float = 0.1
    score_fn: object = None  # (truth tile mask | None) -> float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ContractError("theta must be in [0, 1]")
        if self.score_fn is None:
            object.__setattr__(self, "score_fn", fractional_detector)

    def score(self, truth: BinaryMask | None) -> float:
        return float(self.score_fn(truth))


def fractional_detector(truth: BinaryMask | None) -> float:
    """Score = min(1, 50 * positive fraction): empty tiles score 0 and any
    building larger than ~0.2% of the tile clears theta = 0.1."""
    if truth is None or truth.popcount() == 0:
        return 0.0
    return min(1.0, 50.0 * truth.popcount() / (truth.width * truth.height))


def perfect_detector(truth: BinaryMask | None) -> float:
    """1 iff the truth tile contains any building pixel."""
    return 0.0 if truth is None or truth.popcount() == 0 else 1.0


# --- loss operations --------------------------------------------------------


@dataclass(frozen=True)
class LossBatch:
    seg_logits: np.ndarray
    seg_targets: np.ndarray
    det_logits: np.ndarray
    det_targets: np.ndarray

    def __post_init__(self):
        for name in ("seg", "det"):
            lo = np.asarray(getattr(self, f"{name}_logits"), dtype=np.float64)
            ta = np.asarray(getattr(self, f"{name}_targets"), dtype=np.float64)
            if lo.shape != ta.shape:
                raise ContractError(f"{name} logits/targets length mismatch")
            if ta.size and not np.all((ta == 0) | (ta == 1)):
                raise ContractError(f"{name} targets must be binary")
            object.__setattr__(self, f"{name}_logits", lo)
            object.__setattr__(self, f"{name}_targets", ta)


def _bce_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross entropy, computed stably from logits:
    max(x, 0) - x*y + log(1 + exp(-|x|))."""
    if logits.size == 0:
        raise ContractError("empty batch")
    x, y = logits, targets
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return float(per.mean())


def loss_seg(batch: LossBatch) -> float:
    return _bce_from_logits(batch.seg_logits, batch.seg_targets)


def loss_det(batch: LossBatch) -> float:
    return _bce_from_logits(batch.det_logits, batch.det_targets)


def loss_total(batch: LossBatch) -> float:
    return loss_seg(batch) + loss_det(batch)


def loss_seg_grad(batch: LossBatch) -> np.ndarray:
    """d loss_seg / d logits = (sigmoid(x) - y) / N, elementwise."""
    x, y = batch.seg_logits, batch.seg_targets
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))
    return (sig - y) / x.size


# --- synthetic oracle -------------------------------------------------------


def _tile_rng(state: ProviderState, tile: TileIndex) -> np.random.Generator:
    return np.random.default_rng(
        [state.seed & 0x7FFFFFFF, state.generation, tile[0], tile[1]]
    )


def synthetic_prob_map(
    truth: BinaryMask, state: ProviderState, tile: TileIndex = (0, 0)
) -> ProbMap:
    """Box-blurred truth + seeded uniform noise + random false blobs,
    clamped to [0, 1]; deterministic per (seed, generation, tile)."""
    if state.kind != "synthetic_oracle":
        raise ContractError("provider is not a synthetic oracle")
    vals = truth.bits.astype(np.float64)
    if state.blur_radius > 0:
        vals = ndimage.uniform_filter(vals, size=2 * state.blur_radius + 1)
    rng = _tile_rng(state, tile)
    if state.noise_sigma > 0:
        vals = vals + rng.uniform(0.0, state.noise_sigma, size=vals.shape)
    if state.false_blob_rate > 0:
        n = rng.poisson(state.false_blob_rate)
        h, w = vals.shape
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(n):
            cx, cy = rng.uniform(0, w), rng.uniform(0, h)
            r = rng.uniform(2.0, 5.0)
            amp = rng.uniform(0.6, 1.0)
            disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            vals = np.where(disc, np.maximum(vals, amp), vals)
    return ProbMap.from_array(np.clip(vals, 0.0, 1.0))


def infer_tile(
    provider: ProviderState,
    head: DetectionHead,
    tile: TileIndex,
    truth: BinaryMask | None = None,
    tile_size: int = 256,
) -> tuple[ProbMap, bool, float]:
    """Gated inference: below-theta detection score short-circuits to an
    all-zero tile."""
    det = head.score(truth)
    if det < head.theta:
        zeros = ProbMap.from_array(np.zeros((tile_size, tile_size)))
        return zeros, True, det
    if provider.kind == "synthetic_oracle":
        if truth is None:
            raise ContractError("synthetic oracle needs a truth tile")
        return synthetic_prob_map(truth, provider, tile), False, det
    path = os.path.join(provider.tiles_dir or "", f"tile_{tile[0]}_{tile[1]}.pgm")
    if not os.path.exists(path):
        raise IOError(f"file-backed provider is missing {path}")
    return read_probmap_pgm(path), False, det


def update_model(provider: ProviderState, newly_verified) -> ProviderState:
    """Model-improvement hook: each update shrinks the synthetic noise and
    false-blob rate by gamma, floored at the configured minimums."""
    if not newly_verified:
        raise ContractError("update_model requires a non-empty batch")
    return replace(
        provider,
        generation=provider.generation + 1,
        noise_sigma=max(provider.sigma_floor, provider.noise_sigma * provider.gamma)
        if provider.noise_sigma > provider.sigma_floor
        else provider.noise_sigma,
        false_blob_rate=max(provider.blob_floor, provider.false_blob_rate * provider.gamma),
    )


def build_prob_map(
    provider: ProviderState,
    head: DetectionHead,
    grid: TileGrid,
    truth_mask: BinaryMask | None,
    width: int,
    height: int,
) -> ProbMap:
    """Assemble a full-frame probability map tile by tile through the gate."""
    out = np.zeros((height, width), dtype=np.float64)
    for tile in grid.tiles():
        tm = crop(truth_mask, tile, grid) if truth_mask is not None else None
        pt, _, _ = infer_tile(provider, head, tile, truth=tm, tile_size=grid.tile_size)
        x0, y0, x1, y1 = grid.bounds(tile)
        ix1, iy1 = min(x1, width), min(y1, height)
        out[y0:iy1, x0:ix1] = pt.values[: iy1 - y0, : ix1 - x0]
    return ProbMap.from_array(out)


def save_provider(provider: ProviderState, head: DetectionHead, path) -> None:
    with open(path, "w") as f:
        json.dump({"theta": head.theta, **provider.to_json()}, f)


def load_provider(path) -> tuple[ProviderState, DetectionHead]:
    with open(path) as f:
        obj = json.load(f)
    theta = float(obj.pop("theta", 0.1))
    return ProviderState.from_json(obj), DetectionHead(theta=theta)
