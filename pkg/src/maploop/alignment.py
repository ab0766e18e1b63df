"""Group-shift alignment of footprints against a probability map.

Energy per group i:  -log C(shifted annotations, prob)  +  beta * sum over
neighbors j of ||d_i - d_j|| / z_norm, minimized with coordinate descent
(Iterative Conditional Modes).  The matching term C is the normalized dot
product over the group's bounding window dilated by the search radius.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal

from .annotations import FootprintGroup, FootprintSet
from .errors import ContractError
from .raster import BinaryMask, ProbMap, rasterize_local, shift_mask


class Shift(NamedTuple):
    dx: int
    dy: int


def candidate_grid(radius: int) -> list[Shift]:
    """All integer shifts with |dx|, |dy| <= radius, ordered by the tie-break
    rule: distance to (0, 0), then lexicographic (dx, dy)."""
    if radius < 0:
        raise ContractError("radius must be >= 0")
    cands = [
        Shift(dx, dy)
        for dx in range(-radius, radius + 1)
        for dy in range(-radius, radius + 1)
    ]
    cands.sort(key=lambda d: (d.dx * d.dx + d.dy * d.dy, d.dx, d.dy))
    return cands


def max_pairwise_distance(candidates) -> float:
    pts = np.asarray(candidates, dtype=np.float64)
    if len(pts) == 1:
        return 0.0
    # O(p^2) is fine at the candidate-set sizes used here
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.max()))


@dataclass(frozen=True)
class AlignmentProblem:
    groups: tuple[FootprintGroup, ...]
    neighbors: tuple[tuple[int, ...], ...]  # adjacency by group position
    candidates: tuple[Shift, ...]
    beta: float
    z_norm: float
    epsilon: float = 1e-6
    radius: int = 30

    def __post_init__(self):
        if not self.candidates or Shift(0, 0) not in self.candidates:
            raise ContractError("candidates must be non-empty and include (0, 0)")
        if self.beta < 0:
            raise ContractError("beta must be >= 0")
        if not (0 < self.epsilon < 1):
            raise ContractError("epsilon must be in (0, 1)")
        for i, hs in enumerate(self.neighbors):
            for j in hs:
                if i not in self.neighbors[j]:
                    raise ContractError("neighbor graph must be symmetric")


def build_problem(
    groups,
    radius: int = 30,
    beta: float = 2.0,
    neighbor_count: int = 4,
    epsilon: float = 1e-6,
) -> AlignmentProblem:
    """Neighborhood = `neighbor_count` nearest groups by centroid, symmetrized."""
    groups = tuple(groups)
    cands = tuple(candidate_grid(radius))
    z = 2.0 * radius * math.sqrt(2.0) if radius > 0 else 1.0
    n = len(groups)
    adj = [set() for _ in range(n)]
    if n > 1:
        cents = np.array([g.centroid for g in groups])
        d2 = ((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        k = min(neighbor_count, n - 1)
        for i in range(n):
            for j in np.argsort(d2[i])[:k]:
                adj[i].add(int(j))
                adj[int(j)].add(i)
    neighbors = tuple(tuple(sorted(a)) for a in adj)
    return AlignmentProblem(
        groups=groups,
        neighbors=neighbors,
        candidates=cands,
        beta=beta,
        z_norm=z,
        epsilon=epsilon,
        radius=radius,
    )


@dataclass(frozen=True)
class AlignmentSolution:
    shifts: tuple[Shift, ...]
    energy: float
    iterations: int
    energy_trace: tuple[float, ...] = ()


# --- cost terms -------------------------------------------------------------


def pairwise_cost(d_i, d_j, z_norm: float) -> float:
    """||d_i - d_j|| / z_norm, in [0, 1] for shifts drawn from the grid."""
    if z_norm <= 0:
        raise ContractError("z_norm must be positive")
    return math.hypot(d_i[0] - d_j[0], d_i[1] - d_j[1]) / z_norm


def unary_cost(
    group_mask: BinaryMask,
    d,
    prob: ProbMap,
    epsilon: float = 1e-6,
    window_size: int | None = None,
) -> float:
    """-log of the (floored) normalized dot product of the shifted mask and
    the probability map.  `window_size` overrides the NDP denominator when the
    correlation is evaluated over a local window instead of the full frame."""
    if (group_mask.width, group_mask.height) != (prob.width, prob.height):
        raise ContractError("mask and probability map dimensions differ")
    shifted = shift_mask(group_mask, d)
    num = float((shifted.bits * prob.values).sum())
    denom = window_size if window_size is not None else prob.width * prob.height
    return -math.log(max(num / denom, epsilon))


# --- windowed evaluation ----------------------------------------------------


class GroupCore(NamedTuple):
    """A group's rasterized mask restricted to the bounding box of its ones."""

    bits: np.ndarray  # local uint8 array, tight around the ones (may be empty)
    x0: int
    y0: int

    def window_size(self, radius: int) -> int:
        h, w = self.bits.shape if self.bits.size else (0, 0)
        return (h + 2 * radius) * (w + 2 * radius) if self.bits.size else 1


def core_from_mask(mask: BinaryMask) -> GroupCore:
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0:
        return GroupCore(bits=np.zeros((0, 0), dtype=np.uint8), x0=0, y0=0)
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    return GroupCore(bits=np.ascontiguousarray(mask.bits[y0:y1, x0:x1]), x0=x0, y0=y0)


def group_cores(fset: FootprintSet, groups, width: int, height: int):
    """Rasterize each group only within its own bounding box."""
    cores = []
    for g in groups:
        polys = [fset.get(fid).polygon for fid in g.member_ids]
        bits, x0, y0 = rasterize_local(polys)
        # trim to the ones and clip to the raster frame
        full = np.zeros((0, 0), dtype=np.uint8)
        ys, xs = np.nonzero(bits)
        if len(xs):
            bx0, bx1 = int(xs.min()), int(xs.max()) + 1
            by0, by1 = int(ys.min()), int(ys.max()) + 1
            bits = bits[by0:by1, bx0:bx1]
            x0, y0 = x0 + bx0, y0 + by0
            # drop anything outside the raster frame
            cx0, cy0 = max(x0, 0), max(y0, 0)
            cx1 = min(x0 + bits.shape[1], width)
            cy1 = min(y0 + bits.shape[0], height)
            if cx0 < cx1 and cy0 < cy1:
                full = bits[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
                x0, y0 = cx0, cy0
        cores.append(GroupCore(bits=np.ascontiguousarray(full), x0=x0, y0=y0))
    return cores


def _extract_window(prob: ProbMap, core: GroupCore, radius: int) -> np.ndarray:
    """Probability window covering the core bbox dilated by `radius`,
    zero-padded where it extends past the raster."""
    h, w = core.bits.shape
    out = np.zeros((h + 2 * radius, w + 2 * radius), dtype=np.float64)
    x0, y0 = core.x0 - radius, core.y0 - radius
    x1, y1 = core.x0 + w + radius, core.y0 + h + radius
    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x1, prob.width), min(y1, prob.height)
    if ix0 < ix1 and iy0 < iy1:
        out[iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0] = prob.values[iy0:iy1, ix0:ix1]
    return out


def _unary_table(prob: ProbMap, core: GroupCore, problem: AlignmentProblem):
    """Unary cost per candidate, evaluated via cross-correlation."""
    R = problem.radius
    winsize = core.window_size(R)
    if core.bits.size == 0 or core.bits.sum() == 0:
        return np.full(len(problem.candidates), -math.log(problem.epsilon))
    win = _extract_window(prob, core, R)
    corr = signal.correlate(win, core.bits.astype(np.float64), mode="valid")
    corr = np.clip(corr, 0.0, None)
    vals = np.empty(len(problem.candidates))
    for k, d in enumerate(problem.candidates):
        vals[k] = -math.log(max(corr[R + d.dy, R + d.dx] / winsize, problem.epsilon))
    return vals


def total_energy_cores(problem: AlignmentProblem, shifts, prob: ProbMap, cores):
    cand_set = set(problem.candidates)
    for d in shifts:
        if Shift(d[0], d[1]) not in cand_set:
            raise ContractError(f"shift {d} not in candidate set")
    e = 0.0
    for i, (core, d) in enumerate(zip(cores, shifts)):
        num = _numerator(prob, core, d)
        winsize = core.window_size(problem.radius)
        e += -math.log(max(num / winsize, problem.epsilon))
    for i, hs in enumerate(problem.neighbors):
        for j in hs:
            e += problem.beta * pairwise_cost(shifts[i], shifts[j], problem.z_norm)
    return e


def _numerator(prob: ProbMap, core: GroupCore, d) -> float:
    """Sum of prob over the shifted ones of the core (exact, direct)."""
    if core.bits.size == 0:
        return 0.0
    h, w = core.bits.shape
    x0, y0 = core.x0 + int(d[0]), core.y0 + int(d[1])
    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x0 + w, prob.width), min(y0 + h, prob.height)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0.0
    sub = core.bits[iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0]
    return float((sub * prob.values[iy0:iy1, ix0:ix1]).sum())


def total_energy(problem: AlignmentProblem, shifts, prob: ProbMap, masks):
    """Energy of a full assignment; unary terms use each group's dilated
    bounding window, pairwise terms follow the ordered-pair sum."""
    cores = [core_from_mask(m) for m in masks]
    return total_energy_cores(problem, shifts, prob, cores)


# --- solver -----------------------------------------------------------------


def solve_icm_cores(
    problem: AlignmentProblem, prob: ProbMap, cores, max_iters: int = 50
) -> AlignmentSolution:
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    n = len(problem.groups)
    if len(cores) != n:
        raise ContractError("one mask per group required")
    tables = [_unary_table(prob, c, problem) for c in cores]
    cands = problem.candidates
    keys = [(d.dx * d.dx + d.dy * d.dy, d.dx, d.dy) for d in cands]
    zero_idx = next(k for k, d in enumerate(cands) if d == (0, 0))
    assign = [zero_idx] * n
    incoming = [[] for _ in range(n)]
    for i, hs in enumerate(problem.neighbors):
        for j in hs:
            incoming[j].append(i)

    def local_scores(i):
        s = tables[i].copy()
        if problem.beta > 0:
            for j in problem.neighbors[i]:
                dj = cands[assign[j]]
                s += problem.beta * np.array(
                    [pairwise_cost(d, dj, problem.z_norm) for d in cands]
                )
            for j in incoming[i]:
                dj = cands[assign[j]]
                s += problem.beta * np.array(
                    [pairwise_cost(dj, d, problem.z_norm) for d in cands]
                )
        return s

    def energy_from_tables():
        e = sum(tables[i][assign[i]] for i in range(n))
        for i, hs in enumerate(problem.neighbors):
            for j in hs:
                e += problem.beta * pairwise_cost(
                    cands[assign[i]], cands[assign[j]], problem.z_norm
                )
        return float(e)

    trace = []
    sweeps = 0
    for _ in range(max_iters):
        changed = False
        for i in range(n):
            s = local_scores(i)
            best = min(range(len(cands)), key=lambda k: (s[k],) + keys[k])
            if best != assign[i]:
                assign[i] = best
                changed = True
        sweeps += 1
        trace.append(energy_from_tables())
        if not changed:
            break
    return AlignmentSolution(
        shifts=tuple(cands[a] for a in assign),
        energy=trace[-1],
        iterations=sweeps,
        energy_trace=tuple(trace),
    )


def solve_icm(
    problem: AlignmentProblem, prob: ProbMap, masks, max_iters: int = 50
) -> AlignmentSolution:
    """ICM from all-zero shifts, ascending group order, stop on a clean sweep."""
    cores = [core_from_mask(m) for m in masks]
    return solve_icm_cores(problem, prob, cores, max_iters=max_iters)


def apply_alignment(
    fset: FootprintSet, groups, solution: AlignmentSolution
) -> FootprintSet:
    """Translate every footprint by its group's shift; provenance -> aligned."""
    from dataclasses import replace

    if len(groups) != len(solution.shifts):
        raise ContractError("groups/solution length mismatch")
    fps = dict(fset.footprints)
    for g, d in zip(groups, solution.shifts):
        for fid in g.member_ids:
            if fid not in fps:
                raise ContractError(f"group references unknown footprint {fid}")
            fp = fps[fid]
            fps[fid] = replace(
                fp, polygon=fp.polygon.translate(d[0], d[1]), provenance="aligned"
            )
    return replace(fset, footprints=fps)


def solution_to_json(groups, solution: AlignmentSolution) -> dict:
    return {
        "groups": [
            {"members": list(g.member_ids), "shift": [int(d.dx), int(d.dy)]}
            for g, d in zip(groups, solution.shifts)
        ],
        "energy": solution.energy,
        "iterations": solution.iterations,
    }


def save_solution(groups, solution: AlignmentSolution, path) -> None:
    with open(path, "w") as f:
        json.dump(solution_to_json(groups, solution), f)
