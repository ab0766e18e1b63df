"""Synthetic desk-scale worlds: clustered rectangular footprints on a raster.

Used by the test suite, the acceptance scenarios, and demo sessions.
"""

from __future__ import annotations

import numpy as np

from .annotations import FootprintSet, Polygon
from .raster import RasterMeta


def make_world(
    seed: int = 0,
    width: int = 5120,
    height: int = 5120,
    tile_size: int = 256,
    n_clusters: int = 16,
    buildings_per_cluster: tuple[int, int] = (20, 40),
    size_range: tuple[int, int] = (10, 16),
    cluster_radius: int = 70,
) -> FootprintSet:
    """Hamlet-style truth set: clusters of axis-aligned rectangles, each
    cluster centered well inside its own (non-adjacent) tile."""
    rng = np.random.default_rng(seed)
    rows = height // tile_size
    cols = width // tile_size
    # every-other-tile lattice keeps clusters > tile_size apart, so proximity
    # grouping never chains across clusters
    lattice = [
        (r, c)
        for r in range(1, rows - 1, 2)
        for c in range(1, cols - 1, 2)
    ]
    if n_clusters > len(lattice):
        raise ValueError("too many clusters for this raster")
    picks = rng.choice(len(lattice), size=n_clusters, replace=False)
    polys = []
    for pi in picks:
        r, c = lattice[int(pi)]
        cx = c * tile_size + tile_size // 2
        cy = r * tile_size + tile_size // 2
        n_b = int(rng.integers(buildings_per_cluster[0], buildings_per_cluster[1] + 1))
        placed_boxes = []
        for _ in range(n_b):
            for _attempt in range(60):
                w = int(rng.integers(size_range[0], size_range[1] + 1))
                h = int(rng.integers(size_range[0], size_range[1] + 1))
                ox = int(rng.integers(-cluster_radius, cluster_radius + 1))
                oy = int(rng.integers(-cluster_radius, cluster_radius + 1))
                x0, y0 = cx + ox - w // 2, cy + oy - h // 2
                box = (x0 - 2, y0 - 2, x0 + w + 2, y0 + h + 2)
                if any(
                    box[2] > b[0] and box[0] < b[2] and box[3] > b[1] and box[1] < b[3]
                    for b in placed_boxes
                ):
                    continue
                placed_boxes.append(box)
                polys.append(
                    Polygon(((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)))
                )
                break
    meta = RasterMeta(width=width, height=height)
    return FootprintSet.build(polys, meta)


def smooth_shift_field(base: tuple[int, int], amp: int, width: int, height: int):
    """Slowly varying integer shift field over the raster (registration-style
    drift): base plus up to +/- amp across the extent."""

    def shift_at(x: float, y: float) -> tuple[int, int]:
        dx = base[0] + round(amp * (2.0 * x / width - 1.0))
        dy = base[1] + round(amp * (2.0 * y / height - 1.0))
        return dx, dy

    return shift_at


def shift_groups(fset: FootprintSet, groups, shift_fn) -> FootprintSet:
    """Translate every group rigidly by the field value at its centroid."""
    from dataclasses import replace

    fps = dict(fset.footprints)
    for g in groups:
        dx, dy = shift_fn(*g.centroid)
        for fid in g.member_ids:
            fp = fps[fid]
            fps[fid] = replace(fp, polygon=fp.polygon.translate(dx, dy))
    return replace(fset, footprints=fps)
