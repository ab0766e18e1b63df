"""Raster substrate: probability maps, binary masks, tile grids, rasterization.

All coordinates are in the raster pixel frame: x grows right, y grows down.
A RasterMeta affine stub is carried through I/O but never enters any math.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, GeometryError

TileIndex = tuple[int, int]  # (row, col)


@dataclass(frozen=True)
class RasterMeta:
    """Affine placement stub (pixel frame everywhere; geodetics out of scope)."""

    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    scale: float = 1.0

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RasterMeta":
        return cls(
            width=int(obj["width"]),
            height=int(obj["height"]),
            origin_x=float(obj.get("origin_x", 0.0)),
            origin_y=float(obj.get("origin_y", 0.0)),
            scale=float(obj.get("scale", 1.0)),
        )


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProbMap:
    """Single-channel raster of per-pixel building probabilities in [0, 1]."""

    width: int
    height: int
    values: np.ndarray  # shape (height, width), float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise ContractError(
                f"values shape {v.shape} != ({self.height}, {self.width})"
            )
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ContractError("probability values must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ProbMap":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(width=arr.shape[1], height=arr.shape[0], values=arr)


@dataclass(frozen=True)
class BinaryMask:
    """Raster of {0, 1} values, e.g. rasterized footprint annotations."""

    width: int
    height: int
    bits: np.ndarray  # shape (height, width), uint8

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.shape != (self.height, self.width):
            raise ContractError(
                f"bits shape {b.shape} != ({self.height}, {self.width})"
            )
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ContractError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "bits", _freeze(b))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryMask":
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr)

    def popcount(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class TileGrid:
    """Partition of a raster into fixed square tiles (last row/col zero-padded)."""

    tile_size: int = 256
    cols: int = 0
    rows: int = 0
    origin: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ContractError("tile_size must be positive")

    @classmethod
    def for_raster(cls, width: int, height: int, tile_size: int = 256) -> "TileGrid":
        cols = -(-width // tile_size)
        rows = -(-height // tile_size)
        return cls(tile_size=tile_size, cols=cols, rows=rows)

    def __len__(self) -> int:
        return self.rows * self.cols

    def tiles(self):
        for row in range(self.rows):
            for col in range(self.cols):
                yield (row, col)

    def index_of(self, tile: TileIndex) -> int:
        self.check(tile)
        return tile[0] * self.cols + tile[1]

    def tile_at(self, index: int) -> TileIndex:
        if not 0 <= index < len(self):
            raise ContractError(f"tile index {index} out of range")
        return divmod(index, self.cols)

    def check(self, tile: TileIndex) -> None:
        row, col = tile
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ContractError(f"tile {tile} outside {self.rows}x{self.cols} grid")

    def bounds(self, tile: TileIndex) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) half-open pixel bounds; may extend past the raster."""
        self.check(tile)
        row, col = tile
        ox, oy = self.origin
        x0 = ox + col * self.tile_size
        y0 = oy + row * self.tile_size
        return x0, y0, x0 + self.tile_size, y0 + self.tile_size


def rasterize(polygons, width: int, height: int) -> BinaryMask:
    """Rasterize polygons: a pixel is 1 iff its center is inside any polygon.

    Containment is even-odd on the pixel center (x + 0.5, y + 0.5).  Polygons
    may extend past the raster borders; they are clipped implicitly.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    for poly in polygons:
        verts = np.asarray(getattr(poly, "vertices", poly), dtype=np.float64)
        if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
            raise GeometryError("polygon needs at least 3 (x, y) vertices")
        x0 = max(int(np.floor(verts[:, 0].min())), 0)
        x1 = min(int(np.ceil(verts[:, 0].max())) + 1, width)
        y0 = max(int(np.floor(verts[:, 1].min())), 0)
        y1 = min(int(np.ceil(verts[:, 1].max())) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        px = np.arange(x0, x1, dtype=np.float64) + 0.5
        py = np.arange(y0, y1, dtype=np.float64) + 0.5
        cx = px[None, :]
        cy = py[:, None]
        inside = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        xs, ys = verts[:, 0], verts[:, 1]
        xe, ye = np.roll(xs, -1), np.roll(ys, -1)
        for ax, ay, bx, by in zip(xs, ys, xe, ye):
            if ay == by:
                continue
            crosses = (ay > cy) != (by > cy)
            xint = (bx - ax) * (cy - ay) / (by - ay) + ax
            inside ^= crosses & (cx < xint)
        out[y0:y1, x0:x1] |= inside
    return BinaryMask.from_array(out)


def rasterize_local(polygons) -> tuple[np.ndarray, int, int]:
    """Rasterize polygons into a tight local window; returns (bits, x0, y0).

    Equivalent to the matching window of rasterize() on an unbounded raster
    (integer window offsets preserve pixel-center containment).
    """
    allverts = [np.asarray(getattr(p, "vertices", p), dtype=np.float64) for p in polygons]
    if not allverts:
        return np.zeros((0, 0), dtype=np.uint8), 0, 0
    x0 = int(np.floor(min(v[:, 0].min() for v in allverts)))
    y0 = int(np.floor(min(v[:, 1].min() for v in allverts)))
    x1 = int(np.ceil(max(v[:, 0].max() for v in allverts))) + 1
    y1 = int(np.ceil(max(v[:, 1].max() for v in allverts))) + 1
    shifted = [
        [(x - x0, y - y0) for x, y in v.tolist()] for v in allverts
    ]
    mask = rasterize(shifted, x1 - x0, y1 - y0)
    return np.array(mask.bits), x0, y0


def crop(raster, tile: TileIndex, grid: TileGrid):
    """Extract one tile window, zero-padded where it extends past the raster."""
    x0, y0, x1, y1 = grid.bounds(tile)
    ts = grid.tile_size
    if isinstance(raster, ProbMap):
        src = raster.values
        out = np.zeros((ts, ts), dtype=np.float64)
    elif isinstance(raster, BinaryMask):
        src = raster.bits
        out = np.zeros((ts, ts), dtype=np.uint8)
    else:
        raise ContractError(f"cannot crop {type(raster).__name__}")
    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x1, raster.width), min(y1, raster.height)
    if ix0 < ix1 and iy0 < iy1:
        out[iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0] = src[iy0:iy1, ix0:ix1]
    return type(raster).from_array(out)


def shift_mask(mask: BinaryMask, d) -> BinaryMask:
    """Translate a mask by integer (dx, dy), zero-filling exposed borders."""
    dx, dy = int(d[0]), int(d[1])
    h, w = mask.height, mask.width
    out = np.zeros((h, w), dtype=np.uint8)
    sx0, sx1 = max(0, -dx), min(w, w - dx)
    sy0, sy1 = max(0, -dy), min(h, h - dy)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = mask.bits[sy0:sy1, sx0:sx1]
    return BinaryMask.from_array(out)


# --- PGM (P5) I/O ---------------------------------------------------------


def _read_pgm(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ContractError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval, separated by whitespace/comments
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    width, height, maxval = tokens
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    arr = np.frombuffer(data, dtype=dtype, count=width * height, offset=i)
    return arr.reshape(height, width).astype(np.float64), maxval


def write_probmap_pgm(prob: ProbMap, path) -> None:
    """16-bit P5, value/65535 is the probability."""
    raw = np.round(prob.values * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{prob.width} {prob.height}\n65535\n".encode())
        f.write(raw.tobytes())


def read_probmap_pgm(path) -> ProbMap:
    arr, maxval = _read_pgm(path)
    return ProbMap.from_array(arr / float(maxval))


def write_mask_pgm(mask: BinaryMask, path) -> None:
    """8-bit P5, 0 or 255."""
    raw = (mask.bits * np.uint8(255)).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{mask.width} {mask.height}\n255\n".encode())
        f.write(raw.tobytes())


def read_mask_pgm(path) -> BinaryMask:
    arr, maxval = _read_pgm(path)
    return BinaryMask.from_array((arr > maxval / 2).astype(np.uint8))
