"""Vector footprint model, edit operations, and spatial grouping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, GeometryError, MissingTargetError
from .raster import RasterMeta, TileGrid, TileIndex

PROVENANCES = ("original", "user_added", "aligned")


@dataclass(frozen=True)
class Polygon:
    """Simple polygon in pixel coordinates, implicitly closed."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if any(not (math.isfinite(x) and math.isfinite(y)) for x, y in verts):
            raise GeometryError("polygon vertices must be finite")
        object.__setattr__(self, "vertices", verts)
        if abs(self.signed_area()) == 0.0:
            raise GeometryError("polygon has zero area")

    def signed_area(self) -> float:
        a = 0.0
        verts = self.vertices
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            a += x0 * y1 - x1 * y0
        return a / 2.0

    def area(self) -> float:
        return abs(self.signed_area())

    def centroid(self) -> tuple[float, float]:
        """Area centroid (shoelace)."""
        a = self.signed_area()
        cx = cy = 0.0
        verts = self.vertices
        for (x0, y0), (x1, y1) in zip(verts, verts[1:] + verts[:1]):
            cross = x0 * y1 - x1 * y0
            cx += (x0 + x1) * cross
            cy += (y0 + y1) * cross
        return cx / (6.0 * a), cy / (6.0 * a)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [x for x, _ in self.vertices]
        ys = [y for _, y in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def translate(self, dx: float, dy: float) -> "Polygon":
        return Polygon(tuple((x + dx, y + dy) for x, y in self.vertices))

    def translation_to(self, other: "Polygon"):
        """If `other` is this polygon translated rigidly, return (dx, dy), else None."""
        if len(self.vertices) != len(other.vertices):
            return None
        (x0, y0), (ox0, oy0) = self.vertices[0], other.vertices[0]
        dx, dy = ox0 - x0, oy0 - y0
        for (x, y), (ox, oy) in zip(self.vertices, other.vertices):
            if abs(ox - x - dx) > 1e-9 or abs(oy - y - dy) > 1e-9:
                return None
        return dx, dy


@dataclass(frozen=True)
class Footprint:
    id: int
    polygon: Polygon
    provenance: str = "original"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ContractError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class FootprintSet:
    """Immutable id-keyed collection of footprints."""

    footprints: dict[int, Footprint]
    raster_meta: RasterMeta

    def __post_init__(self):
        for fid, fp in self.footprints.items():
            if fid != fp.id:
                raise ContractError(f"key {fid} != footprint id {fp.id}")

    def __len__(self) -> int:
        return len(self.footprints)

    def __contains__(self, fid: int) -> bool:
        return fid in self.footprints

    def get(self, fid: int) -> Footprint:
        try:
            return self.footprints[fid]
        except KeyError:
            raise MissingTargetError(f"no footprint with id {fid}")

    def ids(self) -> list[int]:
        return sorted(self.footprints)

    def polygons(self) -> list[Polygon]:
        return [self.footprints[i].polygon for i in self.ids()]

    @classmethod
    def empty(cls, meta: RasterMeta) -> "FootprintSet":
        return cls(footprints={}, raster_meta=meta)

    @classmethod
    def build(cls, polygons, meta: RasterMeta, provenance="original") -> "FootprintSet":
        fps = {
            i + 1: Footprint(id=i + 1, polygon=p, provenance=provenance)
            for i, p in enumerate(polygons)
        }
        return cls(footprints=fps, raster_meta=meta)


@dataclass(frozen=True)
class Edit:
    """One user operation: align (shift), add (new polygon), or remove."""

    kind: str  # align | add | remove
    tile: TileIndex
    seq: int = 0
    target_id: int | None = None
    shift: tuple[int, int] | None = None  # for align
    polygon: Polygon | None = None  # for add

    def __post_init__(self):
        if self.kind not in ("align", "add", "remove"):
            raise ContractError(f"unknown edit kind {self.kind!r}")
        if self.kind in ("align", "remove") and self.target_id is None:
            raise ContractError(f"{self.kind} edit requires target_id")
        if self.kind == "align" and self.shift is None:
            raise ContractError("align edit requires a shift")
        if self.kind == "add" and self.polygon is None:
            raise GeometryError("add edit requires a valid polygon")

    def to_json(self) -> dict:
        obj = {"kind": self.kind, "tile": list(self.tile), "seq": self.seq}
        if self.target_id is not None:
            obj["target_id"] = self.target_id
        if self.shift is not None:
            obj["shift"] = [int(self.shift[0]), int(self.shift[1])]
        if self.polygon is not None:
            obj["polygon"] = [list(v) for v in self.polygon.vertices]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Edit":
        poly = obj.get("polygon")
        shift = obj.get("shift")
        return cls(
            kind=obj["kind"],
            tile=(int(obj["tile"][0]), int(obj["tile"][1])),
            seq=int(obj.get("seq", 0)),
            target_id=obj.get("target_id"),
            shift=(int(shift[0]), int(shift[1])) if shift is not None else None,
            polygon=Polygon(tuple((v[0], v[1]) for v in poly)) if poly else None,
        )


@dataclass(frozen=True)
class FootprintGroup:
    member_ids: tuple[int, ...]
    centroid: tuple[float, float]

    def __post_init__(self):
        if not self.member_ids:
            raise ContractError("group must be non-empty")


def apply_edit(fset: FootprintSet, e: Edit) -> FootprintSet:
    """Apply one edit, returning a new set (the input is never mutated)."""
    fps = dict(fset.footprints)
    if e.kind == "remove":
        fset.get(e.target_id)
        del fps[e.target_id]
    elif e.kind == "align":
        fp = fset.get(e.target_id)
        moved = fp.polygon.translate(e.shift[0], e.shift[1])
        fps[e.target_id] = replace(fp, polygon=moved)
    else:  # add
        new_id = max(fps, default=0) + 1
        fps[new_id] = Footprint(id=new_id, polygon=e.polygon, provenance="user_added")
    return replace(fset, footprints=fps)


def apply_edits(fset: FootprintSet, edits) -> FootprintSet:
    for e in edits:
        fset = apply_edit(fset, e)
    return fset


def group_by_proximity(fset: FootprintSet, dist_threshold: float = 100.0):
    """Single-linkage connected components on centroid distance.

    Groups are ordered by their smallest member id; members sorted ascending.
    """
    if dist_threshold <= 0:
        raise ContractError("dist_threshold must be positive")
    ids = fset.ids()
    if not ids:
        return []
    cents = np.array([fset.footprints[i].polygon.centroid() for i in ids])
    n = len(ids)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    d2 = ((cents[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
    thr2 = dist_threshold * dist_threshold
    for i in range(n):
        for j in range(i + 1, n):
            if d2[i, j] <= thr2:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[ri] = rj
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)
    groups = []
    for members in comps.values():
        mids = sorted(ids[i] for i in members)
        c = cents[members].mean(axis=0)
        groups.append(FootprintGroup(member_ids=tuple(mids), centroid=(c[0], c[1])))
    groups.sort(key=lambda g: g.member_ids[0])
    return groups


def footprints_in_tile(fset: FootprintSet, tile: TileIndex, grid: TileGrid):
    """Ids of footprints whose bounding box intersects the tile window."""
    x0, y0, x1, y1 = grid.bounds(tile)
    out = []
    for fid in fset.ids():
        bx0, by0, bx1, by1 = fset.footprints[fid].polygon.bbox()
        if bx1 >= x0 and bx0 < x1 and by1 >= y0 and by0 < y1:
            out.append(fid)
    return out


# --- GeoJSON / edit-log serialization --------------------------------------


def to_geojson(fset: FootprintSet) -> dict:
    features = []
    for fid in fset.ids():
        fp = fset.footprints[fid]
        ring = [list(v) for v in fp.polygon.vertices]
        ring.append(list(fp.polygon.vertices[0]))
        features.append(
            {
                "type": "Feature",
                "id": fid,
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {"provenance": fp.provenance},
            }
        )
    return {
        "type": "FeatureCollection",
        "features": features,
        "raster_meta": fset.raster_meta.to_json(),
    }


def from_geojson(obj: dict) -> FootprintSet:
    meta = RasterMeta.from_json(obj["raster_meta"])
    fps = {}
    for feat in obj["features"]:
        fid = int(feat["id"])
        ring = feat["geometry"]["coordinates"][0]
        verts = [tuple(p) for p in ring]
        if len(verts) > 3 and verts[0] == verts[-1]:
            verts = verts[:-1]
        prov = feat.get("properties", {}).get("provenance", "original")
        fps[fid] = Footprint(id=fid, polygon=Polygon(tuple(verts)), provenance=prov)
    return FootprintSet(footprints=fps, raster_meta=meta)


def save_geojson(fset: FootprintSet, path) -> None:
    with open(path, "w") as f:
        json.dump(to_geojson(fset), f)


def load_geojson(path) -> FootprintSet:
    with open(path) as f:
        return from_geojson(json.load(f))


def append_edit_log(path, edits) -> None:
    with open(path, "a") as f:
        for e in edits:
            f.write(json.dumps(e.to_json()) + "\n")


def read_edit_log(path):
    edits = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                edits.append(Edit.from_json(json.loads(line)))
    return edits
