import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maploop.annotations import (
    Edit,
    Polygon,
    append_edit_log,
    apply_edit,
    apply_edits,
    footprints_in_tile,
    from_geojson,
    group_by_proximity,
    load_geojson,
    read_edit_log,
    save_geojson,
    to_geojson,
)
from maploop.errors import ContractError, GeometryError, MissingTargetError
from maploop.raster import TileGrid

from conftest import fset_of, square


def test_remove_decrements_size():
    fs = fset_of([square(0, 0, 4, 4), square(10, 10, 4, 4)])
    out = apply_edit(fs, Edit(kind="remove", tile=(0, 0), target_id=1))
    assert len(out) == 1 and 1 not in out
    assert len(fs) == 2  # input untouched


def test_align_inverse_pair_restores_polygon():
    fs = fset_of([square(5, 5, 4, 4)])
    fwd = Edit(kind="align", tile=(0, 0), target_id=1, shift=(2, 2))
    back = Edit(kind="align", tile=(0, 0), target_id=1, shift=(-2, -2))
    out = apply_edits(fs, [fwd, back])
    assert out.get(1).polygon.vertices == fs.get(1).polygon.vertices


def test_add_to_empty_set():
    fs = fset_of([])
    out = apply_edit(fs, Edit(kind="add", tile=(0, 0), polygon=square(1, 1, 3, 3)))
    assert len(out) == 1
    assert out.get(1).provenance == "user_added"


def test_unknown_target_and_bad_polygon():
    fs = fset_of([square(0, 0, 4, 4)])
    with pytest.raises(MissingTargetError):
        apply_edit(fs, Edit(kind="remove", tile=(0, 0), target_id=99))
    with pytest.raises(GeometryError):
        Edit(kind="add", tile=(0, 0), polygon=None)
    with pytest.raises(GeometryError):
        Polygon(((0, 0), (1, 1), (2, 2)))  # collinear, zero area


def test_edit_log_replay_reproduces_set(tmp_path):
    fs = fset_of([square(0, 0, 4, 4), square(20, 0, 4, 4)])
    edits = [
        Edit(kind="align", tile=(0, 0), seq=1, target_id=1, shift=(3, 1)),
        Edit(kind="remove", tile=(0, 0), seq=2, target_id=2),
        Edit(kind="add", tile=(0, 1), seq=3, polygon=square(40, 8, 5, 5)),
    ]
    final = apply_edits(fs, edits)
    append_edit_log(tmp_path / "edits.jsonl", edits)
    replayed = apply_edits(fs, read_edit_log(tmp_path / "edits.jsonl"))
    assert to_geojson(replayed) == to_geojson(final)


def test_grouping_examples():
    near = fset_of([square(0, 0, 4, 4), square(10, 0, 4, 4)])
    assert len(group_by_proximity(near, 100)) == 1
    far = fset_of([square(0, 0, 4, 4), square(500, 0, 4, 4)], width=1024)
    assert len(group_by_proximity(far, 100)) == 2
    single = fset_of([square(6, 6, 4, 4)])
    groups = group_by_proximity(single, 100)
    assert groups[0].member_ids == (1,)
    assert groups[0].centroid == pytest.approx((8.0, 8.0))


def brute_components(centroids, thr):
    n = len(centroids)
    comp = list(range(n))
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                d = ((centroids[i][0] - centroids[j][0]) ** 2 +
                     (centroids[i][1] - centroids[j][1]) ** 2) ** 0.5
                if d <= thr and comp[i] != comp[j]:
                    tgt = min(comp[i], comp[j])
                    src = max(comp[i], comp[j])
                    comp = [tgt if c == src else c for c in comp]
                    changed = True
    return comp


@settings(max_examples=25, deadline=None)
@given(
    xs=st.lists(st.integers(0, 400), min_size=1, max_size=12),
    thr=st.integers(10, 200),
)
def test_grouping_is_partition_and_matches_brute_force(xs, thr):
    fs = fset_of([square(x, (7 * i) % 400, 4, 4) for i, x in enumerate(xs)], width=512, height=512)
    groups = group_by_proximity(fs, thr)
    seen = [fid for g in groups for fid in g.member_ids]
    assert sorted(seen) == fs.ids()
    cents = [fs.get(i).polygon.centroid() for i in fs.ids()]
    comp = brute_components(cents, thr)
    brute_sizes = sorted(comp.count(c) for c in set(comp))
    assert sorted(len(g.member_ids) for g in groups) == brute_sizes


def test_footprints_in_tile():
    grid = TileGrid.for_raster(512, 512, 256)
    fs = fset_of([square(10, 10, 20, 20), square(250, 100, 20, 20)])
    assert footprints_in_tile(fs, (0, 0), grid) == [1, 2]  # straddler in both
    assert footprints_in_tile(fs, (0, 1), grid) == [2]
    assert footprints_in_tile(fs, (1, 1), grid) == []
    assert footprints_in_tile(fset_of([]), (0, 0), grid) == []


def test_geojson_roundtrip(tmp_path):
    fs = fset_of([square(0, 0, 4, 4), square(9, 9, 3, 5)])
    save_geojson(fs, tmp_path / "f.geojson")
    back = load_geojson(tmp_path / "f.geojson")
    assert back.ids() == fs.ids()
    for fid in fs.ids():
        assert back.get(fid).polygon.vertices == fs.get(fid).polygon.vertices
    obj = to_geojson(fs)
    assert obj["type"] == "FeatureCollection"
    assert obj["features"][0]["geometry"]["type"] == "Polygon"
    # ring closed in serialized form
    ring = obj["features"][0]["geometry"]["coordinates"][0]
    assert ring[0] == ring[-1]


def test_edit_json_roundtrip():
    e = Edit(kind="add", tile=(3, 4), seq=7, polygon=square(1, 2, 3, 4))
    assert Edit.from_json(json.loads(json.dumps(e.to_json()))) == e
    with pytest.raises(ContractError):
        Edit(kind="align", tile=(0, 0), target_id=None, shift=(1, 1))
