import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maploop.errors import ContractError
from maploop.raster import TileGrid, rasterize, write_probmap_pgm
from maploop.seg_gate import (
    DetectionHead,
    LossBatch,
    ProviderState,
    build_prob_map,
    fractional_detector,
    infer_tile,
    load_provider,
    loss_det,
    loss_seg,
    loss_seg_grad,
    loss_total,
    perfect_detector,
    save_provider,
    synthetic_prob_map,
    update_model,
)

from conftest import mask_of, prob_of, square


def scalar_bce(x, y):
    """Naive scalar oracle: -y log σ(x) - (1-y) log(1-σ(x))."""
    s = 1.0 / (1.0 + math.exp(-x))
    return -(y * math.log(s) + (1 - y) * math.log(1 - s))


def batch_of(seg_x, seg_y, det_x=(0.0,), det_y=(0.0,)):
    return LossBatch(
        seg_logits=np.asarray(seg_x, dtype=float),
        seg_targets=np.asarray(seg_y, dtype=float),
        det_logits=np.asarray(det_x, dtype=float),
        det_targets=np.asarray(det_y, dtype=float),
    )


# --- losses --------------------------------------------------------------------


def test_loss_seg_examples():
    assert loss_seg(batch_of([0.0], [1.0])) == pytest.approx(math.log(2))
    assert loss_seg(batch_of([20.0], [1.0])) == pytest.approx(2.0611536e-9, rel=1e-4)
    xs = [1.3, -0.7, 4.0, -2.5]
    ys = [1.0, 0.0, 0.0, 1.0]
    want = sum(scalar_bce(x, y) for x, y in zip(xs, ys)) / 4
    assert loss_seg(batch_of(xs, ys)) == pytest.approx(want, abs=1e-12)


def test_loss_det_examples():
    assert loss_det(batch_of([0.0], [0.0], [0.0], [0.0])) == pytest.approx(math.log(2))
    assert loss_det(batch_of([0.0], [0.0], [-20.0], [0.0])) == pytest.approx(
        2.0611536e-9, rel=1e-4
    )
    two = batch_of([0.0], [0.0], [1.0, -3.0], [1.0, 0.0])
    want = (scalar_bce(1.0, 1.0) + scalar_bce(-3.0, 0.0)) / 2
    assert loss_det(two) == pytest.approx(want, abs=1e-12)


def test_loss_total_is_sum(rng):
    b = batch_of([0.0], [1.0], [0.0], [0.0])
    assert loss_total(b) == pytest.approx(2 * math.log(2))
    xs, ys = rng.normal(size=8), (rng.random(8) > 0.5).astype(float)
    dx, dy = rng.normal(size=3), (rng.random(3) > 0.5).astype(float)
    b = batch_of(xs, ys, dx, dy)
    assert loss_total(b) == pytest.approx(loss_seg(b) + loss_det(b), abs=1e-12)


def test_loss_stable_at_extreme_logits():
    assert np.isfinite(loss_seg(batch_of([500.0, -500.0], [0.0, 1.0])))


def test_loss_batch_validation():
    with pytest.raises(ContractError):
        batch_of([0.0, 1.0], [1.0])
    with pytest.raises(ContractError):
        batch_of([0.0], [0.5])
    with pytest.raises(ContractError):
        loss_seg(batch_of([], []))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 9999))
def test_loss_grad_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    xs = r.normal(size=5) * 3
    ys = (r.random(5) > 0.5).astype(float)
    g = loss_seg_grad(batch_of(xs, ys))
    h = 1e-6
    for i in range(5):
        bumped = xs.copy()
        bumped[i] += h
        fd = (loss_seg(batch_of(bumped, ys)) - loss_seg(batch_of(xs, ys))) / h
        assert g[i] == pytest.approx(fd, abs=1e-5)


# --- detection gate --------------------------------------------------------------


def test_gate_pass_through_and_early_exit():
    provider = ProviderState(noise_sigma=0.0, blur_radius=0)
    head = DetectionHead(theta=0.1)
    truth = rasterize([square(4, 4, 20, 20)], 64, 64)
    pm, exited, det = infer_tile(provider, head, (0, 0), truth, tile_size=64)
    assert not exited and det > 0.1
    assert np.array_equal(pm.values, truth.bits.astype(float))

    empty = mask_of(np.zeros((64, 64)))
    pm, exited, det = infer_tile(provider, head, (0, 0), empty, tile_size=64)
    assert exited and det == 0.0 and pm.values.sum() == 0.0


def test_gate_theta_zero_never_fires():
    provider = ProviderState(noise_sigma=0.2, seed=3)
    head = DetectionHead(theta=0.0)
    empty = mask_of(np.zeros((32, 32)))
    pm, exited, _ = infer_tile(provider, head, (1, 2), empty, tile_size=32)
    assert not exited
    assert np.array_equal(pm.values, synthetic_prob_map(empty, provider, (1, 2)).values)


def test_detector_scores():
    empty = mask_of(np.zeros((64, 64)))
    assert fractional_detector(empty) == 0.0 and fractional_detector(None) == 0.0
    one_bld = rasterize([square(0, 0, 10, 10)], 64, 64)
    assert fractional_detector(one_bld) == pytest.approx(min(1.0, 50 * 100 / 4096))
    assert perfect_detector(one_bld) == 1.0 and perfect_detector(empty) == 0.0
    with pytest.raises(ContractError):
        DetectionHead(theta=1.5)


# --- synthetic oracle -------------------------------------------------------------


def test_synthetic_noiseless_equals_truth():
    truth = rasterize([square(3, 3, 5, 5)], 32, 32)
    st_ = ProviderState(noise_sigma=0.0, blur_radius=0, false_blob_rate=0.0)
    assert np.array_equal(synthetic_prob_map(truth, st_).values, truth.bits.astype(float))


def test_synthetic_noise_bounds_and_determinism():
    empty = mask_of(np.zeros((32, 32)))
    st_ = ProviderState(noise_sigma=0.3, seed=11)
    a = synthetic_prob_map(empty, st_, (2, 5))
    assert a.values.min() >= 0.0 and a.values.max() <= 0.3
    b = synthetic_prob_map(empty, st_, (2, 5))
    assert np.array_equal(a.values, b.values)
    other_tile = synthetic_prob_map(empty, st_, (2, 6))
    assert not np.array_equal(a.values, other_tile.values)
    next_gen = synthetic_prob_map(empty, ProviderState(noise_sigma=0.3, seed=11, generation=1), (2, 5))
    assert not np.array_equal(a.values, next_gen.values)


def test_update_model_examples():
    p = ProviderState(noise_sigma=0.3)
    p1 = update_model(p, [(0, 0)])
    assert p1.noise_sigma == pytest.approx(0.24) and p1.generation == 1
    floored = update_model(ProviderState(noise_sigma=0.05), [(0, 0)])
    assert floored.noise_sigma == 0.05
    clean = update_model(ProviderState(noise_sigma=0.0), [(0, 0)])
    assert clean.noise_sigma == 0.0
    p3 = ProviderState(generation=3)
    assert update_model(p3, [(0, 0)]).generation == 4
    with pytest.raises(ContractError):
        update_model(p, [])


def test_file_backed_provider(tmp_path, rng):
    vals = np.round(rng.random((16, 16)) * 65535) / 65535
    write_probmap_pgm(prob_of(vals), tmp_path / "tile_0_1.pgm")
    provider = ProviderState(kind="file_backed", tiles_dir=str(tmp_path))
    head = DetectionHead(theta=0.0)
    pm, exited, _ = infer_tile(provider, head, (0, 1), None, tile_size=16)
    assert not exited and np.allclose(pm.values, vals, atol=1e-9)
    with pytest.raises(IOError):
        infer_tile(provider, head, (5, 5), None, tile_size=16)


def test_build_prob_map_assembles_tiles():
    truth = rasterize([square(10, 10, 30, 30), square(280, 280, 12, 12)], 300, 300)
    grid = TileGrid.for_raster(300, 300, 256)
    provider = ProviderState(noise_sigma=0.0, blur_radius=0)
    head = DetectionHead(theta=0.1, score_fn=perfect_detector)
    pm = build_prob_map(provider, head, grid, truth, 300, 300)
    assert np.array_equal(pm.values, truth.bits.astype(float))
    # gated tiles (empty truth) stay zero
    gated = DetectionHead(theta=0.1)
    pm2 = build_prob_map(provider, gated, grid, truth, 300, 300)
    assert pm2.values[:256, 256:].sum() == 0.0


def test_gated_equals_ungated_on_building_tiles():
    # perfect detector: every non-empty tile passes, so gating never alters them
    truth = rasterize([square(10, 10, 30, 30), square(280, 280, 12, 12)], 300, 300)
    grid = TileGrid.for_raster(300, 300, 256)
    provider = ProviderState(noise_sigma=0.1, seed=7)
    gated = build_prob_map(provider, DetectionHead(theta=0.1, score_fn=perfect_detector), grid, truth, 300, 300)
    ungated = build_prob_map(provider, DetectionHead(theta=0.0, score_fn=perfect_detector), grid, truth, 300, 300)
    from maploop.raster import crop

    hits = 0
    for tile in grid.tiles():
        if crop(truth, tile, grid).popcount() > 0:
            hits += 1
            assert np.array_equal(
                crop(gated, tile, grid).values, crop(ungated, tile, grid).values
            )
    assert hits >= 2  # recall 1.0 on non-empty tiles


def test_provider_roundtrip(tmp_path):
    p = ProviderState(noise_sigma=0.2, blur_radius=1, false_blob_rate=0.5, seed=9, generation=2)
    save_provider(p, DetectionHead(theta=0.25), tmp_path / "provider.json")
    p2, head = load_provider(tmp_path / "provider.json")
    assert p2 == p and head.theta == 0.25
    with pytest.raises(ContractError):
        ProviderState(kind="mystery")
