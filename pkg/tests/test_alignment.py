import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maploop.alignment import (
    AlignmentProblem,
    Shift,
    apply_alignment,
    build_problem,
    candidate_grid,
    core_from_mask,
    max_pairwise_distance,
    pairwise_cost,
    solution_to_json,
    solve_icm,
    total_energy,
    unary_cost,
)
from maploop.annotations import FootprintGroup, group_by_proximity
from maploop.errors import ContractError
from maploop.raster import rasterize, shift_mask

from conftest import fset_of, mask_of, prob_of, square

EPS = 1e-6


# --- independent oracle -------------------------------------------------------


def brute_unary(mask, d, prob, radius, epsilon=EPS):
    """Spec-literal unary: -log of NDP over the ones-bbox dilated by radius."""
    ys, xs = np.nonzero(mask.bits)
    if len(xs) == 0:
        return -math.log(epsilon)
    h = ys.max() - ys.min() + 1
    w = xs.max() - xs.min() + 1
    winsize = (h + 2 * radius) * (w + 2 * radius)
    num = float((shift_mask(mask, d).bits * prob.values).sum())
    return -math.log(max(num / winsize, epsilon))


def brute_energy(problem, shifts, prob, masks):
    e = sum(
        brute_unary(m, d, prob, problem.radius, problem.epsilon)
        for m, d in zip(masks, shifts)
    )
    for i, hs in enumerate(problem.neighbors):
        for j in hs:
            e += problem.beta * pairwise_cost(shifts[i], shifts[j], problem.z_norm)
    return e


def groups_of(*centroids):
    return tuple(
        FootprintGroup(member_ids=(i + 1,), centroid=c)
        for i, c in enumerate(centroids)
    )


# --- candidate grid and pairwise ------------------------------------------------


def test_candidate_grid_shape_and_order():
    g = candidate_grid(2)
    assert len(g) == 25 and g[0] == (0, 0)
    assert set(g) == {(dx, dy) for dx in range(-2, 3) for dy in range(-2, 3)}
    # non-decreasing distance from origin
    dists = [dx * dx + dy * dy for dx, dy in g]
    assert dists == sorted(dists)
    with pytest.raises(ContractError):
        candidate_grid(-1)


def test_z_norm_is_grid_diameter():
    for r in (1, 5, 30):
        assert max_pairwise_distance(candidate_grid(r)) == pytest.approx(
            2 * r * math.sqrt(2)
        )


def test_pairwise_cost_examples():
    assert pairwise_cost((3, -4), (3, -4), 10.0) == 0.0
    r = 30
    z = 2 * r * math.sqrt(2)
    assert pairwise_cost((r, r), (-r, -r), z) == pytest.approx(1.0)
    assert pairwise_cost((1, 0), (0, 0), 2.0) == pytest.approx(0.5)
    with pytest.raises(ContractError):
        pairwise_cost((0, 0), (0, 0), 0.0)


# --- unary cost ---------------------------------------------------------------


def test_unary_matching_binary_window():
    m = rasterize([square(2, 2, 4, 4)], 12, 12)
    prob = prob_of(m.bits.astype(float))
    got = unary_cost(m, (0, 0), prob, EPS)
    assert got == pytest.approx(-math.log(m.popcount() / (12 * 12)))


def test_unary_floor_and_perfect_match():
    m = rasterize([square(2, 2, 4, 4)], 12, 12)
    assert unary_cost(m, (0, 0), prob_of(np.zeros((12, 12))), EPS) == pytest.approx(
        -math.log(EPS)
    )
    ones = mask_of(np.ones((6, 6)))
    assert unary_cost(ones, (0, 0), prob_of(np.ones((6, 6))), EPS) == pytest.approx(0.0)
    with pytest.raises(ContractError):
        unary_cost(ones, (0, 0), prob_of(np.ones((5, 5))), EPS)


# --- total energy --------------------------------------------------------------


def _two_group_setup(radius=2, beta=2.0):
    fs = fset_of(
        [square(4, 4, 4, 4), square(20, 20, 4, 4)], width=32, height=32
    )
    groups = group_by_proximity(fs, 10)
    assert len(groups) == 2
    problem = build_problem(groups, radius=radius, beta=beta)
    masks = [
        rasterize([fs.get(fid).polygon for fid in g.member_ids], 32, 32)
        for g in groups
    ]
    return fs, groups, problem, masks


def test_total_energy_beta_zero_is_sum_of_unaries(rng):
    _, _, problem, masks = _two_group_setup(beta=0.0)
    prob = prob_of(rng.random((32, 32)))
    shifts = [(1, -1), (0, 2)]
    want = sum(
        brute_unary(m, d, prob, problem.radius) for m, d in zip(masks, shifts)
    )
    assert total_energy(problem, shifts, prob, masks) == pytest.approx(want)


def test_total_energy_single_group(rng):
    fs = fset_of([square(4, 4, 4, 4)], width=16, height=16)
    groups = group_by_proximity(fs, 10)
    problem = build_problem(groups, radius=2, beta=2.0)
    masks = [rasterize(fs.polygons(), 16, 16)]
    prob = prob_of(rng.random((16, 16)))
    assert total_energy(problem, [(0, 1)], prob, masks) == pytest.approx(
        brute_unary(masks[0], (0, 1), prob, 2)
    )


def test_total_energy_matches_brute_force_everywhere(rng):
    _, _, problem, masks = _two_group_setup(radius=2, beta=2.0)
    prob = prob_of(rng.random((32, 32)))
    for d0, d1 in itertools.product(problem.candidates[:9], repeat=2):
        got = total_energy(problem, [d0, d1], prob, masks)
        assert got == pytest.approx(brute_energy(problem, [d0, d1], prob, masks))


def test_total_energy_rejects_foreign_shift(rng):
    _, _, problem, masks = _two_group_setup(radius=2)
    prob = prob_of(rng.random((32, 32)))
    with pytest.raises(ContractError):
        total_energy(problem, [(9, 9), (0, 0)], prob, masks)


# --- ICM solver ----------------------------------------------------------------


def test_icm_recovers_known_translation():
    fs = fset_of([square(10, 10, 4, 4)], width=32, height=32)
    groups = group_by_proximity(fs, 10)
    mask = rasterize(fs.polygons(), 32, 32)
    prob = prob_of(shift_mask(mask, (3, -2)).bits.astype(float))
    problem = build_problem(groups, radius=4, beta=0.0)
    sol = solve_icm(problem, prob, [mask])
    assert sol.shifts == (Shift(3, -2),)


def test_icm_beta_zero_equals_per_group_argmin(rng):
    _, _, problem, masks = _two_group_setup(radius=2, beta=0.0)
    prob = prob_of(rng.random((32, 32)))
    sol = solve_icm(problem, prob, masks)
    for m, got in zip(masks, sol.shifts):
        best = min(
            problem.candidates,
            key=lambda d: (
                brute_unary(m, d, prob, problem.radius),
                d.dx * d.dx + d.dy * d.dy,
                d.dx,
                d.dy,
            ),
        )
        assert got == best


def test_icm_single_candidate_is_trivial(rng):
    groups = groups_of((8.0, 8.0))
    problem = AlignmentProblem(
        groups=groups,
        neighbors=((),),
        candidates=(Shift(0, 0),),
        beta=2.0,
        z_norm=1.0,
        radius=0,
    )
    mask = rasterize([square(4, 4, 4, 4)], 16, 16)
    sol = solve_icm(problem, prob_of(rng.random((16, 16))), [mask])
    assert sol.shifts == (Shift(0, 0),) and sol.iterations == 1


def test_icm_energy_monotone_and_below_zero_init(rng):
    _, _, problem, masks = _two_group_setup(radius=3, beta=2.0)
    prob = prob_of(rng.random((32, 32)))
    sol = solve_icm(problem, prob, masks)
    zero = total_energy(problem, [(0, 0)] * 2, prob, masks)
    assert sol.energy <= zero + 1e-12
    trace = list(sol.energy_trace)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert sol.energy == pytest.approx(trace[-1])
    assert sol.energy == pytest.approx(
        total_energy(problem, sol.shifts, prob, masks)
    )


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.sampled_from([0.0, 0.5, 2.0]))
def test_icm_vs_exhaustive_two_groups(seed, beta):
    _, _, problem, masks = _two_group_setup(radius=1, beta=beta)
    prob = prob_of(np.random.default_rng(seed).random((32, 32)))
    sol = solve_icm(problem, prob, masks)
    best = min(
        brute_energy(problem, pair, prob, masks)
        for pair in itertools.product(problem.candidates, repeat=2)
    )
    assert sol.energy >= best - 1e-9
    if beta == 0.0:
        assert sol.energy == pytest.approx(best)


def test_icm_tie_breaks_toward_zero():
    # flat probability field: every candidate ties, solution must stay at (0,0)
    fs = fset_of([square(8, 8, 4, 4)], width=32, height=32)
    groups = group_by_proximity(fs, 10)
    mask = rasterize(fs.polygons(), 32, 32)
    problem = build_problem(groups, radius=3, beta=2.0)
    sol = solve_icm(problem, prob_of(np.zeros((32, 32))), [mask])
    assert sol.shifts == (Shift(0, 0),) and sol.iterations == 1


def test_icm_deterministic(rng):
    _, _, problem, masks = _two_group_setup(radius=3, beta=2.0)
    prob = prob_of(rng.random((32, 32)))
    a = solve_icm(problem, prob, masks)
    b = solve_icm(problem, prob, masks)
    assert a == b


# --- applying a solution ---------------------------------------------------------


def test_apply_alignment_zero_and_translation():
    fs, groups, problem, masks = _two_group_setup()
    from maploop.alignment import AlignmentSolution

    zero = AlignmentSolution(shifts=(Shift(0, 0), Shift(0, 0)), energy=0.0, iterations=1)
    out = apply_alignment(fs, groups, zero)
    for fid in fs.ids():
        assert out.get(fid).polygon.vertices == fs.get(fid).polygon.vertices
        assert out.get(fid).provenance == "aligned"

    moved = apply_alignment(
        fs, groups, AlignmentSolution(shifts=(Shift(5, 0), Shift(0, -3)), energy=0.0, iterations=1)
    )
    g0, g1 = groups
    for fid in g0.member_ids:
        want = fs.get(fid).polygon.translate(5, 0)
        assert moved.get(fid).polygon.vertices == want.vertices
    for fid in g1.member_ids:
        want = fs.get(fid).polygon.translate(0, -3)
        assert moved.get(fid).polygon.vertices == want.vertices


def test_apply_alignment_unknown_member():
    fs, groups, _, _ = _two_group_setup()
    from maploop.alignment import AlignmentSolution

    bad = (FootprintGroup(member_ids=(99,), centroid=(0.0, 0.0)),)
    with pytest.raises(ContractError):
        apply_alignment(
            fs, bad, AlignmentSolution(shifts=(Shift(0, 0),), energy=0.0, iterations=1)
        )


def test_problem_validation():
    groups = groups_of((0.0, 0.0), (50.0, 0.0))
    with pytest.raises(ContractError):
        AlignmentProblem(
            groups=groups,
            neighbors=((1,), ()),  # asymmetric
            candidates=tuple(candidate_grid(1)),
            beta=1.0,
            z_norm=1.0,
        )
    with pytest.raises(ContractError):
        AlignmentProblem(
            groups=groups,
            neighbors=((), ()),
            candidates=(Shift(1, 0),),  # missing (0, 0)
            beta=1.0,
            z_norm=1.0,
        )


def test_solution_json_shape():
    fs, groups, _, _ = _two_group_setup()
    from maploop.alignment import AlignmentSolution

    sol = AlignmentSolution(shifts=(Shift(1, 2), Shift(-1, 0)), energy=3.5, iterations=2)
    obj = solution_to_json(groups, sol)
    assert obj["energy"] == 3.5 and obj["iterations"] == 2
    assert obj["groups"][0]["shift"] == [1, 2]
    assert obj["groups"][0]["members"] == list(groups[0].member_ids)


def test_core_from_mask_trims_to_ones():
    arr = np.zeros((10, 10), dtype=np.uint8)
    arr[3:6, 4:8] = 1
    core = core_from_mask(mask_of(arr))
    assert (core.x0, core.y0) == (4, 3)
    assert core.bits.shape == (3, 4)
    assert core.window_size(2) == (3 + 4) * (4 + 4)
