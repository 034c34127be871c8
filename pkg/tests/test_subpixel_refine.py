import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dicperf.correlation import DegenerateSubsetError, subset_stats
from dicperf.image_core import GrayImage, SubsetSpec, synth_speckle, synth_warped_pair
from dicperf.subpixel_refine import (
    DriftError, InterpCoeffs, OutOfDomainError, RefineConfig, TargetTables, WarpParams,
    _solve_6x6, compose_inverse, icgn_precompute, icgn_step, image_gradients, interp_bilinear,
    local_coords, nr_criterion, refine_icgn, refine_nr, warp_matrix, znssd,
)

CELL = GrayImage(np.array([[10.0, 20.0], [30.0, 40.0]]))


def test_interp_nodes(rng):
    img = GrayImage(rng.random((6, 7)) * 255)
    for y in range(6):
        for x in range(7):
            assert interp_bilinear(img, x, y) == img.data[y, x]


def test_interp_cell_center():
    assert interp_bilinear(CELL, 0.5, 0.5) == 25.0


def test_interp_matches_hand_solved_coefficients():
    # G(x, y) = a00 + a10 x + a01 y + a11 x y through the four corners
    A = np.array([[1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]], float)
    a = np.linalg.solve(A, [10.0, 20.0, 30.0, 40.0])
    x, y = 0.25, 0.75
    want = a[0] + a[1] * x + a[2] * y + a[3] * x * y
    assert interp_bilinear(CELL, x, y) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(27.5)


@settings(max_examples=200, deadline=None)
@given(corners=st.lists(st.floats(0, 255), min_size=4, max_size=4),
       x=st.floats(0, 1), y=st.floats(0, 1))
def test_interp_bounded(corners, x, y):
    img = GrayImage(np.array(corners).reshape(2, 2))
    g = interp_bilinear(img, x, y)
    assert min(corners) - 1e-9 <= g <= max(corners) + 1e-9


def test_interp_out_of_domain():
    with pytest.raises(OutOfDomainError):
        interp_bilinear(CELL, 1.01, 0.0)
    with pytest.raises(OutOfDomainError):
        interp_bilinear(CELL, 0.0, -0.1)


def test_warp_params_roundtrip():
    p = WarpParams(1.0, 0.1, 0.2, -2.0, 0.3, 0.4)
    assert WarpParams.from_vector(p.as_vector()) == p
    np.testing.assert_array_equal(p.matrix(), [[1.1, 0.2, 1.0], [0.3, 1.4, -2.0], [0, 0, 1]])


def test_compose_inverse_identity_is_exact(rng):
    for _ in range(50):
        p = rng.normal(0, 0.3, 6) * np.array([5, 0.01, 0.01, 5, 0.01, 0.01])
        assert np.array_equal(compose_inverse(p, np.zeros(6)), p)


def test_compose_inverse_matches_matrix_algebra(rng):
    p = np.array([1.2, 0.01, -0.02, -0.7, 0.005, 0.03])
    dp = np.array([0.1, 0.002, 0.001, -0.05, -0.003, 0.004])
    want = warp_matrix(p) @ np.linalg.inv(warp_matrix(dp))
    np.testing.assert_allclose(warp_matrix(compose_inverse(p, dp)), want, atol=1e-14)


def test_ramp_gradient():
    yy, xx = np.mgrid[0:12, 0:15].astype(float)
    gx, gy = image_gradients(xx)
    np.testing.assert_array_equal(gx[1:-1, 1:-1], 1.0)
    np.testing.assert_array_equal(gy[1:-1, 1:-1], 0.0)


def _fd_znssd_gradient(stats, tables, spec, p, h=1e-7):
    f_hat = stats.centered.ravel() / stats.norm
    grad = np.empty(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        grad[k] = (znssd(f_hat, tables, spec, p + e) - znssd(f_hat, tables, spec, p - e)) / (2 * h)
    return grad


def random_subset_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    for k in range(n):
        ref = synth_speckle(90, 90, seed=500 + k)
        shift = rng.uniform(-2.5, 2.5, 2)
        tgt, _ = synth_warped_pair(ref, tuple(shift))
        cx, cy = (int(c) for c in rng.integers(35, 56, 2))
        yield ref, tgt, SubsetSpec(cx, cy, 15), (int(round(shift[0])), int(round(shift[1])))


def test_nr_gradient_matches_finite_differences():
    for ref, tgt, spec, (dx, dy) in random_subset_pairs(20):
        stats = subset_stats(ref, spec)
        tables = TargetTables.build(tgt)
        p = np.array([dx, 0, 0, dy, 0, 0], float)
        _, grad, hess = nr_criterion(stats, tables, spec, p)
        fd = _fd_znssd_gradient(stats, tables, spec, p)
        assert np.linalg.norm(grad - fd) <= 1e-4 * np.linalg.norm(fd)
        np.testing.assert_allclose(hess, hess.T, atol=1e-12 * np.abs(hess).max())


def test_icgn_steepest_descent_matches_finite_differences():
    for ref, _, spec, _ in random_subset_pairs(20, seed=1):
        state = icgn_precompute(ref, spec)
        coeffs = InterpCoeffs.from_array(ref.data)
        dx, dy = local_coords(spec.half_width)
        h = 1e-6
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            cols = []
            for sgn in (1, -1):
                u, ux, uy, v, vx, vy = sgn * e
                cols.append(coeffs.sample(spec.center_x + dx + u + ux * dx + uy * dy,
                                          spec.center_y + dy + v + vx * dx + vy * dy))
            fd = (cols[0] - cols[1]) / (2 * h)
            sd = state.steepest_descent[:, k]
            assert np.linalg.norm(sd - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)


def test_icgn_hessian_matches_double_loop():
    ref, _, spec, _ = next(random_subset_pairs(1, seed=2))
    state = icgn_precompute(ref, spec)
    sd = state.steepest_descent
    h = np.zeros((6, 6))
    for row in sd:
        for i in range(6):
            for j in range(6):
                h[i, j] += row[i] * row[j]
    scale = np.abs(h).max()
    np.testing.assert_allclose(state.hessian, h, rtol=0, atol=1e-12 * scale)
    np.testing.assert_allclose(state.hessian, state.hessian.T, rtol=0, atol=1e-12 * scale)
    assert np.all(np.linalg.eigvalsh(state.hessian) > 0)


def test_icgn_constant_subset():
    flat = GrayImage(np.full((60, 60), 50.0))
    with pytest.raises(DegenerateSubsetError, match="degenerate texture"):
        icgn_precompute(flat, SubsetSpec(30, 30, 15))


def test_singular_hessian():
    with pytest.raises(DegenerateSubsetError, match="degenerate subset"):
        _solve_6x6(np.zeros((6, 6)), np.ones(6))


def test_identity_pairs(speckle):
    spec = SubsetSpec(60, 60, 15)
    res = refine_nr(subset_stats(speckle, spec), speckle, spec, (0, 0))
    assert res.converged and res.iterations == 1
    assert res.displacement == (0.0, 0.0)
    assert res.correlation == pytest.approx(1.0, abs=1e-12)

    state = icgn_precompute(speckle, spec)
    dp, _ = icgn_step(state, TargetTables.build(speckle), np.zeros(6))
    assert np.linalg.norm(dp) < 0.01
    res = refine_icgn(state, speckle, spec, (0, 0))
    assert res.converged and res.iterations == 1
    assert res.correlation == pytest.approx(1.0, abs=1e-12)


def test_translation_accuracy(shifted_pair):
    ref, tgt, _ = shifted_pair
    spec = SubsetSpec(60, 60, 15)
    nr = refine_nr(subset_stats(ref, spec), tgt, spec, (3, -2))
    ic = refine_icgn(icgn_precompute(ref, spec), tgt, spec, (3, -2))
    for res in (nr, ic):
        assert res.converged
        assert abs(res.warp.u - 3.25) < 0.05 and abs(res.warp.v + 1.5) < 0.05
        assert res.last_update < 0.01


def test_affine_gradient_recovered():
    ref = synth_speckle(120, 120, seed=9)
    tgt, gt = synth_warped_pair(ref, (0.3, 0.01, 0.0, -0.4, 0.0, 0.0))
    spec = SubsetSpec(60, 60, 15)
    u0, v0 = gt.displacement_at(60.0, 60.0)
    for res in (refine_nr(subset_stats(ref, spec), tgt, spec, (0, 0)),
                refine_icgn(icgn_precompute(ref, spec), tgt, spec, (0, 0))):
        assert abs(res.warp.u_x - 0.01) < 5e-3
        assert abs(res.warp.u - u0) < 0.05 and abs(res.warp.v - v0) < 0.05


def test_nr_icgn_agree():
    rng = np.random.default_rng(77)
    for k in range(50):
        ref = synth_speckle(80, 80, seed=900 + k)
        shift = tuple(rng.uniform(-3, 3, 2))
        tgt, _ = synth_warped_pair(ref, shift)
        spec = SubsetSpec(40, 40, 15)
        init = (int(round(shift[0])), int(round(shift[1])))
        nr = refine_nr(subset_stats(ref, spec), tgt, spec, init)
        ic = refine_icgn(icgn_precompute(ref, spec), tgt, spec, init)
        assert abs(nr.warp.u - ic.warp.u) < 0.02 and abs(nr.warp.v - ic.warp.v) < 0.02
        for res in (nr, ic):
            assert abs(res.warp.u - shift[0]) < 0.1 and abs(res.warp.v - shift[1]) < 0.1


def icgn_path(state, tables, init):
    trace = []
    refine_icgn(state, tables, init=init, trace=trace)
    return trace


def nr_path(stats, tables, spec, init):
    trace = []
    refine_nr(stats, tables, spec, init, trace=trace)
    return trace


def test_trace_ends_at_result(shifted_pair):
    ref, tgt, _ = shifted_pair
    spec = SubsetSpec(55, 62, 15)
    tables = TargetTables.build(tgt)
    stats = subset_stats(ref, spec)
    state = icgn_precompute(ref, spec)
    trace = []
    res = refine_nr(stats, tables, spec, (3, -2), trace=trace)
    assert np.array_equal(trace[-1], res.warp.as_vector()) and len(trace) >= 2
    trace = []
    res = refine_icgn(state, tables, spec, (3, -2), trace=trace)
    assert np.array_equal(trace[-1], res.warp.as_vector()) and len(trace) >= 2


def test_icgn_steps_are_descent_directions():
    for ref, tgt, spec, init in random_subset_pairs(10, seed=3):
        stats = subset_stats(ref, spec)
        state = icgn_precompute(ref, spec)
        tables = TargetTables.build(tgt)
        path = icgn_path(state, tables, init)
        for p, p_next in zip(path[:-1], path[1:]):
            step = p_next - p
            g = _fd_znssd_gradient(stats, tables, spec, p, h=1e-5)
            assert step @ -g > 0


def test_znssd_monotone_on_most_subsets():
    monotone = total = 0
    for ref, tgt, spec, init in random_subset_pairs(40, seed=4):
        stats = subset_stats(ref, spec)
        f_hat = stats.centered.ravel() / stats.norm
        tables = TargetTables.build(tgt)
        state = icgn_precompute(ref, spec)
        for path in (nr_path(stats, tables, spec, init), icgn_path(state, tables, init)):
            z = [znssd(f_hat, tables, spec, p) for p in path]
            total += 1
            monotone += all(b <= a + 1e-12 for a, b in zip(z, z[1:]))
    print(f"monotone ZNSSD paths: {monotone}/{total}")
    assert monotone >= 0.95 * total


def test_drift_detected(speckle):
    spec = SubsetSpec(20, 60, 15)
    with pytest.raises(DriftError, match="drifted out of bounds"):
        refine_nr(subset_stats(speckle, spec), speckle, spec, (-4, 0))
    with pytest.raises(DriftError):
        refine_icgn(icgn_precompute(speckle, spec), speckle, spec, (-4, 0))


def test_spec_mismatch(speckle):
    state = icgn_precompute(speckle, SubsetSpec(60, 60, 15))
    with pytest.raises(ValueError):
        refine_icgn(state, speckle, SubsetSpec(61, 60, 15))


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(tolerance=0)
    with pytest.raises(ValueError):
        RefineConfig(max_iter=0)
