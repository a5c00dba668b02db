import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from koopman_rkhs import kernel
from koopman_rkhs.kernel import (COVARIANCE, GAUSSIAN, MARKOV, GramOperator, KernelError, KernelSpec,
                                 apply_gram, build_gram, eval_covariance, eval_gaussian,
                                 markov_normalize, markov_row_sums, tune_bandwidth)

points_st = arrays(float, st.tuples(st.integers(2, 24), st.integers(1, 4)),
                   elements=st.floats(-3, 3, allow_nan=False))


def test_gaussian_values():
    assert eval_gaussian([1.0, 2.0], [1.0, 2.0], 0.3) == 1.0
    assert eval_gaussian([0.0, 0.0], [1.0, 1.0], 2.0) == pytest.approx(math.exp(-1.0), rel=1e-15)
    assert eval_gaussian([0.0], [0.5], 1.0) == pytest.approx(0.77880078307140, rel=1e-12)


def test_gaussian_decreases_along_ray():
    vals = [eval_gaussian([0.0, 0.0], [t, 2 * t], 0.5) for t in np.linspace(0, 5, 50)]
    assert all(a > b for a, b in zip(vals, vals[1:]) if a > 0)
    assert vals[-1] < 1e-50


@pytest.mark.parametrize("y1, y2, expected", [((1, 2), (1, 2), 5.0), ((1, 0), (0, 3), 0.0),
                                              ((1, 0), (-1, 0), -1.0)])
def test_covariance_values(y1, y2, expected):
    assert eval_covariance(y1, y2) == expected


@given(arrays(float, 3, elements=st.floats(-10, 10)), arrays(float, 3, elements=st.floats(-10, 10)))
def test_covariance_polarization(y1, y2):
    d_minus = np.sum((y1 + y2) ** 2)
    d_plus = np.sum((y1 - y2) ** 2)
    assert eval_covariance(y1, y2) == pytest.approx((d_minus - d_plus) / 4, abs=1e-9)


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_gaussian([1.0], [1.0, 2.0], 1.0)
    with pytest.raises(ValueError):
        eval_covariance([1.0], [1.0, 2.0])


def test_bad_spec():
    with pytest.raises(ValueError):
        KernelSpec("laplace", 1.0)
    with pytest.raises(ValueError):
        KernelSpec(GAUSSIAN, -1.0)


def brute_force_slope_argmax(d2_pairs, n, grid):
    best, arg = -np.inf, None
    for i in range(1, len(grid) - 1):
        def log_s(eps):
            total = n + 2 * sum(math.exp(-d / eps) for d in d2_pairs)
            return math.log(total / n**2)
        slope = (log_s(grid[i + 1]) - log_s(grid[i - 1])) / (math.log(grid[i + 1]) - math.log(grid[i - 1]))
        if slope > best:
            best, arg = slope, grid[i]
    return arg


def test_tune_two_points():
    grid = kernel.EPSILON_GRID
    expected = brute_force_slope_argmax([1.0], 2, grid)
    assert tune_bandwidth([[0.0], [1.0]]) == expected


def test_tune_small_cloud(rng):
    x = rng.standard_normal((12, 2))
    d2 = [float(np.sum((x[i] - x[j]) ** 2)) for i in range(12) for j in range(i + 1, 12)]
    assert tune_bandwidth(x) == brute_force_slope_argmax(d2, 12, kernel.EPSILON_GRID)


def test_tune_scaling(rng):
    x = rng.standard_normal((40, 3))
    base = tune_bandwidth(x)
    assert tune_bandwidth(2.0 * x) == pytest.approx(4.0 * base, rel=1e-12)
    ratio = tune_bandwidth(3.0 * x) / (9.0 * base)
    assert 2 ** -0.25 - 1e-12 <= ratio <= 2 ** 0.25 + 1e-12


def test_tune_degenerate():
    with pytest.raises(KernelError):
        tune_bandwidth(np.ones((5, 2)))
    with pytest.raises(KernelError):
        tune_bandwidth([[1.0]])


@given(points_st)
def test_gram_symmetric(x):
    for family in (GAUSSIAN, COVARIANCE, MARKOV):
        spec = KernelSpec(family, 1.0)
        try:
            g = build_gram(x, spec, storage="dense")
        except KernelError:
            continue
        m = g.matrix()
        np.testing.assert_allclose(m, m.T, rtol=1e-12, atol=1e-300)


def test_gaussian_gram_strictly_pd(rng):
    x = rng.uniform(-1, 1, (64, 2))
    g = build_gram(x, KernelSpec(GAUSSIAN, 0.5), storage="dense")
    assert np.linalg.eigvalsh(g.matrix()).min() > 0


def test_covariance_rank(rng):
    x = rng.standard_normal((50, 4))
    g = build_gram(x, KernelSpec(COVARIANCE), storage="dense")
    vals = np.sort(np.linalg.eigvalsh(g.matrix()))[::-1]
    assert vals[4] < 1e-10 * vals[0]


def test_apply_zero_and_constant_kernel(rng):
    x = np.zeros((6, 2))
    g = build_gram(x, KernelSpec(GAUSSIAN, 1.0), storage="dense")
    np.testing.assert_array_equal(g.matrix(), np.ones((6, 6)))
    f = rng.standard_normal(6)
    np.testing.assert_allclose(apply_gram(g, f), np.full(6, f.mean()), rtol=1e-14)
    np.testing.assert_array_equal(apply_gram(g, np.zeros(6)), np.zeros(6))


def test_markov_of_constant_kernel_is_fixed_point():
    x = np.zeros((5, 1))
    g = markov_normalize(GramOperator(x, KernelSpec(GAUSSIAN, 1.0), storage="dense"))
    np.testing.assert_allclose(g.normalization.rho, 1.0, rtol=1e-15)
    np.testing.assert_allclose(g.normalization.sigma, 1.0, rtol=1e-15)
    np.testing.assert_allclose(g.matrix(), 1.0, rtol=1e-15)


def test_apply_matches_explicit_product(rng):
    x = rng.standard_normal((16, 3))
    eps = 2.0
    g = build_gram(x, KernelSpec(GAUSSIAN, eps), storage="dense")
    k = np.array([[math.exp(-sum((a - b) ** 2) / eps) for b in x] for a in x])
    f = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    np.testing.assert_allclose(g.apply(f), k @ f / 16, rtol=1e-13)


def test_apply_dimension_mismatch(rng):
    g = build_gram(rng.standard_normal((8, 2)), KernelSpec(GAUSSIAN, 1.0))
    with pytest.raises(ValueError):
        g.apply(np.ones(7))


@pytest.mark.parametrize("family", [GAUSSIAN, MARKOV, COVARIANCE])
def test_dense_and_matrix_free_agree(rng, family):
    x = rng.standard_normal((120, 3))
    spec = KernelSpec(family, 1.5)
    dense = build_gram(x, spec, storage="dense")
    free = build_gram(x, spec, storage="matrix-free")
    f = rng.standard_normal((120, 3))
    a, b = dense.apply(f), free.apply(f)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())
    np.testing.assert_array_equal(dense.matrix(), free.matrix())


def test_markov_two_point_closed_form():
    d2, eps = 0.7, 0.5
    a = math.exp(-d2 / eps)
    x = np.array([[0.0], [math.sqrt(d2)]])
    g = build_gram(x, KernelSpec(MARKOV, eps), storage="dense")
    w = g.normalization
    np.testing.assert_allclose(w.rho, [(1 + a) / 2] * 2, rtol=1e-14)
    np.testing.assert_allclose(w.sigma, [1.0, 1.0], rtol=1e-14)
    np.testing.assert_allclose(w.sigma_hat, [math.sqrt((1 + a) / 2)] * 2, rtol=1e-14)
    m = g.matrix()
    assert m[0, 1] == pytest.approx(2 * a / (1 + a), rel=1e-14)
    assert m[0, 0] == pytest.approx(2 / (1 + a), rel=1e-14)


@given(points_st, st.sampled_from([0.1, 1.0, 10.0]))
def test_markov_top_eigenpair(x, eps):
    n = x.shape[0]
    try:
        g = build_gram(x, KernelSpec(MARKOV, eps), storage="dense")
    except KernelError:
        return
    vals, vecs = np.linalg.eigh(g.matrix() / n)
    assert vals[-1] == pytest.approx(1.0, abs=1e-8)
    w = g.normalization
    ref = np.sqrt(w.sigma / w.rho)
    v = vecs[:, -1] * np.sign(vecs[:, -1] @ ref)
    # the top eigenvalue may be repeated for disconnected clusters
    if n < 2 or vals[-2] < 1 - 1e-6:
        np.testing.assert_allclose(v, ref / np.linalg.norm(ref), atol=1e-7)


@given(arrays(float, st.tuples(st.integers(2, 256), st.just(2)), elements=st.floats(-2, 2)))
def test_markov_row_sums(x):
    g = build_gram(x, KernelSpec(MARKOV, 0.3), storage="dense")
    np.testing.assert_allclose(markov_row_sums(g), 1.0, atol=1e-12)


def test_markov_errors(rng):
    x = rng.standard_normal((5, 2))
    with pytest.raises(KernelError):
        markov_normalize(build_gram(x, KernelSpec(COVARIANCE)))
    with pytest.raises(KernelError):
        markov_normalize(build_gram(x, KernelSpec(MARKOV, 1.0)))


def test_markov_normalize_leaves_input_untouched(rng):
    x = rng.standard_normal((10, 2))
    raw = GramOperator(x, KernelSpec(GAUSSIAN, 1.0), storage="dense")
    before = raw.matrix().copy()
    markov_normalize(raw)
    np.testing.assert_array_equal(raw.matrix(), before)


def test_kernel_rows_reproduce_stored_rows(rng):
    x = rng.standard_normal((30, 2))
    g = build_gram(x, KernelSpec(MARKOV, 0.8), storage="dense")
    np.testing.assert_array_equal(g.kernel_rows(x[[3, 17]]), g.matrix()[[3, 17]])


def test_autotune_when_unset(rng):
    x = rng.standard_normal((50, 2))
    g = build_gram(x, KernelSpec(MARKOV))
    assert g.spec.epsilon == tune_bandwidth(x)


def test_fingerprint_sensitivity(rng):
    x = rng.standard_normal((10, 2))
    a = build_gram(x, KernelSpec(MARKOV, 1.0)).fingerprint()
    assert a == build_gram(x.copy(), KernelSpec(MARKOV, 1.0)).fingerprint()
    assert a != build_gram(x, KernelSpec(MARKOV, 1.1)).fingerprint()
    assert a != build_gram(x, KernelSpec(GAUSSIAN, 1.0)).fingerprint()
    y = x.copy()
    y[0, 0] += 1e-12
    assert a != build_gram(y, KernelSpec(MARKOV, 1.0)).fingerprint()
