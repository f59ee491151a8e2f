import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmorse.acceptance import random_model
from dpmorse.fit import responsibilities
from dpmorse.landscape import (Landscape, assign_basin, assign_basins, flow_ascend, flow_ascend_batch,
                               grad_log_density, hessian_log_density, log_density, mixture_weights_at,
                               refine_critical)
from dpmorse.model import MixtureModel, single_component


def symmetric(sd=0.2):
    return MixtureModel([0.5, 0.5], [[-0.5, 0.0], [0.5, 0.0]], [np.eye(2) * sd ** 2] * 2)


def test_standard_normal_log_density():
    L = Landscape(single_component([0.0, 0.0], np.eye(2)))
    assert log_density(L, [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-15)


def test_translation_equivariance():
    rng = np.random.default_rng(0)
    m = random_model(rng, K=3, D=2)
    c = np.array([0.3, -0.7])
    shifted = Landscape(MixtureModel(m.weights, m.means + c, m.covariances))
    x = rng.normal(size=(10, 2))
    np.testing.assert_allclose(shifted.log_density(x), Landscape(m).log_density(x - c), atol=1e-12)


def test_midpoint_matches_two_term_sum():
    L = Landscape(symmetric())
    one = math.exp(-0.5 * 0.25 / 0.04) / (2 * math.pi * 0.04)
    assert log_density(L, [0.0, 0.0]) == pytest.approx(math.log(one), abs=1e-12)


def test_gradient_zero_at_single_mean_and_on_symmetry_axis():
    L = Landscape(single_component([0.2, 0.1], np.eye(2) * 0.3))
    assert np.all(grad_log_density(L, [0.2, 0.1]) == 0.0)
    g = grad_log_density(Landscape(symmetric()), [0.0, 0.37])
    assert abs(g[0]) < 1e-15


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    L = Landscape(m)
    x = rng.multivariate_normal(m.means[0], m.covariances[0])
    h, eye = 1e-5, np.eye(m.D)
    fd_g = np.array([(L.log_density(x + h * e) - L.log_density(x - h * e)) / (2 * h) for e in eye])
    fd_h = np.array([(L.grad(x + h * e) - L.grad(x - h * e)) / (2 * h) for e in eye])
    g, H = grad_log_density(L, x), hessian_log_density(L, x)
    assert np.abs(g - fd_g).max() <= 1e-6 * max(1.0, np.abs(fd_g).max())
    assert np.abs(H - fd_h).max() <= 1e-5 * max(1.0, np.abs(fd_h).max())
    assert np.array_equal(H, H.T)


def test_single_gaussian_hessian_is_minus_precision():
    L = Landscape(single_component([0.0, 0.0], np.eye(2)))
    for x in ([0.0, 0.0], [1.5, -2.0]):
        np.testing.assert_allclose(hessian_log_density(L, x), -np.eye(2), atol=1e-12)


def test_mixture_weights():
    m = symmetric()
    L = Landscape(m)
    np.testing.assert_allclose(mixture_weights_at(L, [0.0, 0.4]), [0.5, 0.5])
    assert mixture_weights_at(Landscape(single_component([0.0], [[1.0]])), [3.0]).tolist() == [1.0]
    x = np.array([0.1, -0.2])
    np.testing.assert_allclose(mixture_weights_at(L, x), responsibilities(m, x), atol=1e-14)


def test_flow_from_a_mode_stops_at_once():
    L = Landscape(single_component([0.2, 0.1], np.eye(2) * 0.3))
    end, ok, steps = flow_ascend(L, [0.2, 0.1])
    assert ok and steps == 0 and end.tolist() == [0.2, 0.1]


def _bisect(f, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(lo) > 0) == (f(mid) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("scheme", ["implicit", "euler"])
def test_one_dimensional_flow_reaches_positive_mode(scheme):
    m = MixtureModel([0.5, 0.5], [[-2.0], [2.0]], [[[1.0]], [[1.0]]])
    L = Landscape(m)
    end, ok, _ = flow_ascend(L, [1.9], scheme=scheme)
    root = _bisect(lambda t: L.grad(np.array([t]))[0], 1.0, 3.0)
    assert ok and end[0] == pytest.approx(root, abs=1e-7)


def test_flow_is_monotone_from_random_starts():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = random_model(rng, D=2)
        L = Landscape(m)
        *_, lp = flow_ascend(L, rng.uniform(-1.5, 1.5, size=2), record_path=True)
        assert np.all(np.diff(lp) >= -1e-10 * (1 + np.abs(lp[:-1])))


def test_metric_flow_reaches_the_same_mode():
    rng = np.random.default_rng(2)
    m = random_model(rng, K=3, D=2)
    L = Landscape(m)
    R = np.array([[2.0, 0.3], [0.3, 0.5]])
    for x0 in m.means:
        a, ok_a, _ = flow_ascend(L, x0)
        b, ok_b, _ = flow_ascend(L, x0, metric=R, step=0.02)
        assert ok_a and ok_b and np.linalg.norm(a - b) < 1e-5


def test_flow_stays_bounded():
    rng = np.random.default_rng(9)
    m = random_model(rng, K=4, D=2)
    res = flow_ascend_batch(Landscape(m), rng.uniform(-3, 3, size=(50, 2)))
    assert res.converged.all()
    assert np.all(res.max_norms <= np.linalg.norm(m.means, axis=1).max() + 6.0)


def test_refine_critical_cases():
    L = Landscape(symmetric())
    mode = flow_ascend(L, [0.4, 0.0])[0]
    cp = refine_critical(L, mode)
    assert cp.index == 0 and np.linalg.norm(cp.location - mode) < 1e-8
    cp = refine_critical(L, [1e-3, 1e-4])
    assert cp.index == 1 and np.linalg.norm(cp.location) < 1e-9 and cp.converged


def test_refine_never_reports_a_non_critical_point_as_converged():
    L = Landscape(symmetric())
    cp = refine_critical(L, [40.0, 25.0])
    assert not cp.converged or cp.gradient_norm <= 1e-8


def test_basin_assignment():
    L = Landscape(symmetric())
    centers = L.model.means
    assert assign_basin(L, centers[1], centers).index == 1
    tie = assign_basin(L, [0.0, 0.0], centers)
    assert tie.index == 0 and tie.boundary
    rows = np.array([[-0.6, 0.1], [0.55, -0.05]])
    assert [b.index for b in assign_basins(L, rows, centers)] == [0, 1]


def test_capture_stops_early_at_the_same_mode():
    rng = np.random.default_rng(1)
    m = random_model(rng, K=3, D=2)
    L = Landscape(m)
    modes = []
    for e in flow_ascend_batch(L, m.means).endpoints:
        if all(np.linalg.norm(e - q) > 1e-6 for q in modes):
            modes.append(e)
    modes = np.array(modes)
    x0 = rng.uniform(-1, 1, size=(40, 2))
    full = flow_ascend_batch(L, x0)
    fast = flow_ascend_batch(L, x0, capture=modes)
    near = lambda e: np.argmin(np.linalg.norm(modes[None] - e[:, None], axis=2), axis=1)  # noqa: E731
    assert np.array_equal(near(full.endpoints), near(fast.endpoints))
    assert fast.iterations.sum() <= full.iterations.sum()
