import json
import math

import numpy as np
import pytest

from dfm.drift import (
    ConstantDrift,
    ExactDrift,
    PerturbedDrift,
    RegressedDrift,
    ZeroDrift,
    drift_second_moment,
    epsilon2_of,
    exact_drift,
    features,
    fit_drift,
    mc_drift,
)
from dfm.errors import ConfigError, DomainError
from dfm.grid import TimeGrid
from dfm.interpolant import InterpolantLaw, forward_pinned_drift, sample_at
from dfm.model import Coupling, GaussianMixture


def test_standard_pair_drift_is_minus_x(std2):
    x = np.random.default_rng(0).normal(size=(20, 2)) * 3
    for t in (0.0, 0.3, 0.9):
        np.testing.assert_allclose(exact_drift(std2, t, x), -x, atol=1e-12)


def test_shifted_pair_drift(shifted):
    m = np.array([1.0, -0.5])
    x = np.random.default_rng(1).normal(size=(10, 2))
    for t in (0.1, 0.5, 0.8):
        np.testing.assert_allclose(exact_drift(shifted, t, x), (1 + t) * m - x, atol=1e-12)


def test_point_target_drift():
    # nu = delta_b: drift is the bridge pull (b - x) / (1 - t)
    c = Coupling.product(GaussianMixture.gaussian([0.0], 1.0), GaussianMixture.point_mass([2.0]))
    x = np.array([[0.5], [-1.0]])
    np.testing.assert_allclose(exact_drift(c, 0.4, x), (2.0 - x) / 0.6, rtol=1e-6)


def test_exact_drift_is_average_of_pinned():
    # the pinned SDE is dX = 2 b(x0, t, X) dt + sqrt(2) dB, so averaging 2 b over
    # X0 | X_t = x (quadrature on a 1-d product) gives the mimicking drift
    mu = GaussianMixture.gaussian([0.3], 0.7)
    nu = GaussianMixture([0.4, 0.6], [[-1.0], [1.5]], [[[0.3]], [[0.5]]])
    c = Coupling.product(mu, nu)
    law = InterpolantLaw(c)
    t, x = 0.4, 0.2
    from dfm.heat_kernel import log_p
    from dfm.interpolant import log_psi

    z = np.linspace(-8, 8, 4001)[:, None]
    # p(x0 | X_t = x) ∝ mu(x0) p_t(x | x0) psi(x0, t, x)
    logw = mu.log_density(z) + log_p(t, z, np.array([x])) + np.array(
        [log_psi(law, zi, t, np.array([x])) for zi in z]
    )
    w = np.exp(logw - logw.max())
    w /= w.sum()
    pinned = np.array([forward_pinned_drift(law, zi, t, np.array([x]))[0] for zi in z])
    assert 2 * (w @ pinned) == pytest.approx(exact_drift(c, t, np.array([x]))[0], abs=1e-8)


def test_guard_band(std1):
    with pytest.raises(DomainError):
        exact_drift(std1, 1.0, np.zeros(1))
    with pytest.raises(DomainError):
        exact_drift(std1, -0.1, np.zeros(1))


def test_mc_drift_matches_exact(mixture):
    gen = np.random.default_rng(2)
    for seed in range(5):
        t = gen.uniform(0.1, 0.9)
        x = sample_at(InterpolantLaw(mixture), t, 1, seed)[0]
        est = mc_drift(mixture, t, x, 50_000, seed)
        assert est.reliable
        ref = exact_drift(mixture, t, x)
        assert np.all(np.abs(est.value - ref) <= 4 * est.stderr)


def test_mc_drift_flags_low_ess():
    c = Coupling.product(GaussianMixture.gaussian([0.0], 1.0), GaussianMixture.gaussian([0.0], 1e-4))
    est = mc_drift(c, 0.999, np.array([6.0]), 1000, 0)
    assert not est.reliable and est.ess < 50


def test_mc_drift_argument_checks(std1):
    with pytest.raises(ValueError):
        mc_drift(std1, 0.5, np.zeros(1), 999, 0)
    with pytest.raises(DomainError):
        mc_drift(std1, 1.0, np.zeros(1), 1000, 0)


def test_simple_models():
    x = np.ones((4, 2))
    np.testing.assert_array_equal(ConstantDrift([1.0, 2.0]).evaluate(0.1, x), [[1.0, 2.0]] * 4)
    np.testing.assert_array_equal(ZeroDrift(2)(0.5, x[0]), [0.0, 0.0])
    p = PerturbedDrift(ZeroDrift(2), offset=[0.1, 0.0])
    np.testing.assert_array_equal(p(0.3, x[0]), [0.1, 0.0])
    q = PerturbedDrift(ZeroDrift(2), noise_scale=0.5, rng=3)
    np.testing.assert_array_equal(q(0.3, x), PerturbedDrift(ZeroDrift(2), noise_scale=0.5, rng=3)(0.3, x))
    with pytest.raises(ValueError):
        PerturbedDrift(ZeroDrift(2))


def test_feature_maps():
    x = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(features("affine", x), [[1, 2, 3]])
    np.testing.assert_array_equal(features("quadratic", x), [[1, 2, 3, 4, 9]])
    with pytest.raises(ConfigError):
        features("cubic", x)


def test_fit_recovers_linear_drift(std1):
    grid = TimeGrid(10)
    model = fit_drift(std1, grid, "affine", 1e-6, 50_000, 1)
    for k in range(10):
        slope, intercept = model.slope_intercept(k)
        t = grid.t(k)
        # residual sd of the target given X_t is sqrt(1 - t^2) / (1 - t)
        se = math.sqrt((1 - t * t) / 50_000) / (1 - t)
        assert slope[0, 0] == pytest.approx(-1.0, abs=5 * se)
        assert intercept[0] == pytest.approx(0.0, abs=5 * se)
    with pytest.raises(DomainError):
        model(0.05, np.zeros(1))
    with pytest.raises(DomainError):
        model(1.0, np.zeros(1))


def test_ridge_shrinks_towards_zero(shifted):
    grid = TimeGrid(2)
    small = fit_drift(shifted, grid, "affine", 1e-8, 5000, 4)
    large = fit_drift(shifted, grid, "affine", 1e6, 5000, 4)
    assert np.abs(large.coeffs).max() < 0.1 * np.abs(small.coeffs).max()
    with pytest.raises(ValueError):
        fit_drift(shifted, grid, "affine", 0.0, 100, 0)


def test_regressed_json_roundtrip(std1):
    grid = TimeGrid(4)
    model = fit_drift(std1, grid, "quadratic", 1e-3, 2000, 5)
    again = RegressedDrift.from_json(json.loads(json.dumps(model.to_json())))
    x = np.linspace(-2, 2, 7)[:, None]
    np.testing.assert_array_equal(again(0.25, x), model(0.25, x))
    assert again.grid == grid


def test_epsilon2_of_exact_is_zero(std1):
    rep = epsilon2_of(ExactDrift(std1), std1, TimeGrid(10), 1000, 0)
    assert rep.value == 0.0


def test_epsilon2_of_offset(std2):
    e = np.array([0.3, 0.0])
    rep = epsilon2_of(PerturbedDrift(ExactDrift(std2), offset=e), std2, TimeGrid(10), 100, 0)
    assert rep.value == pytest.approx(0.09, rel=1e-12)
    early = epsilon2_of(PerturbedDrift(ExactDrift(std2), offset=e), std2, TimeGrid(10, 6), 100, 0)
    assert early.value == pytest.approx(0.6 * 0.09, rel=1e-12)


def test_drift_second_moment(std2):
    # exact drift -x with X_t ~ N(0, ((1-t)^2 + t^2 + 2t(1-t)) I) = N(0, I)
    rep = drift_second_moment(std2, 0.5, 100_000, 0)
    assert rep.within(2.0, n_se=4)
    assert math.isfinite(rep.stderr)


def _single_gaussian_drift(m0, s0, m1, s1, t, x):
    """Gaussian-conditioning oracle for independent single Gaussians, written out directly."""
    d = len(m0)
    mean_t = (1 - t) * m0 + t * m1
    var_t = (1 - t) ** 2 * s0 + t**2 * s1 + 2 * t * (1 - t) * np.eye(d)
    cross = t * s1
    cond = m1 + cross @ np.linalg.solve(var_t, x - mean_t)
    return (cond - x) / (1 - t)


def test_single_gaussian_symbolic():
    m0, m1 = np.array([0.5, -1.0]), np.array([2.0, 0.3])
    s0 = np.array([[1.2, 0.3], [0.3, 0.7]])
    s1 = np.array([[0.4, -0.1], [-0.1, 0.9]])
    c = Coupling.product(GaussianMixture.gaussian(m0, s0), GaussianMixture.gaussian(m1, s1))
    gen = np.random.default_rng(5)
    for _ in range(10):
        t, x = gen.uniform(0, 0.99), gen.normal(size=2) * 2
        np.testing.assert_allclose(exact_drift(c, t, x), _single_gaussian_drift(m0, s0, m1, s1, t, x), atol=1e-10)


def test_mc_drift_examples(std1):
    est = mc_drift(std1, 0.5, np.array([0.0]), 20_000, 1)
    assert abs(est.value[0]) <= 3 * est.stderr[0]
    est = mc_drift(std1, 0.5, np.array([1.0]), 20_000, 2)
    assert abs(est.value[0] + 1.0) <= 3 * est.stderr[0]
    a = mc_drift(std1, 0.5, np.array([1.0]), 20_000, 3)
    b = mc_drift(std1, 0.5, np.array([1.0]), 40_000, 3)
    assert a.stderr[0] / b.stderr[0] == pytest.approx(math.sqrt(2), rel=0.1)


def test_mc_drift_probe_coverage():
    from dfm.scenarios import two_component_target

    hits, total = 0, 0
    gen = np.random.default_rng(9)
    for d, target in ((2, two_component_target()), (1, GaussianMixture([0.3, 0.7], [[-1.0], [1.5]], [[[0.3]], [[0.6]]]))):
        c = Coupling.product(GaussianMixture.gaussian(np.zeros(d), 1.0), target)
        for i in range(50):
            t = gen.uniform(0.05, 0.95)
            x = sample_at(InterpolantLaw(c), t, 1, 1000 * d + i)[0]
            est = mc_drift(c, t, x, 20_000, 5000 * d + i)
            ok = np.all(np.abs(est.value - exact_drift(c, t, x)) <= 3 * est.stderr)
            hits += bool(ok)
            total += 1
    assert hits >= 0.95 * total


def test_fit_shifted_target(shifted):
    grid = TimeGrid(5)
    model = fit_drift(shifted, grid, "affine", 1e-6, 50_000, 7)
    m = np.array([1.0, -0.5])
    for k in range(5):
        slope, intercept = model.slope_intercept(k)
        np.testing.assert_allclose(slope, -np.eye(2), atol=0.05)
        np.testing.assert_allclose(intercept, (1 + grid.t(k)) * m, atol=0.05)


def test_epsilon2_tracks_offset(mixture):
    grid = TimeGrid(10)
    base = epsilon2_of(ExactDrift(mixture), mixture, grid, 5000, 1)
    e = np.array([0.0, 0.3])
    pert = epsilon2_of(PerturbedDrift(ExactDrift(mixture), offset=e), mixture, grid, 5000, 1)
    assert pert.value - base.value == pytest.approx(0.09, rel=0.1)


def test_drift_second_moment_bound(mixture):
    def m2(g):
        return sum(w * (np.trace(c) + m @ m) for w, m, c in zip(g.weights, g.means, g.covs))

    bound = 8 * (m2(mixture.mu) + m2(mixture.nu) + mixture.dim)
    for t in np.arange(0.05, 0.96, 0.1):
        rep = drift_second_moment(mixture, float(t), 20_000, int(t * 100))
        assert rep.value <= bound
