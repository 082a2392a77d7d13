import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfm.drift import ConstantDrift, ExactDrift, PerturbedDrift
from dfm.errors import NumericalError
from dfm.grid import TimeGrid
from dfm.interpolant import InterpolantLaw, marginal_moments
from dfm.metrics import (
    audit_h1_h2,
    gaussian_fit_kl,
    gaussian_kl,
    girsanov_bound,
    knn_kl,
    smoothed_target_audit,
    w2_1d,
)
from dfm.model import GaussianMixture
from dfm.reports import MetricReport
from dfm.scenarios import narrow_pair


def test_gaussian_kl_values():
    z, one = np.zeros(1), np.eye(1)
    assert gaussian_kl(z, one, z, one) == 0.0
    assert gaussian_kl(z, one, np.ones(1), one) == pytest.approx(0.5, abs=1e-14)
    v = 1.0462
    assert gaussian_kl(z, one, z, v * one) == pytest.approx(0.5 * (1 / v - 1 + math.log(v)), rel=1e-12)
    with pytest.raises(NumericalError):
        gaussian_kl(z, one, z, -one)


@settings(max_examples=50, deadline=None)
@given(
    m=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    a=st.floats(0.2, 3),
    b=st.floats(0.2, 3),
    c=st.floats(-0.9, 0.9),
)
def test_gaussian_kl_nonnegative(m, a, b, c):
    cov = np.array([[a, c * math.sqrt(a * b)], [c * math.sqrt(a * b), b]])
    assert gaussian_kl(np.array(m), cov, np.zeros(2), np.eye(2)) >= 0.0
    assert gaussian_kl(np.array(m), cov, np.array(m), cov) == pytest.approx(0.0, abs=1e-12)


def test_gaussian_fit_kl():
    target = GaussianMixture.gaussian([0.0], 1.0)
    x = target.sample(100_000, 1)
    assert gaussian_fit_kl(target, x).value <= 1e-3
    assert gaussian_fit_kl(target, x + 1.0).value == pytest.approx(0.5, abs=0.02)
    with pytest.raises(ValueError):
        gaussian_fit_kl(target, x[:2])


def test_knn_kl_same_law():
    g = GaussianMixture.gaussian(np.zeros(2), 1.0)
    rep = knn_kl(g.sample(10_000, 1), g.sample(10_000, 2))
    assert abs(rep.value) < 0.05


def test_knn_kl_shift():
    rep = knn_kl(GaussianMixture.gaussian([0.0], 1.0).sample(10_000, 3), GaussianMixture.gaussian([1.0], 1.0).sample(10_000, 4))
    assert rep.value == pytest.approx(0.5, abs=0.1)
    rep1 = knn_kl(GaussianMixture.gaussian([0.0], 1.0).sample(10_000, 3), GaussianMixture.gaussian([1.0], 1.0).sample(10_000, 4), k=1)
    assert abs(rep.value - rep1.value) < 3 * math.hypot(rep.stderr, rep1.stderr)


def test_knn_kl_same_law_calibrated():
    g = GaussianMixture.gaussian(np.zeros(2), 1.0)
    hits = 0
    for seed in range(20):
        rep = knn_kl(g.sample(2000, 2 * seed), g.sample(2000, 2 * seed + 1))
        hits += abs(rep.value) <= 3 * rep.stderr
    assert hits >= 19


def test_knn_kl_duplicates_finite():
    x = np.zeros((200, 1))
    x[100:] = 1.0
    assert math.isfinite(knn_kl(x, x + 0.0).value)


def test_w2_1d():
    a = np.random.default_rng(0).normal(size=(1000, 1))
    assert w2_1d(a, a) == 0.0
    assert w2_1d(a, a + 0.7) == pytest.approx(0.7, abs=1e-12)
    g1 = GaussianMixture.gaussian([0.0], 1.0).sample(100_000, 1)
    g2 = GaussianMixture.gaussian([0.0], 4.0).sample(100_000, 2)
    assert w2_1d(g1, g2) == pytest.approx(1.0, abs=0.02)
    assert w2_1d(g1[:1000], g2) == pytest.approx(1.0, abs=0.1)
    with pytest.raises(ValueError):
        w2_1d(np.zeros((10, 2)), np.zeros((10, 2)))


def test_girsanov_same_constant_is_zero(std1):
    c = ConstantDrift([0.3])
    rep = girsanov_bound(c, std1, TimeGrid(4), 4, 100, 0, reference=c)
    assert rep.value == 0.0


def test_girsanov_offset_decomposition(mixture):
    grid = TimeGrid(16)
    base = girsanov_bound(ExactDrift(mixture), mixture, grid, 4, 20_000, 1)
    e = np.array([0.4, 0.0])
    pert = girsanov_bound(PerturbedDrift(ExactDrift(mixture), offset=e), mixture, grid, 4, 20_000, 1)
    assert pert.value - base.value == pytest.approx(0.16, rel=0.1)


def test_girsanov_halving_ratio(mixture):
    a = girsanov_bound(ExactDrift(mixture), mixture, TimeGrid(16), 4, 20_000, 2)
    b = girsanov_bound(ExactDrift(mixture), mixture, TimeGrid(32), 4, 20_000, 3)
    assert 1.5 <= a.value / b.value <= 2.5


def test_girsanov_bounds_terminal_kl(std1):
    from dfm.sampler import em_generate

    grid = TimeGrid(10)
    d = girsanov_bound(ExactDrift(std1), std1, grid, 4, 50_000, 4)
    # the terminal law is exactly N(0, v_N): KL from the variance recursion
    v = 1.0
    for _ in range(10):
        v = (1 - 0.1) ** 2 * v + 0.2
    kl = 0.5 * (1 / v - 1 + math.log(v))
    assert d.value - 3 * d.stderr >= kl
    x = em_generate(ExactDrift(std1), std1.mu, grid, 50_000, 5)
    assert x.var() == pytest.approx(v, rel=0.03)


def test_girsanov_sub_node_doubling(mixture):
    a = girsanov_bound(ExactDrift(mixture), mixture, TimeGrid(8), 4, 20_000, 6)
    b = girsanov_bound(ExactDrift(mixture), mixture, TimeGrid(8), 8, 20_000, 6)
    assert abs(a.value - b.value) < 3 * math.hypot(a.stderr, b.stderr) + 0.02 * a.value


def test_audit_standard(std1):
    reps = {r.name: r for r in audit_h1_h2(std1.mu, std1.nu, std1, 200_000, 1)}
    assert reps["m8_mu"].within(105.0, n_se=4)
    assert reps["m8_nu"].within(105.0, n_se=4)
    assert reps["score_L8_mu"].within(105.0, n_se=4)
    assert all(isinstance(r, MetricReport) and math.isfinite(r.value) for r in reps.values())


def test_audit_narrow_target():
    c = narrow_pair(1e-2)
    reps = {r.name: r for r in audit_h1_h2(c.mu, c.nu, c, 200_000, 2)}
    assert reps["score_L8_nu"].within(1.05e18, n_se=4)


def test_smoothed_audit_standard(std2):
    d = 2
    for delta in (0.1, 0.3):
        reps = {r.name: r for r in smoothed_target_audit(std2, delta, 100_000, 3)}
        assert reps["m8_smoothed"].within(d * (d + 2) * (d + 4) * (d + 6), n_se=4)
        np.testing.assert_allclose(reps["m8_smoothed"].meta["cov"], np.eye(2), atol=1e-12)


def test_smoothed_audit_midpoint_consistency(mixture):
    reps = {r.name: r for r in smoothed_target_audit(mixture, 0.5 - 1e-12, 1000, 4)}
    mean, cov = marginal_moments(InterpolantLaw(mixture), 0.5)
    np.testing.assert_allclose(reps["m8_smoothed"].meta["mean"], mean, atol=1e-10)
    np.testing.assert_allclose(reps["m8_smoothed"].meta["cov"], cov, atol=1e-10)
    with pytest.raises(ValueError):
        smoothed_target_audit(mixture, 0.5, 100, 0)


def test_metric_report_invariants():
    with pytest.raises(ValueError):
        MetricReport("x", 1.0, -1.0)
    with pytest.raises(ValueError):
        MetricReport("x", math.inf)
    MetricReport("x", math.inf, 0.0, {"infinite": True})
