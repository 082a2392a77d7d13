import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfm import heat_kernel as hk
from dfm.errors import DomainError
from dfm.heat_kernel import KernelQuery


def test_closed_form_value():
    # d = 2, t = 1/4, ||y - x||^2 = 1: -log(pi) - 1
    x, y = np.zeros(2), np.array([0.6, 0.8])
    assert hk.log_p(0.25, x, y) == pytest.approx(-math.log(math.pi) - 1.0, abs=1e-14)
    assert KernelQuery(0.25, x, y).log_p() == pytest.approx(-2.144730, abs=1e-6)


def test_t_min_enforced():
    with pytest.raises(DomainError):
        hk.log_p(1e-7, np.zeros(1), np.zeros(1))
    with pytest.raises(DomainError):
        KernelQuery(0.0, np.zeros(1), np.zeros(1))
    hk.log_p(hk.T_MIN, np.zeros(1), np.zeros(1))


def test_integrates_to_one():
    x = np.array([0.4])
    grid = np.linspace(-20, 20, 40001)
    dens = hk.p(0.7, x, grid[:, None])
    assert np.sum(dens) * (grid[1] - grid[0]) == pytest.approx(1.0, abs=1e-10)


def test_grad_hess_against_fd():
    gen = np.random.default_rng(3)
    t, step = 0.3, 1e-5
    for _ in range(10):
        x, y = gen.normal(size=3), gen.normal(size=3)
        fd = np.array([(hk.p(t, x + step * e, y) - hk.p(t, x - step * e, y)) / (2 * step) for e in np.eye(3)])
        np.testing.assert_allclose(hk.grad_x(t, x, y), fd, rtol=1e-6, atol=1e-12)
        fdh = np.array([(hk.grad_x(t, x + step * e, y) - hk.grad_x(t, x - step * e, y)) / (2 * step) for e in np.eye(3)])
        np.testing.assert_allclose(hk.hess_x(t, x, y), fdh, rtol=1e-5, atol=1e-10)
        assert hk.laplacian_x(t, x, y) == pytest.approx(np.trace(hk.hess_x(t, x, y)), rel=1e-12)
        np.testing.assert_allclose(hk.grad_x(t, x, y, log_form=True), hk.grad_x(t, x, y) / hk.p(t, x, y), rtol=1e-12)


def test_symmetry_of_gradients():
    x, y = np.array([0.2, -1.0]), np.array([1.1, 0.3])
    np.testing.assert_allclose(hk.grad_x(0.5, x, y), -hk.grad_y(0.5, x, y), rtol=1e-14)


def test_heat_equation_residual():
    gen = np.random.default_rng(4)
    for _ in range(20):
        t = gen.uniform(0.05, 2.0)
        x, y = gen.normal(size=2), gen.normal(size=2)
        assert KernelQuery(t, x, y).heat_residual(1e-5) <= 1e-6


def test_large_distance_log_finite():
    lp = hk.log_p(1e-3, np.zeros(2), np.array([1e3, 0.0]))
    assert math.isfinite(lp) and lp < -1e8


@settings(max_examples=50, deadline=None)
@given(t=st.floats(1e-3, 5.0), x=st.floats(-5, 5), y=st.floats(-5, 5))
def test_symmetric_in_x_y(t, x, y):
    a = hk.log_p(t, np.array([x]), np.array([y]))
    b = hk.log_p(t, np.array([y]), np.array([x]))
    assert a == pytest.approx(b, abs=1e-12)
