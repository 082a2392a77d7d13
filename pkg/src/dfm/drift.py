"""Mimicking drift of the Markovian projection and its approximations."""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import kernels
from .errors import ConfigError, DomainError, NumericalError
from .grid import TimeGrid
from .interpolant import InterpolantLaw, component_marginals, sample_with_endpoints
from .model import _cholesky
from .reports import MetricReport, mc_mean
from .rng import as_stream

T_GUARD = 1e-6
MIN_ESS = 50.0


def _check_guard(t):
    if not 0.0 <= t <= 1.0 - T_GUARD:
        raise DomainError(f"drift evaluated at t={t}; must lie in [0, 1 - {T_GUARD}]")


class DriftModel:
    """Vector field ``(t, x) -> R^d``; ``x`` may be a point or an (n, d) batch."""

    dim = None

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        out = self.evaluate(t, np.atleast_2d(x))
        return out[0] if x.ndim == 1 else out

    def evaluate(self, t, x):
        raise NotImplementedError


class ExactDrift(DriftModel):
    """Closed-form ``E[(X_1 - x) / (1 - t) | X_t = x]`` by Gaussian conditioning.

    Per coupling component, ``(X_t, X_1)`` is jointly Gaussian with
    ``Cov(X_1, X_t) = (1-t) S10 + t S11``. The component predictors are
    mixed with the time-t responsibilities.
    """

    def __init__(self, coupling):
        self.coupling = coupling
        self.dim = coupling.dim
        self._params = lru_cache(maxsize=4096)(self._build)

    def _build(self, t):
        d = self.dim
        j = self.coupling.joint
        weights, a, s = component_marginals(InterpolantLaw(self.coupling), t)
        k_count = weights.shape[0]
        logc = np.empty(k_count)
        u = np.empty((k_count, d, d))
        g = np.empty((k_count, d, d))
        b = np.empty((k_count, d))
        for k in range(k_count):
            chol = _cholesky(s[k])
            u[k] = solve_triangular(chol, np.eye(d), lower=True)
            cross = (1.0 - t) * j.covs[k, d:, :d] + t * j.covs[k, d:, d:]
            g[k] = cho_solve((chol, True), cross.T).T
            b[k] = j.means[k, d:] - g[k] @ a[k]
            logc[k] = math.log(weights[k]) - np.log(np.diag(chol)).sum()
        return logc, a, np.ascontiguousarray(u), np.ascontiguousarray(g), b

    def conditional_endpoint_mean(self, t, x):
        """``E[X_1 | X_t = x]`` for a batch ``x``."""
        _check_guard(t)
        return kernels.mixture_posterior_mean(x, *self._params(float(t)))

    def evaluate(self, t, x):
        return (self.conditional_endpoint_mean(t, x) - x) / (1.0 - t)

    def __repr__(self):
        return f"ExactDrift({self.coupling!r})"


def exact_drift(coupling, t, x):
    return ExactDrift(coupling)(t, x)


@dataclass
class DriftEstimate:
    value: np.ndarray
    stderr: np.ndarray
    ess: float
    reliable: bool


def mc_drift(coupling, t, x, n_inner, rng):
    """Self-normalized importance-sampling estimate of the mimicking drift at one point.

    Proposals ``(x0, x1) ~ pi`` are weighted by the bridge density of ``x``
    at time ``t``; the integrand is ``(x1 - x) / (1 - t)``. Results with an
    effective sample size below 50 are flagged unreliable.
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"mc_drift needs t in (0, 1), got {t}")
    if n_inner < 1000:
        raise ValueError("n_inner must be >= 1000")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = coupling.dim
    pairs = coupling.sample(n_inner, rng)
    x0, x1 = pairs[:, :d], pairs[:, d:]
    resid = x - (1.0 - t) * x0 - t * x1
    logw = -np.einsum("ij,ij->i", resid, resid) / (4.0 * t * (1.0 - t))
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    f = (x1 - x) / (1.0 - t)
    est = w @ f
    se = np.sqrt((w[:, None] ** 2 * (f - est) ** 2).sum(axis=0))
    ess = float(1.0 / np.sum(w * w))
    return DriftEstimate(est, se, ess, ess >= MIN_ESS)


class McOracleDrift(DriftModel):
    """Drift evaluated pointwise by :func:`mc_drift`; slow, for cross-checks only."""

    def __init__(self, coupling, n_inner, rng):
        self.coupling = coupling
        self.dim = coupling.dim
        self.n_inner = n_inner
        self.rng = as_stream(rng)

    def evaluate(self, t, x):
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            out[i] = mc_drift(self.coupling, t, xi, self.n_inner, self.rng.child(i)).value
        return out


class ConstantDrift(DriftModel):
    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.dim = self.c.shape[0]

    def evaluate(self, t, x):
        return np.broadcast_to(self.c, x.shape).copy()


class ZeroDrift(DriftModel):
    def __init__(self, dim):
        self.dim = int(dim)

    def evaluate(self, t, x):
        return np.zeros_like(x)


class PerturbedDrift(DriftModel):
    """``base(t, x) + offset``, or ``base`` plus fixed Gaussian noise of scale ``noise_scale``.

    The noise field is a deterministic function of ``(t, x)``: a random
    linear map drawn once from ``rng``, so evaluation stays pure.
    """

    def __init__(self, base, offset=None, noise_scale=None, rng=None):
        if (offset is None) == (noise_scale is None):
            raise ValueError("give exactly one of offset or noise_scale")
        self.base = base
        self.dim = base.dim
        self.offset = None if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))
        self.noise_scale = noise_scale
        if noise_scale is not None:
            gen = as_stream(rng).generator()
            self._w = gen.standard_normal((self.dim, self.dim)) * noise_scale / math.sqrt(self.dim)
            self._c = gen.standard_normal(self.dim) * noise_scale

    def evaluate(self, t, x):
        base = self.base.evaluate(t, x)
        if self.offset is not None:
            return base + self.offset
        return base + np.sin(x @ self._w.T + t) + self._c


# ----------------------------------------------------------------------
# regression


FEATURES = ("affine", "quadratic")


def features(kind, x):
    n = x.shape[0]
    if kind == "affine":
        return np.concatenate([np.ones((n, 1)), x], axis=1)
    if kind == "quadratic":
        return np.concatenate([np.ones((n, 1)), x, x * x], axis=1)
    raise ConfigError(f"unknown feature class {kind!r}; expected one of {FEATURES}")


class RegressedDrift(DriftModel):
    """Per-knot linear model ``s(t_k, x) = coeffs[k]^T phi(x)``.

    ``coeffs`` has shape (n_steps, n_features, d). Only knots ``t_k``,
    ``k < n_steps``, are valid evaluation times.
    """

    def __init__(self, grid, feature_kind, coeffs):
        if feature_kind not in FEATURES:
            raise ConfigError(f"unknown feature class {feature_kind!r}")
        self.grid = grid
        self.features = feature_kind
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[0] != grid.n_steps:
            raise ConfigError("one coefficient block per knot t_0..t_{N-1} is required")
        self.dim = self.coeffs.shape[2]

    def knot_index(self, t):
        k = t / self.grid.h
        ki = int(round(k))
        if abs(k - ki) > 1e-9 or not 0 <= ki < self.grid.n_steps:
            raise DomainError(f"regressed drift is defined only at knots t_k < 1, got t={t}")
        return ki

    def evaluate(self, t, x):
        return features(self.features, x) @ self.coeffs[self.knot_index(t)]

    def slope_intercept(self, k):
        c = self.coeffs[k]
        return c[1 : 1 + self.dim].T, c[0]

    def to_json(self):
        return {"grid": self.grid.to_spec(), "features": self.features, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_json(cls, data):
        g = data["grid"]
        grid = TimeGrid(g["n_steps"], g.get("stop_index"))
        return cls(grid, data["features"], data["coeffs"])


def fit_drift(coupling, grid, feature_spec, ridge_lambda, n_train, rng):
    """Ridge regression of ``(X_1 - X_t) / (1 - t)`` on ``phi(X_t)`` at each knot.

    Every coefficient, intercept included, is penalised by ``ridge_lambda``.
    """
    if not ridge_lambda > 0:
        raise ValueError("ridge_lambda must be > 0")
    features(feature_spec, np.zeros((1, coupling.dim)))
    stream = as_stream(rng)
    law = InterpolantLaw(coupling)
    blocks = []
    for k in range(grid.n_steps):
        t = grid.t(k)
        _, x1, xt = sample_with_endpoints(law, t, n_train, stream.child(k))
        phi = features(feature_spec, xt)
        y = (x1 - xt) / (1.0 - t)
        gram = phi.T @ phi + ridge_lambda * np.eye(phi.shape[1])
        blocks.append(np.linalg.solve(gram, phi.T @ y))
    return RegressedDrift(grid, feature_spec, np.stack(blocks))


def epsilon2_of(model, coupling, grid, n, rng):
    """``sum_k h E||model(t_k, X_{t_k}) - exact(t_k, X_{t_k})||^2`` over knots ``k < N``.

    Runs over knots below the stop index when the grid stops early.
    """
    exact = ExactDrift(coupling)
    law = InterpolantLaw(coupling)
    stream = as_stream(rng)
    h = grid.h
    total, var = 0.0, 0.0
    for k in range(grid.stop_index):
        t = grid.t(k)
        x = _sample_marginal(law, t, n, stream.child(k))
        diff = model.evaluate(t, x) - exact.evaluate(t, x)
        sq = np.einsum("ij,ij->i", diff, diff)
        if not np.all(np.isfinite(sq)):
            raise NumericalError(
                "non-finite drift mismatch", module="drift", operation="epsilon2_of", params={"k": k, "t": t, "h": h}
            )
        total += h * sq.mean()
        var += h * h * sq.var(ddof=1) / n
    return MetricReport("epsilon2", float(total), math.sqrt(var), {"n": n, "h": h})


def _sample_marginal(law, t, n, rng):
    return sample_with_endpoints(law, t, n, rng)[2]


def drift_second_moment(coupling, t, n, rng):
    """Monte-Carlo ``E||exact(t, X_t)||^2`` under the interpolant marginal."""
    law = InterpolantLaw(coupling)
    x = _sample_marginal(law, t, n, rng)
    b = ExactDrift(coupling).evaluate(t, x)
    value, se = mc_mean(np.einsum("ij,ij->i", b, b))
    return MetricReport("drift_m2", value, se, {"t": t, "n": n})
