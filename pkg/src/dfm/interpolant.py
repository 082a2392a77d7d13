"""Brownian-bridge stochastic interpolant between the marginals of a coupling.

Conditionally on endpoints ``(x0, x1)`` the path is a bridge of
``sqrt(2) B``: at time ``t`` it is Gaussian with mean ``(1-t) x0 + t x1`` and
variance ``2 t (1-t)``.
"""
import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from . import heat_kernel
from .errors import DomainError, NumericalError
from .grid import Trajectory
from .model import Coupling, GaussianMixture, grad_log_pi_tilde
from .reports import MetricReport, mc_mean
from .rng import as_stream, map_blocks

LEMMA_CONSTANT = 8.0


class InterpolantLaw:
    """Law of the interpolant built from ``coupling`` and the sqrt(2)-Brownian bridge."""

    def __init__(self, coupling):
        if not isinstance(coupling, Coupling):
            raise TypeError("InterpolantLaw needs a Coupling")
        self.coupling = coupling
        self.dim = coupling.dim

    def __repr__(self):
        return f"InterpolantLaw({self.coupling!r})"


def _law(obj):
    return obj if isinstance(obj, InterpolantLaw) else InterpolantLaw(obj)


def _check_time(t):
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time {t} outside [0, 1]")


def sample_with_endpoints(law, t, n, rng):
    """Draw ``(x0, x1, x_t)`` triples; ``x_t`` follows the time-t interpolant marginal."""
    law = _law(law)
    _check_time(t)
    d = law.dim
    scale = math.sqrt(2.0 * t * (1.0 - t))

    def block(gen, m):
        pair = law.coupling.sample_block(gen, m)
        z = gen.standard_normal((m, d))
        x0, x1 = pair[:, :d], pair[:, d:]
        return x0, x1, (1.0 - t) * x0 + t * x1 + scale * z

    return map_blocks(block, rng, n)


def sample_at(law, t, n, rng):
    return sample_with_endpoints(law, t, n, rng)[2]


def sample_joint(law, s, t, n, rng, endpoints=False):
    """Pairs ``(X_s, X_t)`` of the interpolant for ``0 <= s < t <= 1``.

    ``X_t`` is drawn from the bridge between ``(s, X_s)`` and ``(1, X_1)``,
    which reproduces the bridge covariance ``2 s (1-t)``.
    """
    law = _law(law)
    if not 0.0 <= s < t <= 1.0:
        raise DomainError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    d = law.dim
    scale_s = math.sqrt(2.0 * s * (1.0 - s))
    frac = (t - s) / (1.0 - s)
    scale_t = math.sqrt(2.0 * (t - s) * (1.0 - t) / (1.0 - s))

    def block(gen, m):
        pair = law.coupling.sample_block(gen, m)
        z1 = gen.standard_normal((m, d))
        z2 = gen.standard_normal((m, d))
        x0, x1 = pair[:, :d], pair[:, d:]
        xs = (1.0 - s) * x0 + s * x1 + scale_s * z1
        xt = xs + frac * (x1 - xs) + scale_t * z2
        if endpoints:
            return xs, xt, x0, x1
        return xs, xt

    return map_blocks(block, rng, n)


def component_marginals(law, t):
    """Per-component time-t Gaussian parameters ``(weights, means, covs)``.

    Component ``k`` of the coupling with mean ``(m0, m1)`` and covariance
    blocks ``S00, S01, S11`` gives mean ``(1-t) m0 + t m1`` and covariance
    ``A S A^T + 2 t (1-t) I`` with ``A = [(1-t) I, t I]``.
    """
    law = _law(law)
    _check_time(t)
    d = law.dim
    j = law.coupling.joint
    m0, m1 = j.means[:, :d], j.means[:, d:]
    s00, s01, s11 = j.covs[:, :d, :d], j.covs[:, :d, d:], j.covs[:, d:, d:]
    means = (1.0 - t) * m0 + t * m1
    covs = (
        (1.0 - t) ** 2 * s00
        + t * (1.0 - t) * (s01 + np.swapaxes(s01, 1, 2))
        + t * t * s11
        + 2.0 * t * (1.0 - t) * np.eye(d)
    )
    return j.weights, means, 0.5 * (covs + np.swapaxes(covs, 1, 2))


def marginal_mixture(law, t):
    """Time-t marginal of the interpolant as a GaussianMixture."""
    return GaussianMixture(*component_marginals(law, t))


def marginal_log_density(law, t, x):
    return marginal_mixture(law, t).log_density(x)


def marginal_moments(law, t):
    """Closed-form mean vector and covariance matrix of ``X_t``."""
    mix = marginal_mixture(law, t)
    return mix.mean(), mix.covariance()


# ----------------------------------------------------------------------
# pinned bridges


def pinned_drift(x0, x1, t, y):
    """Drift ``(x1 - y) / (1 - t)`` of the bridge pinned at ``x1``."""
    if t >= 1.0:
        raise DomainError(f"pinned drift undefined at t={t} >= 1")
    return (np.asarray(x1, dtype=float) - np.asarray(y, dtype=float)) / (1.0 - t)


def pinned_simulate(x0, x1, grid, rng, n_paths=1):
    """Euler-Maruyama paths of the pinned bridge on ``grid``.

    Every knot is recorded. The final step uses the drift at ``t_{N-1} < 1``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    d = x0.shape[-1]
    h = grid.h
    n = grid.stop_index
    scale = math.sqrt(2.0 * h)

    def block(gen, m):
        states = np.empty((n + 1, m, d))
        y = np.broadcast_to(x0, (m, d)).copy()
        states[0] = y
        for k in range(n):
            noise = gen.standard_normal((m, d))
            y = y + pinned_drift(x0, x1, k * h, y) * h + scale * noise
            states[k + 1] = y
        return np.swapaxes(states, 0, 1)

    states = map_blocks(block, rng, n_paths)
    return Trajectory(grid.knots[: n + 1], np.swapaxes(states, 0, 1))


def _pinned_log_integral(mix, anchor, t, x):
    """``log`` and ``grad_x log`` of ``int N_mix(z) / p_1(z|anchor) * p_{1-t}(z|x) dz``.

    Evaluated per mixture component in precision form: the integrand is
    ``exp(-z^T L z / 2 + eta^T z + c)`` with ``L = P + t / (2(1-t)) I``.
    """
    if not 0.0 <= t < 1.0:
        raise DomainError(f"pinned drift needs t in [0, 1), got {t}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    anchor = np.broadcast_to(np.asarray(anchor, dtype=float), x.shape)
    d = mix.dim
    tau = 1.0 - t
    log_terms = np.empty((x.shape[0], mix.n_components))
    grads = np.empty((mix.n_components,) + x.shape)
    for k in range(mix.n_components):
        prec = cho_solve((mix.chols[k], True), np.eye(d))
        lam = prec + (t / (2.0 * tau)) * np.eye(d)
        try:
            lam_c = cho_factor(lam, lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError(
                "pinned precision matrix is not positive definite",
                module="interpolant",
                operation="pinned_drift",
                params={"t": t, "component": k},
            ) from None
        pm = prec @ mix.means[k]
        eta = pm - 0.5 * anchor + x / (2.0 * tau)
        post = cho_solve(lam_c, eta.T).T
        logdet_s = 2.0 * np.log(np.diag(mix.chols[k])).sum()
        logdet_l = 2.0 * np.log(np.diag(lam_c[0])).sum()
        c = (
            math.log(mix.weights[k])
            - 0.5 * logdet_s
            - 0.5 * mix.means[k] @ pm
            + np.einsum("ij,ij->i", anchor, anchor) / 4.0
            - np.einsum("ij,ij->i", x, x) / (4.0 * tau)
            + 0.5 * d * math.log(4.0 * math.pi)
            - 0.5 * d * math.log(4.0 * math.pi * tau)
        )
        log_terms[:, k] = c + 0.5 * np.einsum("ij,ij->i", eta, post) - 0.5 * logdet_l
        grads[k] = (post - x) / (2.0 * tau)
    total = logsumexp(log_terms, axis=1)
    resp = np.exp(log_terms - total[:, None])
    return total, np.einsum("ik,kid->id", resp, grads)


def _require_independent(law, op):
    if not law.coupling.independent:
        raise NumericalError(
            "closed-form pinned drifts need an independent coupling; use the Monte-Carlo identity",
            module="interpolant",
            operation=op,
        )


def log_psi(law, x0, t, x):
    """``log int pi~_0^{x0}(x1) p_{1-t}(x1 | x) dx1`` in closed form."""
    law = _law(law)
    _require_independent(law, "log_psi")
    val, _ = _pinned_log_integral(law.coupling.nu, x0, t, x)
    return float(val[0]) if np.ndim(x) == 1 else val


def forward_pinned_drift(law, x0, t, x):
    """Forward drift ``grad_x log int pi~_0^{x0}(x1) p_{1-t}(x1|x) dx1`` (independent couplings)."""
    law = _law(law)
    _require_independent(law, "forward_pinned_drift")
    _, g = _pinned_log_integral(law.coupling.nu, x0, t, x)
    return g[0] if np.ndim(x) == 1 else g


def backward_pinned_drift(law, x1, t, x):
    """Drift of the time-reversed interpolant pinned at ``x1``.

    ``t`` is reversed time: ``x`` is a state of ``X_{1-t}`` and the drift is
    ``grad_x log int pi~_1^{x1}(x0) p_{1-t}(x0|x) dx0``.
    """
    law = _law(law)
    _require_independent(law, "backward_pinned_drift")
    _, g = _pinned_log_integral(law.coupling.mu, x1, t, x)
    return g[0] if np.ndim(x) == 1 else g


def _self_normalized(logw, values):
    logw = logw - logw.max()
    w = np.exp(logw)
    w /= w.sum()
    est = w @ values
    se = np.sqrt((w[:, None] ** 2 * (values - est) ** 2).sum(axis=0))
    ess = 1.0 / np.sum(w * w)
    return est, se, ess


def forward_drift_mc(law, x0, t, x, n, rng):
    """Self-normalized estimate of ``E[grad log pi~_0^{X0}(X1) | X0 = x0, X_t = x]``.

    Proposals are ``X1 ~ nu``; valid for any coupling. Returns
    ``(estimate, stderr, ess)``.
    """
    law = _law(law)
    c = law.coupling
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x1 = c.nu.sample(n, rng)
    x0b = np.broadcast_to(x0, x1.shape)
    logw = (
        c.log_density(x0b, x1)
        - c.nu.log_density(x1)
        + heat_kernel.log_p(1.0 - t, x, x1)
        - heat_kernel.log_p(1.0, x0b, x1)
    )
    _, g1 = grad_log_pi_tilde(c, x0b, x1)
    return _self_normalized(logw, g1)


def backward_drift_mc(law, x1, t, x, n, rng):
    """Mirror of :func:`forward_drift_mc` for the reversed process (``t`` reversed)."""
    law = _law(law)
    c = law.coupling
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x0 = c.mu.sample(n, rng)
    x1b = np.broadcast_to(x1, x0.shape)
    logw = (
        c.log_density(x0, x1b)
        - c.mu.log_density(x0)
        + heat_kernel.log_p(1.0 - t, x, x0)
        - heat_kernel.log_p(1.0, x0, x1b)
    )
    g0, _ = grad_log_pi_tilde(c, x0, x1b)
    return _self_normalized(logw, g0)


def lemma1_check(law, s, p, n, rng, constant=LEMMA_CONSTANT):
    """Compare ``E||X_s - X_0||^{2p}`` and ``E||X_1 - X_s||^{2p}`` with their moment bounds.

    The bound is ``s^{2p} (m_{2p}[mu] + m_{2p}[nu]) + d^p s^p (1-s)^p`` (the
    mirrored one uses ``(1-s)^{2p}``). A side passes when its estimate, less
    three standard errors, does not exceed ``constant`` times its bound.
    """
    law = _law(law)
    if p not in (1, 2, 4):
        raise ValueError("p must be 1, 2 or 4")
    _check_time(s)
    stream = as_stream(rng)
    x0, x1, xs = sample_with_endpoints(law, s, n, stream.child("lemma1"))
    d = law.dim
    forward, fse = mc_mean(np.einsum("ij,ij->i", xs - x0, xs - x0) ** p)
    backward, bse = mc_mean(np.einsum("ij,ij->i", x1 - xs, x1 - xs) ** p)
    m_mu, m_mu_se = mc_mean(np.einsum("ij,ij->i", x0, x0) ** p)
    m_nu, m_nu_se = mc_mean(np.einsum("ij,ij->i", x1, x1) ** p)
    tail = d**p * s**p * (1.0 - s) ** p
    rhs_f = s ** (2 * p) * (m_mu + m_nu) + tail
    rhs_b = (1.0 - s) ** (2 * p) * (m_mu + m_nu) + tail
    return {
        "s": s,
        "p": p,
        "lhs_estimate": forward,
        "lhs_stderr": fse,
        "rhs_bound": rhs_f,
        "mirror_lhs_estimate": backward,
        "mirror_lhs_stderr": bse,
        "mirror_rhs_bound": rhs_b,
        "constant": constant,
        "passes": bool(forward - 3 * fse <= constant * rhs_f and backward - 3 * bse <= constant * rhs_b),
        "reports": [
            MetricReport("lemma1_lhs", forward, fse, {"s": s, "p": p}),
            MetricReport("lemma1_mirror_lhs", backward, bse, {"s": s, "p": p}),
            MetricReport("m2p_mu", m_mu, m_mu_se, {"p": 2 * p}),
            MetricReport("m2p_nu", m_nu, m_nu_se, {"p": 2 * p}),
        ],
    }
