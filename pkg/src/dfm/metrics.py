"""Measurement instruments: KL, W2, Girsanov discretization bound, assumption audits."""
import math

import numpy as np
from scipy.spatial import cKDTree

from .drift import T_GUARD, ExactDrift
from .errors import ConfigError, DomainError, NumericalError
from .interpolant import InterpolantLaw, marginal_mixture, sample_joint
from .model import grad_log_pi_tilde, moment_p, score_lp_norm
from .reports import MetricReport, mc_mean
from .rng import as_stream

BOUND_CONSTANT = 8.0
DIST_FLOOR = 1e-12


def gaussian_kl(p_mean, p_cov, q_mean, q_cov):
    """``KL(N(p_mean, p_cov) || N(q_mean, q_cov))``."""
    p_mean = np.atleast_1d(np.asarray(p_mean, dtype=float))
    q_mean = np.atleast_1d(np.asarray(q_mean, dtype=float))
    d = p_mean.shape[0]
    p_cov = np.asarray(p_cov, dtype=float).reshape(d, d)
    q_cov = np.asarray(q_cov, dtype=float).reshape(d, d)
    try:
        lp = np.linalg.cholesky(p_cov)
        lq = np.linalg.cholesky(q_cov)
    except np.linalg.LinAlgError:
        raise NumericalError("gaussian_kl needs SPD covariances", module="metrics", operation="gaussian_kl") from None
    q_inv = np.linalg.inv(q_cov)
    diff = q_mean - p_mean
    val = 0.5 * (
        np.trace(q_inv @ p_cov)
        + diff @ q_inv @ diff
        - d
        + 2.0 * np.log(np.diag(lq)).sum()
        - 2.0 * np.log(np.diag(lp)).sum()
    )
    return max(float(val), 0.0)


def gaussian_fit_kl(target, samples, name="kl_gaussian_fit"):
    """KL from a single-Gaussian ``target`` to the Gaussian fitted to ``samples``."""
    if target.n_components != 1:
        raise ConfigError("gaussian_fit_kl needs a single-Gaussian target")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = samples.shape
    if n < d + 2:
        raise ValueError(f"need at least d+2={d + 2} samples, got {n}")
    mean = samples.mean(axis=0)
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    kl = gaussian_kl(target.means[0], target.covs[0], mean, cov)
    # leading-order sampling bias of the plug-in fit
    noise = (d + d * (d + 1) / 2) / (2 * n)
    return MetricReport(name, kl, 0.0, {"n": n, "fit_noise_level": noise})


def knn_kl(samples_p, samples_q, k=5, n_batches=10):
    """k-nearest-neighbour estimate of ``KL(P || Q)`` from two samples.

    Uses ``d/n sum log(nu_k / rho_k) + log(m / (n-1))`` where ``rho_k`` is the
    distance to the k-th neighbour within P and ``nu_k`` to the k-th
    neighbour in Q. The standard error comes from batch means of the
    per-point terms.
    """
    p = np.atleast_2d(np.asarray(samples_p, dtype=float))
    q = np.atleast_2d(np.asarray(samples_q, dtype=float))
    if p.shape[1] != q.shape[1]:
        raise ValueError("samples must share their dimension")
    n, d = p.shape
    m = q.shape[0]
    if n < 100 or m < 100:
        raise ValueError("knn_kl needs at least 100 samples per side")
    if k < 1:
        raise ValueError("k must be >= 1")
    rho = cKDTree(p).query(p, k=k + 1)[0][:, k]
    nu = cKDTree(q).query(p, k=k)[0]
    nu = nu[:, k - 1] if nu.ndim == 2 else nu
    terms = d * (np.log(np.maximum(nu, DIST_FLOOR)) - np.log(np.maximum(rho, DIST_FLOOR))) + math.log(m / (n - 1))
    value = float(terms.mean())
    batches = np.array([b.mean() for b in np.array_split(terms, n_batches)])
    se = float(batches.std(ddof=1) / math.sqrt(n_batches))
    return MetricReport("kl_knn", value, se, {"n_p": n, "n_q": m, "k": k})


def w2_1d(samples_a, samples_b):
    """1-D Wasserstein-2 distance via the quantile coupling of sorted samples."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if (a.ndim == 2 and a.shape[1] != 1) or (b.ndim == 2 and b.shape[1] != 1) or a.ndim > 2 or b.ndim > 2:
        raise DomainError("w2_1d needs one-dimensional samples")
    a = np.sort(a.reshape(-1))
    b = np.sort(b.reshape(-1))
    if a.shape[0] != b.shape[0]:
        # keep the evenly spaced order statistics of the larger sample
        if a.shape[0] > b.shape[0]:
            a, b = b, a
        idx = np.floor((np.arange(a.shape[0]) + 0.5) * b.shape[0] / a.shape[0]).astype(int)
        b = b[idx]
    return float(np.sqrt(np.mean((a - b) ** 2)))


def girsanov_bound(model, coupling, grid, sub_nodes, n, rng, reference=None):
    """``sum_k int_{t_k}^{t_{k+1}} E||model(t_k, X_{t_k}) - ref(t, X_t)||^2 dt``.

    The inner time integral uses the midpoint rule on ``sub_nodes`` points
    per interval; the expectation uses joint interpolant pairs. ``reference``
    defaults to the exact drift and exists as a test hook. Intervals run up
    to the grid's stop index.
    """
    if sub_nodes < 1:
        raise ValueError("sub_nodes must be >= 1")
    ref = ExactDrift(coupling) if reference is None else reference
    law = InterpolantLaw(coupling)
    stream = as_stream(rng)
    h = grid.h
    w = h / sub_nodes
    total, var = 0.0, 0.0
    clamped = 0
    for k in range(grid.stop_index):
        tk = grid.t(k)
        for j in range(sub_nodes):
            t = tk + (j + 0.5) * w
            if t > 1.0 - T_GUARD:
                t = 1.0 - T_GUARD
                clamped += 1
            xs, xt = sample_joint(law, tk, t, n, stream.child(k).child(j))
            diff = model.evaluate(tk, xs) - ref.evaluate(t, xt)
            sq = np.einsum("ij,ij->i", diff, diff)
            if not np.all(np.isfinite(sq)):
                raise NumericalError(
                    "non-finite drift mismatch",
                    module="metrics",
                    operation="girsanov_bound",
                    params={"k": k, "sub_node": j, "t": t, "h": h},
                )
            total += w * sq.mean()
            var += w * w * sq.var(ddof=1) / n
    return MetricReport(
        "girsanov_bound",
        float(total),
        math.sqrt(var),
        {"n": n, "h": h, "n_steps": grid.n_steps, "sub_nodes": sub_nodes, "delta": grid.delta, "clamped": clamped},
    )


def audit_h1_h2(mu, nu, coupling, n, rng):
    """Eighth-order moment and score integrability estimates."""
    stream = as_stream(rng)
    out = [
        _rename(moment_p(mu, 8, n, stream.child("m8_mu")), "m8_mu"),
        _rename(moment_p(nu, 8, n, stream.child("m8_nu")), "m8_nu"),
        _rename(score_lp_norm(mu, 8, n, stream.child("score_mu")), "score_L8_mu"),
        _rename(score_lp_norm(nu, 8, n, stream.child("score_nu")), "score_L8_nu"),
    ]
    d = coupling.dim
    pairs = coupling.sample(n, stream.child("pi_tilde"))
    g0, g1 = grad_log_pi_tilde(coupling, pairs[:, :d], pairs[:, d:])
    sq = np.einsum("ij,ij->i", g0, g0) + np.einsum("ij,ij->i", g1, g1)
    value, se = mc_mean(sq**4)
    out.append(MetricReport("score_L8_pi_tilde", value, se, {"n": n}))
    return out


def _rename(report, name):
    return MetricReport(name, report.value, report.stderr, report.meta)


def smoothed_score_bound(m8_mu, m8_nu, d, delta, constant=BOUND_CONSTANT):
    """``C (m8[mu] / (1-delta)^8 + m8[nu] / delta^8 + d^4 / (delta^4 (1-delta)^4))``."""
    return constant * (m8_mu / (1 - delta) ** 8 + m8_nu / delta**8 + d**4 / (delta**4 * (1 - delta) ** 4))


def smoothed_moment_bound(m8_mu, m8_nu, d, delta, constant=BOUND_CONSTANT):
    """``C (delta^8 m8[mu] + (1-delta)^8 m8[nu] + d^4 delta^4 (1-delta)^4)``."""
    return constant * (delta**8 * m8_mu + (1 - delta) ** 8 * m8_nu + d**4 * delta**4 * (1 - delta) ** 4)


def smoothed_target_audit(coupling, delta, n, rng):
    """Moments and score norm of the interpolant marginal at ``1 - delta``.

    ``within_bound`` compares each measured value with ``C`` times the score
    bound expression ``m8[mu]/(1-delta)^8 + m8[nu]/delta^8 + d^4/(delta^4 (1-delta)^4)``.
    The eighth-moment bound ``delta^8 m8[mu] + (1-delta)^8 m8[nu] + d^4 delta^4 (1-delta)^4``
    is reported in ``meta`` for reference.
    """
    if not 0.0 < delta < 0.5:
        raise DomainError(f"delta must lie in (0, 1/2), got {delta}")
    stream = as_stream(rng)
    law = InterpolantLaw(coupling)
    smoothed = marginal_mixture(law, 1.0 - delta)
    d = coupling.dim
    m8_mu = moment_p(coupling.mu, 8, n, stream.child("m8_mu"))
    m8_nu = moment_p(coupling.nu, 8, n, stream.child("m8_nu"))
    m8_s = moment_p(smoothed, 8, n, stream.child("m8_smoothed"))
    score_s = score_lp_norm(smoothed, 8, n, stream.child("score_smoothed"))
    bound = smoothed_score_bound(m8_mu.value, m8_nu.value, d, delta, 1.0)
    moment_bound = smoothed_moment_bound(m8_mu.value, m8_nu.value, d, delta, 1.0)
    meta = {
        "delta": delta,
        "n": n,
        "bound_expression": bound,
        "moment_bound_expression": moment_bound,
        "constant": BOUND_CONSTANT,
        "mean": smoothed.mean().tolist(),
        "cov": smoothed.covariance().tolist(),
    }
    out = []
    for name, rep in (("m8_smoothed", m8_s), ("score_L8_smoothed", score_s)):
        out.append(
            MetricReport(name, rep.value, rep.stderr, dict(meta, within_bound=bool(rep.value <= BOUND_CONSTANT * bound)))
        )
    out.append(MetricReport("smoothed_bound_expression", bound, 0.0, dict(meta)))
    return out
