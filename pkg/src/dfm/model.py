"""Gaussian mixtures on R^d and couplings on R^{2d}."""
import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from scipy.stats import ncx2

from .errors import ConfigError, NumericalError
from .reports import MetricReport, mc_mean
from .rng import map_blocks

JITTER = 1e-10
POINT_COV = 1e-18
LOG_2PI = math.log(2.0 * math.pi)


def _cholesky(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        raise NumericalError(
            "covariance is not positive definite",
            module="model",
            operation="cholesky",
            params={"cov": cov.tolist()},
        ) from None


class GaussianMixture:
    """Finite mixture of Gaussians on R^d.

    Parameters are stored as arrays: ``weights`` (K,), ``means`` (K, d),
    ``covs`` (K, d, d). Cholesky factors are computed once at construction.
    """

    def __init__(self, weights, means, covs):
        weights = np.asarray(weights, dtype=float).reshape(-1)
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covs, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        if covs.ndim == 2:
            covs = covs[None, :, :]
        k = weights.shape[0]
        if means.shape[0] != k or covs.shape[0] != k:
            raise ConfigError("weights, means and covs disagree on the number of components")
        d = means.shape[1]
        if d < 1 or covs.shape[1:] != (d, d):
            raise ConfigError(f"component dimensions disagree: means {means.shape}, covs {covs.shape}")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigError(f"weights must be nonnegative and sum to 1, got {weights.tolist()}")
        if not np.allclose(covs, np.swapaxes(covs, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(covs).max())):
            raise ConfigError("covariances must be symmetric")
        self.weights = weights
        self.means = means
        self.covs = covs
        self.dim = d
        self.chols = np.stack([_cholesky(c) for c in covs])
        self._log_norm = (
            np.log(np.where(weights > 0, weights, 1.0))
            + np.where(weights > 0, 0.0, -np.inf)
            - np.log(np.diagonal(self.chols, axis1=1, axis2=2)).sum(axis=1)
            - 0.5 * d * LOG_2PI
        )

    @property
    def n_components(self):
        return self.weights.shape[0]

    @classmethod
    def gaussian(cls, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.shape[0])
        return cls([1.0], mean[None], cov[None])

    @classmethod
    def point_mass(cls, location):
        """Point-like mass represented by an ``1e-18 * I`` covariance."""
        loc = np.atleast_1d(np.asarray(location, dtype=float))
        return cls.gaussian(loc, POINT_COV * np.eye(loc.shape[0]))

    @classmethod
    def from_spec(cls, spec):
        try:
            return cls(spec["weights"], spec["means"], spec["covs"])
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"mixture spec needs numeric weights/means/covs: {exc}") from None

    def to_spec(self):
        return {"weights": self.weights.tolist(), "means": self.means.tolist(), "covs": self.covs.tolist()}

    # ------------------------------------------------------------------
    def component_log_pdfs(self, x):
        """(n, K) array of ``log w_k + log N(x; m_k, S_k)``."""
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], self.n_components))
        for k in range(self.n_components):
            z = solve_triangular(self.chols[k], (x - self.means[k]).T, lower=True)
            out[:, k] = self._log_norm[k] - 0.5 * np.einsum("ij,ij->j", z, z)
        return out

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        vals = logsumexp(self.component_log_pdfs(x), axis=1)
        return float(vals[0]) if x.ndim == 1 else vals

    def responsibilities(self, x):
        logp = self.component_log_pdfs(x)
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))

    def score(self, x):
        """Gradient of the log-density, ``sum_k r_k(x) S_k^{-1} (m_k - x)``."""
        x = np.asarray(x, dtype=float)
        x2 = np.atleast_2d(x)
        resp = self.responsibilities(x2)
        out = np.zeros_like(x2)
        for k in range(self.n_components):
            diff = (self.means[k] - x2).T
            y = solve_triangular(self.chols[k], diff, lower=True)
            y = solve_triangular(self.chols[k].T, y, lower=False)
            out += resp[:, k : k + 1] * y.T
        return out[0] if x.ndim == 1 else out

    def sample_block(self, gen, m):
        comp = np.searchsorted(np.cumsum(self.weights), gen.random(m), side="right")
        comp = np.minimum(comp, self.n_components - 1)
        z = gen.standard_normal((m, self.dim))
        out = np.empty((m, self.dim))
        for k in range(self.n_components):
            sel = comp == k
            out[sel] = self.means[k] + z[sel] @ self.chols[k].T
        return out

    def sample(self, n, rng):
        if n < 1:
            raise ValueError("n must be >= 1")
        return map_blocks(self.sample_block, rng, n)

    def mean(self):
        return self.weights @ self.means

    def covariance(self):
        mu = self.mean()
        dev = self.means - mu
        return np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum("k,ki,kj->ij", self.weights, dev, dev)

    def is_isotropic_gaussian(self):
        if self.n_components != 1:
            return False
        c = self.covs[0]
        s2 = c[0, 0]
        return bool(np.allclose(c, s2 * np.eye(self.dim), rtol=1e-12, atol=0))

    def __repr__(self):
        return f"GaussianMixture(dim={self.dim}, n_components={self.n_components})"


class Coupling:
    """Gaussian-mixture coupling on R^{2d}; first block is mu, second nu*."""

    def __init__(self, weights, means, covs, independent=None, _marginals=None):
        self.joint = GaussianMixture(weights, means, covs)
        if self.joint.dim % 2:
            raise ConfigError("coupling dimension must be even (2d)")
        self.dim = self.joint.dim // 2
        d = self.dim
        if independent is None:
            independent = self.joint.n_components == 1 and not np.any(self.joint.covs[0, :d, d:])
        self.independent = bool(independent)
        self._marginals = _marginals
        if _marginals is None:
            self._marginals = self._extract_marginals()

    @classmethod
    def product(cls, mu, nu):
        """Independent coupling ``mu (x) nu``."""
        if mu.dim != nu.dim:
            raise ConfigError("mu and nu must share the dimension")
        d = mu.dim
        w, m, c = [], [], []
        for i in range(mu.n_components):
            for j in range(nu.n_components):
                w.append(mu.weights[i] * nu.weights[j])
                m.append(np.concatenate([mu.means[i], nu.means[j]]))
                cov = np.zeros((2 * d, 2 * d))
                cov[:d, :d] = mu.covs[i]
                cov[d:, d:] = nu.covs[j]
                c.append(cov)
        w = np.asarray(w)
        w = w / w.sum()
        return cls(w, m, c, independent=True, _marginals=(mu, nu))

    @classmethod
    def from_spec(cls, spec):
        if not isinstance(spec, dict):
            raise ConfigError("coupling spec must be an object")
        if "independent" in spec:
            extra = set(spec) - {"independent"}
            if extra:
                raise ConfigError(f"unknown coupling keys: {sorted(extra)}")
            ind = spec["independent"]
            if set(ind) != {"mu", "nu"}:
                raise ConfigError("independent coupling needs exactly 'mu' and 'nu'")
            return cls.product(GaussianMixture.from_spec(ind["mu"]), GaussianMixture.from_spec(ind["nu"]))
        extra = set(spec) - {"weights", "means", "covs"}
        if extra:
            raise ConfigError(f"unknown coupling keys: {sorted(extra)}")
        try:
            return cls(spec["weights"], spec["means"], spec["covs"])
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid coupling spec: {exc}") from None

    def _extract_marginals(self):
        d = self.dim
        j = self.joint
        mu = GaussianMixture(j.weights, j.means[:, :d], j.covs[:, :d, :d])
        nu = GaussianMixture(j.weights, j.means[:, d:], j.covs[:, d:, d:])
        return mu, nu

    @property
    def mu(self):
        return self._marginals[0]

    @property
    def nu(self):
        return self._marginals[1]

    def sample_block(self, gen, m):
        if self.independent and self._marginals is not None:
            x0 = self.mu.sample_block(gen, m)
            x1 = self.nu.sample_block(gen, m)
            return np.concatenate([x0, x1], axis=1)
        return self.joint.sample_block(gen, m)

    def sample(self, n, rng):
        if n < 1:
            raise ValueError("n must be >= 1")
        return map_blocks(self.sample_block, rng, n)

    def log_density(self, x0, x1):
        return self.joint.log_density(np.concatenate([np.asarray(x0, float), np.asarray(x1, float)], axis=-1))

    def __repr__(self):
        return f"Coupling(dim={self.dim}, n_components={self.joint.n_components}, independent={self.independent})"


# ----------------------------------------------------------------------
# functional surface


def sample(dist, n, rng):
    return dist.sample(n, rng)


def log_density(dist, x):
    if isinstance(dist, Coupling):
        return dist.joint.log_density(x)
    return dist.log_density(x)


def score(dist, x):
    if isinstance(dist, Coupling):
        return dist.joint.score(x)
    return dist.score(x)


def marginals_of(coupling):
    return coupling.mu, coupling.nu


def moment_p_exact(dist, p):
    """Closed-form ``E||X||^p`` for a single isotropic Gaussian (p even)."""
    if p % 2 or not dist.is_isotropic_gaussian():
        raise ValueError("closed form only for even p and single isotropic Gaussians")
    s2 = dist.covs[0, 0, 0]
    m2 = float(dist.means[0] @ dist.means[0])
    if s2 <= POINT_COV * 10:
        return m2 ** (p // 2)
    # ||X||^2 / s2 is noncentral chi-square(d, ||m||^2 / s2)
    return float(s2 ** (p // 2) * ncx2(dist.dim, m2 / s2).moment(p // 2))


def moment_p(dist, p, n, rng):
    """Monte-Carlo estimate of ``m_p = E||X||^p``."""
    if p not in (2, 4, 8):
        raise ValueError("p must be one of 2, 4, 8")
    x = dist.sample(n, rng)
    value, se = mc_mean(np.einsum("ij,ij->i", x, x) ** (p // 2))
    return MetricReport(f"m{p}", value, se, {"n": n})


def score_lp_norm(dist, p, n, rng):
    """Monte-Carlo estimate of ``E||grad log dist(X)||^p``."""
    x = dist.sample(n, rng)
    s = dist.score(x)
    value, se = mc_mean(np.sqrt(np.einsum("ij,ij->i", s, s)) ** p)
    return MetricReport(f"score_L{p}", value, se, {"n": n})


def log_pi_tilde(coupling, x0, x1):
    """``log pi(x0, x1) - log p_1(x1 | x0)``."""
    from .heat_kernel import log_p

    return coupling.log_density(x0, x1) - log_p(1.0, x0, x1)


def grad_log_pi_tilde(coupling, x0, x1):
    """Gradients of ``log_pi_tilde`` in ``x0`` and in ``x1``."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    d = coupling.dim
    g = coupling.joint.score(np.concatenate([x0, x1], axis=-1))
    g0 = g[..., :d] - 0.5 * (x1 - x0)
    g1 = g[..., d:] + 0.5 * (x1 - x0)
    return g0, g1
