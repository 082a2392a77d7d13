"""Reference couplings used by the acceptance suite and example configs."""
import numpy as np

from .model import Coupling, GaussianMixture


def standard_pair(d=1):
    """``N(0, I) (x) N(0, I)``: exact drift ``-x`` and every marginal ``N(0, I)``."""
    g = GaussianMixture.gaussian(np.zeros(d), 1.0)
    return Coupling.product(g, g)


def shifted_pair(m):
    """``N(0, I) (x) N(m, I)``: exact drift ``(1 + t) m - x``."""
    m = np.atleast_1d(np.asarray(m, dtype=float))
    return Coupling.product(GaussianMixture.gaussian(np.zeros(m.shape[0]), 1.0), GaussianMixture.gaussian(m, 1.0))


def two_component_target():
    """Two-component mixture on R^2 against a standard normal base."""
    return GaussianMixture(
        [0.4, 0.6],
        [[-1.5, 0.0], [1.5, 1.0]],
        [np.diag([0.3, 0.5]), [[0.5, 0.2], [0.2, 0.4]]],
    )


def mixture_pair():
    return Coupling.product(GaussianMixture.gaussian(np.zeros(2), 1.0), two_component_target())


def narrow_pair(sigma=1e-2, mean=0.0):
    """1-D standard normal base against a narrow ``N(mean, sigma^2)`` target."""
    return Coupling.product(
        GaussianMixture.gaussian([0.0], 1.0), GaussianMixture.gaussian([mean], sigma * sigma)
    )
