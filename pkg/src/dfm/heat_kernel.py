"""Transition density of sqrt(2) * Brownian motion.

``p_t(y | x) = (4 pi t)^{-d/2} exp(-||y - x||^2 / (4 t))``. Derivatives are
available both raw and in "log form" (divided by ``p``); downstream code
only consumes the log forms.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

T_MIN = 1e-6


def _check_t(t):
    if not t >= T_MIN:
        raise DomainError(f"heat kernel time {t} below t_min={T_MIN}")


def _diff(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.atleast_1d(x - y)


def log_p(t, x, y):
    _check_t(t)
    diff = _diff(x, y)
    d = diff.shape[-1]
    return -0.5 * d * math.log(4.0 * math.pi * t) - np.sum(diff * diff, axis=-1) / (4.0 * t)


def p(t, x, y):
    return np.exp(log_p(t, x, y))


def grad_x(t, x, y, log_form=False):
    """``grad_x p_t(y|x) = -(x - y) / (2t) * p``."""
    _check_t(t)
    g = -_diff(x, y) / (2.0 * t)
    if log_form:
        return g
    return g * np.expand_dims(p(t, x, y), -1)


def grad_y(t, x, y, log_form=False):
    _check_t(t)
    g = _diff(x, y) / (2.0 * t)
    if log_form:
        return g
    return g * np.expand_dims(p(t, x, y), -1)


def hess_x(t, x, y, log_form=False):
    """``[-I/(2t) + (x-y)(x-y)^T / (4t^2)] * p``."""
    _check_t(t)
    diff = _diff(x, y)
    d = diff.shape[-1]
    h = -np.eye(d) / (2.0 * t) + diff[..., :, None] * diff[..., None, :] / (4.0 * t * t)
    if log_form:
        return h
    return h * np.asarray(p(t, x, y))[..., None, None]


def laplacian_x(t, x, y, log_form=False):
    _check_t(t)
    diff = _diff(x, y)
    d = diff.shape[-1]
    lap = -d / (2.0 * t) + np.sum(diff * diff, axis=-1) / (4.0 * t * t)
    if log_form:
        return lap
    return lap * p(t, x, y)


def heat_residual(t, x, y, fd_step):
    """``|d/dt p - laplacian_x p|`` with a central difference in time."""
    if not t - fd_step >= T_MIN:
        raise DomainError(f"t - fd_step = {t - fd_step} below t_min={T_MIN}")
    dt = (p(t + fd_step, x, y) - p(t - fd_step, x, y)) / (2.0 * fd_step)
    return np.abs(dt - laplacian_x(t, x, y))


@dataclass(frozen=True)
class KernelQuery:
    t: float
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        _check_t(self.t)
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        if x.shape != y.shape:
            raise ValueError("x and y must share their shape")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def log_p(self):
        return float(log_p(self.t, self.x, self.y))

    def grad_x(self, log_form=False):
        return grad_x(self.t, self.x, self.y, log_form)

    def hess_x(self, log_form=False):
        return hess_x(self.t, self.x, self.y, log_form)

    def laplacian_x(self, log_form=False):
        return float(laplacian_x(self.t, self.x, self.y, log_form))

    def heat_residual(self, fd_step):
        return float(heat_residual(self.t, self.x, self.y, fd_step))
