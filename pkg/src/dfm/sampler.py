"""Euler-Maruyama sampler for the learned (or exact) Markovian projection.

``X_{k+1} = X_k + s(t_k, X_k) h + sqrt(2) (B_{t_{k+1}} - B_{t_k})`` with
``X_0 ~ mu``. The drift is frozen at the left knot of each interval.
"""
import numpy as np

from . import kernels
from .drift import ExactDrift
from .errors import ConfigError, NumericalError
from .grid import TimeGrid, Trajectory
from .rng import map_blocks

__all__ = ["TimeGrid", "Trajectory", "em_generate", "em_trajectories", "reference_markov"]


def _integrate_block(model, mu, grid, gen, m, record):
    d = mu.dim
    x = mu.sample_block(gen, m)
    h = grid.h
    recorded = [x.copy()] if record else None
    last = grid.stop_index
    for k in range(last):
        t = k * h
        drift = np.asarray(model.evaluate(t, x), dtype=float)
        noise = gen.standard_normal((m, d))
        bad = kernels.em_step(x, drift, noise, h)
        if bad >= 0:
            raise NumericalError(
                f"non-finite state at step {k}, sample {bad} of its block",
                module="sampler",
                operation="em_generate",
                params={"k": k, "t": t, "block_index": int(bad), "h": h},
            )
        if record and ((k + 1) % record == 0 or k + 1 == last):
            recorded.append(x.copy())
    if record:
        return np.stack(recorded, axis=1)
    return x


def _recorded_times(grid, stride):
    ks = [0] + [k for k in range(1, grid.stop_index + 1) if k % stride == 0 or k == grid.stop_index]
    return np.asarray(ks) * grid.h


def em_generate(model, mu, grid, n, rng):
    """Terminal states at ``t = grid.stop_time`` for ``n`` chains started from ``mu``."""
    if model.dim is not None and model.dim != mu.dim:
        raise ConfigError("drift and base distribution dimensions differ")
    return map_blocks(lambda gen, m: _integrate_block(model, mu, grid, gen, m, 0), rng, n)


def em_trajectories(model, mu, grid, n, rng, record_every=1):
    """Like :func:`em_generate` but keeping states every ``record_every`` knots.

    The initial state and the stop-time state are always recorded. With the
    same ``rng`` the recorded terminal equals :func:`em_generate` output.
    """
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    states = map_blocks(lambda gen, m: _integrate_block(model, mu, grid, gen, m, record_every), rng, n)
    return Trajectory(_recorded_times(grid, record_every), np.swapaxes(states, 0, 1))


def reference_markov(coupling, fine_grid, n, rng, record_every=None):
    """Euler-Maruyama paths under the exact mimicking drift on a fine grid."""
    if fine_grid.n_steps < 1000:
        raise ConfigError("reference_markov needs a fine grid with n_steps >= 1000")
    if record_every is None:
        record_every = max(1, fine_grid.n_steps // 20)
    return em_trajectories(ExactDrift(coupling), coupling.mu, fine_grid, n, rng, record_every)
