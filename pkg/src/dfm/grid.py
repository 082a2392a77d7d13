"""Uniform time grids on [0, 1] and recorded trajectories."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class TimeGrid:
    """Uniform partition ``t_k = k h``, ``h = 1 / n_steps``.

    ``stop_index`` optionally marks an early stop at ``t = 1 - delta``; delta
    must be a multiple of ``h``.
    """

    def __init__(self, n_steps, stop_index=None):
        n_steps = int(n_steps)
        if n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
        self.n_steps = n_steps
        self.h = 1.0 / n_steps
        if stop_index is None:
            stop_index = n_steps
        stop_index = int(stop_index)
        if not 1 <= stop_index <= n_steps:
            raise ConfigError(f"stop_index must lie in 1..{n_steps}, got {stop_index}")
        self.stop_index = stop_index

    @classmethod
    def with_delta(cls, n_steps, delta):
        """Grid stopping at ``1 - delta``; raises if delta is not a multiple of h."""
        k = delta * n_steps
        if abs(k - round(k)) > 1e-9:
            raise ConfigError(f"delta={delta} is not a multiple of h=1/{n_steps}")
        return cls(n_steps, n_steps - int(round(k)))

    @property
    def knots(self):
        return np.arange(self.n_steps + 1) * self.h

    @property
    def delta(self):
        return (self.n_steps - self.stop_index) * self.h

    @property
    def stop_time(self):
        return self.stop_index * self.h

    def t(self, k):
        return k * self.h

    def to_spec(self):
        spec = {"n_steps": self.n_steps}
        if self.stop_index != self.n_steps:
            spec["stop_index"] = self.stop_index
        return spec

    def __repr__(self):
        return f"TimeGrid(n_steps={self.n_steps}, stop_index={self.stop_index})"

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and (self.n_steps, self.stop_index) == (other.n_steps, other.stop_index)


@dataclass
class Trajectory:
    """States of ``n`` paths at increasing ``times``; ``states`` is (T, n, d)."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 3 or self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states must be (len(times), n, d)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def at(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9:
            raise KeyError(f"time {t} not recorded")
        return self.states[idx]

    @property
    def terminal(self):
        return self.states[-1]

    def to_csv(self, path=None):
        """Columns ``sample_id, t, x_0..x_{d-1}``; returns the text if no path."""
        d = self.states.shape[2]
        buf = io.StringIO(newline="")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "t"] + [f"x_{i}" for i in range(d)])
        n = self.states.shape[1]
        for i in range(n):
            for j, t in enumerate(self.times):
                w.writerow([i, repr(float(t))] + [repr(float(v)) for v in self.states[j, i]])
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return path
