"""Measurement value objects."""
import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class MetricReport:
    """One measured quantity with its Monte-Carlo standard error.

    ``stderr`` is 0 for exact (closed-form) values. ``meta`` holds free-form
    context such as ``n``, ``h``, ``delta`` or ``seed``.
    """

    name: str
    value: float
    stderr: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError(f"stderr must be >= 0, got {self.stderr}")
        if not math.isfinite(self.value) and not self.meta.get("infinite", False):
            raise ValueError(f"{self.name}: non-finite value {self.value}")

    def within(self, target, n_se=3.0, extra_se=0.0):
        """``|value - target| <= n_se * sqrt(stderr^2 + extra_se^2)``."""
        return abs(self.value - target) <= n_se * math.hypot(self.stderr, extra_se)


def mc_mean(values):
    """Sample mean and its standard error for a 1-D array."""
    import numpy as np

    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se
