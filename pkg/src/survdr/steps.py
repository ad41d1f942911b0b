"""Right-continuous step functions on [0, inf)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function with jumps at ``times``.

    ``values[k]`` holds on ``[times[k], times[k+1])``; before the first jump
    the function equals ``initial``.
    """

    times: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def _lookup(self, t, side):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side=side) - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else self.initial, self.initial)
        return out if out.ndim else float(out)

    def __call__(self, t):
        return self._lookup(t, "right")

    def left_limit(self, t):
        """Value just before ``t``."""
        return self._lookup(t, "left")

    def jumps(self):
        """Jump sizes at ``times``."""
        if not self.values.size:
            return self.values.copy()
        return np.diff(np.concatenate([[self.initial], self.values]))
