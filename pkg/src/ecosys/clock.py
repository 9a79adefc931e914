"""Virtual and wall clocks. Simulations step time explicitly; the daemon
runs on real time. Everything downstream reads seconds as a float."""
from __future__ import annotations

import time


class VirtualClock:
    """Manually advanced clock for deterministic runs."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError(f"cannot advance by negative dt {dt}")
        self._now += dt
        return self._now

    def set(self, t: float) -> float:
        if t < self._now:
            raise ValueError(f"cannot move clock backwards from {self._now} to {t}")
        self._now = float(t)
        return self._now


class WallClock:
    def now(self) -> float:
        return time.time()
