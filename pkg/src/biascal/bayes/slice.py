"""Univariate slice sampling with stepping out and shrinkage (Neal, 2003)."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericalError


def slice_sample(
    x0: float,
    logf,
    width: float,
    rng: np.random.Generator,
    lower: float = -math.inf,
    upper: float = math.inf,
    logf0: float | None = None,
    max_steps: int = 50,
    max_shrink: int = 200,
) -> tuple[float, float]:
    """Draw one update of ``x0`` leaving the density ``exp(logf)`` invariant.

    ``logf`` may return ``-inf`` outside the support. ``lower``/``upper``
    bound the stepping-out interval. Returns ``(x_new, logf(x_new))``.
    """
    if logf0 is None:
        logf0 = logf(x0)
    if not math.isfinite(logf0):
        raise NumericalError(f"slice sampler started outside the support (x={x0})")
    level = logf0 + math.log(rng.random())

    u = rng.random()
    left = x0 - u * width
    right = left + width
    j = int(rng.random() * max_steps)
    k = max_steps - 1 - j
    while j > 0 and left > lower and logf(left) > level:
        left -= width
        j -= 1
    while k > 0 and right < upper and logf(right) > level:
        right += width
        k -= 1
    left = max(left, lower)
    right = min(right, upper)

    for _ in range(max_shrink):
        x1 = left + rng.random() * (right - left)
        lf1 = logf(x1)
        if lf1 > level:
            return x1, lf1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise NumericalError("slice sampler failed to find a point inside the slice")


class WidthAdapter:
    """Tune a slice width from observed jump sizes during burn-in only."""

    def __init__(self, width: float):
        self.width = width
        self._jumps: list[float] = []

    def record(self, jump: float) -> None:
        self._jumps.append(abs(jump))
        if len(self._jumps) >= 50:
            # Typical jump ~ posterior scale; a width of a few jumps keeps
            # stepping-out cheap without many shrinkage rejections.
            self.width = max(3.0 * float(np.mean(self._jumps)), 1e-8)
            self._jumps.clear()
