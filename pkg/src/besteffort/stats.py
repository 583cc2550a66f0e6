from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class CiSummary:
    metric: str
    mean: float
    lower: float
    upper: float
    n: int
    resamples: int

    def overlaps(self, other: CiSummary) -> bool:
        return self.lower <= other.upper and other.lower <= self.upper


def bootstrap_ci(
    samples: Sequence[float],
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    metric: str = "",
) -> CiSummary:
    """Percentile bootstrap interval for the mean.

    Resampling indexes positions of a sorted copy of ``samples``, so the
    result does not depend on input order for a given seed.
    """
    data = np.sort(np.asarray(samples, dtype=float))
    if data.size == 0:
        raise ValueError("bootstrap_ci needs at least one sample")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[idx].mean(axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    mean = float(data.mean())
    # a skewed resample distribution can leave the point estimate outside
    return CiSummary(metric, mean, min(float(lo), mean), max(float(hi), mean), int(data.size), resamples)
