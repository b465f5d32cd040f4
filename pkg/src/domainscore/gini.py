"""Gini coefficient of a class-count distribution, via the Lorenz curve.

Counts are sorted ascending and turned into cumulative shares of the total
instance count; the area under the piecewise-linear Lorenz curve is the
trapezoid sum B, the gap to the diagonal is A = 0.5 - B, and the
coefficient is A / (A + B) = 1 - 2B.  Balanced counts give 0; an extreme
long tail approaches 1; a single category is 0 by construction.

Equivalent closed form (used as an independent oracle in the tests):
sum_ij |x_i - x_j| / (2 n^2 mean).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class GiniResult:
    sorted_counts: tuple[int, ...]
    cumulative: tuple[float, ...]  # C_1..C_k, C_k == 1
    area_b: float
    area_a: float
    delta: float


def gini(counts: Mapping[str, int] | Iterable[int]) -> GiniResult:
    """Gini coefficient of per-class instance counts.

    Accepts a label -> count mapping or a bare iterable of counts.
    Zero counts are excluded (absent classes carry no mass).
    """
    if isinstance(counts, Mapping):
        raw = list(counts.values())
    else:
        raw = list(counts)
    values = sorted(int(v) for v in raw if v > 0)
    if not values:
        raise ValueError("gini requires at least one class with a positive count")

    arr = np.asarray(values, dtype=float)
    total = arr.sum()
    cumulative = np.cumsum(arr) / total
    k = len(values)
    previous = np.concatenate(([0.0], cumulative[:-1]))
    area_b = float(((cumulative + previous) / 2.0).sum() / k)
    area_a = 0.5 - area_b
    delta = max(1.0 - 2.0 * area_b, 0.0)
    return GiniResult(
        sorted_counts=tuple(values),
        cumulative=tuple(float(c) for c in cumulative),
        area_b=area_b,
        area_a=area_a,
        delta=delta,
    )
