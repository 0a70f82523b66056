"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. every entry of ``x`` (mutated in place and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_difference_check(
    f: Callable[[], float],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Largest relative error between ``analytic`` gradients and central differences.

    ``f`` must read the current contents of ``arrays``; each array is perturbed
    in place.  Entries whose gradients are both below ``floor`` are compared in
    absolute terms.
    """
    worst = 0.0
    for x, a in zip(arrays, analytic):
        if x.dtype != np.float64:
            raise TypeError("finite-difference checks require float64 arrays")
        worst = max(worst, relative_error(a, numerical_gradient(f, x, h), floor))
    return worst
