"""Accuracy, calibration and distance-preservation metrics.

Calibration follows the usual mean/std regression recipe: each observation is
mapped to its predictive quantile level ``q = Phi((y - mu) / sigma)`` and the
fraction of levels at or below ``p`` is compared with ``p`` over a uniform
grid of expected proportions.  The three capacitance outputs are pooled into
one population; per-output breakdowns are reported alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .linalg import distances_for_pairs, pair_indices, pearson_correlation, spearman_correlation

N_LEVELS = 100
# evaluation-time floor (pF) for predictors that can emit a zero width
SIGMA_EVAL_FLOOR = 1e-9
NEAR_CELL = (2800.0, 2800.0, 2800.0)
FAR_CELL = (2500.0, 2500.0, 2500.0)


class MetricsError(ValueError):
    pass


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise MetricsError(f"length mismatch: {y.size} labels vs {yhat.size} predictions")
    if y.size == 0:
        raise MetricsError("no observations")
    return y, yhat


def r2(y, yhat) -> float:
    """Coefficient of determination over all outputs flattened together."""
    y, yhat = _pair(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricsError("R^2 undefined for constant labels")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


# ---------------------------------------------------------------- calibration
def expected_levels(n_levels: int = N_LEVELS) -> np.ndarray:
    """Uniform grid of bin midpoints in (0, 1)."""
    if n_levels < 2:
        raise MetricsError("need at least two calibration levels")
    return (np.arange(n_levels) + 0.5) / n_levels


def quantile_levels(y, mu, sigma) -> np.ndarray:
    y, mu = _pair(y, mu)
    sigma = np.asarray(sigma, dtype=np.float64)
    sigma = np.full(y.shape, float(sigma)) if sigma.ndim == 0 else sigma.ravel()
    if sigma.shape != y.shape:
        raise MetricsError(f"sigma has {sigma.size} entries for {y.size} observations")
    if not np.all(sigma > 0):
        raise MetricsError("calibration needs strictly positive sigma")
    return special.ndtr((y - mu) / sigma)


@dataclass
class CalibrationCurve:
    expected: np.ndarray
    observed: np.ndarray
    rmsce: float
    mace: float
    miscalibration_area: float

    def summary(self) -> dict:
        return {"rmsce": self.rmsce, "mace": self.mace, "miscalibration_area": self.miscalibration_area}


def curve_from_levels(q, n_levels: int = N_LEVELS) -> CalibrationCurve:
    p = expected_levels(n_levels)
    q = np.sort(np.asarray(q, dtype=np.float64).ravel())
    observed = np.searchsorted(q, p, side="right") / q.size
    gap = np.abs(observed - p)
    return CalibrationCurve(
        expected=p,
        observed=observed,
        rmsce=math.sqrt(float(np.mean(gap**2))),
        mace=float(np.mean(gap)),
        miscalibration_area=float(integrate.trapezoid(gap, p)),
    )


def calibration_curve(y, mu, sigma, n_levels: int = N_LEVELS) -> CalibrationCurve:
    return curve_from_levels(quantile_levels(y, mu, sigma), n_levels)


def evaluate(y, mean, sigma, n_levels: int = N_LEVELS) -> tuple[dict, CalibrationCurve]:
    """Accuracy and calibration summary (pooled and per output) plus the pooled curve.

    ``sigma`` is floored at :data:`SIGMA_EVAL_FLOOR` so that clamped DQR
    widths stay inside the calibration domain.
    """
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.maximum(np.broadcast_to(np.asarray(sigma, dtype=np.float64), mean.shape), SIGMA_EVAL_FLOOR)
    if y.shape != mean.shape:
        raise MetricsError(f"label shape {y.shape} != prediction shape {mean.shape}")
    y2, m2, s2 = (a.reshape(len(a), -1) for a in (y, mean, sigma))
    pooled = calibration_curve(y2, m2, s2, n_levels)
    per_output = []
    for j in range(y2.shape[1]):
        c = calibration_curve(y2[:, j], m2[:, j], s2[:, j], n_levels)
        per_output.append({"r2": r2(y2[:, j], m2[:, j]), "rmse": rmse(y2[:, j], m2[:, j]), **c.summary()})
    return {
        "n": int(len(y2)),
        "r2": r2(y2, m2),
        "rmse": rmse(y2, m2),
        **pooled.summary(),
        "mean_sigma": float(np.mean(s2)),
        "per_output": per_output,
    }, pooled


# ---------------------------------------------------------------- OOD grid
@dataclass
class OodGridReport:
    """Per-label-triplet RMSE; ``cells`` rows are ``(C_a, C_b, C_c)``."""

    cells: np.ndarray
    rmse: np.ndarray
    counts: np.ndarray
    near: float
    far: float

    def rows(self) -> list[tuple]:
        return [(*map(float, c), float(r), int(n)) for c, r, n in zip(self.cells, self.rmse, self.counts)]


def ood_rmse_grid(mean, labels, grid_values=(2500.0, 2600.0, 2700.0, 2800.0)) -> OodGridReport:
    """RMSE over the 3 outputs for every grid triplet, in lexicographic order."""
    mean = np.asarray(mean, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if mean.shape != labels.shape or labels.ndim != 2:
        raise MetricsError(f"expected matching (N, 3) arrays, got {mean.shape} and {labels.shape}")
    values = np.asarray(grid_values, dtype=np.float64)
    cells = np.array(np.meshgrid(values, values, values, indexing="ij")).reshape(3, -1).T
    err2 = np.mean((mean - labels) ** 2, axis=1)
    out, counts = np.empty(len(cells)), np.zeros(len(cells), dtype=np.int64)
    missing = []
    for i, c in enumerate(cells):
        hit = np.all(np.isclose(labels, c, rtol=0.0, atol=1e-6), axis=1)
        counts[i] = int(hit.sum())
        if counts[i] == 0:
            missing.append(tuple(c))
            continue
        out[i] = math.sqrt(float(np.mean(err2[hit])))
    if missing:
        raise MetricsError(f"{len(missing)} grid cells have no samples, first {missing[0]}")
    unknown = ~np.isin(labels, values).all(axis=1)
    if np.any(unknown):
        raise MetricsError(f"{int(unknown.sum())} labels fall outside the grid")

    def cell(c):
        return float(out[int(np.flatnonzero(np.all(cells == c, axis=1))[0])])

    near = cell(NEAR_CELL) if np.all(np.isin(NEAR_CELL, values)) else float("nan")
    far = cell(FAR_CELL) if np.all(np.isin(FAR_CELL, values)) else float("nan")
    return OodGridReport(cells, out, counts, near, far)


# ---------------------------------------------------------------- distances
@dataclass
class DistanceReport:
    pearson: float
    spearman: float
    input_distances: np.ndarray
    latent_distances: np.ndarray
    layer: str

    def summary(self) -> dict:
        return {
            "layer": self.layer,
            "n_pairs": int(self.input_distances.size),
            "pearson": self.pearson,
            "spearman": self.spearman,
        }


def distance_correlation(x, h, pair_fraction: float = 1.0, seed: int = 0, layer: str = "custom") -> DistanceReport:
    """Correlate pairwise distances of rows of ``x`` with those of ``h``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if len(x) != len(h):
        raise MetricsError("input and latent row counts differ")
    ii, jj = pair_indices(len(x), pair_fraction, seed)
    dx = distances_for_pairs(x, ii, jj)
    dh = distances_for_pairs(h, ii, jj)
    return DistanceReport(pearson_correlation(dx, dh), spearman_correlation(dx, dh), dx, dh, layer)


def distance_report(model, x, pair_fraction: float = 1.0, seed: int = 0, layer: str = "extractor") -> DistanceReport:
    """Input vs. latent distance correlation for a model's feature path.

    ``layer="extractor"`` compares against the first-layer output,
    ``layer="latent"`` against the residual-stack output fed to the RFF map.
    """
    if layer not in ("extractor", "latent"):
        raise MetricsError("layer must be 'extractor' or 'latent'")
    x = np.asarray(x, dtype=np.float64)
    h, _ = model.extract(x)
    if layer == "latent":
        h, _ = model.latent(h)
    return distance_correlation(x, h, pair_fraction, seed, layer)
