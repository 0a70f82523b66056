"""Impulsive-noise cleaning, region windowing and normalization.

The LULU operators are implemented as a flat morphological opening (``L``)
and closing (``U``) with windows clipped at the trace ends.  Clipping is done
by padding with ``+inf`` for the inner minima (``-inf`` for maxima), which
keeps each operator an adjoint erosion/dilation pair and therefore exactly
idempotent.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

N_CHANNELS = 7
VOLTAGE_CHANNEL = 0
STD_FLOOR = 1e-8


class SignalError(ValueError):
    pass


def _check_series(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if n < 1:
        raise SignalError("LULU window n must be >= 1")
    if x.shape[-1] <= 2 * n:
        raise SignalError(f"series of length {x.shape[-1]} too short for window n={n}")
    return x


def _opening(x: np.ndarray, n: int) -> np.ndarray:
    pad = [(0, 0)] * (x.ndim - 1) + [(n, n)]
    xp = np.pad(x, pad, constant_values=np.inf)
    # mins over [j, j+n] for j = -n .. N-1, then maxes over j in [i-n, i]
    mins = sliding_window_view(xp, n + 1, axis=-1).min(axis=-1)
    return sliding_window_view(mins, n + 1, axis=-1).max(axis=-1)


def lulu_lower(x, n: int = 1) -> np.ndarray:
    """``(L_n x)_i = max_{j in [i-n, i]} min_{k in [j, j+n]} x_k``.

    Removes upward impulses of width ``<= n``.  Works along the last axis.
    """
    return _opening(_check_series(x, n), n)


def lulu_upper(x, n: int = 1) -> np.ndarray:
    """Dual of :func:`lulu_lower`; removes downward impulses of width ``<= n``."""
    return -_opening(-_check_series(x, n), n)


def lulu_smooth(x, n: int = 1) -> np.ndarray:
    """``U_n(L_n(x))``; idempotent."""
    x = _check_series(x, n)
    return -_opening(-_opening(x, n), n)


def clean_sample(channels, n: int = 1) -> np.ndarray:
    """Smooth the six current channels of a ``(7, T)`` trace; ``V_out`` is left as is."""
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim != 2 or channels.shape[0] != N_CHANNELS:
        raise SignalError(f"expected {N_CHANNELS} channels, got shape {channels.shape}")
    out = channels.copy()
    out[1:] = lulu_smooth(channels[1:], n)
    return out


@dataclass(frozen=True)
class RegionSpec:
    boot_end: int = 860
    stable_end: int = 3260
    window_len: int = 1000

    def __post_init__(self):
        if not 0 < self.boot_end < self.stable_end:
            raise SignalError("need 0 < boot_end < stable_end")
        if not 1 <= self.window_len <= self.stable_end - self.boot_end:
            raise SignalError("window_len must be in [1, stable_end - boot_end]")

    @property
    def window(self) -> slice:
        return slice(self.stable_end - self.window_len, self.stable_end)

    def n_features(self, n_channels: int = N_CHANNELS) -> int:
        return n_channels * self.window_len

    def to_dict(self) -> dict:
        return asdict(self)


def extract_window(channels, region: RegionSpec = RegionSpec()) -> np.ndarray:
    """Concatenate the last ``window_len`` stable-region samples of every channel."""
    channels = np.asarray(channels)
    if channels.ndim != 2 or channels.shape[0] != N_CHANNELS:
        raise SignalError(f"expected {N_CHANNELS} channels, got shape {channels.shape}")
    if channels.shape[1] < region.stable_end:
        raise SignalError(
            f"trace length {channels.shape[1]} shorter than stable_end={region.stable_end}"
        )
    return channels[:, region.window].reshape(-1).copy()


@dataclass
class ScalerStats:
    """Per-feature and per-label z-score statistics, fitted on the train split."""

    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_mean: np.ndarray
    label_std: np.ndarray

    @classmethod
    def fit(cls, features, labels) -> "ScalerStats":
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        if features.shape[0] == 0 or labels.shape[0] == 0:
            raise SignalError("cannot fit a scaler on an empty partition")
        return cls(
            feature_mean=features.mean(axis=0),
            feature_std=np.maximum(features.std(axis=0), STD_FLOOR),
            label_mean=labels.mean(axis=0),
            label_std=np.maximum(labels.std(axis=0), STD_FLOOR),
        )

    def transform_features(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.feature_mean) / self.feature_std

    def inverse_features(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.feature_std + self.feature_mean

    def transform_labels(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.label_mean) / self.label_std

    def inverse_labels(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.label_std + self.label_mean

    def inverse_sigma(self, s) -> np.ndarray:
        return np.asarray(s, dtype=np.float64) * self.label_std

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature_mean", "feature_std", "label_mean", "label_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in ("feature_mean", "feature_std", "label_mean", "label_std")})


def fit_scaler(train_features, train_labels) -> ScalerStats:
    return ScalerStats.fit(train_features, train_labels)
