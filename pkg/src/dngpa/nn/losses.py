"""Regression losses and their gradients.

All losses are means over every element they touch, so their scale does not
depend on batch size or the number of outputs.
"""

from __future__ import annotations

import numpy as np

QUANTILES = (0.159, 0.5, 0.841)
NLL_SIGMA_FLOOR = 1e-3


class LossError(ValueError):
    pass


def _check_tau(tau):
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0.0) or np.any(tau >= 1.0):
        raise LossError(f"quantile levels must lie in (0, 1), got {tau}")
    return tau


def quantile_loss(y, yhat, tau) -> float:
    """Pinball loss ``max(tau * u, (tau - 1) * u)`` with ``u = y - yhat``, averaged.

    ``tau`` may be a scalar or broadcast against ``yhat`` (e.g. shape
    ``(1, n_quantiles, 1)`` for predictions of shape ``(N, n_quantiles, m)``).
    """
    tau = _check_tau(tau)
    u = np.asarray(y, dtype=np.float64) - np.asarray(yhat, dtype=np.float64)
    return float(np.mean(np.maximum(tau * u, (tau - 1.0) * u)))


def quantile_loss_grad(y, yhat, tau) -> np.ndarray:
    """Gradient of :func:`quantile_loss` w.r.t. ``yhat``; zero at ``y == yhat``."""
    tau = _check_tau(tau)
    yhat = np.asarray(yhat, dtype=np.float64)
    u = np.asarray(y, dtype=np.float64) - yhat
    g = np.where(u > 0, -tau, np.where(u < 0, 1.0 - tau, 0.0))
    g = np.broadcast_to(g, np.broadcast_shapes(g.shape, yhat.shape))
    return g / g.size


def multi_quantile_loss(y, pred, taus=QUANTILES) -> float:
    """Pinball loss for ``pred`` of shape ``(N, len(taus), m)`` against ``y (N, m)``."""
    tau = np.asarray(taus, dtype=np.float64)[None, :, None]
    return quantile_loss(np.asarray(y)[:, None, :], pred, tau)


def multi_quantile_loss_grad(y, pred, taus=QUANTILES) -> np.ndarray:
    tau = np.asarray(taus, dtype=np.float64)[None, :, None]
    return quantile_loss_grad(np.asarray(y)[:, None, :], pred, tau)


def _nll_inputs(y, yhat, sigma, floor):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if y.ndim == 1:
        y, yhat = y[:, None], yhat[:, None]
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat)) and np.all(np.isfinite(sigma))):
        raise LossError("non-finite input to gaussian_nll_loss")
    return y, yhat, sigma, np.maximum(sigma, floor)


def gaussian_nll_loss(y, yhat, sigma, floor=NLL_SIGMA_FLOOR) -> float:
    """Mean of ``(y - yhat)**2 / (2 s**2) + log(s**2) / 2`` with ``s = max(sigma, floor)``.

    ``y`` and ``yhat`` are ``(N,)`` or ``(N, m)``; ``sigma`` is ``(N,)`` (one
    scale shared by all outputs of a sample) or ``(N, m)``.  The mean runs over
    samples and outputs.
    """
    y, yhat, _, s = _nll_inputs(y, yhat, sigma, floor)
    r2 = (y - yhat) ** 2
    return float(np.mean(r2 / (2.0 * s * s) + np.log(s * s) / 2.0))


def gaussian_nll_grad(y, yhat, sigma, floor=NLL_SIGMA_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`gaussian_nll_loss` w.r.t. ``yhat`` and ``sigma``.

    The sigma gradient has the shape of the ``sigma`` argument and is zero
    wherever the floor is active.
    """
    sigma_in = np.asarray(sigma, dtype=np.float64)
    yhat_shape = np.shape(yhat)
    y, yhat, sig2d, s = _nll_inputs(y, yhat, sigma, floor)
    n = np.broadcast_shapes(y.shape, s.shape)
    size = n[0] * n[1]
    r = y - yhat
    dyhat = -r / (s * s) / size
    ds = (-(r * r) / s**3 + 1.0 / s) / size
    ds = np.broadcast_to(ds, n) * (sig2d >= floor)
    if sigma_in.ndim == 1:
        ds = ds.sum(axis=1)
    return dyhat.reshape(yhat_shape), ds
