from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn.layers import Context
from ..nn.losses import QUANTILES
from .assembly import N_OUTPUTS, ModelAssembly
from .gp import gp_posterior_sigma


@dataclass
class Prediction:
    """Batch of predictions in pF; row ``i`` belongs to input sample ``i``.

    ``sigma`` is a standard deviation per output.  For DQR, ``quantiles`` has
    shape ``(N, 3 levels, 3 outputs)`` and ``crossings`` counts outputs whose
    quantile gaps averaged to a negative width (clamped to zero).
    """

    mean: np.ndarray
    sigma: np.ndarray
    quantiles: np.ndarray | None = None
    crossings: int = 0

    def __len__(self):
        return len(self.mean)


def dqr_sigma(quantiles: np.ndarray) -> tuple[np.ndarray, int]:
    """Average of the lower and upper one-sigma quantile gaps, clamped at 0."""
    lo, med, hi = quantiles[:, 0], quantiles[:, 1], quantiles[:, 2]
    s = 0.5 * ((med - lo) + (hi - med))
    return np.maximum(s, 0.0), int(np.sum(s < 0))


def predict(model: ModelAssembly, x, mc_passes: int = 50, seed: int | None = None, batch: int = 2048) -> Prediction:
    """Predict capacitances (pF) for normalized features ``x``.

    DNGPA kinds and DQR use one deterministic pass.  BNN averages ``mc_passes``
    hard-dropout passes; the MC stream is seeded from the model seed unless
    ``seed`` is given, so repeated calls agree.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.concatenate([model.extract(x[s : s + batch])[0] for s in range(0, max(len(x), 1), batch)])
    sc = model.scaler
    if model.is_dngpa:
        out, phi, _ = model.trunk(z)
        sig = gp_posterior_sigma(model.gp, phi)
        mean = sc.inverse_labels(out)
        sigma = sc.inverse_sigma(np.repeat(sig[:, None], N_OUTPUTS, axis=1))
        return Prediction(mean, sigma)
    if model.kind == "dqr":
        out, _, _ = model.trunk(z)
        q = sc.inverse_labels(out.reshape(-1, len(QUANTILES), N_OUTPUTS))
        sigma, crossings = dqr_sigma(q)
        return Prediction(q[:, 1].copy(), sigma, q, crossings)
    rng = np.random.default_rng(model._infer_ss if seed is None else seed)
    ctx = Context("mc", rng)
    stack = np.stack([model.trunk(z, ctx)[0] for _ in range(mc_passes)])
    return Prediction(sc.inverse_labels(stack.mean(axis=0)), sc.inverse_sigma(stack.std(axis=0)))
