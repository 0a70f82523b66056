"""Mini-batch training with per-kind objectives.

* DNGPA kinds: Gaussian NLL with the mean from the bias-free head and the
  standard deviation from the GP head.  The precision factor is rebuilt from
  the full training set at the end of every epoch and held fixed in between.
* BNN: Gaussian NLL with mean and standard deviation taken over a few
  relaxed-dropout passes, so the dropout rate receives gradients.  For the
  first ``sigma_warmup_epochs`` the standard deviation is held constant in
  the gradient; without this the spread term rewards inflating the latent
  until dropout passes decorrelate and the mean collapses.
* DQR: pinball loss over the three quantile levels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..nn.layers import Context
from ..nn.losses import (
    NLL_SIGMA_FLOOR,
    QUANTILES,
    gaussian_nll_grad,
    gaussian_nll_loss,
    multi_quantile_loss,
    multi_quantile_loss_grad,
)
from ..nn.optim import Adam
from .assembly import N_OUTPUTS, ModelAssembly

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "test_loss", "lengthscale", "noise", "dropout_p")

# Per-kind defaults, picked by ID-test fit.  Models with a trainable
# 7000-wide input layer need a smaller step than the frozen-SVD model.
DEFAULT_LR = {"svd_dngpa": 3e-3, "dngpa": 1e-3, "bnn": 3e-4, "dqr": 3e-4}
DEFAULT_SIGMA_WARMUP = {"svd_dngpa": 0, "dngpa": 0, "bnn": 100, "dqr": 0}


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    patience: int = 25
    mc_passes: int = 50
    mc_train_passes: int = 8
    ensemble_size: int = 15
    nll_floor: float = NLL_SIGMA_FLOOR
    spectral_iters: int = 1
    spectral_tol: float = 1e-6
    sigma_warmup_epochs: int | None = None
    lengthscale_recalibrate_epochs: int = 1

    def __post_init__(self):
        for name in ("epochs", "batch_size", "mc_passes", "mc_train_passes", "ensemble_size", "spectral_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.mc_train_passes < 2:
            raise ValueError("mc_train_passes must be >= 2 to form a standard deviation")
        if self.patience < 0 or (self.lr is not None and self.lr <= 0) or self.nll_floor <= 0:
            raise ValueError("patience must be >= 0; lr and nll_floor positive")
        if self.spectral_tol <= 0:
            raise ValueError("spectral_tol must be positive")
        if self.sigma_warmup_epochs is not None and self.sigma_warmup_epochs < 0:
            raise ValueError("sigma_warmup_epochs must be >= 0")
        if self.lengthscale_recalibrate_epochs < 0:
            raise ValueError("lengthscale_recalibrate_epochs must be >= 0")

    def resolved(self, kind: str) -> "TrainConfig":
        """Copy with the per-kind defaults filled in."""
        return replace(
            self,
            lr=DEFAULT_LR[kind] if self.lr is None else self.lr,
            sigma_warmup_epochs=DEFAULT_SIGMA_WARMUP[kind] if self.sigma_warmup_epochs is None else self.sigma_warmup_epochs,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _finite(value: float, what: str, epoch: int):
    if not math.isfinite(value):
        raise TrainingDivergence(f"non-finite {what} at epoch {epoch}")


# --------------------------------------------------------------------- objectives
def _dngpa_step(model: ModelAssembly, z, y, ctx, cfg: TrainConfig, sigma_grad: bool) -> float:
    out, phi, cache = model.trunk(z, ctx)
    sigma, gcache = model.gp.train_sigma(phi)
    loss = gaussian_nll_loss(y, out, sigma, cfg.nll_floor)
    dout, dsigma = gaussian_nll_grad(y, out, sigma, cfg.nll_floor)
    dsigma = dsigma if sigma_grad else np.zeros_like(dsigma)
    dphi = model.gp.train_sigma_backward(gcache, dsigma)
    return loss, model.trunk_backward(cache, dout, dphi)


def _dqr_step(model: ModelAssembly, z, y, ctx, cfg: TrainConfig, sigma_grad: bool) -> float:
    out, _, cache = model.trunk(z, ctx)
    pred = out.reshape(-1, len(QUANTILES), N_OUTPUTS)
    loss = multi_quantile_loss(y, pred, QUANTILES)
    dout = multi_quantile_loss_grad(y, pred, QUANTILES).reshape(out.shape)
    return loss, model.trunk_backward(cache, dout)


def _bnn_step(model: ModelAssembly, z, y, ctx, cfg: TrainConfig, sigma_grad: bool) -> float:
    m = cfg.mc_train_passes
    outs, caches = [], []
    for _ in range(m):
        out, _, cache = model.trunk(z, ctx)
        outs.append(out)
        caches.append(cache)
    stack = np.stack(outs)
    mu = stack.mean(axis=0)
    sd = stack.std(axis=0)
    loss = gaussian_nll_loss(y, mu, sd, cfg.nll_floor)
    dmu, dsd = gaussian_nll_grad(y, mu, sd, cfg.nll_floor)
    dsd = dsd if sigma_grad else np.zeros_like(dsd)
    safe = np.where(sd > 0, sd, 1.0)
    dz = np.zeros_like(z)
    for out, cache in zip(outs, caches):
        dout = dmu / m + dsd * (out - mu) / (m * safe) * (sd > 0)
        dz += model.trunk_backward(cache, dout)
    return loss, dz


_STEPS = {"svd_dngpa": _dngpa_step, "dngpa": _dngpa_step, "dqr": _dqr_step, "bnn": _bnn_step}


def evaluation_loss(model: ModelAssembly, x, y, cfg: TrainConfig, seed: int = 0) -> float:
    """Objective on held-out data with stochastic layers off (BNN: fixed-seed MC)."""
    z, _ = model.extract(x)
    if model.is_dngpa:
        out, phi, _ = model.trunk(z)
        sigma = np.sqrt(np.maximum(model.gp.variance(phi), 0.0))
        return gaussian_nll_loss(y, out, sigma, cfg.nll_floor)
    if model.kind == "dqr":
        out, _, _ = model.trunk(z)
        return multi_quantile_loss(y, out.reshape(-1, len(QUANTILES), N_OUTPUTS), QUANTILES)
    ctx = Context("mc", np.random.default_rng(seed))
    stack = np.stack([model.trunk(z, ctx)[0] for _ in range(cfg.mc_train_passes)])
    return gaussian_nll_loss(y, stack.mean(axis=0), stack.std(axis=0), cfg.nll_floor)


def _history_row(model: ModelAssembly, epoch, train_loss, test_loss) -> dict:
    return {
        "epoch": epoch,
        "train_loss": train_loss,
        "test_loss": test_loss,
        "lengthscale": model.rff.lengthscale,
        "noise": model.gp.noise if model.gp is not None else float("nan"),
        "dropout_p": model.dropout_rate if model.kind == "bnn" else float("nan"),
    }


def train(model: ModelAssembly, dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train ``model`` in place on the dataset's train split.

    Early stopping watches the ID-test objective and restores the best epoch's
    parameters; it cannot fire during the sigma warm-up.  With a trainable
    extractor the RFF lengthscale is reset by the median heuristic at the end
    of each of the first ``lengthscale_recalibrate_epochs`` epochs.
    Deterministic for a fixed model seed.
    """
    cfg = cfg.resolved(model.kind)
    x_tr, y_tr = dataset.normalized("train")
    x_te, y_te = dataset.normalized("id_test")
    order_rng = np.random.default_rng(model._order_ss)
    ctx = Context("train", np.random.default_rng(model._dropout_ss), relaxed=model.kind == "bnn")
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    step = _STEPS[model.kind]
    params, grads = model.parameters(), model.gradients()

    # a frozen extractor is a fixed preprocessing step
    z_frozen = model.extract(x_tr)[0] if model.extractor_frozen else None
    if model.is_dngpa:
        model.refresh_gp(x_tr)

    result = TrainResult()
    best, best_snap, waited = math.inf, None, 0
    n = len(x_tr)
    for epoch in range(1, cfg.epochs + 1):
        perm = order_rng.permutation(n)
        sigma_grad = epoch > cfg.sigma_warmup_epochs
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            model.zero_grad()
            model.step_spectral(cfg.spectral_iters, cfg.spectral_tol)
            if z_frozen is not None:
                loss, _ = step(model, z_frozen[idx], y_tr[idx], ctx, cfg, sigma_grad)
            else:
                z, ecache = model.extract(x_tr[idx], ctx)
                loss, dz = step(model, z, y_tr[idx], ctx, cfg, sigma_grad)
                model.extractor.backward(ecache, dz)
            _finite(loss, "training loss", epoch)
            opt.step(params, grads)
            total += loss * len(idx)
        # catch the estimate up with the last update before anything reads the caps
        model.step_spectral(cfg.spectral_iters, cfg.spectral_tol)
        if z_frozen is None and epoch <= cfg.lengthscale_recalibrate_epochs:
            # a trainable extractor rescales the latent within the first epoch, far
            # beyond what gradient steps on the lengthscale can follow
            model.calibrate_lengthscale(x_tr)
        if model.is_dngpa:
            model.refresh_gp(x_tr)
        test_loss = evaluation_loss(model, x_te, y_te, cfg, seed=epoch)
        _finite(test_loss, "test loss", epoch)
        result.history.append(_history_row(model, epoch, total / n, test_loss))
        if test_loss < best:
            best, best_snap, waited = test_loss, model.snapshot(), 0
            result.best_epoch = epoch
        else:
            waited += 1
            if cfg.patience and waited >= cfg.patience and epoch > cfg.sigma_warmup_epochs:
                result.stopped_early = True
                log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    if best_snap is not None:
        model.restore(best_snap)
    return result
