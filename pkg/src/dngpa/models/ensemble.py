"""Repeated training with consecutive seeds and mean/std summaries."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import metrics
from .assembly import KINDS, ModelConfig, ModelError, build_model
from .predict import predict
from .training import TrainConfig, TrainingDivergence, train

log = logging.getLogger(__name__)

SUMMARY_METRICS = ("r2", "rmse", "rmsce", "mace", "miscalibration_area", "mean_sigma")
SURVIVOR_FRACTION = 0.8


class EnsembleAborted(RuntimeError):
    pass


def min_survivors(n: int) -> int:
    return max(1, math.ceil(SURVIVOR_FRACTION * n))


def evaluate_model(model, dataset) -> dict:
    """ID-test and OOD metrics for one trained model."""
    out = {}
    for split in ("id_test", "ood"):
        x, _ = dataset.normalized(split)
        y = dataset.raw(split)[1]
        pred = predict(model, x)
        summary, _ = metrics.evaluate(y, pred.mean, pred.sigma)
        summary.pop("per_output")
        summary["crossings"] = pred.crossings
        if split == "ood":
            grid = metrics.ood_rmse_grid(pred.mean, y, _grid_values(dataset))
            summary["near_rmse"], summary["far_rmse"] = grid.near, grid.far
        out[split] = summary
    return out


def _grid_values(dataset) -> tuple[float, ...]:
    start, stop, step = dataset.spec.ood_grid
    return tuple(np.arange(start, stop + step / 2, step).tolist())


def run_member(kind: str, dataset, seed: int, train_cfg: TrainConfig, model_cfg: ModelConfig) -> dict:
    row = {"seed": seed, "status": "ok"}
    try:
        model = build_model(kind, dataset, seed, model_cfg)
        result = train(model, dataset, train_cfg)
    except TrainingDivergence as e:
        log.warning("member seed %d diverged: %s", seed, e)
        return {**row, "status": "diverged", "error": str(e)}
    row["best_epoch"] = result.best_epoch
    row.update(evaluate_model(model, dataset))
    return row


def _member_star(args):
    return run_member(*args)


@dataclass
class EnsembleReport:
    kind: str
    n_requested: int
    members: list[dict] = field(default_factory=list)

    @property
    def survivors(self) -> list[dict]:
        return [m for m in self.members if m["status"] == "ok"]

    def summary(self) -> dict:
        """Mean and population std (ddof=0) of every metric over survivors."""
        ok = self.survivors
        out = {"kind": self.kind, "n_requested": self.n_requested, "n_survivors": len(ok)}
        for split in ("id_test", "ood"):
            keys = SUMMARY_METRICS + (("near_rmse", "far_rmse") if split == "ood" else ())
            block = {}
            for k in keys:
                vals = np.array([m[split][k] for m in ok], dtype=np.float64)
                block[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
            out[split] = block
        return out

    def member_rows(self) -> list[dict]:
        """Flat per-member records for the raw dump."""
        rows = []
        for m in self.members:
            row = {"seed": m["seed"], "status": m["status"]}
            for split in ("id_test", "ood"):
                for k in SUMMARY_METRICS:
                    row[f"{split}_{k}"] = m[split][k] if m["status"] == "ok" else float("nan")
            rows.append(row)
        return rows


def run_ensemble(
    kind: str,
    dataset,
    train_cfg: TrainConfig = TrainConfig(),
    model_cfg: ModelConfig = ModelConfig(),
    base_seed: int = 0,
    n: int | None = None,
    workers: int = 1,
    seeds: list[int] | None = None,
) -> EnsembleReport:
    """Train ``n`` members with seeds ``base_seed + i``.

    Members are independent; with ``workers > 1`` they run in separate
    processes and are merged in seed order, so the report does not depend on
    the worker count.  Diverged members are dropped; fewer than 80 % survivors
    aborts.
    """
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}")
    n = train_cfg.ensemble_size if n is None else n
    if seeds is None:
        seeds = [base_seed + i for i in range(n)]
    if len(seeds) < 1:
        raise ValueError("ensemble needs at least one member")
    jobs = [(kind, dataset, s, train_cfg, model_cfg) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_member_star, jobs))
    else:
        members = [_member_star(j) for j in jobs]
    report = EnsembleReport(kind, len(seeds), members)
    if len(report.survivors) < min_survivors(len(seeds)):
        raise EnsembleAborted(
            f"only {len(report.survivors)} of {len(seeds)} members survived; need {min_survivors(len(seeds))}"
        )
    return report
