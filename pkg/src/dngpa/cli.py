"""Command-line pipeline: data generation, SVD analysis, training, evaluation.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
divergence.  Reports are JSON with sorted keys and CSV files; they contain no
timestamps, which go to ``run.log`` in the output directory instead.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import ConfigError, RunConfig, load_config
from .linalg import LinalgError, expected_norm_degradation, pair_indices, truncated_svd
from .models import KINDS, ModelError, TrainingDivergence, build_model, predict, train
from .models.checkpoint import load_checkpoint, save_checkpoint
from .models.ensemble import EnsembleAborted, run_ensemble
from .models.training import HISTORY_COLUMNS
from .signal import SignalError
from .simgen import SimulationError, build_dataset, load_dataset, save_dataset

OUT_ENV = "DNGPA_OUT"
DEFAULT_OUT = "dngpa_out"
EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("dngpa")

CSV_FORMATS = """\
CSV files (header row first):
  history.csv         epoch, train_loss, test_loss, lengthscale, noise, dropout_p
  predictions.csv     index, label_a, label_b, label_c, mean_a, mean_b, mean_c,
                      sigma_a, sigma_b, sigma_c   (pF)
  calibration.csv     expected, observed   (pooled over the three outputs)
  ensemble_members.csv seed, status, {id_test,ood}_{r2,rmse,rmsce,mace,
                      miscalibration_area,mean_sigma}
  distance_pairs.csv  i, j, input_distance, latent_distance
  ood_grid.csv        c_a, c_b, c_c, rmse, n
  svd_spectrum.csv    index, singular_value
"""


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- io helpers
def _out_dir(arg) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _attach_log(out: Path):
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("dngpa").addHandler(handler)
    logging.getLogger("dngpa").setLevel(logging.INFO)
    return handler


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_data(path) -> "object":
    if path is None:
        raise UsageError("--data is required")
    p = Path(path)
    if not (p / "dataset.json").exists():
        raise UsageError(f"no dataset found at {p}")
    return load_dataset(p)


def _features(model, dataset, split: str):
    x, y = dataset.raw(split)
    if x.shape[1] != model.n_features:
        raise UsageError(f"dataset width {x.shape[1]} does not match model width {model.n_features}")
    return model.scaler.transform_features(x), y


# ---------------------------------------------------------------- commands
def cmd_gen_data(args, cfg: RunConfig, out: Path) -> dict:
    ds = build_dataset(cfg.dataset_spec(), cfg.simgen)
    save_dataset(ds, out)
    report = {"counts": ds.counts(), "feature_width": ds.n_features, "config": cfg.to_dict()}
    write_json(out / "gen_report.json", report)
    return report


def cmd_svd_report(args, cfg: RunConfig, out: Path) -> dict:
    ds = _load_data(args.data)
    x, _ = ds.normalized("train")
    basis = truncated_svd(x, args.k, oversample=cfg.model.svd_oversample, method=cfg.model.svd_method)
    norms = np.linalg.norm(x, axis=1)
    proj = np.linalg.norm(basis.project(x), axis=1)
    within = (norms - basis.tail_energy <= proj) & (proj <= norms + 1e-9)
    report = {
        "k": basis.k,
        "n_samples": basis.n_samples,
        "n_features": basis.n_features,
        "exact": basis.exact,
        "tail_energy": basis.tail_energy,
        "frobenius_norm": basis.frobenius_norm,
        "min_sample_norm": float(norms.min()),
        "max_norm_loss": float(np.max(norms - proj)),
        "expected_degradation": expected_norm_degradation(basis),
        "rows_within_bound": int(within.sum()),
        "bound_holds": bool(within.all()),
    }
    write_json(out / "svd_report.json", report)
    write_csv(out / "svd_spectrum.csv", ("index", "singular_value"), enumerate(basis.singular_values))
    return report


def cmd_train(args, cfg: RunConfig, out: Path) -> dict:
    ds = _load_data(args.data)
    kind = args.kind or cfg.kind
    cfg = cfg.with_kind(kind)
    seed = cfg.seeds.model if args.seed is None else args.seed
    model = build_model(kind, ds, seed, cfg.model)
    result = train(model, ds, cfg.training)
    resolved = cfg.to_dict()
    save_checkpoint(model, out / "model", extra={"run_config": resolved})
    write_csv(out / "history.csv", HISTORY_COLUMNS, ([h[c] for c in HISTORY_COLUMNS] for h in result.history))
    report = {
        "kind": kind,
        "seed": seed,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "final_lengthscale": model.rff.lengthscale,
        "final_noise": model.gp.noise if model.gp is not None else None,
        "final_dropout_p": model.dropout_rate if kind == "bnn" else None,
        "config": resolved,
    }
    write_json(out / "train_report.json", report)
    return report


def _load_model(args):
    if args.model is None:
        raise UsageError("--model is required")
    return load_checkpoint(args.model)


def cmd_evaluate(args, cfg: RunConfig, out: Path) -> dict:
    model = _load_model(args)
    ds = _load_data(args.data)
    x, y = _features(model, ds, args.split)
    pred = predict(model, x, mc_passes=cfg.training.mc_passes)
    summary, curve = metrics.evaluate(y, pred.mean, pred.sigma, cfg.metrics.n_levels)
    summary.update({"kind": model.kind, "seed": model.seed, "split": args.split, "crossings": pred.crossings})
    write_json(out / "metrics.json", summary)
    write_csv(out / "calibration.csv", ("expected", "observed"), zip(curve.expected, curve.observed))
    header = ["index", "label_a", "label_b", "label_c", "mean_a", "mean_b", "mean_c", "sigma_a", "sigma_b", "sigma_c"]
    rows = ([i, *y[i], *pred.mean[i], *pred.sigma[i]] for i in range(len(y)))
    write_csv(out / "predictions.csv", header, rows)
    return summary


def cmd_ensemble(args, cfg: RunConfig, out: Path) -> dict:
    ds = _load_data(args.data)
    kind = args.kind or cfg.kind
    cfg = cfg.with_kind(kind)
    n = cfg.training.ensemble_size if args.n is None else args.n
    if n < 1:
        raise UsageError("--n must be >= 1")
    base = cfg.seeds.ensemble_base if args.base_seed is None else args.base_seed
    report = run_ensemble(kind, ds, cfg.training, cfg.model, base_seed=base, n=n, workers=args.workers)
    summary = report.summary()
    summary["seeds"] = [m["seed"] for m in report.members]
    summary["config"] = cfg.to_dict()
    write_json(out / "ensemble_summary.json", summary)
    rows = report.member_rows()
    header = list(rows[0].keys())
    write_csv(out / "ensemble_members.csv", header, ([r[h] for h in header] for r in rows))
    return summary


def cmd_distance_report(args, cfg: RunConfig, out: Path) -> dict:
    model = _load_model(args)
    ds = _load_data(args.data)
    x, _ = _features(model, ds, "train")
    rows = cfg.metrics.distance_rows if args.rows is None else args.rows
    if rows:
        x = x[:rows]
    layer = args.layer or cfg.metrics.distance_layer
    frac = cfg.metrics.pair_fraction if args.pair_fraction is None else args.pair_fraction
    rep = metrics.distance_report(model, x, frac, cfg.seeds.pairs, layer)
    summary = {**rep.summary(), "kind": model.kind, "seed": model.seed, "n_rows": int(len(x))}
    write_json(out / "distance.json", summary)
    ii, jj = pair_indices(len(x), frac, cfg.seeds.pairs)
    write_csv(
        out / "distance_pairs.csv",
        ("i", "j", "input_distance", "latent_distance"),
        zip(ii.tolist(), jj.tolist(), rep.input_distances, rep.latent_distances),
    )
    return summary


def cmd_ood_grid(args, cfg: RunConfig, out: Path) -> dict:
    model = _load_model(args)
    ds = _load_data(args.data)
    x, y = _features(model, ds, "ood")
    pred = predict(model, x, mc_passes=cfg.training.mc_passes)
    start, stop, step = ds.spec.ood_grid
    grid = metrics.ood_rmse_grid(pred.mean, y, tuple(np.arange(start, stop + step / 2, step).tolist()))
    write_csv(out / "ood_grid.csv", ("c_a", "c_b", "c_c", "rmse", "n"), grid.rows())
    summary = {
        "kind": model.kind,
        "seed": model.seed,
        "near_rmse": grid.near,
        "far_rmse": grid.far,
        "n_cells": int(len(grid.cells)),
        "overall_rmse": metrics.rmse(y, pred.mean),
    }
    write_json(out / "ood_grid.json", summary)
    return summary


COMMANDS = {
    "gen-data": cmd_gen_data,
    "svd-report": cmd_svd_report,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ensemble": cmd_ensemble,
    "distance-report": cmd_distance_report,
    "ood-grid": cmd_ood_grid,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dngpa",
        description="Distance-preserving GP-approximation regressors for waveform capacitance estimation.",
        epilog=CSV_FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, *opts):
        sp = sub.add_parser(name, help=help_text, epilog=CSV_FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="JSON run configuration (defaults if omitted)")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
        for opt in opts:
            opt(sp)
        return sp

    def data(sp):
        sp.add_argument("--data", help="dataset directory written by gen-data")

    def model(sp):
        sp.add_argument("--model", help="checkpoint directory written by train")

    def kind(sp):
        sp.add_argument("--kind", choices=KINDS, help="model kind (default: config model.kind)")

    add("gen-data", "simulate, clean and save the dataset")
    add("svd-report", "singular spectrum and norm-preservation check", data,
        lambda sp: sp.add_argument("--k", type=int, default=64, help="retained components"))
    add("train", "train one model and write a checkpoint", data, kind,
        lambda sp: sp.add_argument("--seed", type=int, help="model seed (default: config seeds.model)"))
    add("evaluate", "predict a split and compute accuracy and calibration", model, data,
        lambda sp: sp.add_argument("--split", choices=("id", "ood", "id_test", "train"), default="id"))
    add("ensemble", "train repeated seeds and summarize mean and std", data, kind,
        lambda sp: sp.add_argument("--n", type=int, help="members (default: training.ensemble_size)"),
        lambda sp: sp.add_argument("--base-seed", type=int, help="first seed (default: seeds.ensemble_base)"),
        lambda sp: sp.add_argument("--workers", type=int, default=1, help="parallel worker processes"))
    add("distance-report", "correlate input and latent pair distances", model, data,
        lambda sp: sp.add_argument("--layer", choices=("extractor", "latent")),
        lambda sp: sp.add_argument("--pair-fraction", type=float),
        lambda sp: sp.add_argument("--rows", type=int, help="use the first N train rows (0 = all)"))
    add("ood-grid", "per-triplet RMSE over the OOD grid", model, data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "split", None) == "id":
        args.split = "id_test"
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if hasattr(args, "data") and args.data is None:
        args.data = cfg.paths.data
    out = _out_dir(args.out or cfg.paths.out)
    handler = _attach_log(out)
    try:
        log.info("%s started", args.command)
        report = COMMANDS[args.command](args, cfg, out)
        log.info("%s finished", args.command)
        print(json.dumps(_headline(report), sort_keys=True))
        return EXIT_OK
    except (TrainingDivergence, EnsembleAborted) as e:
        log.error("diverged: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, ModelError, SimulationError, SignalError, LinalgError, metrics.MetricsError) as e:
        log.error("invalid input: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        logging.getLogger("dngpa").removeHandler(handler)
        handler.close()


def _headline(report: dict) -> dict:
    return {k: v for k, v in report.items() if not isinstance(v, (dict, list))}


if __name__ == "__main__":
    sys.exit(main())
