"""End-to-end acceptance criteria.

Each test records one PASS/FAIL line through the ``criterion`` fixture; the
lines are printed together at the end of the pytest run.  The trend criteria
train every model kind on the default surrogate dataset with five seeds,
which takes most of an hour on one CPU core.
"""

import json
import time

import numpy as np
import pytest
from test_metrics import brute_force_calibration
from test_nn import fixed_ctx, layer_grad_error, rand

from dngpa import cli
from dngpa.linalg import truncated_svd
from dngpa.metrics import calibration_curve, distance_report
from dngpa.models import KINDS, build_model, train
from dngpa.models.ensemble import evaluate_model
from dngpa.models.gp import GpHead, gp_posterior_sigma
from dngpa.nn import (
    ConcreteDropout,
    Dense,
    Dropout,
    FrozenProjection,
    Relu,
    ResidualBlock,
    RffLayer,
    SpectralNormDense,
    finite_difference_check,
    gaussian_nll_grad,
    gaussian_nll_loss,
    multi_quantile_loss,
    multi_quantile_loss_grad,
)
from dngpa.signal import lulu_smooth

N_SEEDS = 5


# ---------------------------------------------------------------- property criteria
def test_svd_norm_bound(default_dataset, criterion):
    x, _ = default_dataset.normalized("train")
    t0 = time.perf_counter()
    basis = truncated_svd(x, 64)
    norms = np.linalg.norm(x, axis=1)
    proj = np.linalg.norm(x @ basis.W, axis=1)
    ok_rows = int(np.sum((norms - basis.tail_energy <= proj) & (proj <= norms + 1e-9)))
    elapsed = time.perf_counter() - t0
    criterion(
        1,
        ok_rows == len(x) and elapsed < 10.0,
        f"{ok_rows}/{len(x)} rows inside the bracket, tail energy {basis.tail_energy:.4g}, {elapsed:.1f} s",
    )


def test_gradient_suite(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {
        "dense": layer_grad_error(Dense(6, 4, rng), rand(5, 6)),
        "sn_dense": layer_grad_error(SpectralNormDense(6, 5, 0.5, rng), rand(5, 6)),
        "frozen_projection": layer_grad_error(FrozenProjection(rand(6, 3)), rand(5, 6)),
        "relu": layer_grad_error(Relu(), rand(5, 6)),
        "dropout": layer_grad_error(Dropout(0.3), rand(5, 6), fixed_ctx("train")),
        "concrete_dropout": layer_grad_error(
            ConcreteDropout(np.array([-1.0]), np.zeros(1)), rand(5, 6), fixed_ctx("train", relaxed=True)
        ),
        "residual_block": layer_grad_error(
            ResidualBlock(5, rng, 0.8, ConcreteDropout(np.array([-1.5]), np.zeros(1))),
            rand(6, 5),
            fixed_ctx("train", relaxed=True),
        ),
        "rff": layer_grad_error(RffLayer(4, 16, rng, 1.7), rand(5, 4)),
    }
    y, yhat, sigma = rand(6, 3), rand(6, 3, seed=1), 0.5 + np.abs(rand(6, seed=2))
    dy, ds = gaussian_nll_grad(y, yhat, sigma)
    errors["gaussian_nll"] = finite_difference_check(lambda: gaussian_nll_loss(y, yhat, sigma), [yhat, sigma], [dy, ds])
    pred = rand(6, 3, 3, seed=3)
    errors["pinball"] = finite_difference_check(lambda: multi_quantile_loss(y, pred), [pred], [multi_quantile_loss_grad(y, pred)])
    head = GpHead(8, 0.3)
    head.refresh(np.cos(rand(20, 8, seed=4)))
    phi, r = np.cos(rand(5, 8, seed=5)), rand(5, seed=6)
    head.zero_grad()
    _, cache = head.train_sigma(phi)
    dphi = head.train_sigma_backward(cache, r)
    errors["gp_sigma"] = finite_difference_check(
        lambda: float(np.sum(head.train_sigma(phi)[0] * r)), [phi, head.params["raw_noise"]], [dphi, head.grads["raw_noise"].copy()]
    )
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    criterion(
        2,
        errors[worst] <= 1e-4 and elapsed < 60.0,
        f"{len(errors)} checks, worst {worst} {errors[worst]:.2e}, {elapsed:.1f} s",
    )


def test_gp_head_oracle(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 21)), int(rng.integers(1, 9))
        phi, star = rng.standard_normal((n, d)), rng.standard_normal((4, d))
        head = GpHead(d, float(rng.uniform(0.05, 1.0)))
        head.refresh(phi)
        s2 = head.noise**2
        k, kx = phi @ phi.T, phi @ star.T
        direct = np.sum(star * star, axis=1) - np.sum(kx * np.linalg.solve(k + s2 * np.eye(n), kx), axis=0)
        worst = max(worst, float(np.max(np.abs(gp_posterior_sigma(head, star) - np.sqrt(np.maximum(direct, 0))))))
    elapsed = time.perf_counter() - t0
    criterion(3, worst <= 1e-10 and elapsed < 5.0, f"max |sigma diff| {worst:.2e} over 100 instances, {elapsed:.2f} s")


def test_rff_kernel_fidelity(criterion):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    layer = RffLayer(64, 128, rng, lengthscale=1.0)
    a, b = rng.standard_normal((1000, 64)), rng.standard_normal((1000, 64))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    dev = np.abs(np.sum(layer(a) * layer(b), axis=1) - np.exp(-np.sum((a - b) ** 2, axis=1) / 2))
    elapsed = time.perf_counter() - t0
    criterion(4, dev.mean() <= 0.08 and elapsed < 5.0, f"mean deviation {dev.mean():.4f}, max {dev.max():.4f}, {elapsed:.2f} s")


def test_lulu_properties(criterion):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    idempotent = 0
    for _ in range(1000):
        x = np.cumsum(rng.standard_normal(int(rng.integers(8, 200))))
        hits = rng.random(x.size) < 0.05
        x[hits] += rng.choice((-1, 1), hits.sum()) * rng.uniform(5, 20, hits.sum())
        once = lulu_smooth(x, 1)
        idempotent += bool(np.array_equal(lulu_smooth(once, 1), once))
    spike = np.array_equal(lulu_smooth([0, 0, 10, 0, 0], 1), np.zeros(5))
    mono = np.sort(rng.standard_normal(100))
    fixed = np.array_equal(lulu_smooth(mono, 1), mono) and np.array_equal(lulu_smooth(mono[::-1], 1), mono[::-1])
    elapsed = time.perf_counter() - t0
    criterion(
        5,
        idempotent == 1000 and spike and fixed and elapsed < 5.0,
        f"idempotent {idempotent}/1000, spike removed {spike}, monotone fixed {fixed}, {elapsed:.2f} s",
    )


def test_calibration_oracle(criterion):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        mu = rng.normal(3000, 300, (n, 3))
        sigma = rng.uniform(1, 50, (n, 3))
        y = mu + rng.standard_normal((n, 3)) * rng.uniform(5, 60)
        c = calibration_curve(y, mu, sigma)
        _, rmsce, mace, area = brute_force_calibration(y, mu, sigma, 100)
        worst = max(worst, abs(c.rmsce - rmsce), abs(c.mace - mace), abs(c.miscalibration_area - area))
    mu, sigma = rng.normal(0, 5, 100_000), rng.uniform(0.5, 3, 100_000)
    perfect = calibration_curve(mu + sigma * rng.standard_normal(100_000), mu, sigma).mace
    elapsed = time.perf_counter() - t0
    criterion(
        6,
        worst <= 1e-12 and perfect <= 0.01 and elapsed < 10.0,
        f"max metric diff {worst:.1e} over 100 sets, calibrated MACE {perfect:.4f}, {elapsed:.1f} s",
    )


# ---------------------------------------------------------------- trend criteria
@pytest.fixture(scope="module")
def trend_runs(default_dataset):
    """Every kind trained with seeds 0..4 at the default configuration."""
    x_id, _ = default_dataset.normalized("id_test")
    runs = {k: [] for k in KINDS}
    for kind in KINDS:
        for seed in range(N_SEEDS):
            t0 = time.perf_counter()
            model = build_model(kind, default_dataset, seed)
            train(model, default_dataset)
            row = evaluate_model(model, default_dataset)
            row["seconds"] = time.perf_counter() - t0
            if model.is_dngpa:
                row["distance_pearson"] = distance_report(model, x_id).pearson
            runs[kind].append(row)
    return runs


def _mean(rows, split, key):
    return float(np.mean([r[split][key] for r in rows]))


@pytest.mark.slow
def test_id_accuracy(trend_runs, criterion):
    r = trend_runs["svd_dngpa"][0]
    r2, rmse = r["id_test"]["r2"], r["id_test"]["rmse"]
    minutes = r["seconds"] / 60
    criterion(7, r2 >= 0.99 and rmse <= 10.0 and minutes <= 20, f"R2 {r2:.5f}, RMSE {rmse:.2f} pF, {minutes:.1f} min")


@pytest.mark.slow
def test_distance_ordering(trend_runs, criterion):
    svd = float(np.mean([r["distance_pearson"] for r in trend_runs["svd_dngpa"]]))
    sn = float(np.mean([r["distance_pearson"] for r in trend_runs["dngpa"]]))
    criterion(8, svd - sn >= 0.01, f"pearson SVD {svd:.5f} vs SN dense {sn:.5f} (5 seeds)")


@pytest.mark.slow
def test_ood_trend(trend_runs, criterion):
    ratios = {k: min(r["ood"]["rmse"] / r["id_test"]["rmse"] for r in rows) for k, rows in trend_runs.items()}
    svd = trend_runs["svd_dngpa"]
    far, near = _mean(svd, "ood", "far_rmse"), _mean(svd, "ood", "near_rmse")
    ood = {k: _mean(rows, "ood", "rmse") for k, rows in trend_runs.items()}
    ok = (
        all(v > 2.0 for v in ratios.values())
        and far > near
        and ood["svd_dngpa"] <= ood["dqr"]
        and ood["svd_dngpa"] <= ood["bnn"]
    )
    criterion(
        9,
        ok,
        "min OOD/ID ratio "
        + ", ".join(f"{k} {v:.1f}" for k, v in ratios.items())
        + f"; SVD far {far:.0f} > near {near:.0f}; mean OOD RMSE "
        + ", ".join(f"{k} {v:.0f}" for k, v in ood.items()),
    )


@pytest.mark.slow
def test_gp_uncertainty_growth(trend_runs, criterion):
    pairs = [
        (k, r["ood"]["mean_sigma"], r["id_test"]["mean_sigma"]) for k in ("svd_dngpa", "dngpa") for r in trend_runs[k]
    ]
    ok = all(o > i for _, o, i in pairs)
    lowest = min(pairs, key=lambda p: p[1] / p[2])
    criterion(10, ok, f"OOD sigma > ID sigma for {sum(o > i for _, o, i in pairs)}/{len(pairs)} models; tightest {lowest[0]} {lowest[1]:.1f} vs {lowest[2]:.1f} pF")


# ---------------------------------------------------------------- CLI criteria
@pytest.mark.slow
def test_ensemble_protocol(default_dataset_dir, trend_runs, tmp_path, criterion):
    t0 = time.perf_counter()
    rc = cli.main(["ensemble", "--data", str(default_dataset_dir), "--kind", "svd_dngpa", "--n", "15", "--out", str(tmp_path / "e15")])
    elapsed = time.perf_counter() - t0
    rc1 = cli.main(["ensemble", "--data", str(default_dataset_dir), "--kind", "svd_dngpa", "--n", "1", "--out", str(tmp_path / "e1")])
    s15 = json.loads((tmp_path / "e15" / "ensemble_summary.json").read_text())
    s1 = json.loads((tmp_path / "e1" / "ensemble_summary.json").read_text())
    keys = ("r2", "rmse", "rmsce", "mace")
    shape_ok = all(set(s15[split][k]) == {"mean", "std"} for split in ("id_test", "ood") for k in keys)
    zero_std = all(s1[split][k]["std"] == 0.0 for split in ("id_test", "ood") for k in s1[split])
    # single-model runtime: build, train and evaluate, averaged over the trend seeds
    budget = 15 * float(np.mean([r["seconds"] for r in trend_runs["svd_dngpa"]]))
    ok = rc == 0 and rc1 == 0 and s15["n_survivors"] == 15 and shape_ok and zero_std and elapsed <= budget
    idt = s15["id_test"]
    criterion(
        11,
        ok,
        f"n=15: R2 {idt['r2']['mean']:.4f}±{idt['r2']['std']:.4f}, RMSE {idt['rmse']['mean']:.2f}±{idt['rmse']['std']:.2f}, "
        f"MACE {idt['mace']['mean']:.3f}±{idt['mace']['std']:.3f}; n=1 zero stds {zero_std}; "
        f"{elapsed / 60:.1f} min of {budget / 60:.1f} min budget",
    )


@pytest.mark.slow
def test_determinism(default_dataset_dir, tmp_path, criterion):
    outs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert cli.main(["train", "--data", str(default_dataset_dir), "--out", str(out)]) == 0
        for split in ("id", "ood"):
            assert cli.main(["evaluate", "--model", str(out / "model"), "--data", str(default_dataset_dir), "--split", split, "--out", str(out / split)]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file() and p.name != "run.log")
    differ = [str(f) for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    criterion(12, not differ and len(files) > 0, f"{len(files)} report files compared, {len(differ)} differ {differ[:3]}")
