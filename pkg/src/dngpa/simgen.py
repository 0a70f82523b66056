"""Surrogate resonant-converter waveforms and the capacitance dataset.

Each of the three phases is an LC tank excited once per switching period: the
phase current rings at ``f = 1 / (2 pi sqrt(L C))`` with an exponential decay
and restarts at the next switching edge (phases staggered by a third of the
period).  The star / non-star current pair of a phase splits that signal with
complementary soft gates over the switching half-cycles; ``V_out`` is the sum
of the three phase signals.  A three-region envelope gives the boot ramp,
the steady stable region and an exponential ring-down.

Samples are held for ``hold`` ticks (zero-order-hold acquisition), so a
noise-free trace has no single-sample extrema and passes through a width-1
LULU smoother unchanged.  Amplitudes are arbitrary units.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .signal import N_CHANNELS, RegionSpec, ScalerStats, clean_sample, extract_window

CHANNEL_NAMES = ("V_out", "IAPS", "IAP", "IBPS", "IBP", "ICPS", "ICP")
PARTITIONS = ("train", "id_test", "ood")
DATASET_FORMAT_VERSION = 1


class SimulationError(ValueError):
    pass


@dataclass
class WaveformSample:
    channels: np.ndarray  # (7, T)
    labels: tuple[float, float, float]  # pF

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != N_CHANNELS:
            raise SimulationError(f"expected {N_CHANNELS} channels, got {self.channels.shape}")
        if not all(c > 0 for c in self.labels):
            raise SimulationError("capacitance labels must be positive")

    @property
    def T(self) -> int:
        return self.channels.shape[1]


@dataclass(frozen=True)
class SimConfig:
    inductance: float = 0.02  # H
    sample_period: float = 1e-6  # s
    trace_len: int = 5261
    hold: int = 2
    switching_period: int = 400  # samples
    pulse_decay: float = 400e-6  # s
    ringdown_decay: float = 300e-6  # s
    phase_offset: float = math.pi / 4
    gate_depth: float = 0.4
    boot_end: int = 860
    stable_end: int = 3260
    noise_rel: float = 0.01
    artifact_rate: float = 0.001
    artifact_scale: tuple[float, float] = (1.5, 3.0)
    seed: int = 0

    def __post_init__(self):
        if self.inductance <= 0 or self.sample_period <= 0:
            raise SimulationError("inductance and sample_period must be positive")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise SimulationError("artifact_rate must be in [0, 1]")
        if self.artifact_scale[0] < 1.0 or self.artifact_scale[1] < self.artifact_scale[0]:
            raise SimulationError("artifact_scale must satisfy 1 <= lo <= hi")
        if not 0 < self.boot_end < self.stable_end <= self.trace_len:
            raise SimulationError("need 0 < boot_end < stable_end <= trace_len")
        if self.noise_rel < 0 or self.hold < 1 or self.switching_period < 3:
            raise SimulationError("invalid noise_rel, hold or switching_period")
        if not 0.0 <= self.gate_depth < 0.5:
            raise SimulationError("gate_depth must be in [0, 0.5)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["artifact_scale"] = list(self.artifact_scale)
        return d


def resonant_frequency(capacitance_pf: float, inductance: float) -> float:
    """LC resonance in Hz for a capacitance in pF."""
    if capacitance_pf <= 0:
        raise SimulationError("capacitance must be positive")
    return 1.0 / (2.0 * math.pi * math.sqrt(inductance * capacitance_pf * 1e-12))


def _envelope(ticks: np.ndarray, cfg: SimConfig) -> np.ndarray:
    env = np.ones(ticks.shape)
    boot = ticks < cfg.boot_end
    env[boot] = ticks[boot] / cfg.boot_end
    ring = ticks >= cfg.stable_end
    env[ring] = np.exp(-(ticks[ring] - cfg.stable_end) * cfg.sample_period / cfg.ringdown_decay)
    return env


def clean_waveform(caps, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Noise-free ``(7, T)`` trace for a capacitance triplet in pF."""
    caps = tuple(float(c) for c in caps)
    if len(caps) != 3 or any(c <= 0 for c in caps):
        raise SimulationError(f"need three positive capacitances, got {caps}")
    ticks = (np.arange(cfg.trace_len) // cfg.hold) * cfg.hold
    env = _envelope(ticks.astype(np.float64), cfg)
    ts = cfg.switching_period
    out = np.zeros((N_CHANNELS, cfg.trace_len))
    for i, c in enumerate(caps):
        f = resonant_frequency(c, cfg.inductance)
        tau = (ticks - i * ts // 3) % ts
        t = tau * cfg.sample_period
        # peak resonant current scales with sqrt(C / L)
        amp = math.sqrt(c / 3000.0)
        s = env * amp * np.sin(2 * math.pi * f * t + cfg.phase_offset) * np.exp(-t / cfg.pulse_decay)
        gate = 0.5 + cfg.gate_depth * np.cos(2 * math.pi * tau / ts)
        out[1 + 2 * i] = s * gate
        out[2 + 2 * i] = s * (1.0 - gate)
        out[0] += s
    return out


def simulate(caps, cfg: SimConfig = SimConfig(), seed: int | None = None) -> WaveformSample:
    """Noisy (artifact-free) sample; deterministic in ``(caps, cfg, seed)``."""
    clean = clean_waveform(caps, cfg)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    stable = clean[:, cfg.boot_end : cfg.stable_end]
    rms = np.sqrt(np.mean(stable * stable, axis=1))
    noisy = clean + cfg.noise_rel * rms[:, None] * rng.standard_normal(clean.shape)
    return WaveformSample(noisy, tuple(float(c) for c in caps))


def inject_artifacts(sample: WaveformSample, cfg: SimConfig = SimConfig(), seed: int | None = None) -> WaveformSample:
    """Add sparse single-tick excursions to the current channels.

    Each current tick is hit with probability ``artifact_rate``; the excursion
    has random sign and a magnitude of ``artifact_scale`` times the channel's
    maximum absolute value.
    """
    out = sample.channels.copy()
    if cfg.artifact_rate > 0:
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        lo, hi = cfg.artifact_scale
        for ch in range(1, N_CHANNELS):
            hits = np.flatnonzero(rng.random(sample.T) < cfg.artifact_rate)
            peak = np.max(np.abs(sample.channels[ch]))
            mag = rng.uniform(lo, hi, hits.size) * peak
            sign = rng.choice((-1.0, 1.0), hits.size)
            out[ch, hits] += sign * mag
    return WaveformSample(out, sample.labels)


def capacitance_grid(start: float, stop: float, step: float) -> list[tuple[float, float, float]]:
    values = np.arange(start, stop + step / 2, step)
    return [tuple(float(v) for v in t) for t in itertools.product(values, repeat=3)]


@dataclass(frozen=True)
class DatasetSpec:
    id_grid: tuple[float, float, float] = (2900.0, 4000.0, 100.0)
    ood_grid: tuple[float, float, float] = (2500.0, 2800.0, 100.0)
    n_train: int = 1382
    split_seed: int = 0
    lulu_window: int = 1
    clean: bool = True
    region: RegionSpec = field(default_factory=RegionSpec)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["id_grid"] = list(self.id_grid)
        d["ood_grid"] = list(self.ood_grid)
        return d


def _sample_seeds(base: int, index: int) -> tuple[int, int]:
    noise_ss, artifact_ss = np.random.SeedSequence([base, index]).spawn(2)
    return int(noise_ss.generate_state(1)[0]), int(artifact_ss.generate_state(1)[0])


def make_features(caps, index: int, spec: DatasetSpec, cfg: SimConfig) -> np.ndarray:
    noise_seed, artifact_seed = _sample_seeds(cfg.seed, index)
    sample = inject_artifacts(simulate(caps, cfg, noise_seed), cfg, artifact_seed)
    channels = clean_sample(sample.channels, spec.lulu_window) if spec.clean else sample.channels
    return extract_window(channels, spec.region)


@dataclass
class Dataset:
    """Windowed raw features, pF labels, partition codes and train-fitted scaler.

    ``features`` hold float32-representable values so the on-disk format is
    lossless.  ``partition`` codes index :data:`PARTITIONS`.
    """

    features: np.ndarray
    labels: np.ndarray
    partition: np.ndarray
    scaler: ScalerStats
    spec: DatasetSpec
    sim: SimConfig

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.partition == PARTITIONS.index(split))

    def counts(self) -> dict[str, int]:
        return {p: int(np.sum(self.partition == i)) for i, p in enumerate(PARTITIONS)}

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def raw(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.features[idx], self.labels[idx]

    def normalized(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.raw(split)
        return self.scaler.transform_features(x), self.scaler.transform_labels(y)


def build_dataset(spec: DatasetSpec = DatasetSpec(), cfg: SimConfig = SimConfig()) -> Dataset:
    id_caps = capacitance_grid(*spec.id_grid)
    ood_caps = capacitance_grid(*spec.ood_grid)
    if not 0 < spec.n_train < len(id_caps):
        raise SimulationError(f"n_train={spec.n_train} must be in (0, {len(id_caps)})")
    if cfg.trace_len < spec.region.stable_end:
        raise SimulationError("trace_len shorter than the region's stable_end")
    caps = id_caps + ood_caps
    feats = np.empty((len(caps), spec.region.n_features()), dtype=np.float32)
    for i, c in enumerate(caps):
        feats[i] = make_features(c, i, spec, cfg)
    partition = np.full(len(caps), PARTITIONS.index("ood"), dtype=np.int8)
    perm = np.random.default_rng(spec.split_seed).permutation(len(id_caps))
    partition[perm[: spec.n_train]] = PARTITIONS.index("train")
    partition[perm[spec.n_train :]] = PARTITIONS.index("id_test")
    labels = np.asarray(caps, dtype=np.float64)
    features = feats.astype(np.float64)
    train = partition == 0
    scaler = ScalerStats.fit(features[train], labels[train])
    return Dataset(features, labels, partition, scaler, spec, cfg)


def _spec_from_dict(d: dict) -> DatasetSpec:
    d = dict(d)
    d["region"] = RegionSpec(**d["region"])
    d["id_grid"] = tuple(d["id_grid"])
    d["ood_grid"] = tuple(d["ood_grid"])
    return DatasetSpec(**d)


def _sim_from_dict(d: dict) -> SimConfig:
    d = dict(d)
    d["artifact_scale"] = tuple(d["artifact_scale"])
    return SimConfig(**{f.name: d[f.name] for f in fields(SimConfig) if f.name in d})


def save_dataset(ds: Dataset, out_dir) -> Path:
    """Write ``features.f32`` (little-endian float32, row-major) and ``dataset.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.features.astype("<f4").tofile(out / "features.f32")
    sidecar = {
        "format_version": DATASET_FORMAT_VERSION,
        "counts": ds.counts(),
        "n_samples": int(ds.features.shape[0]),
        "feature_width": ds.n_features,
        "channels": list(CHANNEL_NAMES),
        "labels_pf": ds.labels.tolist(),
        "partition": [PARTITIONS[p] for p in ds.partition],
        "seeds": {"split_seed": ds.spec.split_seed, "sim_seed": ds.sim.seed},
        "spec": ds.spec.to_dict(),
        "sim": ds.sim.to_dict(),
        "scaler": ds.scaler.to_dict(),
    }
    (out / "dataset.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return out


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta = json.loads((path / "dataset.json").read_text())
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise SimulationError(f"unsupported dataset format {meta.get('format_version')}")
    n, width = meta["n_samples"], meta["feature_width"]
    blob = np.fromfile(path / "features.f32", dtype="<f4")
    if blob.size != n * width:
        raise SimulationError(f"feature blob has {blob.size} values, sidecar expects {n * width}")
    partition = np.array([PARTITIONS.index(p) for p in meta["partition"]], dtype=np.int8)
    return Dataset(
        features=blob.reshape(n, width).astype(np.float64),
        labels=np.asarray(meta["labels_pf"], dtype=np.float64),
        partition=partition,
        scaler=ScalerStats.from_dict(meta["scaler"]),
        spec=_spec_from_dict(meta["spec"]),
        sim=_sim_from_dict(meta["sim"]),
    )
