"""Model checkpoints: ``model.json`` manifest plus ``weights.f64`` blob.

The blob is every array of :meth:`ModelAssembly.state_arrays` flattened in
manifest order as little-endian float64.  Scaler statistics and scalars go
into the manifest as JSON numbers, which round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..linalg import SvdBasis
from ..signal import ScalerStats
from .assembly import ModelAssembly, ModelConfig, ModelError

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_NAME = "model.json"
BLOB_NAME = "weights.f64"


class CheckpointError(ModelError):
    pass


def save_checkpoint(model: ModelAssembly, out_dir, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = model.state_arrays()
    entries, offset = [], 0
    for name, arr in arrays.items():
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "n_features": model.n_features,
        "config": model.config.to_dict(),
        "layers": [[n, type(l).__name__] for n, l in model.named_layers()],
        "arrays": entries,
        "n_values": offset,
        "scaler": model.scaler.to_dict(),
        "gp": None
        if model.gp is None
        else {"noise": model.gp.noise, "lengthscale": model.rff.lengthscale, "stale": model.gp.stale},
        "basis": None if model.basis is None else _basis_meta(model.basis),
        "extra": extra or {},
    }
    blob = np.concatenate([a.ravel() for a in arrays.values()]) if arrays else np.zeros(0)
    blob.astype("<f8").tofile(out / BLOB_NAME)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def _basis_meta(b: SvdBasis) -> dict:
    return {
        "k": b.k,
        "singular_values": b.singular_values.tolist(),
        "tail_energy": b.tail_energy,
        "frobenius_norm": b.frobenius_norm,
        "n_samples": b.n_samples,
        "exact": b.exact,
    }


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_NAME).read_text())
    except FileNotFoundError as e:
        raise CheckpointError(f"no checkpoint manifest in {path}") from e
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
    return manifest


def load_checkpoint(path, kind: str | None = None) -> ModelAssembly:
    """Rebuild a model bit-exactly.  ``kind``, when given, must match the manifest."""
    path = Path(path)
    m = read_manifest(path)
    if kind is not None and kind != m["kind"]:
        raise CheckpointError(f"checkpoint holds a {m['kind']} model, not {kind}")
    blob = np.fromfile(path / BLOB_NAME, dtype="<f8")
    if blob.size != m["n_values"]:
        raise CheckpointError(f"weight blob has {blob.size} values, manifest expects {m['n_values']}")
    arrays = {}
    for e in m["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = blob[e["offset"] : e["offset"] + n].reshape(e["shape"]).astype(np.float64)

    basis = None
    if m["kind"] == "svd_dngpa":
        if m["basis"] is None or "extractor.W" not in arrays:
            raise CheckpointError("svd_dngpa checkpoint lacks its projection basis")
        b = m["basis"]
        basis = SvdBasis(
            b["k"], np.asarray(b["singular_values"]), arrays["extractor.W"], b["tail_energy"],
            b["frobenius_norm"], b["n_samples"], b["exact"],
        )
    model = ModelAssembly(
        m["kind"], m["n_features"], ScalerStats.from_dict(m["scaler"]), m["seed"], ModelConfig(**m["config"]), basis
    )
    expected = model.state_arrays()
    optional = {"gp.chol": (model.config.rff_features,) * 2} if model.gp is not None else {}
    names = set(arrays) - set(optional)
    if names != set(expected):
        raise CheckpointError(f"array names differ from a fresh {m['kind']} model")
    expected = {**{k: np.empty(v) for k, v in optional.items()}, **expected}
    for name, arr in arrays.items():
        if expected[name].shape != arr.shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != {expected[name].shape}")
    model.restore(arrays)
    if model.gp is not None and m["gp"] and m["gp"]["stale"]:
        model.gp.mark_stale()
    return model
