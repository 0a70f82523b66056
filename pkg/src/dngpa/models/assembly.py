"""The four model assemblies.

All kinds share one forward path::

    features -> extractor -> 5 x residual block -> RFF -> dense head

and differ in the extractor (frozen SVD projection, spectrally capped dense,
or plain dense), whether the residual denses are spectrally capped, the
dropout flavour, the head width and the uncertainty head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..linalg import SvdBasis, distances_for_pairs, pair_indices, truncated_svd
from ..nn.layers import (
    EVAL,
    ConcreteDropout,
    Context,
    Dense,
    Dropout,
    FrozenProjection,
    Layer,
    ResidualBlock,
    RffLayer,
    SpectralNormDense,
)
from ..nn.losses import QUANTILES
from ..signal import ScalerStats
from .gp import GpHead

KINDS = ("svd_dngpa", "dngpa", "bnn", "dqr")
DNGPA_KINDS = ("svd_dngpa", "dngpa")
N_OUTPUTS = 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture constants; defaults are the published model parameters."""

    latent_dim: int = 64
    rff_features: int = 128
    n_blocks: int = 5
    activation: str = "relu"
    dropout_rate: float = 0.10
    resnet_sn: float = 0.8
    input_sn: float = 1.2
    optimizer: str = "adam"
    lengthscale_init: float | str = "auto"
    noise_init: float = 0.1
    concrete_temperature: float = 0.1
    svd_oversample: int = 8
    svd_method: str = "auto"

    def __post_init__(self):
        if self.activation != "relu":
            raise ModelError("only relu activations are supported")
        if self.optimizer != "adam":
            raise ModelError("only the adam optimizer is supported")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must be in [0, 1)")
        if isinstance(self.lengthscale_init, str) and self.lengthscale_init != "auto":
            raise ModelError("lengthscale_init must be a positive number or 'auto'")
        if min(self.latent_dim, self.rff_features, self.n_blocks) < 1:
            raise ModelError("latent_dim, rff_features and n_blocks must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ModelAssembly:
    """Layers, uncertainty head and scaler of one model instance."""

    def __init__(
        self,
        kind: str,
        n_features: int,
        scaler: ScalerStats,
        seed: int = 0,
        config: ModelConfig = ModelConfig(),
        basis: SvdBasis | None = None,
    ):
        if kind not in KINDS:
            raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        self.kind = kind
        self.n_features = n_features
        self.scaler = scaler
        self.seed = seed
        self.config = config
        self.basis = basis if kind == "svd_dngpa" else None
        c = config
        init_ss, self._order_ss, self._dropout_ss, self._infer_ss = np.random.SeedSequence(seed).spawn(4)
        rng = np.random.default_rng(init_ss)

        if kind == "svd_dngpa":
            if basis is None:
                raise ModelError("svd_dngpa needs an SvdBasis")
            if basis.W.shape != (n_features, c.latent_dim):
                raise ModelError(f"basis shape {basis.W.shape} != ({n_features}, {c.latent_dim})")
            self.extractor: Layer = FrozenProjection(basis.W)
        elif kind == "dngpa":
            self.extractor = SpectralNormDense(n_features, c.latent_dim, c.input_sn, rng)
        else:
            self.extractor = Dense(n_features, c.latent_dim, rng)

        self.dropout_logit = None
        if kind == "bnn":
            p = c.dropout_rate
            self.dropout_logit = np.array([-np.inf if p == 0.0 else np.log(p / (1.0 - p))])
            self._dropout_grad = np.zeros(1)

        alpha = c.resnet_sn if kind in DNGPA_KINDS else None
        self.blocks = [
            ResidualBlock(c.latent_dim, rng, alpha=alpha, dropout=self._make_dropout())
            for _ in range(c.n_blocks)
        ]
        ls = 1.0 if c.lengthscale_init == "auto" else float(c.lengthscale_init)
        self.rff = RffLayer(c.latent_dim, c.rff_features, rng, lengthscale=ls)
        width = N_OUTPUTS * len(QUANTILES) if kind == "dqr" else N_OUTPUTS
        self.head = Dense(c.rff_features, width, rng, bias=kind not in DNGPA_KINDS)
        self.gp = GpHead(c.rff_features, c.noise_init) if kind in DNGPA_KINDS else None

    def _make_dropout(self) -> Layer:
        if self.kind == "bnn":
            return ConcreteDropout(self.dropout_logit, self._dropout_grad, self.config.concrete_temperature)
        return Dropout(self.config.dropout_rate)

    # ------------------------------------------------------------------ registry
    def named_layers(self) -> list[tuple[str, Layer]]:
        out = [("extractor", self.extractor)]
        out += [(f"block{i}", b) for i, b in enumerate(self.blocks)]
        out += [("rff", self.rff), ("head", self.head)]
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by unique name (shared arrays appear once)."""
        params, seen = {}, set()
        for name, layer in self.named_layers():
            for pname, arr in layer.params.items():
                if id(arr) in seen:
                    continue
                seen.add(id(arr))
                key = "dropout.logit" if pname == "logit" else f"{name}.{pname}"
                params[key] = arr
        if self.gp is not None:
            params["gp.raw_noise"] = self.gp.params["raw_noise"]
        return params

    def gradients(self) -> dict[str, np.ndarray]:
        grads, seen = {}, set()
        for name, layer in self.named_layers():
            for pname, arr in layer.params.items():
                if id(arr) in seen:
                    continue
                seen.add(id(arr))
                key = "dropout.logit" if pname == "logit" else f"{name}.{pname}"
                grads[key] = layer.grads[pname]
        if self.gp is not None:
            grads["gp.raw_noise"] = self.gp.grads["raw_noise"]
        return grads

    def zero_grad(self):
        for g in self.gradients().values():
            g[...] = 0.0

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.named_layers():
            src = layer.dense if isinstance(layer, ResidualBlock) else layer
            for bname, arr in src.get_buffers().items():
                out[f"{name}.{bname}"] = arr
        if self.gp is not None and self.gp.chol is not None:
            out["gp.chol"] = self.gp.chol
        return out

    def set_buffer(self, key: str, value: np.ndarray):
        name, bname = key.split(".", 1)
        if name == "gp":
            self.gp.set_factor(value)
            return
        layer = dict(self.named_layers())[name]
        src = layer.dense if isinstance(layer, ResidualBlock) else layer
        src.set_buffer(bname, value)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array that determines the model's predictions, in a fixed order."""
        return {**self.parameters(), **self.buffers()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: np.array(v, copy=True) for k, v in self.state_arrays().items()}

    def restore(self, snap: dict[str, np.ndarray]):
        params = self.parameters()
        for k, v in snap.items():
            if k in params:
                params[k][...] = v
            else:
                self.set_buffer(k, v)
        if self.gp is not None and "gp.chol" not in snap:
            self.gp.mark_stale()

    def spectral_layers(self) -> list[SpectralNormDense]:
        layers = [self.extractor] + [b.dense for b in self.blocks]
        return [l for l in layers if isinstance(l, SpectralNormDense)]

    def step_spectral(self, iters: int = 1, tol: float | None = None):
        for layer in self.spectral_layers():
            layer.update_spectral_state(iters, tol)

    @property
    def dropout_rate(self) -> float:
        return self.blocks[0].dropout.rate if self.blocks else 0.0

    @property
    def is_dngpa(self) -> bool:
        return self.kind in DNGPA_KINDS

    @property
    def extractor_frozen(self) -> bool:
        return isinstance(self.extractor, FrozenProjection)

    # ------------------------------------------------------------------ passes
    def extract(self, x, ctx: Context = EVAL):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ModelError(f"expected normalized features of width {self.n_features}, got {x.shape}")
        return self.extractor.forward(x, ctx)

    def latent(self, z, ctx: Context = EVAL):
        caches = []
        for block in self.blocks:
            z, c = block.forward(z, ctx)
            caches.append(c)
        return z, caches

    def trunk(self, z, ctx: Context = EVAL):
        """Residual blocks, RFF and head from extractor output ``z``."""
        h, bcaches = self.latent(z, ctx)
        phi, rcache = self.rff.forward(h, ctx)
        out, hcache = self.head.forward(phi, ctx)
        return out, phi, (bcaches, rcache, hcache)

    def trunk_backward(self, cache, dout, dphi_extra=None):
        bcaches, rcache, hcache = cache
        dphi = self.head.backward(hcache, dout)
        if dphi_extra is not None:
            dphi = dphi + dphi_extra
        g = self.rff.backward(rcache, dphi)
        for block, c in zip(reversed(self.blocks), reversed(bcaches)):
            g = block.backward(c, g)
        return g

    def forward(self, x, ctx: Context = EVAL):
        z, ecache = self.extract(x, ctx)
        out, phi, tcache = self.trunk(z, ctx)
        return out, phi, (ecache, tcache)

    def backward(self, cache, dout, dphi_extra=None):
        ecache, tcache = cache
        dz = self.trunk_backward(tcache, dout, dphi_extra)
        return self.extractor.backward(ecache, dz)

    def features(self, x) -> np.ndarray:
        """Deterministic RFF features of normalized inputs."""
        z, _ = self.extract(x)
        return self.trunk(z)[1]

    def refresh_gp(self, x_train: np.ndarray, batch: int = 2048) -> None:
        if self.gp is None:
            return
        phi = np.concatenate([self.features(x_train[s : s + batch]) for s in range(0, len(x_train), batch)])
        self.gp.refresh(phi)

    def calibrate_lengthscale(self, x_train: np.ndarray, max_rows: int = 256) -> float:
        """Set the lengthscale to the median pairwise latent distance of up to ``max_rows`` rows."""
        z, _ = self.extract(x_train[:max_rows])
        h, _ = self.latent(z)
        ii, jj = pair_indices(h.shape[0], 1.0, 0)
        med = float(np.median(distances_for_pairs(h, ii, jj)))
        if med > 0:
            self.rff.set_lengthscale(med)
        return self.rff.lengthscale

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "n_features": self.n_features,
            "config": self.config.to_dict(),
            "layers": [(n, type(l).__name__) for n, l in self.named_layers()],
        }


def build_model(
    kind: str,
    dataset,
    seed: int = 0,
    config: ModelConfig = ModelConfig(),
    basis: SvdBasis | None = None,
) -> ModelAssembly:
    """Initialize a model for ``dataset`` (scaler must already be fitted)."""
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    x_train, _ = dataset.normalized("train")
    if kind == "svd_dngpa" and basis is None:
        basis = truncated_svd(
            x_train, config.latent_dim, oversample=config.svd_oversample, method=config.svd_method
        )
    model = ModelAssembly(kind, dataset.n_features, dataset.scaler, seed, config, basis)
    if config.lengthscale_init == "auto":
        model.calibrate_lengthscale(x_train)
    return model
