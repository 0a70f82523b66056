"""Layers with explicit forward/backward passes.

Every layer follows the same protocol::

    y, cache = layer.forward(x, ctx)
    dx = layer.backward(cache, dy)   # accumulates into layer.grads

``cache`` is returned rather than stored so that several stochastic passes
(MC-dropout) can share one layer and be back-propagated independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..linalg import PowerIterationState, spectral_norm_power_iteration


class ShapeError(ValueError):
    pass


@dataclass
class Context:
    """Per-pass settings.

    ``mode`` is ``"train"`` (stochastic layers active), ``"mc"`` (hard dropout
    masks, for Monte Carlo inference) or ``"eval"`` (deterministic).
    ``relaxed`` selects the concrete relaxation for trainable dropout.
    """

    mode: str = "eval"
    rng: np.random.Generator | None = None
    relaxed: bool = False

    @property
    def stochastic(self) -> bool:
        return self.mode in ("train", "mc")


EVAL = Context("eval")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    # log(exp(y) - 1), stable for large y
    return float(y + math.log(-math.expm1(-y)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def glorot_uniform(fan_in, fan_out, rng):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


def he_uniform(fan_in, fan_out, rng):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, (fan_in, fan_out))


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, ctx: Context = EVAL):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def __call__(self, x, ctx: Context = EVAL):
        return self.forward(x, ctx)[0]

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def get_buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a checkpoint round trip."""
        return dict(self.buffers)

    def set_buffer(self, name, value):
        self.buffers[name] = np.array(value, dtype=np.float64).reshape(self.buffers[name].shape)

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)


class Dense(Layer):
    """``y = x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``."""

    def __init__(self, fan_in, fan_out, rng=None, bias=True, init="glorot"):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        w = {"glorot": glorot_uniform, "he": he_uniform}[init](fan_in, fan_out, rng)
        self._add_param("W", w)
        if bias:
            self._add_param("b", np.zeros(fan_out))
        self.fan_in, self.fan_out = fan_in, fan_out

    @property
    def has_bias(self):
        return "b" in self.params

    def effective_weight(self):
        return self.params["W"]

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"expected (N, {self.fan_in}) input, got {x.shape}")

    def forward(self, x, ctx=EVAL):
        self._check(x)
        y = x @ self.params["W"]
        if self.has_bias:
            y = y + self.params["b"]
        return y, x

    def backward(self, x, dy):
        self.grads["W"] += x.T @ dy
        if self.has_bias:
            self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"].T


class SpectralNormDense(Dense):
    """Dense layer whose effective weight is ``W * min(1, alpha / sigma_hat)``.

    ``sigma_hat = v @ W @ u`` uses persistent power-iteration vectors that are
    advanced by :meth:`update_spectral_state` before every training step; the
    forward/backward pass differentiates through ``sigma_hat`` with ``u, v``
    held fixed.  A single iteration per step lags behind a drifting ``W`` when
    the top singular values are close, so training iterates to a tolerance.
    """

    def __init__(self, fan_in, fan_out, alpha, rng=None, bias=True, init="glorot", warmup_iters=50):
        rng = rng or np.random.default_rng(0)
        super().__init__(fan_in, fan_out, rng, bias, init)
        self.alpha = float(alpha)
        self.power = PowerIterationState.init((fan_in, fan_out), rng)
        self.update_spectral_state(warmup_iters)

    def get_buffers(self):
        return {"sn_v": self.power.v, "sn_u": self.power.u}

    def set_buffer(self, name, value):
        attr = {"sn_v": "v", "sn_u": "u"}[name]
        cur = getattr(self.power, attr)
        setattr(self.power, attr, np.array(value, dtype=np.float64).reshape(cur.shape))

    def update_spectral_state(self, iters=1, tol=None):
        return spectral_norm_power_iteration(self.params["W"], self.power, iters, tol)

    def sigma_hat(self):
        return float(self.power.v @ self.params["W"] @ self.power.u)

    def _scale(self):
        s = self.sigma_hat()
        if s > self.alpha:
            return self.alpha / s, s
        return 1.0, s

    def effective_weight(self):
        return self.params["W"] * self._scale()[0]

    def forward(self, x, ctx=EVAL):
        self._check(x)
        c, s = self._scale()
        y = x @ (self.params["W"] * c)
        if self.has_bias:
            y = y + self.params["b"]
        return y, (x, c, s)

    def backward(self, cache, dy):
        x, c, s = cache
        w = self.params["W"]
        g = x.T @ dy
        dw = c * g
        if c < 1.0:
            # d(alpha/s)/dW = -alpha/s^2 * v u^T
            dw -= (self.alpha / (s * s)) * float(np.sum(g * w)) * np.outer(self.power.v, self.power.u)
        self.grads["W"] += dw
        if self.has_bias:
            self.grads["b"] += dy.sum(axis=0)
        return dy @ (w * c).T


class FrozenProjection(Layer):
    """Fixed linear map ``y = x @ W`` with no trainable parameters."""

    def __init__(self, w):
        super().__init__()
        self.W = np.array(w, dtype=np.float64)
        self.W.setflags(write=False)
        self.fan_in, self.fan_out = self.W.shape

    def get_buffers(self):
        return {"W": self.W}

    def set_buffer(self, name, value):
        w = np.array(value, dtype=np.float64).reshape(self.W.shape)
        w.setflags(write=False)
        self.W = w

    def forward(self, x, ctx=EVAL):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"expected (N, {self.fan_in}) input, got {x.shape}")
        return x @ self.W, None

    def backward(self, cache, dy):
        return dy @ self.W.T


class Relu(Layer):
    def forward(self, x, ctx=EVAL):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dy):
        return dy * mask


class Dropout(Layer):
    """Inverted dropout with a fixed rate ``p``."""

    def __init__(self, p=0.1):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = float(p)

    @property
    def rate(self):
        return self.p

    def forward(self, x, ctx=EVAL):
        if not ctx.stochastic or self.p == 0.0:
            return x, None
        keep = ctx.rng.random(x.shape) >= self.p
        scale = keep / (1.0 - self.p)
        return x * scale, scale

    def backward(self, scale, dy):
        return dy if scale is None else dy * scale


class ConcreteDropout(Layer):
    """Dropout whose rate ``p = sigmoid(logit)`` is trained.

    With ``ctx.relaxed`` the drop mask is the concrete relaxation
    ``z = sigmoid((logit + log u - log(1 - u)) / temperature)``, which is
    differentiable in ``logit``; otherwise hard Bernoulli(p) masks are used.
    The logit array may be shared between several layers.
    """

    def __init__(self, logit: np.ndarray, grad: np.ndarray, temperature=0.1):
        super().__init__()
        self.params["logit"] = logit
        self.grads["logit"] = grad
        self.temperature = float(temperature)

    @property
    def rate(self):
        return float(sigmoid(self.params["logit"][0]))

    def forward(self, x, ctx=EVAL):
        if not ctx.stochastic:
            return x, None
        p = self.rate
        if not ctx.relaxed:
            keep = ctx.rng.random(x.shape) >= p
            return x * keep / (1.0 - p), ("hard", keep / (1.0 - p))
        u = ctx.rng.uniform(1e-12, 1.0 - 1e-12, x.shape)
        z = sigmoid((self.params["logit"][0] + np.log(u) - np.log1p(-u)) / self.temperature)
        return x * (1.0 - z) / (1.0 - p), ("relaxed", x, z, p)

    def backward(self, cache, dy):
        if cache is None:
            return dy
        if cache[0] == "hard":
            return dy * cache[1]
        _, x, z, p = cache
        dmask = -z * (1.0 - z) / (self.temperature * (1.0 - p)) + (1.0 - z) * p / (1.0 - p)
        self.grads["logit"][0] += float(np.sum(dy * x * dmask))
        return dy * (1.0 - z) / (1.0 - p)


class ResidualBlock(Layer):
    """``h(x) = x + dropout(relu(dense(x)))``."""

    def __init__(self, width, rng, alpha=None, dropout: Layer | None = None):
        super().__init__()
        if alpha is None:
            self.dense = Dense(width, width, rng, init="he")
        else:
            self.dense = SpectralNormDense(width, width, alpha, rng, init="he")
        self.relu = Relu()
        self.dropout = dropout if dropout is not None else Dropout(0.0)
        self.width = width
        # views over the sublayers' arrays; a trainable dropout logit rides along
        self.params = {**self.dense.params, **self.dropout.params}
        self.grads = {**self.dense.grads, **self.dropout.grads}

    def forward(self, x, ctx=EVAL):
        if x.ndim != 2 or x.shape[1] != self.width:
            raise ShapeError(f"residual block expects width {self.width}, got {x.shape}")
        a, c1 = self.dense.forward(x, ctx)
        r, c2 = self.relu.forward(a, ctx)
        d, c3 = self.dropout.forward(r, ctx)
        return x + d, (c1, c2, c3)

    def backward(self, cache, dy):
        c1, c2, c3 = cache
        g = self.dropout.backward(c3, dy)
        g = self.relu.backward(c2, g)
        return dy + self.dense.backward(c1, g)


class RffLayer(Layer):
    """Random Fourier features ``sqrt(2/D) cos(x @ W / lambda + b)``.

    ``W ~ N(0, 1)`` and ``b ~ U[0, 2 pi)`` are frozen at construction; the
    lengthscale is trained through ``lambda = softplus(raw)``.
    """

    def __init__(self, fan_in, n_features, rng, lengthscale=1.0):
        super().__init__()
        self.W = rng.standard_normal((fan_in, n_features))
        self.b = rng.uniform(0.0, 2.0 * math.pi, n_features)
        self._add_param("raw_lengthscale", np.array([softplus_inv(lengthscale)]))
        self.fan_in, self.n_features = fan_in, n_features

    def get_buffers(self):
        return {"W": self.W, "b": self.b}

    def set_buffer(self, name, value):
        cur = getattr(self, name)
        setattr(self, name, np.array(value, dtype=np.float64).reshape(cur.shape))

    @property
    def lengthscale(self):
        return float(softplus(self.params["raw_lengthscale"][0]))

    def set_lengthscale(self, value):
        self.params["raw_lengthscale"][0] = softplus_inv(value)

    def forward(self, x, ctx=EVAL):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"expected (N, {self.fan_in}) input, got {x.shape}")
        lam = self.lengthscale
        proj = x @ self.W
        arg = proj / lam + self.b
        return math.sqrt(2.0 / self.n_features) * np.cos(arg), (proj, arg, lam)

    def backward(self, cache, dy):
        proj, arg, lam = cache
        g = -math.sqrt(2.0 / self.n_features) * np.sin(arg) * dy  # d/d(arg)
        dlam = float(np.sum(g * proj)) * (-1.0 / (lam * lam))
        self.grads["raw_lengthscale"][0] += dlam * float(sigmoid(self.params["raw_lengthscale"][0]))
        return (g @ self.W.T) / lam
