"""Random-feature Gaussian-process variance head.

With training features ``Phi`` (``n x D``) the posterior covariance of a
test point under the linear kernel ``k(a, b) = phi(a) . phi(b)``

    k(x*, x*) - k(x*, X) [K(X, X) + s_n^2 I]^-1 k(X, x*)

reduces by the matrix-inversion lemma to

    s_n^2 phi*^T (Phi^T Phi + s_n^2 I)^-1 phi*

so only a ``D x D`` precision matrix has to be factored.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla

from ..nn.layers import sigmoid, softplus, softplus_inv


class StaleFactorError(RuntimeError):
    """The precision factor no longer matches the current parameters."""


class GpHead:
    def __init__(self, n_features: int, noise: float = 0.1):
        self.n_features = n_features
        self.params = {"raw_noise": np.array([softplus_inv(noise)])}
        self.grads = {"raw_noise": np.zeros(1)}
        self.chol: np.ndarray | None = None
        self.precision_inv: np.ndarray | None = None
        self.stale = True

    @property
    def noise(self) -> float:
        return float(softplus(self.params["raw_noise"][0]))

    def zero_grad(self):
        self.grads["raw_noise"][...] = 0.0

    def mark_stale(self):
        self.stale = True

    def refresh(self, phi_train: np.ndarray) -> None:
        """Rebuild ``Lambda = Phi^T Phi + s_n^2 I`` and its Cholesky factor."""
        phi_train = np.asarray(phi_train, dtype=np.float64).reshape(-1, self.n_features)
        lam = phi_train.T @ phi_train + self.noise**2 * np.eye(self.n_features)
        self.set_factor(np.linalg.cholesky(lam))

    def set_factor(self, chol: np.ndarray) -> None:
        self.chol = np.array(chol, dtype=np.float64)
        self.precision_inv = sla.cho_solve((self.chol, True), np.eye(self.n_features))
        self.stale = False

    def quad_form(self, phi: np.ndarray) -> np.ndarray:
        """``phi^T Lambda^-1 phi`` for each row, via the triangular factor."""
        if self.chol is None:
            raise StaleFactorError("GP head has no precision factor; call refresh()")
        z = sla.solve_triangular(self.chol, np.atleast_2d(phi).T, lower=True)
        return np.sum(z * z, axis=0)

    def variance(self, phi: np.ndarray) -> np.ndarray:
        if self.stale:
            raise StaleFactorError("GP head factor is stale; refresh before predicting")
        return self.noise**2 * self.quad_form(phi)

    # Training path: Lambda^-1 frozen at the last refresh, s_n live.
    def train_sigma(self, phi: np.ndarray):
        if self.precision_inv is None:
            raise StaleFactorError("GP head has no precision factor; call refresh()")
        p_phi = phi @ self.precision_inv
        q = np.maximum(np.sum(phi * p_phi, axis=1), 0.0)
        sn = self.noise
        sigma = sn * np.sqrt(q)
        return sigma, (p_phi, q, sn)

    def train_sigma_backward(self, cache, dsigma: np.ndarray) -> np.ndarray:
        p_phi, q, sn = cache
        sq = np.sqrt(q)
        safe = np.where(sq > 0, sq, 1.0)
        # sigma = sn * sqrt(q);  dq/dphi = 2 Lambda^-1 phi
        dphi = (dsigma * sn / safe * (sq > 0))[:, None] * p_phi
        dsn = float(np.sum(dsigma * sq))
        self.grads["raw_noise"][0] += dsn * float(sigmoid(self.params["raw_noise"][0]))
        return dphi


def gp_posterior_sigma(head: GpHead, phi_star) -> np.ndarray:
    """Posterior standard deviation ``s_n sqrt(phi*^T Lambda^-1 phi*)`` per row."""
    return np.sqrt(np.maximum(head.variance(np.atleast_2d(phi_star)), 0.0))
