"""Equidistant B-spline bases for R^d-valued functions on [0, A].

Scalar splines use a clamped knot vector (boundary knots repeated ``order``
times) over equally spaced breakpoints.  Vector basis function
``j = m * n_basis + i`` is ``e_m * b_i(u) / ||b_i||`` so each one lives in a
single component and has unit L2 norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import ModelSpec

__all__ = ["SplineBasis", "Projection", "project_truth", "gauss_legendre_pieces"]


def gauss_legendre_pieces(edges, n_points: int):
    """Gauss-Legendre nodes and weights on every interval between sorted ``edges``."""
    edges = np.asarray(edges, dtype=float)
    z, w = np.polynomial.legendre.leggauss(n_points)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (lo + hi) * 0.5 + half * z
    weights = half * w
    return nodes.ravel(), weights.ravel()


@dataclass(frozen=True)
class SplineBasis:
    A: float
    order: int = 4
    n_basis: int = 8
    d: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.n_basis < self.order:
            raise ValueError(f"n_basis must be >= order ({self.order}), got {self.n_basis}")
        if not self.A > 0 or self.d < 1:
            raise ValueError("need A > 0 and d >= 1")

    @property
    def J(self) -> int:
        return self.d * self.n_basis

    @cached_property
    def breaks(self) -> np.ndarray:
        return np.linspace(0.0, self.A, self.n_basis - self.order + 2)

    @cached_property
    def knots(self) -> np.ndarray:
        k = self.order
        return np.concatenate([np.zeros(k - 1), self.breaks, np.full(k - 1, self.A)])

    def _nonzero(self, u):
        """Unnormalized nonzero B-spline values by the Cox-de Boor triangle.

        Returns ``(first, values, inside)``: basis ``first + r`` has value
        ``values[:, r]`` at each point; ``inside`` flags points in [0, A].
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        k, t = self.order, self.knots
        inside = (u >= 0) & (u <= self.A)
        uc = np.clip(u, 0.0, self.A)
        span = np.searchsorted(t, uc, side="right") - 1
        span = np.clip(span, k - 1, self.n_basis - 1)
        vals = np.ones((u.size, 1))
        left = np.empty((u.size, k))
        right = np.empty((u.size, k))
        for j in range(1, k):
            left[:, j] = uc - t[span + 1 - j]
            right[:, j] = t[span + j] - uc
            new = np.empty((u.size, j + 1))
            saved = np.zeros(u.size)
            for r in range(j):
                temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
                new[:, r] = saved + right[:, r + 1] * temp
                saved = left[:, j - r] * temp
            new[:, j] = saved
            vals = new
        vals[~inside] = 0.0
        return span - (k - 1), vals, inside

    @cached_property
    def norms(self) -> np.ndarray:
        """L2 norms of the unnormalized scalar splines."""
        nodes, weights = gauss_legendre_pieces(self.breaks, self.order)
        B = self._dense(nodes, normalized=False)
        norms = np.sqrt(weights @ (B * B))
        norms.flags.writeable = False
        return norms

    def _dense(self, u, normalized: bool = True) -> np.ndarray:
        first, vals, _ = self._nonzero(u)
        out = np.zeros((vals.shape[0], self.n_basis))
        rows = np.arange(vals.shape[0])[:, None]
        out[rows, first[:, None] + np.arange(self.order)] = vals
        if normalized:
            out /= self.norms
        return out

    def eval_all(self, u) -> np.ndarray:
        """Normalized scalar basis at ``u``: shape ``(len(u), n_basis)``."""
        return self._dense(u)

    def eval_scalar(self, i: int, u):
        """Normalized scalar basis function ``i`` (0-based); zero outside [0, A]."""
        if not 0 <= i < self.n_basis:
            raise IndexError(f"basis index {i} out of range 0..{self.n_basis - 1}")
        vals = self._dense(u)[:, i]
        return vals if np.ndim(u) else float(vals[0])

    def nonzero_normalized(self, u):
        """Sparse form used by the design assembly: ``(first, values)``."""
        first, vals, _ = self._nonzero(u)
        norms = self.norms[first[:, None] + np.arange(self.order)]
        return first, vals / norms

    def scalar_gram(self) -> np.ndarray:
        nodes, weights = gauss_legendre_pieces(self.breaks, self.order)
        B = self._dense(nodes)
        G = B.T @ (weights[:, None] * B)
        return 0.5 * (G + G.T)

    def gram(self) -> np.ndarray:
        """G[j, k] = int psi_j . psi_k over [0, A]; block diagonal across components."""
        return np.kron(np.eye(self.d), self.scalar_gram())

    def evaluate(self, coef, u) -> np.ndarray:
        """sum_j coef[j] psi_j(u) as an array of shape ``(len(u), d)``."""
        coef = np.asarray(coef, dtype=float).reshape(self.d, self.n_basis)
        return self._dense(u) @ coef.T


@dataclass
class Projection:
    theta: np.ndarray
    epsilon: float
    epsilon_nu: float
    epsilon_mu: float


def project_truth(model: ModelSpec, basis: SplineBasis, x0: float, h: float,
                  K_order: int = 1, target: int = 0, n_u: int = 801,
                  n_x: int = 201) -> Projection:
    """Least-squares projection of the truth onto the local sieve around ``x0``.

    Fits ``nu_target(x)`` by a polynomial in ``(x - x0) / h`` and every
    ``mu_target,m(u, x)`` by splines in ``u`` times that polynomial, on an
    ``n_u`` x ``n_x`` tensor grid (cell midpoints in ``u``, so kernel jumps and
    the open right end of the support are never sampled).  Coefficients come
    back in estimator layout; ``epsilon`` is the sup residual on the grid.
    """
    if not 0 < x0 < 1:
        raise ValueError("x0 must lie in (0, 1)")
    if not 0 < h < min(x0, 1 - x0):
        raise ValueError("need 0 < h < min(x0, 1 - x0)")
    if basis.d != model.d or basis.A != model.A:
        raise ValueError("basis does not match the model's d and A")
    K = int(K_order)
    u = (np.arange(n_u) + 0.5) * (model.A / n_u)
    x = np.linspace(x0 - h, x0 + h, n_x)
    P = ((x - x0) / h)[:, None] ** np.arange(K)
    B = basis.eval_all(u)
    for name, M in (("polynomial", P), ("spline", B)):
        cond = np.linalg.cond(M.T @ M)
        if not np.isfinite(cond) or cond > 1e12:
            raise np.linalg.LinAlgError(f"{name} normal equations singular (condition {cond:.3g})")

    nu = model.baseline(x)[:, target]
    c_nu = np.linalg.lstsq(P, nu, rcond=None)[0]
    eps_nu = float(np.max(np.abs(P @ c_nu - nu)))

    theta = np.zeros((1 + basis.J) * K)
    theta[:K] = c_nu
    eps_mu = 0.0
    mu = model.kernel(u[:, None], x[None, :])[:, :, target, :]
    for m in range(model.d):
        M = mu[:, :, m]
        C_u = np.linalg.lstsq(B, M, rcond=None)[0]
        C = np.linalg.lstsq(P, C_u.T, rcond=None)[0]
        fitted = B @ C.T @ P.T
        eps_mu = max(eps_mu, float(np.max(np.abs(fitted - M))))
        for i in range(basis.n_basis):
            j = 1 + m * basis.n_basis + i
            theta[j * K:(j + 1) * K] = C[:, i]
    return Projection(theta=theta, epsilon=max(eps_nu, eps_mu), epsilon_nu=eps_nu,
                      epsilon_mu=eps_mu)
