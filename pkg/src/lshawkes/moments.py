"""First and second moments of locally stationary Hawkes processes.

The excitation series ``chi = sum_k mu^(*k)`` is discretized on lag cells of
width ``s_step``: each cell stores the exact mass of the term inside it, so
discrete convolutions conserve total mass and stationary identities such as
``Lambda = (I - Gamma)^-1 nu`` hold to rounding.  The recursion keeps the
time-varying second argument: the right factor of each convolution is the
kernel at rescaled time ``x - r/T`` for left lag ``r``.  With the canonical
kernel form that factor is affine in ``x``, so each order costs a handful of
FFT convolutions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import signal

from .model import ModelSpec, spectral_radius

__all__ = [
    "MomentError",
    "ChiResult",
    "MomentTable",
    "kernel_cell_masses",
    "compute_chi",
    "compute_Lambda",
    "renewal_residual",
    "moment_table",
    "covariance_density",
    "lag_covariance",
    "binned_covariance",
    "save_moment_table",
]

K_MAX = 200


class MomentError(RuntimeError):
    def __init__(self, message: str, achieved: float | None = None):
        super().__init__(message)
        self.achieved = achieved


def _default_step(model: ModelSpec) -> float:
    return model.A / 1024


def kernel_cell_masses(model: ModelSpec, s_step: float) -> np.ndarray:
    """Exact integrals of the lag factor over cells ``[q h, (q+1) h)`` covering [0, A).

    Shape ``(n_cells, d, d)``; multiply by the amplitude to get kernel masses.
    """
    n_cells = int(np.ceil(model.A / s_step - 1e-9))
    cell_edges = np.arange(n_cells + 1) * s_step
    edges = np.union1d(np.minimum(cell_edges, model.A), model.breakpoints())
    lo, hi = edges[:-1], edges[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    pieces = model.shape_integral(lo, hi)
    cell = np.minimum((0.5 * (lo + hi) / s_step).astype(np.intp), n_cells - 1)
    out = np.zeros((n_cells,) + pieces.shape[1:])
    np.add.at(out, cell, pieces)
    return out


@dataclass
class ChiResult:
    x_grid: np.ndarray
    s_step: float
    masses: np.ndarray  # (n_x, n_cells, d, d), mass of chi per lag cell
    truncation_k: np.ndarray  # per x
    tail_bound: np.ndarray  # per x

    @property
    def density(self) -> np.ndarray:
        return self.masses / self.s_step

    @property
    def s_centers(self) -> np.ndarray:
        return (np.arange(self.masses.shape[1]) + 0.5) * self.s_step


def _chi_one(model, x, T, Gmass, Ghat, nfft, n_cells, s_step, tol, rho, n_terms):
    d = model.d
    m_cells = Gmass.shape[0]
    centers = (np.arange(n_cells) + 0.5) * s_step
    amp0 = model.amplitude(x)
    term = np.zeros((n_cells, d, d))
    term[:m_cells] = amp0 * Gmass
    term = np.maximum(term, 0.0)
    total = term.copy()
    lost = 0.0
    y_tilde = np.clip(x - centers / T, 0.0, 1.0)
    a0, a1 = model.a0, model.a1
    varying = model.time_varying_kernel
    geo = 1.0 / (1.0 - rho) if rho < 1 else np.inf

    def norm(t):
        return max(t.max() / s_step, t.sum(axis=0).max()) if t.size else 0.0

    k = 1
    current = norm(term)
    while True:
        if n_terms is not None:
            if k >= n_terms:
                break
        elif current * geo < tol:
            break
        if k >= K_MAX:
            raise MomentError(
                f"tolerance {tol} not reached within {K_MAX} terms", achieved=current * geo
            )
        # term_{k+1}[i]_{lm} = sum_n sum_j term_k[j]_{ln} (a0 + a1 y_j)_{nm} G_{nm}[i - j]
        That = sfft.rfft(term, n=nfft, axis=0)
        acc = np.einsum("fln,fnm->flm", That, a0[None] * Ghat)
        if varying:
            That_y = sfft.rfft(term * y_tilde[:, None, None], n=nfft, axis=0)
            acc += np.einsum("fln,fnm->flm", That_y, a1[None] * Ghat)
        conv = sfft.irfft(acc, n=nfft, axis=0)
        # a product of cell masses sits at the boundary (i + 1) h: split it evenly
        new = np.zeros_like(term)
        new[: n_cells] += 0.5 * conv[:n_cells]
        new[1:n_cells] += 0.5 * conv[: n_cells - 1]
        new = np.maximum(new, 0.0)
        full_mass = np.maximum(conv, 0.0).sum(axis=0)
        lost += float(np.max(full_mass - new.sum(axis=0)))
        term = new
        total += term
        k += 1
        current = norm(term)
    return total, k, current * geo + max(lost, 0.0)


def compute_chi(model: ModelSpec, x_grid, tol: float = 1e-6, s_step: float | None = None,
                s_max: float | None = None, T: float | None = None,
                n_terms: int | None = None) -> ChiResult:
    """Neumann series chi(s, x) = sum_k mu^(*k)(s, x) on lag cells, for each x.

    Stops at the first order whose norm (max of sup density and total mass)
    times 1/(1 - rho) falls below ``tol``; ``n_terms`` forces an exact count.
    ``tail_bound`` adds the mass pushed beyond ``s_max``.
    """
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    T = float(T or model.T)
    s_step = float(s_step or _default_step(model))
    s_max = float(s_max or 40.0 * model.A)
    if tol <= 0:
        raise ValueError("tol must be positive")
    rho = spectral_radius(model.gamma_closed_form())
    if not rho < 1:
        raise MomentError(f"spectral radius {rho:.6g} >= 1")
    n_cells = int(np.ceil(s_max / s_step - 1e-9))
    Gmass = kernel_cell_masses(model, s_step)
    nfft = sfft.next_fast_len(n_cells + Gmass.shape[0], real=True)
    Ghat = sfft.rfft(Gmass, n=nfft, axis=0)

    if not model.time_varying_kernel:
        mass, k, bound = _chi_one(model, 0.0, T, Gmass, Ghat, nfft, n_cells, s_step, tol,
                                  rho, n_terms)
        masses = np.broadcast_to(mass, (x_grid.size,) + mass.shape)
        ks = np.full(x_grid.size, k)
        bounds = np.full(x_grid.size, bound)
        return ChiResult(x_grid, s_step, masses, ks, bounds)
    masses = np.empty((x_grid.size, n_cells, model.d, model.d))
    ks = np.empty(x_grid.size, dtype=int)
    bounds = np.empty(x_grid.size)
    for i, x in enumerate(x_grid):
        masses[i], ks[i], bounds[i] = _chi_one(model, x, T, Gmass, Ghat, nfft, n_cells,
                                               s_step, tol, rho, n_terms)
    return ChiResult(x_grid, s_step, masses, ks, bounds)


def _lambda_from_chi(model: ModelSpec, chi: ChiResult, T: float, chunk: int = 32) -> np.ndarray:
    centers = chi.s_centers
    out = model.baseline(chi.x_grid)
    shared = chi.masses.strides[0] == 0
    for lo in range(0, chi.x_grid.size, chunk):
        sl = slice(lo, lo + chunk)
        nu_y = model.baseline(chi.x_grid[sl, None] - centers[None, :] / T)
        if shared:
            out[sl] += np.einsum("clm,xcm->xl", chi.masses[0], nu_y)
        else:
            out[sl] += np.einsum("xclm,xcm->xl", chi.masses[sl], nu_y)
    return out


def _lambda_at(model, xs, tol, T, s_step, s_max):
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    chi = compute_chi(model, xs, tol, s_step, s_max, T)
    return _lambda_from_chi(model, chi, T)


def compute_Lambda(model: ModelSpec, x_grid, tol: float = 1e-6, s_step: float | None = None,
                   s_max: float | None = None, T: float | None = None,
                   check: bool = True) -> np.ndarray:
    """Mean intensity Lambda(x) = nu(x) + int chi(s, x) nu(x - s/T) ds, shape (n_x, d).

    With ``check`` the renewal identity is verified and a residual above
    ``10 tol`` raises MomentError.
    """
    T = float(T or model.T)
    lam = _lambda_at(model, x_grid, tol, T, s_step, s_max)
    if check:
        res = renewal_residual(model, x_grid, tol, s_step, s_max, T, Lambda=lam)
        worst = float(np.max(np.abs(res)))
        if worst > 10 * tol:
            raise MomentError(f"renewal residual {worst:.3g} exceeds 10*tol", achieved=worst)
    return lam


def renewal_residual(model: ModelSpec, x_grid, tol: float = 1e-6, s_step: float | None = None,
                     s_max: float | None = None, T: float | None = None,
                     Lambda: np.ndarray | None = None) -> np.ndarray:
    """Lambda(x) - nu(x) - int_0^A mu(s, x) Lambda(x - s/T) ds at each x.

    Lambda on ``[x - A/T, x]`` is the series evaluated exactly for kernels
    constant in x, else quadratic interpolation through three series values.
    """
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    T = float(T or model.T)
    s_step = float(s_step or _default_step(model))
    if Lambda is None:
        Lambda = _lambda_at(model, x_grid, tol, T, s_step, s_max)
    Gmass = kernel_cell_masses(model, s_step)
    centers = (np.arange(Gmass.shape[0]) + 0.5) * s_step
    if not model.time_varying_kernel:
        chi_mass = compute_chi(model, x_grid[:1], tol, s_step, s_max, T).masses[0]
    out = np.empty((x_grid.size, model.d))
    for i, x in enumerate(x_grid):
        ys = x - centers / T
        if model.time_varying_kernel:
            nodes = np.array([x - model.A / T, x - 0.5 * model.A / T])
            lam_nodes = np.vstack([_lambda_at(model, nodes, tol, T, s_step, s_max), Lambda[i]])
            nodes = np.append(nodes, x)
            coef = np.polyfit(nodes - x, lam_nodes, 2)
            lam_y = np.stack([np.polyval(coef[:, l], ys - x) for l in range(model.d)], -1)
        else:
            lam_y = _lambda_shifted(model, x, chi_mass, Gmass.shape[0], s_step, T)
        kmass = model.amplitude(x) * Gmass  # (cells, d, d)
        out[i] = Lambda[i] - model.baseline(x) - np.einsum("clm,cm->l", kmass, lam_y)
    return out


def _lambda_shifted(model, x, chi_mass, n_shift, s_step, T):
    """Series Lambda at ``x - (q + 1/2) h / T`` for q < n_shift, kernel constant in x.

    On that lattice the series is a discrete correlation of chi masses with nu.
    """
    n_c = chi_mass.shape[0]
    grid = x - np.arange(1, n_shift + n_c + 1) * (s_step / T)
    nu_grid = model.baseline(grid)
    ys = x - (np.arange(n_shift) + 0.5) * (s_step / T)
    out = model.baseline(ys)
    for l in range(model.d):
        for m in range(model.d):
            out[:, l] += signal.correlate(nu_grid[:, m], chi_mass[:, l, m], mode="valid",
                                          method="fft")[:n_shift]
    return out


@dataclass
class MomentTable:
    """Gridded Lambda(x) and chi(s, x) with the series diagnostics."""

    model: ModelSpec
    T: float
    x_grid: np.ndarray
    s_step: float
    chi_mass: np.ndarray  # (n_x, n_cells, d, d)
    Lambda: np.ndarray  # (n_x, d)
    truncation_k: int
    tail_bound: float

    @property
    def s_grid(self) -> np.ndarray:
        return (np.arange(self.chi_mass.shape[1]) + 0.5) * self.s_step

    @property
    def s_max(self) -> float:
        return self.chi_mass.shape[1] * self.s_step

    def _xweights(self, x: float):
        xg = self.x_grid
        if xg.size == 1 or x <= xg[0]:
            return 0, 0, 0.0
        if x >= xg[-1]:
            return xg.size - 1, xg.size - 1, 0.0
        j = int(np.searchsorted(xg, x) - 1)
        return j, j + 1, (x - xg[j]) / (xg[j + 1] - xg[j])

    def chi_masses_at(self, x: float) -> np.ndarray:
        """Cell masses of chi(., x), linearly interpolated in x."""
        j0, j1, w = self._xweights(x)
        return (1 - w) * self.chi_mass[j0] + w * self.chi_mass[j1]

    def chi(self, s: float, x: float) -> np.ndarray:
        """Density chi(s, x) (d x d); zero for s < 0."""
        if s < 0:
            return np.zeros((self.model.d, self.model.d))
        cell = int(s / self.s_step)
        if cell >= self.chi_mass.shape[1]:
            raise MomentError(f"lag {s} beyond table coverage {self.s_max}")
        return self.chi_masses_at(x)[cell] / self.s_step

    def Lambda_at(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.x_grid.size == 1:
            return np.repeat(self.Lambda, x.size, axis=0)
        return np.stack([np.interp(x, self.x_grid, self.Lambda[:, l])
                         for l in range(self.model.d)], -1)


def moment_table(model: ModelSpec, x_grid, tol: float = 1e-6, s_step: float | None = None,
                 s_max: float | None = None, T: float | None = None,
                 check: bool = True) -> MomentTable:
    T = float(T or model.T)
    x_grid = np.atleast_1d(np.asarray(x_grid, dtype=float))
    chi = compute_chi(model, x_grid, tol, s_step, s_max, T)
    lam = _lambda_from_chi(model, chi, T)
    if check:
        res = renewal_residual(model, x_grid, tol, chi.s_step, s_max, T, Lambda=lam)
        worst = float(np.max(np.abs(res)))
        if worst > 10 * tol:
            raise MomentError(f"renewal residual {worst:.3g} exceeds 10*tol", achieved=worst)
    return MomentTable(model, T, x_grid, chi.s_step, chi.masses, lam,
                       int(chi.truncation_k.max()), float(chi.tail_bound.max()))


def covariance_density(table: MomentTable, t: float, t2: float):
    """Second-moment density E[dN_t dN_t2^T] / (dt dt2) for t != t2.

    Returns ``(density, dirac)``: ``dirac`` is the coefficient of
    ``delta(t - t2)`` (the diagonal of Lambda at ``t/T``) when ``t == t2``,
    else zeros.
    """
    T = table.T
    x, x2 = t / T, t2 / T
    d = table.model.d
    lag = t - t2
    if abs(lag) >= table.s_max:
        raise MomentError(f"lag {lag} beyond table coverage {table.s_max}")
    lam_x, lam_x2 = table.Lambda_at(x)[0], table.Lambda_at(x2)[0]
    dens = np.outer(lam_x, lam_x2)
    if lag > 0:
        dens = dens + table.chi(lag, x) @ np.diag(lam_x2)
    elif lag < 0:
        dens = dens + np.diag(lam_x) @ table.chi(-lag, x2).T
    # int chi(t - s, x) Sigma_{s/T} chi(t2 - s, x2)^T ds, with v = t - s over lag cells
    h = table.s_step
    c1 = table.chi_masses_at(x) / h
    c2 = table.chi_masses_at(x2) / h
    v = table.s_grid
    shifted = (v - lag) / h - 0.5  # fractional cell index of t2 - s = v - lag
    base = np.floor(shifted).astype(np.intp)
    frac = shifted - base
    n = c2.shape[0]

    def take(idx):
        ok = (idx >= 0) & (idx < n)
        out = np.zeros((v.size, d, d))
        out[ok] = c2[idx[ok]]
        return out

    c2v = (1 - frac)[:, None, None] * take(base) + frac[:, None, None] * take(base + 1)
    # lags below half a cell: chi is zero for negative arguments
    c2v[(v - lag) < 0] = 0.0
    sigma_s = table.Lambda_at((t - v) / T)
    dens = dens + h * np.einsum("vln,vn,vmn->lm", c1, sigma_s, c2v)
    dirac = np.diag(lam_x) if t == t2 else np.zeros((d, d))
    return dens, dirac


def lag_covariance(table: MomentTable, x: float | None = None):
    """Continuous part of the stationary covariance density at frozen ``x``.

    Returns ``(lags, c)`` with ``lags = k h`` for ``|k| < n_cells`` and
    ``c[k]`` the d x d density of ``Cov(dN_t, dN_{t-lag})`` excluding the
    Dirac mass (which is ``diag(Lambda(x))``).
    """
    x = float(table.x_grid[0] if x is None else x)
    h = table.s_step
    mass = table.chi_masses_at(x)
    n, d = mass.shape[0], table.model.d
    sigma = np.diag(table.Lambda_at(x)[0])
    nfft = sfft.next_fast_len(2 * n, real=True)
    # R(r) = int chi(v) Sigma chi(v - r)^T dv via FFT correlation of cell masses
    F = sfft.rfft(mass, n=nfft, axis=0)
    Fs = np.einsum("fln,nk->flk", F, sigma)
    R = sfft.irfft(np.einsum("flk,fmk->flm", Fs, np.conj(F)), n=nfft, axis=0) / h
    lags = np.arange(-(n - 1), n) * h
    c = np.zeros((lags.size, d, d))
    pos = np.arange(n)
    c[n - 1 + pos] += R[pos]
    c[n - 1 - pos[1:]] += R[nfft - pos[1:]]
    # chi(r) Sigma for r > 0 and Sigma chi(-r)^T for r < 0, as cell-averaged densities
    dens = mass / h
    c[n - 1 + pos] += 0.5 * np.einsum("rln,nm->rlm", dens, sigma)
    c[n - 1 + pos[1:]] += 0.5 * np.einsum("rln,nm->rlm", dens[:-1], sigma)
    c[n - 1 - pos] += 0.5 * np.einsum("ln,rmn->rlm", sigma, dens)
    c[n - 1 - pos[1:]] += 0.5 * np.einsum("ln,rmn->rlm", sigma, dens[:-1])
    return lags, c


def binned_covariance(table: MomentTable, lag: float, width: float,
                      x: float | None = None) -> np.ndarray:
    """Cov(N[a, a+w], N[a+lag, a+lag+w]) (d x d) at frozen rescaled time ``x``.

    Integrates the covariance density against the tent weight
    ``(w - |r + lag|)_+`` in ``r = t - t2``; the Dirac part contributes
    ``diag(Lambda) (w - |lag|)_+``.
    """
    x = float(table.x_grid[0] if x is None else x)
    lags, c = lag_covariance(table, x)
    weight = np.maximum(width - np.abs(lags + lag), 0.0)
    h = table.s_step
    cont = h * np.einsum("r,rlm->lm", weight, c)
    dirac = np.diag(table.Lambda_at(x)[0]) * max(width - abs(lag), 0.0)
    return cont + dirac


def save_moment_table(table: MomentTable, lambda_path: str | Path,
                      chi_path: str | Path | None = None, chi_every: int = 1) -> None:
    """CSV export: ``x,l,Lambda_l`` rows and optionally ``x,s,l,m,chi_lm`` rows (1-based l, m)."""
    with open(lambda_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "l", "Lambda_l"])
        for i, x in enumerate(table.x_grid):
            for l in range(table.model.d):
                writer.writerow([repr(float(x)), l + 1, repr(float(table.Lambda[i, l]))])
    if chi_path is None:
        return
    dens = table.chi_mass / table.s_step
    s = table.s_grid
    with open(chi_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "s", "l", "m", "chi_lm"])
        for i, x in enumerate(table.x_grid):
            for c in range(0, s.size, chi_every):
                for l in range(table.model.d):
                    for m in range(table.model.d):
                        writer.writerow([repr(float(x)), repr(float(s[c])), l + 1, m + 1,
                                         repr(float(dens[i, c, l, m]))])
