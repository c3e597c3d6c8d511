"""Localized B-spline least-squares estimation of one intensity row.

For a target component ``l`` and rescaled time ``x0`` the working intensity

    lam#(t; theta) = sum_k theta_{0,k} p^(k-1)
                     + sum_{j,k} theta_{j,k} p^(k-1) int_{[t-A, t)} psi_j(t-u) . dN_u,
    p = (t - t0) / (T h),

is fit by minimizing ``-2 tau' theta + theta' Delta theta`` where ``Delta`` and
``tau`` are kernel-weighted (1/(Th)) integrals over ``[t0 - Th, t0 + Th]``.
The inner event sums are exact; the outer ``dt`` integral is by default exact
too (Gauss-Legendre between all breakpoints of the piecewise-polynomial
integrand), with fixed-step midpoint quadrature available.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .events import EventStream
from .model import ModelSpec
from .splines import SplineBasis, gauss_legendre_pieces

__all__ = [
    "SMOOTHING_KERNELS",
    "EstimatorConfig",
    "DesignSystem",
    "FitResult",
    "SingularDesignError",
    "WindowError",
    "check_event_stream",
    "assemble_design",
    "solve_coefficients",
    "fit_local",
    "fit_local_rows",
    "fit_stationary",
    "ise",
    "LocalHawkesEstimator",
    "StationaryHawkesEstimator",
]


class SingularDesignError(np.linalg.LinAlgError):
    def __init__(self, message: str, eigenvalues: np.ndarray | None = None):
        super().__init__(message)
        self.eigenvalues = eigenvalues


class WindowError(ValueError):
    pass


def _epanechnikov(p):
    return np.where(np.abs(p) <= 1, 0.75 * (1 - p * p), 0.0)


def _triangular(p):
    return np.where(np.abs(p) <= 1, 1 - np.abs(p), 0.0)


def _uniform(p):
    return np.where(np.abs(p) <= 1, 0.5, 0.0)


# name -> (density on [-1, 1], polynomial degree between kinks, interior kinks)
SMOOTHING_KERNELS = {
    "epanechnikov": (_epanechnikov, 2, ()),
    "triangular": (_triangular, 1, (0.0,)),
    "uniform": (_uniform, 0, ()),
}


@dataclass(frozen=True)
class EstimatorConfig:
    x0: float = 0.5
    h: float = 0.2
    n_basis: int = 8
    spline_order: int = 4
    K_order: int = 1
    target: int = 0
    smoothing_kernel: str = "epanechnikov"
    quadrature: str = "gauss"
    quad_step: float | None = None
    ridge: float = 0.0
    boundary_mode: str = "error"

    def __post_init__(self):
        if not 0 < self.x0 < 1:
            raise ValueError("x0 must lie in (0, 1)")
        if not self.h > 0:
            raise ValueError("bandwidth h must be positive")
        if self.boundary_mode not in ("error", "truncate"):
            raise ValueError("boundary_mode must be 'error' or 'truncate'")
        if self.boundary_mode == "error" and not self.h < min(self.x0, 1 - self.x0):
            raise WindowError(
                f"h={self.h} must be below min(x0, 1-x0)={min(self.x0, 1 - self.x0)} "
                "unless boundary_mode='truncate'"
            )
        if self.smoothing_kernel not in SMOOTHING_KERNELS:
            raise ValueError(f"unknown smoothing kernel {self.smoothing_kernel!r}")
        if self.quadrature not in ("gauss", "midpoint"):
            raise ValueError("quadrature must be 'gauss' or 'midpoint'")
        if self.K_order < 1 or self.ridge < 0:
            raise ValueError("need K_order >= 1 and ridge >= 0")


def check_event_stream(X, d: int | None = None) -> EventStream:
    """Accept an EventStream or a ``(times, marks, T)`` tuple."""
    if isinstance(X, EventStream):
        stream = X
    elif isinstance(X, tuple) and len(X) in (3, 4):
        times, marks, T = X[:3]
        marks = np.asarray(marks, dtype=np.int64)
        dim = X[3] if len(X) == 4 else (int(marks.max()) + 1 if marks.size else 1)
        times = np.asarray(times, dtype=float)
        stream = EventStream(times, marks, T, dim, min(0.0, float(times.min(initial=0.0))))
    else:
        raise TypeError("expected an EventStream or a (times, marks, T) tuple")
    if d is not None and stream.d != d:
        raise ValueError(f"stream has d={stream.d}, expected {d}")
    return stream


@dataclass
class _Window:
    t_lo: float
    t_hi: float
    center: float
    scale: float  # polynomial argument is (t - center) / scale
    norm: float  # outer 1/(Th) or 1/(T - A)
    kernel: str | None  # None for uniform unit weight
    kernel_scale: float = 1.0

    def weight(self, t):
        if self.kernel is None:
            return np.ones_like(t)
        fn = SMOOTHING_KERNELS[self.kernel][0]
        return fn((t - self.center) / self.scale) / self.kernel_scale

    def kinks(self):
        if self.kernel is None:
            return ()
        return tuple(self.center + k * self.scale for k in SMOOTHING_KERNELS[self.kernel][2])

    def degree(self):
        return 0 if self.kernel is None else SMOOTHING_KERNELS[self.kernel][1]


@dataclass
class DesignSystem:
    """Delta, tau and what is needed to rebuild tau for another target row."""

    Delta: np.ndarray
    tau: np.ndarray
    target: int
    basis: SplineBasis
    K_order: int
    t0: float
    Th: float
    n_nodes: int
    n_events_used: int
    degenerate: bool
    min_eig: float
    cond: float
    event_marks: np.ndarray = field(repr=False)
    event_terms: np.ndarray = field(repr=False)  # norm * weight * z at window events

    def tau_for(self, target: int) -> np.ndarray:
        return self.event_terms[self.event_marks == target].sum(axis=0)

    @property
    def diagnostics(self) -> dict:
        return {"min_eig": self.min_eig, "cond": self.cond, "n_nodes": self.n_nodes,
                "n_events_used": self.n_events_used, "degenerate": self.degenerate}


def _features(basis: SplineBasis, ev_t, ev_m, points, include_equal: bool):
    """Phi[q, m * n_basis + i] = sum over events u in [t_q - A, t_q) of type m of psi_i(t_q - u).

    ``include_equal`` keeps events at exactly ``t_q - A`` (the closed end).
    """
    J, nb = basis.J, basis.n_basis
    lo = np.searchsorted(ev_t, points - basis.A, side="left" if include_equal else "right")
    hi = np.searchsorted(ev_t, points, side="left")
    counts = hi - lo
    out = np.zeros((points.size, J))
    n_pairs = int(counts.sum())
    if not n_pairs:
        return out
    rows = np.repeat(np.arange(points.size), counts)
    offsets = np.arange(n_pairs) - np.repeat(np.cumsum(counts) - counts, counts)
    ev = np.repeat(lo, counts) + offsets
    lags = points[rows] - ev_t[ev]
    first, vals = basis.nonzero_normalized(lags)
    cols = ev_m[ev][:, None] * nb + first[:, None] + np.arange(basis.order)
    flat = (rows[:, None] * J + cols).ravel()
    out.ravel()[:] = np.bincount(flat, weights=vals.ravel(), minlength=points.size * J)
    return out


def _expand(phi: np.ndarray, p: np.ndarray, K: int) -> np.ndarray:
    """z[q, j*K + k] = phi_ext[q, j] * p[q]**k with phi_ext = [1, phi]."""
    ext = np.hstack([np.ones((phi.shape[0], 1)), phi])
    powers = p[:, None] ** np.arange(K)
    return (ext[:, :, None] * powers[:, None, :]).reshape(phi.shape[0], ext.shape[1] * K)


def _assemble(stream: EventStream, basis: SplineBasis, win: _Window, K: int, target: int,
              quadrature: str, quad_step: float | None) -> DesignSystem:
    A = basis.A
    times, marks = stream.times, stream.marks
    # events that can influence the design: u in [t_lo - A, t_hi]
    sel = (times >= win.t_lo - A) & (times <= win.t_hi)
    ev_t, ev_m = times[sel], marks[sel]

    if quadrature == "gauss":
        cuts = [np.array([win.t_lo, win.t_hi]), np.asarray(win.kinks(), dtype=float)]
        if ev_t.size:
            cuts.append((ev_t[:, None] + basis.breaks[None, :]).ravel())
        edges = np.unique(np.concatenate(cuts))
        edges = edges[(edges >= win.t_lo) & (edges <= win.t_hi)]
        degree = 2 * (basis.order - 1) + win.degree() + 2 * (K - 1)
        nodes, wts = gauss_legendre_pieces(edges, degree // 2 + 1)
    else:
        step = quad_step or min(win.t_hi - win.t_lo, A) / (16 * basis.n_basis)
        n = int(np.ceil((win.t_hi - win.t_lo) / step - 1e-9))
        step = (win.t_hi - win.t_lo) / n
        nodes = win.t_lo + (np.arange(n) + 0.5) * step
        wts = np.full(n, step)

    phi = _features(basis, ev_t, ev_m, nodes, include_equal=True)
    Z = _expand(phi, (nodes - win.center) / win.scale, K)
    M = Z.T @ ((win.norm * wts * win.weight(nodes))[:, None] * Z)
    Delta = 0.5 * (M + M.T)

    in_win = (ev_t >= win.t_lo) & (ev_t <= win.t_hi)
    wt_t, wt_m = ev_t[in_win], ev_m[in_win]
    # events strictly before t_i only: psi_j(t_i - u) over u in [t_i - A, t_i)
    phi_ev = _features(basis, ev_t, ev_m, wt_t, include_equal=True)
    Z_ev = _expand(phi_ev, (wt_t - win.center) / win.scale, K)
    terms = (win.norm * win.weight(wt_t))[:, None] * Z_ev

    eig = np.linalg.eigvalsh(Delta)
    top = float(np.max(np.abs(eig))) if eig.size else 0.0
    min_eig = float(eig[0])
    cond = float(top / min_eig) if min_eig > 0 else np.inf
    degenerate = (not ev_t.size) or min_eig < 1e-10 * top
    return DesignSystem(
        Delta=Delta, tau=terms[wt_m == target].sum(axis=0), target=target, basis=basis,
        K_order=K, t0=win.center, Th=win.scale, n_nodes=int(nodes.size),
        n_events_used=int(ev_t.size), degenerate=bool(degenerate), min_eig=min_eig,
        cond=cond, event_marks=wt_m, event_terms=terms,
    )


def _local_window(stream: EventStream, cfg: EstimatorConfig) -> _Window:
    T = stream.T
    t0, Th = cfg.x0 * T, cfg.h * T
    t_lo, t_hi = t0 - Th, t0 + Th
    kscale = 1.0
    if t_lo < 0 or t_hi > T:
        if cfg.boundary_mode != "truncate":
            raise WindowError(f"window [{t_lo}, {t_hi}] exceeds [0, {T}]")
        t_lo, t_hi = max(t_lo, 0.0), min(t_hi, T)
        fn, deg, kinks = SMOOTHING_KERNELS[cfg.smoothing_kernel]
        p_edges = np.unique(np.r_[(t_lo - t0) / Th, list(kinks), (t_hi - t0) / Th])
        p_edges = p_edges[(p_edges >= (t_lo - t0) / Th) & (p_edges <= (t_hi - t0) / Th)]
        nodes, w = gauss_legendre_pieces(p_edges, 3)
        kscale = float(w @ fn(nodes))
    return _Window(t_lo, t_hi, t0, Th, 1.0 / Th, cfg.smoothing_kernel, kscale)


def _basis_for(stream_d: int, A: float, cfg_or_basis) -> SplineBasis:
    if isinstance(cfg_or_basis, SplineBasis):
        return cfg_or_basis
    return SplineBasis(A=A, order=cfg_or_basis.spline_order, n_basis=cfg_or_basis.n_basis,
                       d=stream_d)


def assemble_design(events, cfg: EstimatorConfig, A: float) -> DesignSystem:
    """Localized Delta and tau for ``cfg.target`` around ``t0 = x0 T``.

    ``A`` is the kernel support, which fixes the spline basis domain.
    """
    stream = check_event_stream(events)
    if not 0 <= cfg.target < stream.d:
        raise ValueError(f"target {cfg.target} out of range for d={stream.d}")
    basis = _basis_for(stream.d, A, cfg)
    win = _local_window(stream, cfg)
    return _assemble(stream, basis, win, cfg.K_order, cfg.target, cfg.quadrature, cfg.quad_step)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    nu_star_hat: float
    mu_coef: np.ndarray
    basis: SplineBasis
    design: DesignSystem = field(repr=False)
    ridge_used: float
    config: dict

    def mu_star(self, u) -> np.ndarray:
        """Estimated kernel row mu*(u) as an array of shape ``(len(u), d)``; zero off [0, A]."""
        return self.basis.evaluate(self.mu_coef, np.atleast_1d(np.asarray(u, dtype=float)))

    def criterion(self, theta=None) -> float:
        """rho(theta) = -2 tau' theta + theta' Delta theta."""
        theta = self.theta_hat if theta is None else np.asarray(theta, dtype=float)
        return float(-2 * self.design.tau @ theta + theta @ self.design.Delta @ theta)

    @property
    def diagnostics(self) -> dict:
        return {**self.design.diagnostics, "ridge_used": self.ridge_used}

    def to_dict(self) -> dict:
        return {"config": self.config, "theta_hat": self.theta_hat.tolist(),
                "nu_star_hat": self.nu_star_hat, "diagnostics": self.diagnostics}


def solve_coefficients(design: DesignSystem, ridge: float = 0.0,
                       tau: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Solve (Delta + ridge I) theta = tau by Cholesky, escalating the ridge if needed.

    The ladder {1e-10, 1e-8, 1e-6} * trace(Delta)/dim is tried when the smallest
    eigenvalue is below 1e-10 ||Delta||.  Returns ``(theta, ridge_used)``.
    """
    D = design.Delta
    tau = design.tau if tau is None else tau
    n = D.shape[0]
    eig = np.linalg.eigvalsh(D)
    top = float(np.max(np.abs(eig)))
    floor = 1e-10 * top
    candidates = [float(ridge)]
    if eig[0] + ridge < floor or top == 0:
        scale = np.trace(D) / n if top > 0 else 1.0
        candidates += [c * scale for c in (1e-10, 1e-8, 1e-6) if c * scale > ridge]
    tau_norm = float(np.linalg.norm(tau))
    for r in candidates:
        if eig[0] + r < floor or eig[0] + r <= 0:
            continue
        M = D + r * np.eye(n)
        try:
            factor = linalg.cho_factor(M, lower=True)
        except linalg.LinAlgError:
            continue
        theta = linalg.cho_solve(factor, tau)
        if np.linalg.norm(M @ theta - tau) <= 1e-8 * max(tau_norm, np.finfo(float).tiny):
            return theta, r
        if tau_norm == 0:
            return theta, r
    raise SingularDesignError(
        f"Delta singular after ridge escalation (min eigenvalue {eig[0]:.3g}, max {top:.3g})",
        eigenvalues=eig,
    )


def _result(design: DesignSystem, theta: np.ndarray, ridge_used: float, config: dict) -> FitResult:
    K = design.K_order
    return FitResult(theta_hat=theta, nu_star_hat=float(theta[0]), mu_coef=theta[K::K].copy(),
                     basis=design.basis, design=design, ridge_used=ridge_used, config=config)


def fit_local(events, cfg: EstimatorConfig, A: float) -> FitResult:
    """Assemble, solve and wrap; ``nu_star_hat`` and ``mu_coef`` are the k=1 coefficients."""
    design = assemble_design(events, cfg, A)
    theta, r = solve_coefficients(design, cfg.ridge)
    return _result(design, theta, r, {**asdict(cfg), "A": float(A)})


def fit_local_rows(events, cfg: EstimatorConfig, A: float) -> list[FitResult]:
    """Fits for every target row; Delta does not depend on the row and is built once."""
    design = assemble_design(events, cfg, A)
    out = []
    for target in range(design.basis.d):
        tau = design.tau_for(target)
        theta, r = solve_coefficients(design, cfg.ridge, tau)
        row = DesignSystem(**{**design.__dict__, "tau": tau, "target": target})
        out.append(_result(row, theta, r, {**asdict(cfg), "target": target, "A": float(A)}))
    return out


def fit_stationary(events, basis: SplineBasis, target: int = 0, ridge: float = 0.0) -> FitResult:
    """Unlocalized fit over ``[A, T]`` with unit weight and constant baseline."""
    stream = check_event_stream(events)
    if basis.d != stream.d:
        raise ValueError("basis dimension does not match the stream")
    A, T = basis.A, stream.T
    if not T > A:
        raise WindowError("need T > A for the stationary window [A, T]")
    win = _Window(A, T, 0.5 * (A + T), 0.5 * (T - A), 1.0 / (T - A), None)
    design = _assemble(stream, basis, win, 1, target, "gauss", None)
    theta, r = solve_coefficients(design, ridge)
    config = {"stationary": True, "target": target, "n_basis": basis.n_basis,
              "spline_order": basis.order, "A": A}
    return _result(design, theta, r, config)


def ise(fit: FitResult, truth: ModelSpec, x0: float | None = None, panels: int = 4096) -> dict:
    """Integrated squared error of mu*(.) per component and |nu* error| against the truth."""
    target = fit.config.get("target", 0)
    x0 = fit.config.get("x0", 0.5) if x0 is None else x0
    A = truth.A
    edges = np.unique(np.concatenate([np.linspace(0.0, A, panels + 1), truth.breakpoints(),
                                      fit.basis.breaks]))
    u, w = gauss_legendre_pieces(edges, 5)
    diff = fit.mu_star(u) - truth.kernel(u, x0)[:, target, :]
    per = w @ (diff * diff)
    nu_err = abs(fit.nu_star_hat - float(truth.baseline(x0)[target]))
    return {"ise": per, "l2": np.sqrt(per), "total": float(per.sum()), "nu_abs_err": nu_err}


# -- scikit-learn style wrappers -------------------------------------------


class LocalHawkesEstimator(BaseEstimator):
    """Localized least-squares estimate of row ``target`` at rescaled time ``x0``.

    ``fit`` takes an EventStream; ``predict(u)`` evaluates mu*(u); ``score``
    is the negative criterion on a (possibly new) stream.
    """

    def __init__(self, A=1.0, x0=0.5, h=0.2, n_basis=8, spline_order=4, poly_order=1,
                 target=0, kernel="epanechnikov", ridge=0.0, quadrature="gauss",
                 quad_step=None, boundary_mode="error"):
        self.A = A
        self.x0 = x0
        self.h = h
        self.n_basis = n_basis
        self.spline_order = spline_order
        self.poly_order = poly_order
        self.target = target
        self.kernel = kernel
        self.ridge = ridge
        self.quadrature = quadrature
        self.quad_step = quad_step
        self.boundary_mode = boundary_mode

    def _config(self) -> EstimatorConfig:
        return EstimatorConfig(x0=self.x0, h=self.h, n_basis=self.n_basis,
                               spline_order=self.spline_order, K_order=self.poly_order,
                               target=self.target, smoothing_kernel=self.kernel,
                               quadrature=self.quadrature, quad_step=self.quad_step,
                               ridge=self.ridge, boundary_mode=self.boundary_mode)

    def fit(self, X, y=None):
        stream = check_event_stream(X)
        self.fit_result_ = fit_local(stream, self._config(), self.A)
        self.theta_ = self.fit_result_.theta_hat
        self.nu_star_ = self.fit_result_.nu_star_hat
        self.coef_ = self.fit_result_.mu_coef
        self.n_features_in_ = stream.d
        return self

    def predict(self, u):
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.mu_star(u)

    def score(self, X, y=None):
        check_is_fitted(self, "fit_result_")
        design = assemble_design(check_event_stream(X), self._config(), self.A)
        th = self.theta_
        return float(2 * design.tau @ th - th @ design.Delta @ th)


class StationaryHawkesEstimator(BaseEstimator):
    def __init__(self, A=1.0, n_basis=8, spline_order=4, target=0, ridge=0.0):
        self.A = A
        self.n_basis = n_basis
        self.spline_order = spline_order
        self.target = target
        self.ridge = ridge

    def fit(self, X, y=None):
        stream = check_event_stream(X)
        basis = SplineBasis(self.A, self.spline_order, self.n_basis, stream.d)
        self.fit_result_ = fit_stationary(stream, basis, self.target, self.ridge)
        self.theta_ = self.fit_result_.theta_hat
        self.nu_ = self.fit_result_.nu_star_hat
        self.coef_ = self.fit_result_.mu_coef
        self.n_features_in_ = stream.d
        return self

    def predict(self, u):
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.mu_star(u)
