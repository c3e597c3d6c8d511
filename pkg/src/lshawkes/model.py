"""Locally stationary Hawkes models built from closed-form parameter families.

Every built-in family compiles to one canonical separable form::

    nu_l(x)        = c0_l + c1_l * x + c2_l * sin(2 pi f_l x)
    mu_lm(s, x)    = (a0_lm + a1_lm * x) * H_lm[p(s)] * exp(-b_lm * s),  0 <= s < A

where ``p(s)`` is the index of the equal-width piece of ``[0, A)`` holding
``s`` and ``x`` is rescaled time clipped to ``[0, 1]`` (parameter functions
are frozen at ``x = 0`` for earlier times).  Keeping the form closed lets the
simulators, the moment series and the serializer share one representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "ModelError",
    "ConvergenceError",
    "ModelSpec",
    "ValidationReport",
    "FAMILIES",
    "PRESETS",
    "spectral_radius",
    "gamma_plus",
    "validate_model",
    "builtin_family",
    "load_model",
    "save_model",
    "preset",
]


class ModelError(ValueError):
    """Invalid model parameters."""

    def __init__(self, message: str, radius: float | None = None):
        super().__init__(message)
        self.radius = radius


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate


def spectral_radius(m, rtol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Perron root of a nonnegative square matrix by power iteration.

    Iterates on ``m + I`` (same Perron vector, root shifted by one, never
    periodic) from the all-ones vector and stops once the Collatz-Wielandt
    bounds ``min(Mv/v) <= rho <= max(Mv/v)`` agree to ``rtol``.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise ValueError("spectral_radius expects finite nonnegative entries")
    n = m.shape[0]
    if not np.any(m):
        return 0.0
    shifted = m + np.eye(n)
    v = np.ones(n)
    for _ in range(max_iter):
        w = shifted @ v
        ratios = w / v
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= rtol * hi:
            return float(0.5 * (lo + hi) - 1.0)
        v = w / np.linalg.norm(w)
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last_iterate=v
    )


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Immutable multivariate locally stationary Hawkes model.

    Arrays are in canonical form (see module docstring); ``family`` and
    ``params`` record how they were produced so that configs round-trip.
    """

    d: int
    A: float
    T: float
    family: str
    params: dict
    nu0: np.ndarray
    nu1: np.ndarray
    nu2: np.ndarray
    nu_freq: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    b: np.ndarray
    H: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("nu0", "nu1", "nu2", "nu_freq", "a0", "a1", "b", "H"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.d < 1:
            raise ModelError("d must be a positive integer")
        if not self.A > 0 or not self.T > 0:
            raise ModelError("A and T must be positive")

    @property
    def n_pieces(self) -> int:
        return self.H.shape[-1]

    @property
    def time_varying_kernel(self) -> bool:
        return bool(np.any(self.a1 != 0))

    def with_horizon(self, T: float) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, T=float(T))

    # -- evaluation -------------------------------------------------------

    def baseline(self, x) -> np.ndarray:
        """nu(x), shape ``x.shape + (d,)``."""
        xc = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)[..., None]
        return self.nu0 + self.nu1 * xc + self.nu2 * np.sin(2 * np.pi * self.nu_freq * xc)

    def amplitude(self, x) -> np.ndarray:
        xc = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)[..., None, None]
        return self.a0 + self.a1 * xc

    def shape(self, s) -> np.ndarray:
        """Lag factor H[p(s)] exp(-b s) on [0, A), zero elsewhere."""
        s = np.asarray(s, dtype=float)
        piece = np.clip(np.floor(s * (self.n_pieces / self.A)), 0, self.n_pieces - 1)
        heights = np.moveaxis(self.H, -1, 0)[piece.astype(np.intp)]
        inside = ((s >= 0) & (s < self.A))[..., None, None]
        return np.where(inside, heights * np.exp(-self.b * s[..., None, None]), 0.0)

    def kernel(self, s, x) -> np.ndarray:
        """mu(s, x), shape ``broadcast(s, x).shape + (d, d)``."""
        return self.amplitude(x) * self.shape(s)

    def amplitude_sup(self) -> np.ndarray:
        return np.maximum(self.a0, self.a0 + self.a1)

    def envelope(self, s) -> np.ndarray:
        """sup over x <= 1 of mu(s, x) (the dominating stationary kernel)."""
        return self.amplitude_sup() * self.shape(s)

    def baseline_sup(self) -> np.ndarray:
        """Upper bound of nu on x <= 1: dense-grid maximum plus a Lipschitz margin."""
        n = 4096
        vals = self.baseline(np.linspace(0.0, 1.0, n + 1))
        lip = np.abs(self.nu1) + 2 * np.pi * np.abs(self.nu_freq * self.nu2)
        return vals.max(axis=0) + lip / (2 * n)

    def breakpoints(self) -> np.ndarray:
        """Lags in [0, A] where the kernel may be discontinuous."""
        return np.linspace(0.0, self.A, self.n_pieces + 1)

    def shape_integral(self, lo, hi) -> np.ndarray:
        """Exact integral of the lag factor over [lo, hi], shape ``lo.shape + (d, d)``.

        ``lo`` and ``hi`` must lie in one piece; callers split at breakpoints.
        """
        lo = np.asarray(lo, dtype=float)[..., None, None]
        hi = np.asarray(hi, dtype=float)[..., None, None]
        mid = 0.5 * (lo + hi)
        piece = np.clip(np.floor(mid[..., 0, 0] * (self.n_pieces / self.A)), 0, self.n_pieces - 1)
        heights = np.moveaxis(self.H, -1, 0)[piece.astype(np.intp)]
        b = self.b
        with np.errstate(invalid="ignore", divide="ignore"):
            expo = np.where(
                b > 0,
                (np.exp(-b * lo) - np.exp(-b * hi)) / np.where(b > 0, b, 1.0),
                hi - lo,
            )
        return heights * expo

    def shape_mass(self) -> np.ndarray:
        """Integral of the lag factor over [0, A], shape (d, d)."""
        br = self.breakpoints()
        return self.shape_integral(br[:-1], br[1:]).sum(axis=0)

    def gamma_closed_form(self) -> np.ndarray:
        return self.amplitude_sup() * self.shape_mass()

    # -- serialization ----------------------------------------------------

    def to_config(self) -> dict:
        return {"d": self.d, "A": self.A, "T": self.T, "family": self.family,
                "params": self.params}


@dataclass
class ValidationReport:
    passed: bool
    radius: float
    gamma: np.ndarray
    violations: list[str]
    nu_min: float
    nu_max: float
    mu_min: float
    mu_max: float

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "radius": self.radius,
            "gamma": self.gamma.tolist(),
            "violations": list(self.violations),
            "nu_min": self.nu_min,
            "nu_max": self.nu_max,
            "mu_min": self.mu_min,
            "mu_max": self.mu_max,
        }


def _simpson(f, a: float, b: float, breakpoints, panels: int = 2048) -> np.ndarray:
    """Composite Simpson over [a, b], restarted on each smooth piece."""
    edges = np.unique(np.concatenate([[a, b], np.asarray(breakpoints, float)]))
    edges = edges[(edges >= a) & (edges <= b)]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        n = max(2, int(round(panels * (hi - lo) / (b - a))))
        n += n % 2
        xs = np.linspace(lo, hi, n + 1)
        # left-closed pieces: evaluate the right end from inside the piece
        xs[-1] = np.nextafter(hi, lo)
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        total = total + (hi - lo) / (3 * n) * np.tensordot(w, f(xs), axes=(0, 0))
    return total


def gamma_plus(model: ModelSpec, panels: int = 2048, x_points: int = 512) -> np.ndarray:
    """Branching matrix: Simpson quadrature of sup_x mu(s, x) over [0, A]."""
    xg = np.linspace(0.0, 1.0, x_points)

    def sup_kernel(s):
        return model.kernel(s[:, None], xg[None, :]).max(axis=1)

    return _simpson(sup_kernel, 0.0, model.A, model.breakpoints(), panels)


def validate_model(model: ModelSpec, grid_density: int = 512) -> ValidationReport:
    """Grid check of positivity, boundedness and subcriticality."""
    violations: list[str] = []
    xg = np.linspace(0.0, 1.0, grid_density + 1)
    sg = np.linspace(0.0, model.A, max(2, int(np.ceil(grid_density * model.A))) + 1)
    nu = model.baseline(xg)
    mu = model.kernel(sg[:, None], xg[None, :])
    if not np.all(np.isfinite(nu)):
        violations.append("baseline not finite")
    if not np.all(np.isfinite(mu)):
        violations.append("kernel not finite")
    if np.any(nu <= 0):
        bad = xg[np.any(nu <= 0, axis=1)]
        violations.append(f"baseline not positive at {bad.size} grid points (first x={bad[0]:.6g})")
    if np.any(mu < 0):
        violations.append("kernel negative on grid")
    gamma = gamma_plus(model)
    radius = spectral_radius(np.maximum(gamma, 0.0))
    if not radius < 1:
        violations.append(f"spectral radius {radius:.6g} >= 1")
    return ValidationReport(
        passed=not violations,
        radius=radius,
        gamma=gamma,
        violations=violations,
        nu_min=float(nu.min()),
        nu_max=float(nu.max()),
        mu_min=float(mu.min()),
        mu_max=float(mu.max()),
    )


# -- families -------------------------------------------------------------

FAMILIES = {
    "constant": {"nu", "gamma", "beta"},
    "linear_baseline": {"nu", "nu_slope", "gamma", "beta"},
    "sine_baseline": {"nu", "nu_sine", "nu_freq", "gamma", "beta"},
    "exp_kernel_tv_amplitude": {"nu", "nu_slope", "alpha0", "alpha1", "beta"},
    "piecewise_const_kernel": {"nu", "heights"},
}


def _vec(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(d, float(arr))
    if arr.shape != (d,):
        raise ModelError(f"{name} must be a scalar or a length-{d} list")
    return arr


def _mat(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full((d, d), float(arr))
    if arr.shape != (d, d):
        raise ModelError(f"{name} must be a scalar or a {d}x{d} nested list")
    return arr


def builtin_family(name: str, params: dict | None = None, *, d: int = 1, A: float = 1.0,
                   T: float = 1000.0) -> ModelSpec:
    """Construct a model from a named closed-form family.

    Raises ModelError for unknown families, unknown or malformed parameters,
    negative parameter functions, and supercritical kernels (carrying the
    computed spectral radius).
    """
    if name not in FAMILIES:
        raise ModelError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    params = dict(params or {})
    unknown = set(params) - FAMILIES[name]
    if unknown:
        raise ModelError(f"family {name!r} does not accept {sorted(unknown)}")
    d, A, T = int(d), float(A), float(T)
    if d < 1 or not A > 0 or not T > 0:
        raise ModelError("need d >= 1, A > 0, T > 0")

    nu0 = _vec(params.get("nu", 1.0), d, "nu")
    nu1 = _vec(params.get("nu_slope", 0.0), d, "nu_slope")
    nu2 = _vec(params.get("nu_sine", 0.0), d, "nu_sine")
    nu_freq = _vec(params.get("nu_freq", 1.0), d, "nu_freq")

    if name == "piecewise_const_kernel":
        heights = np.asarray(params.get("heights", [0.0]), dtype=float)
        if heights.ndim == 1:
            if d != 1:
                raise ModelError("flat heights list only allowed for d=1")
            heights = heights[None, None, :]
        if heights.ndim != 3 or heights.shape[:2] != (d, d) or heights.shape[2] < 1:
            raise ModelError(f"heights must have shape ({d}, {d}, pieces)")
        a0 = np.ones((d, d))
        a1 = np.zeros((d, d))
        b = np.zeros((d, d))
        H = heights
    else:
        beta = float(params.get("beta", 1.0))
        if not beta > 0:
            raise ModelError("beta must be positive")
        b = np.full((d, d), beta)
        H = np.full((d, d, 1), beta)
        if name == "exp_kernel_tv_amplitude":
            a0 = _mat(params.get("alpha0", 0.0), d, "alpha0")
            a1 = _mat(params.get("alpha1", 0.0), d, "alpha1")
        else:
            # gamma is the exact branching mean of the truncated exponential
            a0 = _mat(params.get("gamma", 0.0), d, "gamma") / (1.0 - np.exp(-beta * A))
            a1 = np.zeros((d, d))

    model = ModelSpec(d=d, A=A, T=T, family=name, params=params, nu0=nu0, nu1=nu1,
                      nu2=nu2, nu_freq=nu_freq, a0=a0, a1=a1, b=b, H=H)

    xg = np.linspace(0.0, 1.0, 513)
    if np.any(model.baseline(xg) < 0):
        raise ModelError("baseline is negative somewhere on [0, 1]")
    if np.any(H < 0) or np.any(a0 < 0) or np.any(a0 + a1 < 0):
        raise ModelError("kernel is negative somewhere")
    radius = spectral_radius(gamma_plus(model))
    if not radius < 1:
        raise ModelError(f"kernel is not subcritical: spectral radius {radius:.6g}", radius)
    return model


def model_from_config(cfg: dict) -> ModelSpec:
    missing = {"d", "A", "T", "family"} - set(cfg)
    if missing:
        raise ModelError(f"model config missing {sorted(missing)}")
    return builtin_family(cfg["family"], cfg.get("params", {}), d=cfg["d"], A=cfg["A"],
                          T=cfg["T"])


PRESETS: dict[str, dict[str, Any]] = {
    "poisson": {"d": 1, "A": 1.0, "T": 1000.0, "family": "constant",
                "params": {"nu": 1.0}},
    "pc1": {"d": 1, "A": 1.0, "T": 5000.0, "family": "piecewise_const_kernel",
            "params": {"nu": 0.5, "heights": [0.6, 0.4]}},
    "mutual2": {"d": 2, "A": 3.0, "T": 2000.0, "family": "constant",
                "params": {"nu": [0.5, 0.3], "gamma": [[0.4, 0.2], [0.2, 0.4]], "beta": 2.0}},
    "mutual2_tv": {"d": 2, "A": 3.0, "T": 2000.0, "family": "linear_baseline",
                   "params": {"nu": [0.4, 0.3], "nu_slope": [0.4, 0.2],
                              "gamma": [[0.4, 0.2], [0.2, 0.4]], "beta": 2.0}},
    "tvexp": {"d": 1, "A": 3.0, "T": 5000.0, "family": "exp_kernel_tv_amplitude",
              "params": {"nu": 0.5, "nu_slope": 0.5, "alpha0": 0.4, "alpha1": 0.2,
                         "beta": 2.0}},
    "sine1": {"d": 1, "A": 2.0, "T": 2000.0, "family": "sine_baseline",
              "params": {"nu": 1.0, "nu_sine": 0.5, "nu_freq": 1.0, "gamma": 0.3,
                         "beta": 1.5}},
}


def preset(name: str, **overrides) -> ModelSpec:
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = {**PRESETS[name], **overrides}
    return model_from_config(cfg)


def load_model(path_or_name: str | Path) -> ModelSpec:
    """Load a JSON model config, or a preset when given a bare preset name."""
    text = str(path_or_name)
    if text in PRESETS and not Path(text).exists():
        return preset(text)
    with open(path_or_name, encoding="utf-8") as fh:
        return model_from_config(json.load(fh))


def save_model(model: ModelSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_config(), fh, indent=2, sort_keys=True)
        fh.write("\n")
