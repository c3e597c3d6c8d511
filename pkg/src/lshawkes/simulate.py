"""Exact samplers for locally stationary Hawkes processes.

Two independent engines: a branching (cluster) construction and Ogata
thinning against a piecewise-constant dominating rate.  Both start at
``-L`` (warm-up) and return events in ``(-L, T]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .events import EventStream
from .model import ModelSpec, ModelError, spectral_radius

__all__ = [
    "SimulationError",
    "RngStream",
    "OffspringMeans",
    "simulate_cluster",
    "simulate_thinning",
    "sample_offspring_offset",
    "default_warmup",
]

MAX_INDIVIDUALS = 10_000_000


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Seed record; ``(seed, stream_id)`` pairs map to independent generators."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> tuple[np.random.Generator, int | None, int | None]:
    if isinstance(rng, RngStream):
        return rng.generator(), rng.seed, rng.stream_id
    if isinstance(rng, np.random.Generator):
        return rng, None, None
    return RngStream(int(rng)).generator(), int(rng), 0


def default_warmup(model: ModelSpec) -> float:
    return 20.0 * model.A


def _check_model(model: ModelSpec) -> None:
    radius = spectral_radius(model.gamma_closed_form())
    if not radius < 1:
        raise ModelError(f"cannot simulate a supercritical model (radius {radius:.6g})", radius)


def _immigrants(model: ModelSpec, T: float, L: float, gen: np.random.Generator):
    nubar = model.baseline_sup()
    times, marks = [], []
    for m in range(model.d):
        if nubar[m] <= 0:
            continue
        n = gen.poisson(nubar[m] * (T + L))
        t = gen.uniform(-L, T, size=n)
        keep = gen.random(n) * nubar[m] < model.baseline(t / T)[:, m]
        times.append(t[keep])
        marks.append(np.full(int(keep.sum()), m, dtype=np.int64))
    if not times:
        return np.empty(0), np.empty(0, dtype=np.int64)
    return np.concatenate(times), np.concatenate(marks)


class _Envelope:
    """Exact sampler for offsets with density proportional to sup_x mu_lm(s, x)."""

    def __init__(self, model: ModelSpec):
        self.model = model
        br = model.breakpoints()
        self.lo, self.hi = br[:-1], br[1:]
        # piece masses of the lag factor, shape (pieces, d, d)
        self.piece_mass = model.shape_integral(self.lo, self.hi)
        self.amp_sup = model.amplitude_sup()
        self.mean = self.amp_sup * self.piece_mass.sum(axis=0)

    def draw(self, l: int, m: int, n: int, gen: np.random.Generator) -> np.ndarray:
        mass = self.piece_mass[:, l, m]
        piece = gen.choice(mass.size, size=n, p=mass / mass.sum()) if mass.size > 1 \
            else np.zeros(n, dtype=np.intp)
        lo, width = self.lo[piece], self.hi[piece] - self.lo[piece]
        u = gen.random(n)
        b = self.model.b[l, m]
        if b > 0:
            off = -np.log1p(-u * -np.expm1(-b * width)) / b
        else:
            off = u * width
        # guard the open right end of the support
        return lo + np.minimum(off, np.nextafter(width, 0))

    def acceptance(self, l: int, m: int, child_times: np.ndarray, T: float) -> np.ndarray:
        amp = self.model.amplitude(child_times / T)[..., l, m]
        ratio = amp / self.amp_sup[l, m]
        if np.any(ratio > 1 + 1e-12):
            raise SimulationError(f"envelope violated for kernel ({l}, {m})")
        return ratio


class OffspringMeans:
    """Offspring means p_x^{(l,m)} = int_0^A mu_lm(s, x + s/T) ds on a cached grid.

    Linear interpolation between ``n_grid`` rescaled-time nodes.
    """

    def __init__(self, model: ModelSpec, T: float | None = None, n_grid: int = 512):
        from .splines import gauss_legendre_pieces

        self.model = model
        self.T = float(T or model.T)
        self.x_grid = np.linspace(0.0, 1.0, n_grid)
        edges = np.union1d(np.linspace(0.0, model.A, 257), model.breakpoints())
        s, w = gauss_legendre_pieces(edges, 6)
        vals = model.kernel(s[None, :], self.x_grid[:, None] + s[None, :] / self.T)
        self.table = np.einsum("xsij,s->xij", vals, w)

    def __call__(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        flat = self.table.reshape(self.x_grid.size, -1)
        out = np.stack([np.interp(x, self.x_grid, flat[:, k]) for k in range(flat.shape[1])], -1)
        return out.reshape(x.shape + self.table.shape[1:])


def sample_offspring_offset(model: ModelSpec, l: int, m: int, x: float, rng,
                            T: float | None = None, return_proposals: bool = False):
    """One birth offset of a type-``l`` child of a type-``m`` parent born at rescaled time ``x``.

    Rejection sampling from the envelope sup_x mu_lm; the accepted offset has
    density mu_lm(s, x + s/T) / p_x.  With ``return_proposals`` also returns
    the number of envelope proposals used.
    """
    gen, _, _ = _as_generator(rng)
    T = float(T or model.T)
    env = _Envelope(model)
    if env.mean[l, m] <= 0:
        raise ValueError(f"kernel ({l}, {m}) has zero mass")
    proposals = 0
    while True:
        s = env.draw(l, m, 64, gen)
        ratio = env.acceptance(l, m, x * T + s, T)
        accept = gen.random(s.size) < ratio
        if accept.any():
            k = int(np.argmax(accept))
            proposals += k + 1
            return (float(s[k]), proposals) if return_proposals else float(s[k])
        proposals += s.size


def simulate_cluster(model: ModelSpec, T: float | None = None, rng=0,
                     L: float | None = None,
                     max_individuals: int = MAX_INDIVIDUALS) -> EventStream:
    """Branching construction: Poisson immigrants, then Poisson offspring generations.

    Each type-``m`` individual born at ``S`` gets Poisson(envelope mean)
    candidate type-``l`` children at envelope-distributed offsets, each kept
    with probability ``mu_lm(s, (S+s)/T) / sup_x mu_lm(s, x)``.  This thinned
    Poisson process has exactly Poisson(p_{S/T}) children with the offset
    density of the construction.
    """
    _check_model(model)
    T = float(model.T if T is None else T)
    L = default_warmup(model) if L is None else float(L)
    if L < 0:
        raise ValueError("warm-up length must be nonnegative")
    gen, seed, stream_id = _as_generator(rng)
    env = _Envelope(model)

    times, marks = _immigrants(model, T, L, gen)
    all_times, all_marks = [times], [marks]
    total = times.size
    parents_t, parents_m = times, marks
    while parents_t.size:
        child_t, child_m = [], []
        for m in range(model.d):
            mine = parents_t[parents_m == m]
            if not mine.size:
                continue
            for l in range(model.d):
                lam = env.mean[l, m]
                if lam <= 0:
                    continue
                counts = gen.poisson(lam, size=mine.size)
                n = int(counts.sum())
                if not n:
                    continue
                born = np.repeat(mine, counts) + env.draw(l, m, n, gen)
                keep = gen.random(n) < env.acceptance(l, m, born, T)
                born = born[keep & (born <= T)]
                child_t.append(born)
                child_m.append(np.full(born.size, l, dtype=np.int64))
        if not child_t:
            break
        parents_t = np.concatenate(child_t)
        parents_m = np.concatenate(child_m)
        total += parents_t.size
        if total > max_individuals:
            raise SimulationError(
                f"more than {max_individuals} individuals; the model is effectively explosive"
            )
        all_times.append(parents_t)
        all_marks.append(parents_m)

    times = np.concatenate(all_times)
    marks = np.concatenate(all_marks)
    order = np.argsort(times, kind="stable")
    times, marks = times[order], marks[order]
    keep = times > -L
    return EventStream(times[keep], marks[keep], T, model.d, -L, seed, stream_id)


@numba.njit(cache=True)
def _thinning_loop(seed, T, L, A, nu0, nu1, nu2, nuf, nubar, a0, a1, b, H, colmax):
    np.random.seed(seed)
    d = nu0.shape[0]
    P = H.shape[2]
    cap = 1024
    times = np.empty(cap)
    marks = np.empty(cap, dtype=np.int64)
    n = 0
    start = 0
    t = -L
    nubar_sum = nubar.sum()
    lam = np.empty(d)
    while True:
        while start < n and times[start] <= t - A:
            start += 1
        B = nubar_sum
        for e in range(start, n):
            B += colmax[marks[e]]
        next_exp = times[start] + A if start < n else np.inf
        if B <= 0.0:
            if next_exp == np.inf:
                break
            t = next_exp
            start += 1
            continue
        tc = t + np.random.exponential(1.0 / B)
        if tc >= next_exp:
            # memoryless restart at the expiry; (u + A) - A need not equal u
            t = next_exp
            start += 1
            continue
        if tc > T:
            break
        t = tc
        x = min(max(t / T, 0.0), 1.0)
        total = 0.0
        for l in range(d):
            lam[l] = nu0[l] + nu1[l] * x + nu2[l] * math.sin(2.0 * math.pi * nuf[l] * x)
        for e in range(start, n):
            s = t - times[e]
            m = marks[e]
            p = int(s * P / A)
            if p > P - 1:
                p = P - 1
            for l in range(d):
                lam[l] += (a0[l, m] + a1[l, m] * x) * H[l, m, p] * math.exp(-b[l, m] * s)
        for l in range(d):
            total += lam[l]
        if total > B * (1.0 + 1e-9):
            return times[:n], marks[:n], -1
        u = np.random.random() * B
        cum = 0.0
        for l in range(d):
            cum += lam[l]
            if u < cum:
                if n == cap:
                    cap *= 2
                    grown_t = np.empty(cap)
                    grown_m = np.empty(cap, dtype=np.int64)
                    grown_t[:n] = times[:n]
                    grown_m[:n] = marks[:n]
                    times = grown_t
                    marks = grown_m
                times[n] = t
                marks[n] = l
                n += 1
                break
    return times[:n], marks[:n], 0


def simulate_thinning(model: ModelSpec, T: float | None = None, rng=0,
                      L: float | None = None) -> EventStream:
    """Ogata thinning with dominating rate sum_l [nubar_l + sum_m mubar_lm N_m(t-A, t)].

    The rate is recomputed after every accepted event and whenever the oldest
    event leaves the trailing window of length ``A``.
    """
    _check_model(model)
    T = float(model.T if T is None else T)
    L = default_warmup(model) if L is None else float(L)
    if L < 0:
        raise ValueError("warm-up length must be nonnegative")
    gen, seed, stream_id = _as_generator(rng)
    mubar_max = model.amplitude_sup() * np.max(model.H, axis=2)
    colmax = mubar_max.sum(axis=0)
    times, marks, status = _thinning_loop(
        int(gen.integers(2**31 - 1)), T, L, float(model.A),
        np.ascontiguousarray(model.nu0), np.ascontiguousarray(model.nu1),
        np.ascontiguousarray(model.nu2), np.ascontiguousarray(model.nu_freq),
        np.ascontiguousarray(model.baseline_sup()),
        np.ascontiguousarray(model.a0), np.ascontiguousarray(model.a1),
        np.ascontiguousarray(model.b), np.ascontiguousarray(model.H),
        np.ascontiguousarray(colmax),
    )
    if status != 0:
        raise SimulationError("acceptance probability exceeded 1: dominating rate too small")
    keep = times > -L
    return EventStream(times[keep].copy(), marks[keep].copy(), T, model.d, -L, seed, stream_id)
