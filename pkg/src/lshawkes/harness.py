"""Replicated simulate-and-fit sweeps and simulator/oracle validation.

Every replicate ``rep`` at horizon index ``i`` draws from the generator
``SeedSequence(base_seed, spawn_key=(i, rep))``, so results do not depend on
execution order, worker count or whether a sweep was resumed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .estimate import EstimatorConfig, SingularDesignError, WindowError, fit_local, fit_stationary, ise
from .model import ModelSpec, load_model, model_from_config, validate_model
from .moments import binned_covariance, compute_Lambda, moment_table
from .simulate import simulate_cluster, simulate_thinning
from .splines import SplineBasis, gauss_legendre_pieces

__all__ = [
    "Rule",
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "load_report_rows",
    "PipelineReport",
    "validate_pipeline",
    "replicate_generator",
    "REPORT_HEADER",
]

log = logging.getLogger(__name__)

REPORT_HEADER = "# hawkes-report v1"
ENGINES = {"cluster": simulate_cluster, "thinning": simulate_thinning}


def replicate_generator(base_seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Rule:
    """``c * T**exponent``; exponent 0 gives a fixed value."""

    c: float
    exponent: float = 0.0

    def __call__(self, T: float) -> float:
        return float(self.c * float(T) ** self.exponent)

    @classmethod
    def parse(cls, value) -> "Rule":
        if isinstance(value, Rule):
            return value
        if isinstance(value, (int, float)):
            return cls(float(value))
        if isinstance(value, dict):
            return cls(float(value["c"]), float(value.get("exponent", 0.0)))
        raise TypeError(f"cannot read a rule from {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str | dict
    T_grid: tuple
    h_rule: Rule = Rule(0.5, -0.2)
    J_rule: Rule = Rule(8.0)
    replicates: int = 10
    base_seed: int = 0
    x0_list: tuple = (0.5,)
    outputs: str | None = None
    engine: str = "cluster"
    fit: str = "local"
    spline_order: int = 4
    K_order: int = 1
    kernel: str = "epanechnikov"
    target: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "T_grid", tuple(float(t) for t in self.T_grid))
        object.__setattr__(self, "x0_list", tuple(float(x) for x in self.x0_list))
        object.__setattr__(self, "h_rule", Rule.parse(self.h_rule))
        object.__setattr__(self, "J_rule", Rule.parse(self.J_rule))
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.T_grid or not self.x0_list:
            raise ValueError("T_grid and x0_list must be nonempty")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {sorted(ENGINES)}")
        if self.fit not in ("local", "stationary"):
            raise ValueError("fit must be 'local' or 'stationary'")
        if self.fit == "local":
            for T in self.T_grid:
                h = self.h_rule(T)
                for x0 in self.x0_list:
                    if not 0 < h < min(x0, 1 - x0):
                        raise WindowError(f"h={h:.4g} at T={T:g} is infeasible for x0={x0}")

    def n_basis(self, T: float) -> int:
        return max(self.spline_order, int(round(self.J_rule(T))))

    def model_spec(self) -> ModelSpec:
        return model_from_config(self.model) if isinstance(self.model, dict) else load_model(self.model)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["T_grid"] = list(self.T_grid)
        out["x0_list"] = list(self.x0_list)
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        return cls(**cfg)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def monotonicity(self) -> dict:
        """h non-increasing, J non-decreasing and hT increasing along the sorted T grid."""
        Ts = sorted(self.T_grid)
        hs = [self.h_rule(T) for T in Ts]
        Js = [self.n_basis(T) for T in Ts]
        hT = [h * T for h, T in zip(hs, Ts)]
        return {
            "h_nonincreasing": all(a >= b for a, b in zip(hs, hs[1:])),
            "J_nondecreasing": all(a <= b for a, b in zip(Js, Js[1:])),
            "hT_increasing": all(a < b for a, b in zip(hT, hT[1:])),
        }


def _columns(d: int) -> list[str]:
    return (["T_idx", "rep", "x0_idx", "T", "x0", "h", "J", "status", "n_events", "nu_err"]
            + [f"ise_{m + 1}" for m in range(d)]
            + ["ise_total", "min_eig", "cond", "ridge_used"])


def _one_replicate(cfg: ExperimentConfig, model: ModelSpec, T_idx: int, rep: int) -> list[dict]:
    T = cfg.T_grid[T_idx]
    h, J = cfg.h_rule(T), cfg.n_basis(T)
    gen = replicate_generator(cfg.base_seed, T_idx, rep)
    base = {"T_idx": T_idx, "rep": rep, "T": T, "h": h, "J": J}
    try:
        stream = ENGINES[cfg.engine](model.with_horizon(T), rng=gen)
    except Exception as exc:  # recorded, never aborts the sweep
        return [{**base, "x0_idx": k, "x0": x0, "status": f"error:{type(exc).__name__}"}
                for k, x0 in enumerate(cfg.x0_list)]
    rows = []
    for k, x0 in enumerate(cfg.x0_list):
        row = {**base, "x0_idx": k, "x0": x0, "n_events": int((stream.times >= 0).sum())}
        try:
            if cfg.fit == "stationary":
                basis = SplineBasis(model.A, cfg.spline_order, J, model.d)
                fit = fit_stationary(stream, basis, cfg.target)
            else:
                ecfg = EstimatorConfig(x0=x0, h=h, n_basis=J, spline_order=cfg.spline_order,
                                       K_order=cfg.K_order, target=cfg.target,
                                       smoothing_kernel=cfg.kernel)
                fit = fit_local(stream, ecfg, model.A)
            err = ise(fit, model, x0)
        except (SingularDesignError, WindowError, ValueError, np.linalg.LinAlgError) as exc:
            row["status"] = f"error:{type(exc).__name__}"
            rows.append(row)
            continue
        row.update(status="ok", nu_err=err["nu_abs_err"], ise_total=err["total"],
                   min_eig=fit.design.min_eig, cond=fit.design.cond, ridge_used=fit.ridge_used)
        for m, v in enumerate(err["ise"]):
            row[f"ise_{m + 1}"] = float(v)
        rows.append(row)
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(value: str):
    if value == "":
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _render(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def load_report_rows(path) -> list[dict]:
    """Rows of a ``hawkes-report v1`` CSV (comment lines skipped)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln and not ln.startswith("#")]
    if not lines:
        return []
    reader = csv.reader(lines)
    header = next(reader)
    return [dict(zip(header, (_parse(v) for v in rec))) for rec in reader if len(rec) == len(header)]


def _aggregate(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    cells = []
    for T_idx, T in enumerate(cfg.T_grid):
        for k, x0 in enumerate(cfg.x0_list):
            ok = [r for r in rows if r["T_idx"] == T_idx and r["x0_idx"] == k and r["status"] == "ok"]
            ise_v = np.array([r["ise_total"] for r in ok], dtype=float)
            nu_sq = np.array([r["nu_err"] ** 2 for r in ok], dtype=float)
            cell = {"T": T, "x0": x0, "h": cfg.h_rule(T), "J": cfg.n_basis(T), "n_ok": len(ok),
                    "n_error": cfg.replicates - len(ok)}
            for name, v in (("ise", ise_v), ("nu_sq_err", nu_sq)):
                if v.size:
                    q1, med, q3 = np.percentile(v, [25, 50, 75])
                    cell.update({f"{name}_median": float(med), f"{name}_iqr": float(q3 - q1)})
                else:
                    cell.update({f"{name}_median": None, f"{name}_iqr": None})
            cells.append(cell)
    rates = {}
    for x0 in cfg.x0_list:
        mine = [c for c in cells if c["x0"] == x0]
        for name in ("ise", "nu_sq_err"):
            pts = [(c["T"], c[f"{name}_median"]) for c in mine
                   if c[f"{name}_median"] is not None and c[f"{name}_median"] > 0]
            slope = None
            if len(pts) >= 2 and len({p[0] for p in pts}) >= 2:
                lt, lv = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
                slope = float(np.polyfit(lt, lv, 1)[0])
            rates[f"{name}@x0={x0:g}"] = slope
    return {"cells": cells, "rate_exponents": rates}


@dataclass
class ExperimentReport:
    config: dict
    rows: list[dict]
    aggregates: dict
    monotonicity: dict
    validation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _block_key(row) -> tuple[int, int]:
    return int(row["T_idx"]), int(row["rep"])


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Simulate, fit and score every (T, replicate, x0) cell.

    With ``cfg.outputs`` set, rows are appended to ``rows.csv`` one replicate
    block at a time; a rerun skips complete blocks and the finished file is
    rewritten in canonical order, so it matches an uninterrupted run.
    """
    model = cfg.model_spec()
    vrep = validate_model(model)
    if not vrep.passed:
        raise ValueError(f"model fails validation: {vrep.violations}")
    columns = _columns(model.d)
    n_x = len(cfg.x0_list)
    done: dict[tuple[int, int], list[dict]] = {}
    rows_path = None
    if cfg.outputs:
        out = Path(cfg.outputs)
        out.mkdir(parents=True, exist_ok=True)
        rows_path = out / "rows.csv"
        cfg_line = "# config=" + json.dumps(cfg.to_dict(), sort_keys=True)
        if rows_path.exists():
            text = rows_path.read_text(encoding="utf-8").splitlines()
            if len(text) < 2 or text[1] != cfg_line:
                raise ValueError(f"{rows_path} belongs to a different configuration")
            for row in load_report_rows(rows_path):
                done.setdefault(_block_key(row), []).append(row)
            done = {k: v for k, v in done.items() if len(v) == n_x}
        with open(rows_path, "w", encoding="utf-8") as fh:
            fh.write(f"{REPORT_HEADER}\n{cfg_line}\n{','.join(columns)}\n")
            for key in sorted(done):
                fh.write(_render(sorted(done[key], key=lambda r: r["x0_idx"]), columns))

    todo = [(i, r) for i in range(len(cfg.T_grid)) for r in range(cfg.replicates)
            if (i, r) not in done]
    batch = max(1, cfg.workers) * 4
    with Parallel(n_jobs=cfg.workers) as pool:
        for start in range(0, len(todo), batch):
            chunk = todo[start:start + batch]
            results = pool(delayed(_one_replicate)(cfg, model, i, r) for i, r in chunk)
            for key, rows in zip(chunk, results):
                # round-trip through text so in-memory and resumed rows agree exactly
                text = _render(rows, columns)
                done[key] = [dict(zip(columns, (_parse(v) for v in rec)))
                             for rec in csv.reader(text.splitlines())]
                if rows_path is not None:
                    with open(rows_path, "a", encoding="utf-8") as fh:
                        fh.write(text)
            log.info("completed %d/%d replicate blocks", start + len(chunk), len(todo))

    rows = [row for key in sorted(done) for row in sorted(done[key], key=lambda r: r["x0_idx"])]
    report = ExperimentReport(config=cfg.to_dict(), rows=rows, aggregates=_aggregate(cfg, rows),
                              monotonicity=cfg.monotonicity(), validation=vrep.as_dict())
    if rows_path is not None:
        tmp = rows_path.with_suffix(".tmp")
        tmp.write_text(f"{REPORT_HEADER}\n# config={json.dumps(cfg.to_dict(), sort_keys=True)}\n"
                       f"{','.join(columns)}\n{_render(rows, columns)}", encoding="utf-8")
        os.replace(tmp, rows_path)
        summary = {k: v for k, v in report.to_dict().items() if k != "rows"}
        (rows_path.parent / "summary.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report


# -- simulator and oracle validation ---------------------------------------


@dataclass
class PipelineReport:
    checks: list[dict]

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def check(self, name: str) -> dict:
        return next(c for c in self.checks if c["name"] == name)

    def as_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def _two_sample_z(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a.mean(axis=0) - b.mean(axis=0)
    se = np.sqrt(a.var(axis=0, ddof=1) / a.shape[0] + b.var(axis=0, ddof=1) / b.shape[0])
    return np.divide(diff, se, out=np.zeros_like(diff), where=se > 0)


def bin_average_Lambda(model: ModelSpec, edges_x: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Average of Lambda over each rescaled-time bin, shape (bins, d)."""
    nodes, w = gauss_legendre_pieces(edges_x, 4)
    vals = compute_Lambda(model, nodes, tol=tol)
    widths = np.diff(edges_x)
    return (vals * w[:, None]).reshape(widths.size, -1, model.d).sum(axis=1) / widths[:, None]


def empirical_lag_covariance(streams, width: float, lag: float, d: int) -> np.ndarray:
    """Per-stream sample Cov(N_l[a, a+w], N_m[a+lag, a+lag+w]) over consecutive bins, (n, d, d)."""
    k = int(round(lag / width))
    if abs(k * width - lag) > 1e-9 * max(1.0, lag):
        raise ValueError(f"lag {lag} is not a multiple of the bin width {width}")
    out = []
    for s in streams:
        edges = np.arange(0.0, s.T + 0.5 * width, width)
        c = s.window_counts(edges).astype(float)
        c -= c.mean(axis=0)
        n = c.shape[0] - k
        out.append(c[:n].T @ c[k:k + n] / n)
    return np.array(out)


def validate_pipeline(model: ModelSpec, T: float, replicates: int, seed: int = 0,
                      lambda_scale: float = 1.0, n_windows: int = 10, n_bins: int = 20,
                      tol: float = 1e-6, lags=(0.0, 0.5, 1.0), cov_width: float = 0.1,
                      z_max: float = 4.0) -> PipelineReport:
    """Cross-check the two simulators and the moment oracle.

    * ``engine_windows``: per-component counts in ``n_windows`` equal windows,
      two-sample z between engines; passes when >= 95% of cells have |z| < z_max.
    * ``lambda``: mean counts per unit time in ``n_bins`` bins (both engines
      pooled) against the bin-averaged oracle times ``lambda_scale``.
    * ``covariance`` (kernels constant in time only): bin-count covariances at
      ``lags`` against the integrated covariance density.
    """
    model = model.with_horizon(T)
    streams = {}
    for e, name in enumerate(("cluster", "thinning")):
        streams[name] = [ENGINES[name](model, rng=replicate_generator(seed, e, r))
                         for r in range(replicates)]
    checks = []

    edges = np.linspace(0.0, T, n_windows + 1)
    counts = {k: np.array([s.window_counts(edges) for s in v], dtype=float) for k, v in streams.items()}
    z = _two_sample_z(counts["cluster"], counts["thinning"])
    frac = float(np.mean(np.abs(z) < z_max))
    checks.append({"name": "engine_windows", "passed": frac >= 0.95, "fraction_within": frac,
                   "max_abs_z": float(np.max(np.abs(z))), "z": z.tolist()})

    bin_edges = np.linspace(0.0, T, n_bins + 1)
    pooled = np.array([s.window_counts(bin_edges) for v in streams.values() for s in v],
                      dtype=float) / (T / n_bins)
    oracle = lambda_scale * bin_average_Lambda(model, bin_edges / T, tol)
    se = pooled.std(axis=0, ddof=1) / np.sqrt(pooled.shape[0])
    zl = np.divide(pooled.mean(axis=0) - oracle, se, out=np.zeros_like(oracle), where=se > 0)
    checks.append({"name": "lambda", "passed": bool(np.all(np.abs(zl) < z_max)),
                   "max_abs_z": float(np.max(np.abs(zl))), "z": zl.tolist(),
                   "empirical": pooled.mean(axis=0).tolist(), "oracle": oracle.tolist()})

    stationary = not (np.any(model.nu1) or np.any(model.nu2) or model.time_varying_kernel)
    if stationary:
        width = cov_width
        table = moment_table(model, np.array([0.5]), tol=tol)
        all_streams = [s for v in streams.values() for s in v]
        rows = []
        worst = 0.0
        for lag in lags:
            emp = empirical_lag_covariance(all_streams, width, lag, model.d)
            theory = binned_covariance(table, lag, width, 0.5)
            se_c = emp.std(axis=0, ddof=1) / np.sqrt(emp.shape[0])
            zc = np.divide(emp.mean(axis=0) - theory, se_c, out=np.zeros_like(theory),
                           where=se_c > 0)
            worst = max(worst, float(np.max(np.abs(zc))))
            rows.append({"lag": lag, "empirical": emp.mean(axis=0).tolist(),
                         "oracle": theory.tolist(), "z": zc.tolist()})
        checks.append({"name": "covariance", "passed": worst < z_max, "max_abs_z": worst,
                       "lags": rows})
    else:
        checks.append({"name": "covariance", "passed": True, "skipped": "time-varying model"})
    return PipelineReport(checks)
