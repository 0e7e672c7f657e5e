"""Experiment pipelines behind the command line, reporting one metric per CSV row."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import exact
from .factorization import FactorizationError, dense_inverse_cholesky, factorize, kl_divergence
from .geometry import pairwise_dist, square_grid
from .kernels import ALLOWED_NU, MaternKernel, dense_kernel_matrix
from .linsolve import DEFAULT_TOL
from .measurements import order_interior_first, standard_layout
from .pde import (UNIT_BOX, GaussNewtonError, GNConfig, burgers_march, error_norms, grid_side, solve_elliptic,
                  solve_monge_ampere)

EXPERIMENTS = ("factorize-kl", "solve-elliptic", "solve-burgers", "solve-ma", "bench-scaling", "screening-report")
COLUMNS = ("experiment", "param_json", "metric", "value", "seconds")
SCREENING_DENSE_LIMIT = 4096
_SOLVE = ("rho", "rho_r", "lam", "gn_steps", "pcg_tol")
RELEVANT = {
    "factorize-kl": ("rho", "lam"),
    "solve-elliptic": _SOLVE,
    "solve-ma": _SOLVE,
    "solve-burgers": _SOLVE + ("dt", "T", "viscosity"),
    "bench-scaling": ("rho", "lam", "n_domains", "repeats"),
    "screening-report": (),
}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str
    nu: float = 2.5
    lengthscale: float | None = None
    h: float | None = None
    n_domain: int | None = None
    rho: float | list[float] = 4.0
    rho_r: float | None = None
    lam: float = 1.5
    gn_steps: int | None = None
    pcg_tol: float = DEFAULT_TOL
    dt: float = 0.02
    T: float = 1.0
    viscosity: float = 0.001
    n_domains: list[int] = field(default_factory=list)
    repeats: int = 1
    workers: int = 1
    output_path: str | None = None

    @property
    def rhos(self) -> list[float]:
        return [float(r) for r in self.rho] if isinstance(self.rho, list) else [float(self.rho)]

    def gn_config(self, rho: float | None = None) -> GNConfig:
        rho = self.rhos[0] if rho is None else rho
        return GNConfig(steps=self.gn_steps, rho=rho, rho_r=self.rho_r, lam=self.lam, pcg_tol=self.pcg_tol,
                        workers=self.workers)

    def params(self) -> dict:
        """The settings that influence this experiment's results."""
        keys = ["experiment", "nu", "lengthscale", "h", "n_domain", *RELEVANT[self.experiment]]
        out = {k: v for k, v in asdict(self).items() if k in keys and v is not None}
        if "rho_r" in keys and self.rho_r is None:
            out["rho_r"] = self.rhos[0]
        return out


def _num(section: dict, key: str, kind=float, positive: bool = True):
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key} must be a number")
    if kind is int and float(val) != int(val):
        raise ConfigError(f"{key} must be an integer")
    val = kind(val)
    if not math.isfinite(val) and not (key in ("rho", "rho_r") and val == math.inf):
        raise ConfigError(f"{key} must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{key} must be positive")
    return val


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON object and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"experiment", "kernel", "grid", "rho", "rho_r", "lambda", "gn_steps", "pcg_tol", "dt", "T",
             "viscosity", "n_domains", "repeats", "workers", "output_path"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {list(EXPERIMENTS)}")
    cfg = ExperimentConfig(exp)
    kernel = raw.get("kernel", {})
    if not isinstance(kernel, dict) or set(kernel) - {"nu", "lengthscale"}:
        raise ConfigError("kernel must be an object with nu and lengthscale")
    if "nu" in kernel:
        cfg.nu = _num(kernel, "nu")
        if cfg.nu not in ALLOWED_NU:
            raise ConfigError(f"nu must be one of {sorted(ALLOWED_NU)}")
    cfg.lengthscale = _num(kernel, "lengthscale") if "lengthscale" in kernel else (
        0.02 if exp == "solve-burgers" else 0.3)
    grid = raw.get("grid", {})
    if not isinstance(grid, dict) or set(grid) - {"h", "n_domain"}:
        raise ConfigError("grid must be an object with h or n_domain")
    if "h" in grid and "n_domain" in grid:
        raise ConfigError("give exactly one of grid.h and grid.n_domain")
    if "h" in grid:
        cfg.h = _num(grid, "h")
    if "n_domain" in grid:
        cfg.n_domain = _num(grid, "n_domain", int)
    needs_grid = exp not in ("bench-scaling",)
    if needs_grid and cfg.h is None and cfg.n_domain is None:
        raise ConfigError("grid needs h or n_domain")
    if exp == "solve-burgers" and cfg.h is not None:
        cfg.n_domain = int(round(2.0 / cfg.h)) - 1
        cfg.h = None
    if exp in ("factorize-kl", "solve-elliptic", "solve-ma", "screening-report"):
        try:
            grid_side(cfg.h, cfg.n_domain)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if "rho" in raw:
        rho = raw["rho"]
        if isinstance(rho, list):
            if not rho:
                raise ConfigError("rho list is empty")
            cfg.rho = [_num({"rho": r}, "rho") for r in rho]
        else:
            cfg.rho = _num(raw, "rho")
    elif exp == "factorize-kl":
        cfg.rho = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    if "rho_r" in raw:
        cfg.rho_r = _num(raw, "rho_r")
    if "lambda" in raw:
        cfg.lam = _num(raw, "lambda")
        if not cfg.lam > 1:
            raise ConfigError("lambda must exceed 1")
    cfg.gn_steps = _num(raw, "gn_steps", int) if "gn_steps" in raw else (2 if exp == "solve-burgers" else 3)
    for key in ("pcg_tol", "dt", "T", "viscosity"):
        if key in raw:
            setattr(cfg, key, _num(raw, key))
    if exp == "solve-burgers":
        n_steps = round(cfg.T / cfg.dt)
        if n_steps < 1 or abs(n_steps * cfg.dt - cfg.T) > 1e-9 * max(1.0, cfg.T):
            raise ConfigError("T must be a positive multiple of dt")
    if "n_domains" in raw:
        vals = raw["n_domains"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError("n_domains must be a nonempty list")
        cfg.n_domains = [_num({"n_domains": v}, "n_domains", int) for v in vals]
        for n in cfg.n_domains:
            try:
                grid_side(n_domain=n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
    elif exp == "bench-scaling":
        cfg.n_domains = [2500, 10000, 40000]
    for key in ("repeats", "workers"):
        if key in raw:
            setattr(cfg, key, _num(raw, key, int))
    if "output_path" in raw:
        if not isinstance(raw["output_path"], str):
            raise ConfigError("output_path must be a string")
        cfg.output_path = raw["output_path"]
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


class Report:
    """CSV sink; rows are written and flushed as they are produced."""

    def __init__(self, stream: io.TextIOBase, experiment: str, base_params: dict):
        self.stream = stream
        self.experiment = experiment
        self.base = base_params
        self.rows = 0
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        stream.flush()

    def add(self, metric: str, value, seconds: float = 0.0, **extra) -> None:
        params = json.dumps({**self.base, **extra}, sort_keys=True, default=_json_default)
        self._writer.writerow([self.experiment, params, metric, format_value(value), format_value(seconds)])
        self.stream.flush()
        self.rows += 1


def _json_default(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _kernel(cfg: ExperimentConfig) -> MaternKernel:
    return MaternKernel(cfg.nu, cfg.lengthscale)


def elliptic_layout(m: int):
    interior, boundary = square_grid(m)
    return standard_layout("elliptic", interior, boundary, UNIT_BOX)


def factorize_kl(cfg: ExperimentConfig, report: Report) -> dict:
    k = _kernel(cfg)
    lay = elliptic_layout(grid_side(cfg.h, cfg.n_domain))
    order = order_interior_first(lay)
    theta = dense_kernel_matrix(k, lay.X, lay.coef)
    report.add("N", lay.N)
    report.add("n_boundary", lay.n_boundary)
    kls = []
    for rho in cfg.rhos:
        t0 = time.perf_counter()
        f = factorize(k, lay.X, lay.coef, order, rho, cfg.lam, cfg.workers)
        seconds = time.perf_counter() - t0
        kl = kl_divergence(theta, f)
        kls.append(kl)
        report.add("kl", kl, seconds, sweep_rho=rho)
        report.add("nnz", f.stats["nnz"], seconds, sweep_rho=rho)
    return {"kl": kls}


def _gn_rows(report: Report, sol) -> list[int]:
    its = []
    for h in sol.history:
        if h["stage"] == "factorize":
            report.add("factorize_nnz", h["nnz"], h["seconds"])
        else:
            k = h["iteration"]
            its.append(h["pcg_iterations"])
            report.add("pcg_iterations", h["pcg_iterations"], h["seconds"], gn_iteration=k)
            report.add("residual", h["residual_after"], h["seconds"], gn_iteration=k)
    return its


def _check_pcg(sol) -> None:
    bad = [h["iteration"] for h in sol.history if h["stage"] == "gn" and not h["pcg_converged"]]
    if bad:
        raise NumericalFailure(f"conjugate gradients did not converge in Gauss-Newton iteration {bad[0]}")


def _solve_pde(cfg: ExperimentConfig, report: Report, solver: Callable) -> dict:
    m = grid_side(cfg.h, cfg.n_domain)
    t0 = time.perf_counter()
    sol, info = solver(m, _kernel(cfg), cfg.gn_config())
    seconds = time.perf_counter() - t0
    report.add("N", info["N"])
    report.add("n_boundary", info["n_boundary"])
    its = _gn_rows(report, sol)
    report.add("l2_error", info["l2"], seconds)
    report.add("linf_error", info["linf"], seconds)
    _check_pcg(sol)
    return {**info, "pcg_iterations": its}


def solve_elliptic_exp(cfg: ExperimentConfig, report: Report) -> dict:
    return _solve_pde(cfg, report, solve_elliptic)


def solve_ma_exp(cfg: ExperimentConfig, report: Report) -> dict:
    return _solve_pde(cfg, report, solve_monge_ampere)


def solve_burgers_exp(cfg: ExperimentConfig, report: Report) -> dict:
    t0 = time.perf_counter()
    run = burgers_march(cfg.n_domain, cfg.dt, cfg.T, _kernel(cfg), cfg.gn_config(), cfg.viscosity)
    seconds = time.perf_counter() - t0
    truth = exact.burgers_truth(run.x, cfg.T, cfg.viscosity)
    l2, linf = error_norms(run.u, truth)
    report.add("N", 3 * cfg.n_domain + 2)
    report.add("n_boundary", 2)
    report.add("time_steps", run.times.size)
    report.add("l2_error", l2, seconds)
    report.add("linf_error", linf, seconds)
    return {"l2": l2, "linf": linf, "seconds": seconds}


def bench_scaling(cfg: ExperimentConfig, report: Report) -> dict:
    k = _kernel(cfg)
    times = {}
    for n in cfg.n_domains:
        lay = elliptic_layout(grid_side(n_domain=n))
        best, nnz = math.inf, 0
        for _ in range(cfg.repeats):
            t0 = time.perf_counter()
            order = order_interior_first(lay)
            f = factorize(k, lay.X, lay.coef, order, cfg.rhos[0], cfg.lam, cfg.workers)
            best = min(best, time.perf_counter() - t0)
            nnz = f.stats["nnz"]
        times[n] = best
        report.add("factorize_seconds", best, best, bench_n_domain=n, N=lay.N, n_boundary=lay.n_boundary)
        report.add("nnz", nnz, best, bench_n_domain=n)
    lo, hi = min(times), max(times)
    if hi != lo:
        report.add("time_ratio", times[hi] / times[lo], 0.0, bench_from=lo, bench_to=hi)
    return {"seconds": times}


def screening_pairs(m: int, kernel: MaternKernel) -> Iterator[tuple[int, int, float, float, float]]:
    """``(j, i, dist/l_j, |U_ij|, |U_ij / U_jj|)`` for the exact factor of the elliptic kernel matrix."""
    lay = elliptic_layout(m)
    if lay.N > SCREENING_DENSE_LIMIT:
        raise ConfigError(f"screening-report needs N <= {SCREENING_DENSE_LIMIT}, got {lay.N}")
    order = order_interior_first(lay)
    theta = dense_kernel_matrix(kernel, lay.X, lay.coef)[np.ix_(order.perm, order.perm)]
    U = dense_inverse_cholesky(theta)
    Xo = lay.X[order.perm]
    scaled = pairwise_dist(Xo, Xo) / order.lengthscales[None, :]
    diag = np.diag(U)
    rows, cols = np.triu_indices(lay.N, 1)
    for i, j in zip(rows.tolist(), cols.tolist()):
        yield j, i, float(scaled[i, j]), abs(float(U[i, j])), abs(float(U[i, j] / diag[j]))


def screening_slope(m: int, kernel: MaternKernel, floor: float = 1e-14) -> tuple[float, int]:
    """Least-squares slope of ``log|U_ij/U_jj|`` against ``dist/l_j`` over ratios above ``floor``."""
    _, _, d, _, r = (np.array(c) for c in zip(*screening_pairs(m, kernel)))
    keep = r > floor
    slope = np.polyfit(d[keep], np.log(r[keep]), 1)[0]
    return float(slope), int(keep.sum())


def screening_report(cfg: ExperimentConfig, report: Report) -> dict:
    m = grid_side(cfg.h, cfg.n_domain)
    k = _kernel(cfg)
    t0 = time.perf_counter()
    d_all, r_all = [], []
    for j, i, d, a, r in screening_pairs(m, k):
        report.add("abs_U", a, 0.0, i=i, j=j, dist_over_l=d)
        report.add("abs_ratio", r, 0.0, i=i, j=j, dist_over_l=d)
        d_all.append(d)
        r_all.append(r)
    d_arr, r_arr = np.array(d_all), np.array(r_all)
    keep = r_arr > 1e-14
    slope = float(np.polyfit(d_arr[keep], np.log(r_arr[keep]), 1)[0])
    report.add("decay_slope", slope, time.perf_counter() - t0)
    return {"slope": slope}


PIPELINES: dict[str, Callable[[ExperimentConfig, Report], dict]] = {
    "factorize-kl": factorize_kl,
    "solve-elliptic": solve_elliptic_exp,
    "solve-burgers": solve_burgers_exp,
    "solve-ma": solve_ma_exp,
    "bench-scaling": bench_scaling,
    "screening-report": screening_report,
}


def run_experiment(cfg: ExperimentConfig, stream: io.TextIOBase) -> dict:
    """Run one pipeline; numerical failures append a failure row before propagating."""
    report = Report(stream, cfg.experiment, cfg.params())
    try:
        return PIPELINES[cfg.experiment](cfg, report)
    except (GaussNewtonError, FactorizationError, NumericalFailure) as exc:
        report.add("failure", getattr(exc, "iteration", -1), 0.0, error=str(exc))
        raise NumericalFailure(str(exc)) from exc
