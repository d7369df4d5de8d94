"""Monte Carlo estimation of strategy values and parameter sweeps.

Every path has its own counter-based random stream (see
:func:`levytax.path_engine.path_generator`), and several strategies are
evaluated on each path, so that strategy comparisons use common random
numbers and results do not depend on the number of worker threads.

Discretization bias is estimated by evaluating each path twice: on the
mesh ``dt / 2`` and on the mesh ``dt`` (the same path observed at every
second mesh point). Monitoring the supremum and the zero level only at grid
points gives an error of order ``sqrt(dt)``, so the bias of the mesh-``dt``
estimate is approximately ``(m_dt - m_dt/2) / (1 - 2^(-1/2))``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError
from .levy_model import LevyModel
from .path_engine import NO_THRESHOLD, _model_arrays, _run_path, path_generator
from .scale_functions import ScaleEvaluator, build_scale_evaluator
from .tax_optimizer import (DEFAULT_QUAD, QuadratureSpec, TaxParams, optimal_threshold,
                            value)

__all__ = [
    "McConfig",
    "McEstimate",
    "Strategy",
    "ComparisonReport",
    "simulate_strategies",
    "estimate_value",
    "compare_analytic",
    "compare_analytic_points",
    "compare_strategies",
    "sweep",
    "value_curve",
    "worker_count",
]

RICHARDSON_FACTOR = 1.0 / (1.0 - 2.0 ** -0.5)
ZERO_LEVEL = 1e-8


@dataclass(frozen=True)
class McConfig:
    """Simulation settings.

    With ``richardson`` true each path is simulated on the mesh ``dt / 2``
    and the reported mean is the one on the mesh ``dt``; the difference
    between the two yields the discretization bias estimate.
    """

    n_paths: int
    horizon_T: float
    dt: float
    base_seed: int = 0
    x: float = 0.0
    x_bar: float = 0.0
    richardson: bool = True

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise DomainError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not self.horizon_T > 0:
            raise DomainError(f"horizon_T must be > 0, got {self.horizon_T}")
        if not self.dt > 0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if not (self.x_bar >= 0 and self.x_bar >= self.x):
            raise DomainError(f"need x_bar >= max(x, 0), got x={self.x}, x_bar={self.x_bar}")


@dataclass(frozen=True)
class McEstimate:
    """Sample mean of discounted taxes minus penalized bailouts."""

    mean: float
    std_error: float
    n: int
    truncation_bias_bound: float
    dt_bias: float = float("nan")
    dt_bias_std_error: float = float("nan")
    fine_mean: float = float("nan")

    @property
    def dt_bias_allowance(self) -> float:
        """Conservative bound on the discretization bias of ``mean``."""
        if math.isnan(self.dt_bias):
            return 0.0
        return abs(self.dt_bias) + 3.0 * self.dt_bias_std_error


@dataclass(frozen=True)
class Strategy:
    """Threshold strategy with minimal bailouts started from ``(x, x_bar)``.

    ``b = inf`` means the constant rate ``alpha``; ``alpha == beta`` gives
    a constant rate as well.
    """

    x: float
    x_bar: float
    alpha: float
    beta: float
    b: float
    eta: float

    @classmethod
    def constant(cls, rate: float, x: float, x_bar: float, eta: float) -> "Strategy":
        return cls(x, x_bar, rate, rate, 0.0, eta)


def worker_count(n_tasks: int) -> int:
    """Worker threads to use; ``LEVYTAX_THREADS`` caps the CPU count."""
    n = os.cpu_count() or 1
    cap = os.environ.get("LEVYTAX_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise DomainError(f"LEVYTAX_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(n, n_tasks))


def simulate_strategies(model: LevyModel, q: float, strategies: Sequence[Strategy],
                        n_paths: int, T: float, dt: float, base_seed: int = 0,
                        richardson: bool = True) -> np.ndarray:
    """Per-path values of each strategy, shape ``(n_paths, n_strategies, 2)``.

    Column 0 is the mesh-``dt`` value. With ``richardson`` column 1 holds
    the mesh-``dt/2`` value of the same path; otherwise it equals column 0.
    """
    if not strategies:
        raise DomainError("at least one strategy is required")
    cols = np.array([[s.x, s.x_bar, s.alpha, s.beta,
                      NO_THRESHOLD if math.isinf(s.b) else s.b, s.eta]
                     for s in strategies], dtype=float).T
    x0, x_bar, alpha, beta, b, eta = (np.ascontiguousarray(c) for c in cols)
    if np.any(x_bar < np.maximum(x0, 0.0)):
        raise DomainError("every strategy needs x_bar >= max(x, 0)")
    if np.any((alpha < 0) | (alpha > beta) | (beta >= 1)):
        raise DomainError("every strategy needs 0 <= alpha <= beta < 1")
    drift, sigma, rates, shapes, jrates = _model_arrays(model)
    step = dt / 2.0 if richardson else dt
    every = 2 if richardson else 1
    out = np.zeros((n_paths, len(strategies), 2))

    def work(lo, hi):
        for i in range(lo, hi):
            _run_path(path_generator(base_seed, i), float(T), float(step), every,
                      drift, sigma, rates, shapes, jrates, float(q),
                      x0, x_bar, alpha, beta, b, eta, out[i])

    workers = worker_count(n_paths)
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    if workers == 1:
        work(0, n_paths)
    else:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, bounds[:-1], bounds[1:]))
    # Kernel layout is (full grid, subgrid); return (mesh dt, mesh dt/2).
    if richardson:
        return out[:, :, ::-1].copy()
    out[:, :, 1] = out[:, :, 0]
    return out


def _mean_se(samples: np.ndarray):
    n = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _truncation_bound(ev, tax, b, x_bar, T, quad_spec):
    """``exp(-qT) (|v(x_bar, x_bar)| + eta * bailouts from (0, 0))``."""
    v_top = value(ev, tax, b, x_bar, x_bar, quad_spec)
    bail = 0.0
    if tax.eta > 0:
        no_penalty = TaxParams(tax.alpha, tax.beta, 0.0, tax.q)
        v0 = value(ev, tax, b, 0.0, 0.0, quad_spec)
        bail = (value(ev, no_penalty, b, 0.0, 0.0, quad_spec) - v0) / tax.eta
    return math.exp(-tax.q * T) * (abs(v_top) + tax.eta * abs(bail))


def _estimate_from(samples: np.ndarray, richardson: bool, trunc: float) -> McEstimate:
    coarse, fine = samples[:, 0], samples[:, 1]
    mean, se = _mean_se(coarse)
    if not richardson:
        return McEstimate(mean, se, len(coarse), trunc)
    diff_mean, diff_se = _mean_se(coarse - fine)
    return McEstimate(mean, se, len(coarse), trunc,
                      dt_bias=RICHARDSON_FACTOR * diff_mean,
                      dt_bias_std_error=RICHARDSON_FACTOR * diff_se,
                      fine_mean=float(np.mean(fine)))


def estimate_value(model: LevyModel, tax: TaxParams, b: float, cfg: McConfig,
                   ev: ScaleEvaluator | None = None,
                   quad_spec: QuadratureSpec = DEFAULT_QUAD) -> McEstimate:
    """Monte Carlo value of the threshold-``b`` strategy with minimal bailouts."""
    ev = ev if ev is not None else build_scale_evaluator(model, tax.q)
    strat = Strategy(cfg.x, cfg.x_bar, tax.alpha, tax.beta, b, tax.eta)
    samples = simulate_strategies(model, tax.q, [strat], cfg.n_paths, cfg.horizon_T, cfg.dt,
                                  cfg.base_seed, cfg.richardson)[:, 0, :]
    trunc = _truncation_bound(ev, tax, b, cfg.x_bar, cfg.horizon_T, quad_spec)
    return _estimate_from(samples, cfg.richardson, trunc)


@dataclass(frozen=True)
class ComparisonReport:
    estimate: McEstimate
    analytic: float
    z_score: float
    tolerance: float
    passed: bool

    def line(self, label: str = "") -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {label} mc={self.estimate.mean:.6f} se={self.estimate.std_error:.2e} "
                f"analytic={self.analytic:.6f} z={self.z_score:+.2f} "
                f"dt_bias={self.estimate.dt_bias:+.2e} tol={self.tolerance:.2e}").strip()


def compare_analytic(model: LevyModel, tax: TaxParams, b: float, cfg: McConfig,
                     ev: ScaleEvaluator | None = None,
                     quad_spec: QuadratureSpec = DEFAULT_QUAD) -> ComparisonReport:
    """Compare the simulated value with the closed form at ``(cfg.x, cfg.x_bar)``.

    Passes iff ``|mean - v| <= 3 SE + truncation bound + dt-bias allowance``.
    """
    return compare_analytic_points(model, tax, b, [(cfg.x, cfg.x_bar)], cfg, ev, quad_spec)[0]


def compare_analytic_points(model: LevyModel, tax: TaxParams, b: float, points, cfg: McConfig,
                            ev: ScaleEvaluator | None = None,
                            quad_spec: QuadratureSpec = DEFAULT_QUAD) -> list[ComparisonReport]:
    """:func:`compare_analytic` for several ``(x, x_bar)`` starts on the same paths.

    ``cfg.x`` and ``cfg.x_bar`` are ignored; every start uses the same
    random numbers, so the cost is close to that of a single start.
    """
    ev = ev if ev is not None else build_scale_evaluator(model, tax.q)
    strategies = [Strategy(float(x), float(xb), tax.alpha, tax.beta, b, tax.eta)
                  for x, xb in points]
    samples = simulate_strategies(model, tax.q, strategies, cfg.n_paths, cfg.horizon_T, cfg.dt,
                                  cfg.base_seed, cfg.richardson)
    reports = []
    for j, strat in enumerate(strategies):
        trunc = _truncation_bound(ev, tax, b, strat.x_bar, cfg.horizon_T, quad_spec)
        est = _estimate_from(samples[:, j, :], cfg.richardson, trunc)
        exact = value(ev, tax, b, strat.x, strat.x_bar, quad_spec)
        if est.std_error > 0:
            z = (est.mean - exact) / est.std_error
        else:
            z = 0.0 if est.mean == exact else math.copysign(math.inf, est.mean - exact)
        tol = 3.0 * est.std_error + est.truncation_bias_bound + est.dt_bias_allowance
        reports.append(ComparisonReport(est, exact, z, tol, abs(est.mean - exact) <= tol))
    return reports


def compare_strategies(model: LevyModel, q: float, reference: Strategy,
                       others: dict, cfg: McConfig) -> dict:
    """Paired differences ``reference - other`` on common random numbers.

    Returns ``{name: (diff_mean, diff_se, allowance)}`` where ``allowance``
    is the dt-bias allowance of the difference itself.
    """
    names = list(others)
    samples = simulate_strategies(model, q, [reference] + [others[k] for k in names],
                                  cfg.n_paths, cfg.horizon_T, cfg.dt, cfg.base_seed,
                                  cfg.richardson)
    result = {}
    for j, name in enumerate(names, start=1):
        diff = samples[:, 0, :] - samples[:, j, :]
        est = _estimate_from(diff, cfg.richardson, 0.0)
        result[name] = (est.mean, est.std_error, est.dt_bias_allowance)
    return result


SWEEP_VARS = ("alpha", "beta", "eta", "q", "b")


def sweep(model: LevyModel, tax: TaxParams, sweep_var: str, grid: Iterable[float],
          quad_spec: QuadratureSpec = DEFAULT_QUAD) -> list[tuple]:
    """Rows ``(param, value, b_star, v00)`` over a parameter grid.

    ``v00`` is ``v(1e-8, 1e-8)`` at the threshold ``b*`` (at the swept ``b``
    when ``sweep_var == 'b'``). The evaluator is rebuilt only when ``q``
    changes.
    """
    if sweep_var not in SWEEP_VARS:
        raise DomainError(f"sweep variable must be one of {SWEEP_VARS}, got {sweep_var!r}")
    rows = []
    ev_cache: dict = {}
    for g in grid:
        g = float(g)
        fields = dict(alpha=tax.alpha, beta=tax.beta, eta=tax.eta, q=tax.q)
        if sweep_var != "b":
            fields[sweep_var] = g
        elif g < 0:
            raise DomainError(f"threshold b must be >= 0, got {g}")
        params = TaxParams(**fields)
        if params.q not in ev_cache:
            ev_cache[params.q] = build_scale_evaluator(model, params.q)
        ev = ev_cache[params.q]
        b_star = optimal_threshold(ev, params, quad_spec)
        b = g if sweep_var == "b" else b_star
        v00 = value(ev, params, b, ZERO_LEVEL, ZERO_LEVEL, quad_spec)
        rows.append((sweep_var, g, b_star, v00))
    return rows


def value_curve(model: LevyModel, tax: TaxParams, xs: Iterable[float], b: float | None = None,
                quad_spec: QuadratureSpec = DEFAULT_QUAD) -> list[tuple]:
    """Rows ``(x, v(x, x))`` at threshold ``b`` (default ``b*``)."""
    ev = build_scale_evaluator(model, tax.q)
    if b is None:
        b = optimal_threshold(ev, tax, quad_spec)
    return [(float(x), value(ev, tax, b, float(x), float(x), quad_spec)) for x in xs]
