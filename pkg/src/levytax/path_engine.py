"""Path simulation and the pathwise tax/reflection transforms.

Paths are simulated on a uniform mesh merged with the jump epochs. All
transforms act on the resulting discrete path: the supremum is monitored at
grid points only and a negative value at a grid point is cancelled by a
bailout of exactly the deficit.

Two implementations of the combined tax-reflection transform are provided.
:func:`tax_reflection_transform` follows the segment-by-segment construction
(taxed stretches, reflected stretches, and a Picard fixed point when the
start is at or below zero with maximum level zero) and exposes all
intermediate paths. :func:`controlled_functionals` runs the equivalent
one-pass recursion compiled with numba and only returns the discounted
functionals; it is what the Monte Carlo estimator uses.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import DomainError, NonConvergence
from .levy_model import LevyModel

__all__ = [
    "TOL_POS",
    "SamplePath",
    "ControlledPath",
    "path_generator",
    "simulate_path",
    "running_sup",
    "reflect_at_zero",
    "tax_transform_threshold",
    "tax_reflection_transform",
    "discounted_functionals",
    "controlled_functionals",
    "write_path_csv",
]

TOL_POS = 1e-9
FIXPOINT_TOL = 1e-10
# Levels above this are treated as "no threshold" (constant rate alpha).
NO_THRESHOLD = 1e300


def path_generator(base_seed: int, path_index: int = 0) -> np.random.Generator:
    """Independent counter-based stream for path ``path_index`` under ``base_seed``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(ss))


# -- event stepping shared by the path generator and the Monte Carlo kernel --

def _model_arrays(model: LevyModel):
    comps = model.jump_components
    rates = np.array([c.rate for c in comps], dtype=np.float64)
    shapes = np.array([c.shape for c in comps], dtype=np.float64)
    jrates = np.array([c.jump_rate for c in comps], dtype=np.float64)
    return model.drift, model.volatility, rates, shapes, jrates


def _generate(rng_factory, x0, horizon, dt, drift, sigma, rates, shapes, jrates):
    """Record the grid path; retries with a larger buffer if jumps overflow it."""
    n_mesh = int(math.ceil(horizon / dt - 1e-9))
    cap = n_mesh + 16 + int(4.0 * rates.sum() * horizon + 16.0)
    empty = np.zeros(0)
    while True:
        times, values, jumps = np.empty(cap), np.empty(cap), np.zeros(cap)
        n = _core(rng_factory(), x0, horizon, dt, 1, drift, sigma, rates, shapes, jrates,
                  0.0, empty, empty, empty, empty, empty, empty, np.zeros((0, 2)),
                  times, values, jumps)
        if n > 0:
            return times[:n], values[:n], jumps[:n]
        cap *= 2


@dataclass(frozen=True)
class SamplePath:
    """One simulated path of ``X`` on a grid that contains every jump epoch.

    ``values[i]`` is the value at ``times[i]`` (post-jump at a jump epoch);
    ``jump_events`` lists ``(time, size)`` with ``size > 0`` subtracted.
    """

    initial_value: float
    times: np.ndarray
    values: np.ndarray
    jump_events: tuple
    seed: int
    path_index: int = 0


def simulate_path(model: LevyModel, T: float, dt: float, seed: int, x0: float = 0.0,
                  path_index: int = 0) -> SamplePath:
    """Simulate ``X`` on ``[0, T]`` with mesh ``dt`` merged with the jump epochs.

    Gaussian increments ``N(c D, sigma^2 D)`` are drawn per interval of
    length ``D``; jump sizes are Erlang per component. The stream is that of
    :func:`path_generator` ``(seed, path_index)`` so any path of a Monte Carlo
    run can be regenerated on its own.
    """
    if not T > 0 or not dt > 0:
        raise DomainError(f"T and dt must be positive, got T={T}, dt={dt}")
    drift, sigma, rates, shapes, jrates = _model_arrays(model)
    times, values, jumps = _generate(lambda: path_generator(seed, path_index), float(x0),
                                     float(T), float(dt), drift, sigma, rates, shapes, jrates)
    idx = np.flatnonzero(jumps > 0)
    events = tuple((float(times[i]), float(jumps[i])) for i in idx)
    return SamplePath(float(x0), times, values, events, int(seed), int(path_index))


# -- elementary transforms ----------------------------------------------------

def running_sup(y, x_bar: float) -> np.ndarray:
    """``x_bar v max_{s <= t} Y_s`` over the grid."""
    y = np.asarray(y, dtype=float)
    if x_bar < y[0]:
        raise DomainError(f"x_bar={x_bar} is below the initial value {y[0]}")
    return np.maximum.accumulate(np.maximum(y, x_bar))


def reflect_at_zero(y):
    """Skorokhod reflection at zero: returns ``(Y + Psi, Psi)`` with ``Psi = (-inf Y) v 0``."""
    y = np.asarray(y, dtype=float)
    psi = np.maximum(-np.minimum.accumulate(y), 0.0)
    return y + psi, psi


def _tax_level(s, s0, m0, alpha, beta, b):
    """Tax paid while the supremum driver moves from ``s0`` to ``s``.

    Solves ``dm = (1 - delta_b(m)) dS`` from ``m(s0) = m0``: the rate is
    ``alpha`` while the controlled maximum is below ``b`` (the crossing of
    ``b`` is located exactly) and ``beta`` from ``b`` on. The controlled
    maximum is ``m0 + (s - s0)`` minus this amount.
    """
    ds = np.asarray(s, dtype=float) - s0
    if m0 >= b:
        return beta * ds
    s_cross = (b - m0) / (1.0 - alpha)
    return np.where(ds <= s_cross, alpha * ds, alpha * s_cross + beta * (ds - s_cross))


def tax_transform_threshold(y, x_bar: float, alpha: float, beta: float, b: float,
                            sup0: float | None = None):
    """Tax ``Y`` at its running maximum with the threshold rate ``delta_b``.

    Returns ``(U, U_bar, tax)``: the taxed path, its running maximum (which
    starts at ``x_bar``) and the tax paid in each step (zero at index 0).
    ``sup0`` is the starting level of the supremum of ``Y`` (default
    ``x_bar``); a larger value accounts for tax paid before the segment, so
    that ``U = Y - (S - U_bar)`` throughout.
    """
    y = np.asarray(y, dtype=float)
    if x_bar < y[0] and sup0 is None:
        raise DomainError(f"x_bar={x_bar} is below the initial value {y[0]}")
    s0 = x_bar if sup0 is None else float(sup0)
    s = np.maximum.accumulate(np.maximum(y, s0))
    new_tax = _tax_level(s, s0, x_bar, alpha, beta, b)
    u_bar = x_bar + (s - s0) - new_tax
    u = y - (s0 - x_bar) - new_tax
    tax = np.diff(new_tax, prepend=0.0)
    return u, u_bar, tax


# -- the combined transform -----------------------------------------------------

@dataclass
class ControlledPath:
    """Aligned output of the tax-reflection transform on one grid."""

    times: np.ndarray
    x: np.ndarray
    v_plus: np.ndarray
    k_plus: np.ndarray
    v_max: np.ndarray
    sup_driver: np.ndarray
    tax_increments: np.ndarray
    x_bar: float = 0.0
    fixpoint_residuals: list = field(default_factory=list)

    @property
    def bailout_increments(self) -> np.ndarray:
        return np.diff(self.k_plus, prepend=0.0)


def _picard(x, x_bar, alpha, beta, b, tol, history):
    """Fixed point ``K = Psi(X - g(S(X + K)))`` with ``g(S) = S - m(S)`` the cumulative tax."""
    gamma = beta if b <= x_bar else max(alpha, beta)
    gamma = max(gamma, 1e-3)
    _, k = reflect_at_zero(x)
    d0 = None
    cap = None
    for it in range(100000):
        s = np.maximum.accumulate(np.maximum(x + k, x_bar))
        g = _tax_level(s, x_bar, x_bar, alpha, beta, b)
        _, k_new = reflect_at_zero(x - g)
        dist = float(np.max(np.abs(k_new - k)))
        history.append(dist)
        k = k_new
        if d0 is None:
            d0 = max(dist, 1.0)
            cap = int(math.ceil(math.log(tol / d0) / math.log(gamma))) + 50
        if dist < tol:
            return k
        if it + 1 >= cap:
            raise NonConvergence(
                f"fixed-point iteration did not reach {tol} in {cap} steps (last change {dist})")
    raise NonConvergence("fixed-point iteration cap reached")


def tax_reflection_transform(path: SamplePath, alpha: float, beta: float, b: float,
                             x_bar: float, tol_fixpoint: float = FIXPOINT_TOL,
                             switch_level: float = 1.0) -> ControlledPath:
    """Natural tax process with minimal bailouts for the threshold rate ``delta_b``.

    The construction proceeds in segments. A taxed segment runs the
    threshold tax transform on ``X + K`` (``K`` frozen) until the controlled
    value drops below zero; a reflected segment applies the minimal-bailout
    reflection until the controlled value regains its running maximum, and
    taxation resumes on that same grid point. When ``x <= 0`` and
    ``x_bar = 0`` the start is resolved by Picard iteration of the
    fixed-point equation for ``K`` until the controlled maximum first reaches
    ``b`` (or ``switch_level`` when ``b = 0``); the segments take over from
    there. A start with ``x_bar > max(x, 0)`` begins with a reflected segment.
    """
    x = np.asarray(path.values, dtype=float)
    times = np.asarray(path.times, dtype=float)
    x0 = path.initial_value
    if not (x_bar >= 0 and x_bar >= x0):
        raise DomainError(f"need x_bar >= max(x, 0), got x={x0}, x_bar={x_bar}")
    if not 0 <= alpha <= beta < 1 or b < 0:
        raise DomainError("need 0 <= alpha <= beta < 1 and b >= 0")
    n = len(x)
    k_plus = np.empty(n)
    v = np.empty(n)
    s_arr = np.empty(n)
    m_arr = np.empty(n)
    c_arr = np.empty(n)
    history: list = []

    start = 0
    if x_bar == 0 and x0 <= 0:
        k = _picard(x, x_bar, alpha, beta, b, tol_fixpoint, history)
        s = np.maximum.accumulate(np.maximum(x + k, x_bar))
        c = _tax_level(s, x_bar, x_bar, alpha, beta, b)
        m = s - c
        level = b if b > 0 else switch_level
        reached = np.flatnonzero(m >= level)
        stop = int(reached[0]) if len(reached) else n
        k_plus[:stop], s_arr[:stop], m_arr[:stop], c_arr[:stop] = \
            k[:stop], s[:stop], m[:stop], c[:stop]
        v[:stop] = x[:stop] + k[:stop] - c[:stop]
        start = stop
        if start >= n:
            return _finish(times, x, v, k_plus, m_arr, s_arr, c_arr, x_bar, history)
        K, S, M, C = k_plus[start - 1], s_arr[start - 1], m_arr[start - 1], c_arr[start - 1]
        mode = "tax"
    else:
        K = max(-x0, 0.0)
        S = M = x_bar
        C = 0.0
        mode = "tax" if x_bar == x0 else "reflect"

    i = start
    while i < n:
        if mode == "tax":
            y = x[i:] + K
            s_seg = np.maximum.accumulate(np.maximum(y, S))
            new_tax = _tax_level(s_seg, S, M, alpha, beta, b)
            u = y - C - new_tax
            low = np.flatnonzero(u < TOL_POS)
            end = i + (int(low[0]) if len(low) else n - i)
            seg, w = slice(i, end), end - i
            v[seg], k_plus[seg] = u[:w], K
            s_arr[seg] = s_seg[:w]
            m_arr[seg] = M + (s_seg[:w] - S) - new_tax[:w]
            c_arr[seg] = C + new_tax[:w]
            if end >= n:
                break
            if end > i:
                S, M, C = s_arr[end - 1], m_arr[end - 1], c_arr[end - 1]
            i, mode = end, "reflect"
        else:
            phi, psi = reflect_at_zero(x[i:] + K - C)
            back = np.flatnonzero(phi[1:] >= M - TOL_POS)
            end = i + (int(back[0]) + 1 if len(back) else n - i)
            seg = slice(i, end)
            v[seg] = phi[: end - i]
            k_plus[seg] = K + psi[: end - i]
            s_arr[seg], m_arr[seg], c_arr[seg] = S, M, C
            if end >= n:
                break
            K = k_plus[end - 1]
            i, mode = end, "tax"
    return _finish(times, x, v, k_plus, m_arr, s_arr, c_arr, x_bar, history)


def _finish(times, x, v, k_plus, m_arr, s_arr, c_arr, x_bar, history):
    tax = np.diff(c_arr, prepend=0.0)
    return ControlledPath(times, x, v, k_plus, m_arr, s_arr, tax, float(x_bar), history)


def discounted_functionals(cp: ControlledPath, q: float, eta: float):
    """``(tax_npv, bailout_npv)`` with the bailout at time 0 undiscounted.

    ``bailout_npv`` already includes the penalty factor ``eta``; the value
    of the strategy on this path is ``tax_npv - bailout_npv``.
    """
    disc = np.exp(-q * cp.times)
    dk = cp.bailout_increments
    tax_npv = float(np.sum(disc[1:] * cp.tax_increments[1:]))
    bail_npv = eta * float(cp.k_plus[0] + np.sum(disc[1:] * dk[1:]))
    return tax_npv, bail_npv


# -- one-pass recursion used by the Monte Carlo kernel ----------------------------

@numba.njit(cache=True, nogil=True, inline="always")
def _tax_update(m, ds, alpha, beta, b):
    """Tax paid on a supremum increase ``ds`` from controlled maximum ``m``."""
    if m < b:
        room = (b - m) / (1.0 - alpha)
        if ds <= room:
            return alpha * ds
        return alpha * room + beta * (ds - room)
    return beta * ds


@numba.njit(cache=True, nogil=True)
def _init_state(state, x0, x_bar, eta):
    """state rows: [K, S, M, tax_npv, bail_npv]"""
    for j in range(state.shape[0]):
        k0 = max(-x0[j], 0.0)
        state[j, 0] = k0
        state[j, 1] = x_bar[j]
        state[j, 2] = x_bar[j]
        state[j, 3] = 0.0
        state[j, 4] = eta[j] * k0


@numba.njit(cache=True, nogil=True, inline="always")
def _update_state(state, dxs, t, q, x0, alpha, beta, b, eta):
    """Apply one grid point; ``dxs`` is ``X_t - X_0``."""
    disc = -1.0
    for j in range(state.shape[0]):
        y = x0[j] + dxs + state[j, 0]
        s = state[j, 1]
        if y > s:
            m = state[j, 2]
            tax = _tax_update(m, y - s, alpha[j], beta[j], b[j])
            m_new = m + (y - s) - tax
            if tax != 0.0:
                if disc < 0.0:
                    disc = math.exp(-q * t)
                state[j, 3] += disc * tax
            state[j, 1] = y
            state[j, 2] = m_new
        else:
            v = y - s + state[j, 2]
            if v < 0.0:
                if disc < 0.0:
                    disc = math.exp(-q * t)
                state[j, 0] -= v
                state[j, 4] -= eta[j] * disc * v


@numba.njit(cache=True, nogil=True)
def _core(rng, x_start, horizon, dt, coarse_every, drift, sigma, rates, shapes, jrates, q,
          x0, x_bar, alpha, beta, b, eta, out, rec_t, rec_x, rec_j):
    """Simulate one path; optionally record it and accumulate strategy functionals.

    The grid is the mesh ``min(k dt, horizon)`` merged with the jump epochs.
    Draw order: the first inter-arrival time, then per interval one normal
    (if ``sigma > 0``) and, at a jump epoch, the component uniform (only
    with several components), the Erlang size and the next inter-arrival
    time. The stepping is written inline here because a separate compiled
    helper was several times slower.

    Strategies: ``out[j, 0]`` receives the value on the full grid; with
    ``coarse_every == 2``, ``out[j, 1]`` receives the value on the subgrid
    made of every second mesh point and the jump epochs (the same path
    observed at mesh ``2 dt``). Recording into ``rec_*`` happens when they
    are nonempty; returns the number of recorded points, or -1 if the
    buffers were too short.
    """
    n_mesh = int(math.ceil(horizon / dt - 1e-9))
    total_rate = rates.sum()
    n_comp = rates.shape[0]
    record = rec_t.shape[0] > 0
    fine = np.empty((x0.shape[0], 5))
    coarse = np.empty((x0.shape[0], 5))
    _init_state(fine, x0, x_bar, eta)
    _init_state(coarse, x0, x_bar, eta)
    next_jump = rng.exponential(1.0 / total_rate) if total_rate > 0.0 else np.inf
    t, dxs, k, i = 0.0, 0.0, 1, 0
    if record:
        rec_t[0] = 0.0
        rec_x[0] = x_start
    while k <= n_mesh:
        t_mesh = horizon if k >= n_mesh else k * dt
        is_jump = next_jump < t_mesh
        t_new = next_jump if is_jump else t_mesh
        delta = t_new - t
        dx = drift * delta
        if sigma > 0.0:
            dx += sigma * math.sqrt(delta) * rng.standard_normal()
        on_coarse = is_jump
        size = 0.0
        if is_jump:
            j = 0
            if n_comp > 1:
                u = rng.random() * total_rate
                acc = rates[0]
                while u >= acc and j < n_comp - 1:
                    j += 1
                    acc += rates[j]
            size = rng.gamma(shapes[j], 1.0 / jrates[j])
            dx -= size
            next_jump = next_jump + rng.exponential(1.0 / total_rate)
        else:
            on_coarse = k % 2 == 0 or k >= n_mesh
            k += 1
        t = t_new
        dxs += dx
        if record:
            i += 1
            if i >= rec_t.shape[0]:
                return -1
            rec_t[i] = t
            rec_x[i] = x_start + dxs
            rec_j[i] = size
        _update_state(fine, dxs, t, q, x0, alpha, beta, b, eta)
        if coarse_every == 2 and on_coarse:
            _update_state(coarse, dxs, t, q, x0, alpha, beta, b, eta)
    for j in range(x0.shape[0]):
        out[j, 0] = fine[j, 3] - fine[j, 4]
        out[j, 1] = coarse[j, 3] - coarse[j, 4]
    return i + 1


def _run_path(rng, horizon, dt, coarse_every, drift, sigma, rates, shapes, jrates, q,
              x0, x_bar, alpha, beta, b, eta, out):
    _core(rng, 0.0, horizon, dt, coarse_every, drift, sigma, rates, shapes, jrates, q,
          x0, x_bar, alpha, beta, b, eta, out, _EMPTY, _EMPTY, _EMPTY)


_EMPTY = np.zeros(0)


def controlled_functionals(model: LevyModel, q: float, T: float, dt: float, seed: int,
                           path_index: int, x0, x_bar, alpha, beta, b, eta,
                           coupled: bool = False) -> np.ndarray:
    """Per-strategy discounted taxes minus penalized bailouts on one path.

    Strategy parameters are broadcast arrays. The path is the one returned
    by :func:`simulate_path` with the same ``(T, dt, seed, path_index)``.
    Returns shape ``(n_strategies, 2)``; column 1 holds the mesh-``2 dt``
    values when ``coupled`` is true and is meaningless otherwise.
    """
    params = np.broadcast_arrays(*(np.atleast_1d(np.asarray(p, dtype=float))
                                   for p in (x0, x_bar, alpha, beta, b, eta)))
    params = [np.ascontiguousarray(p) for p in params]
    drift, sigma, rates, shapes, jrates = _model_arrays(model)
    out = np.zeros((len(params[0]), 2))
    _run_path(path_generator(seed, path_index), float(T), float(dt), 2 if coupled else 1,
              drift, sigma, rates, shapes, jrates, float(q), *params, out)
    return out


def write_path_csv(cp: ControlledPath, fh) -> None:
    """Write ``t,x,v_plus,k_plus,v_max`` rows (shortest round-trip floats) to an open text file."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "x", "v_plus", "k_plus", "v_max"])
    for row in zip(cp.times, cp.x, cp.v_plus, cp.k_plus, cp.v_max):
        writer.writerow([repr(float(val)) for val in row])
