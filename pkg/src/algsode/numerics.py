"""Dense numerics: IVP integration, damped Newton, finite differences.

Everything here is a pure function of its arguments; randomness enters only
through explicit seeds.  The integrator exists in two flavours:

* ``"rk4"``     — fixed-step classical 4th order,
* ``"dopri45"`` — embedded adaptive Dormand–Prince 4(5) (default).

The adaptive method is the default at abs_tol = rel_tol = 1e-10 because
boundary-value shooting needs flows resolved well below the Newton residual
tolerance.  Domain exit is detected by chart-box membership per accepted
step: the box is the observable proxy for the (uncomputable) maximal flow
domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import StencilError

STATUS_COMPLETED = "completed"
STATUS_LEFT_DOMAIN = "left-domain"
STATUS_FAILURE = "failure"

#: Newton declares "singular-jacobian" above this condition estimate.
COND_LIMIT = 1e12


@dataclass
class IntegratorConfig:
    """Settings for integrate_ivp."""

    method: str = "dopri45"  # "dopri45" | "rk4"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_steps: int = 1_000_000
    initial_step: float = 1e-2

    def __post_init__(self):
        if self.method not in ("dopri45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


@dataclass
class NewtonConfig:
    """Settings for newton_solve."""

    residual_tol: float = 1e-10
    max_iters: int = 50
    damping: float = 1.0
    jacobian_mode: str = "variational"  # "variational" | "finite-difference"

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError("damping must be in (0, 1]")
        if self.jacobian_mode not in ("variational", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass
class IvpSolution:
    ts: np.ndarray          # (N,)
    ys: np.ndarray          # (N, d)
    status: str             # completed | left-domain | failure
    t_exit: float | None = None
    message: str | None = None
    n_steps: int = 0

    @property
    def end(self) -> np.ndarray:
        return self.ys[-1]


@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    status: str             # converged | no-convergence | singular-jacobian
    message: str | None = None


# Dormand–Prince 5(4) tableau (FSAL).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def _inside(y, lower, upper) -> bool:
    return bool(np.all(y >= lower) and np.all(y <= upper))


def _exit_time(t0, y0, t1, y1, lower, upper) -> float:
    """Linear estimate of the first box-boundary crossing in [t0, t1]."""
    theta = 1.0
    for i in range(y0.size):
        for bound, sign in ((lower[i], -1.0), (upper[i], 1.0)):
            if not math.isfinite(bound):
                continue
            g0, g1 = sign * (y0[i] - bound), sign * (y1[i] - bound)
            if g1 > 0.0 >= g0:
                theta = min(theta, g0 / (g0 - g1) if g1 != g0 else 1.0)
    return t0 + theta * (t1 - t0)


def integrate_ivp(rhs: Callable[[float, np.ndarray], np.ndarray],
                  state0: Sequence[float],
                  t_end: float,
                  cfg: IntegratorConfig | None = None,
                  *,
                  box_lower: Sequence[float] | None = None,
                  box_upper: Sequence[float] | None = None,
                  sample_dt: float | None = None) -> IvpSolution:
    """Integrate ``y' = rhs(t, y)`` on [0, t_end], t_end >= 0.

    Samples are the accepted steps, or the uniform grid ``k * sample_dt``
    when ``sample_dt`` is given (steps are clipped to land exactly on grid
    times; no interpolation).  When a box is supplied, membership is checked
    per accepted step; the first violation ends the run with status
    "left-domain" and a linearly-interpolated exit time.  Step-size underflow
    or an exhausted step budget gives status "failure".
    """
    if cfg is None:
        cfg = IntegratorConfig()
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    y = np.asarray(state0, dtype=float).copy()
    d = y.size
    lower = np.full(d, -np.inf) if box_lower is None else np.asarray(box_lower, float)
    upper = np.full(d, np.inf) if box_upper is None else np.asarray(box_upper, float)

    ts = [0.0]
    ys = [y.copy()]
    if t_end == 0.0:
        return IvpSolution(np.array(ts), np.array(ys), STATUS_COMPLETED)

    if cfg.method == "rk4":
        return _integrate_rk4(rhs, y, t_end, cfg, lower, upper, sample_dt, ts, ys)
    return _integrate_dopri(rhs, y, t_end, cfg, lower, upper, sample_dt, ts, ys)


def _record(ts, ys, t, y, sample_dt):
    if sample_dt is None:
        ts.append(t)
        ys.append(y.copy())
    else:
        # record only when t sits on the sample grid (steps are clipped to it)
        k = round(t / sample_dt)
        if abs(t - k * sample_dt) <= 1e-12 * max(1.0, abs(t)) and k > round(ts[-1] / sample_dt):
            ts.append(t)
            ys.append(y.copy())


def _next_stop(t, t_end, sample_dt):
    if sample_dt is None:
        return t_end
    k = math.floor(t / sample_dt + 1e-12) + 1
    return min(t_end, k * sample_dt)


def _integrate_rk4(rhs, y, t_end, cfg, lower, upper, sample_dt, ts, ys):
    base_h = min(cfg.initial_step, sample_dt) if sample_dt else cfg.initial_step
    n = max(1, math.ceil(t_end / base_h - 1e-12))
    h = t_end / n
    if sample_dt is not None:
        # integer number of steps per sample interval
        per = max(1, math.ceil(sample_dt / h - 1e-12))
        h = sample_dt / per
        n = math.ceil(t_end / h - 1e-12)
    if n > cfg.max_steps:
        return IvpSolution(np.array(ts), np.array(ys), STATUS_FAILURE,
                           message=f"needs {n} steps > max_steps")
    t = 0.0
    for i in range(n):
        step = min(h, t_end - t)
        k1 = rhs(t, y)
        k2 = rhs(t + step / 2, y + step / 2 * k1)
        k3 = rhs(t + step / 2, y + step / 2 * k2)
        k4 = rhs(t + step, y + step * k3)
        y_new = y + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_new = t + step
        if not _inside(y_new, lower, upper):
            t_exit = _exit_time(t, y, t_new, y_new, lower, upper)
            return IvpSolution(np.array(ts), np.array(ys), STATUS_LEFT_DOMAIN,
                               t_exit=t_exit, n_steps=i + 1)
        t, y = t_new, y_new
        _record(ts, ys, t, y, sample_dt)
    if ts[-1] < t - 1e-14 * max(1.0, t):
        ts.append(t)
        ys.append(y.copy())
    return IvpSolution(np.array(ts), np.array(ys), STATUS_COMPLETED, n_steps=n)


def _integrate_dopri(rhs, y, t_end, cfg, lower, upper, sample_dt, ts, ys):
    t = 0.0
    h = min(cfg.initial_step, t_end)
    if sample_dt is not None:
        h = min(h, sample_dt)
    k1 = rhs(t, y)
    n_accepted = 0
    K = np.empty((7, y.size))
    for _ in range(cfg.max_steps):
        stop = _next_stop(t, t_end, sample_dt)
        h = min(h, stop - t)
        if h < 1e-14 * max(1.0, abs(t_end)):
            return IvpSolution(np.array(ts), np.array(ys), STATUS_FAILURE,
                               message="step-size underflow (stiff/failure)",
                               n_steps=n_accepted)
        K[0] = k1
        for s in range(1, 7):
            K[s] = rhs(t + _DP_C[s] * h, y + h * (_DP_A[s] @ K[:s]))
        y5 = y + h * (_DP_B5 @ K)
        y4 = y + h * (_DP_B4 @ K)
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.sqrt(np.mean(((y5 - y4) / scale) ** 2)))
        if err <= 1.0:
            t_new = t + h
            if not _inside(y5, lower, upper):
                t_exit = _exit_time(t, y, t_new, y5, lower, upper)
                return IvpSolution(np.array(ts), np.array(ys), STATUS_LEFT_DOMAIN,
                                   t_exit=t_exit, n_steps=n_accepted)
            t, y = t_new, y5
            k1 = K[6]  # FSAL
            n_accepted += 1
            _record(ts, ys, t, y, sample_dt)
            if t >= t_end - 1e-14 * max(1.0, t_end):
                if ts[-1] < t:
                    ts.append(t)
                    ys.append(y.copy())
                return IvpSolution(np.array(ts), np.array(ys), STATUS_COMPLETED,
                                   n_steps=n_accepted)
        factor = 0.9 * (1.0 / err) ** 0.2 if err > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return IvpSolution(np.array(ts), np.array(ys), STATUS_FAILURE,
                       message=f"max_steps={cfg.max_steps} exhausted",
                       n_steps=n_accepted)


# --- Newton -----------------------------------------------------------------

def newton_solve(residual: Callable[[np.ndarray], np.ndarray],
                 jacobian: Callable[[np.ndarray], np.ndarray],
                 x0: Sequence[float],
                 cfg: NewtonConfig | None = None,
                 *,
                 recoverable: tuple[type[Exception], ...] = ()) -> NewtonResult:
    """Damped Newton iteration for residual(x) = 0.

    The step starts at ``cfg.damping`` and is halved while the residual norm
    does not decrease (up to 20 halvings) — robust near the boundary of the
    convergence neighbourhood.  Exceptions listed in ``recoverable`` raised
    during a trial evaluation count as "no decrease".  Rectangular Jacobians
    are handled by least squares (Gauss–Newton).
    """
    if cfg is None:
        cfg = NewtonConfig()
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual(x), dtype=float)
    rnorm = float(np.linalg.norm(r))
    best_x, best_norm = x.copy(), rnorm
    if rnorm <= cfg.residual_tol:
        return NewtonResult(x, rnorm, 0, "converged")
    for it in range(1, cfg.max_iters + 1):
        J = np.asarray(jacobian(x), dtype=float)
        if not np.all(np.isfinite(J)) or np.linalg.cond(J) > COND_LIMIT:
            return NewtonResult(best_x, best_norm, it - 1, "singular-jacobian",
                                message="condition estimate above threshold")
        if J.shape[0] == J.shape[1]:
            delta = np.linalg.solve(J, -r)
        else:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        step = cfg.damping
        accepted = False
        for _ in range(21):
            x_try = x + step * delta
            try:
                r_try = np.asarray(residual(x_try), dtype=float)
                rnorm_try = float(np.linalg.norm(r_try))
            except recoverable:
                rnorm_try = math.inf
            if rnorm_try < rnorm and math.isfinite(rnorm_try):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return NewtonResult(best_x, best_norm, it, "no-convergence",
                                message="line search stalled (20 halvings)")
        x, r, rnorm = x_try, r_try, rnorm_try
        if rnorm < best_norm:
            best_x, best_norm = x.copy(), rnorm
        if rnorm <= cfg.residual_tol:
            return NewtonResult(x, rnorm, it, "converged")
    return NewtonResult(best_x, best_norm, cfg.max_iters, "no-convergence",
                        message=f"max_iters={cfg.max_iters} exceeded")


# --- finite differences -------------------------------------------------------

def fd_jacobian(f: Callable[[np.ndarray], np.ndarray],
                x: Sequence[float],
                step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of f at x; entrywise error O(step^2)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        vals = []
        for sign in (+1.0, -1.0):
            xs = x.copy()
            xs[j] += sign * step
            try:
                vals.append(np.atleast_1d(np.asarray(f(xs), dtype=float)))
            except Exception as exc:
                raise StencilError(f"evaluation failed at stencil point {xs}",
                                   point=xs) from exc
        cols.append((vals[0] - vals[1]) / (2.0 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def fd_derivative(f: Callable[[float], np.ndarray], t: float,
                  step: float = 1e-6) -> np.ndarray:
    """Central difference of a curve, d/dt f(t)."""
    return (np.asarray(f(t + step), float) - np.asarray(f(t - step), float)) / (2 * step)


# --- seeded sampling -----------------------------------------------------------

def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_box(rng: np.random.Generator,
               lower: Sequence[float], upper: Sequence[float],
               n: int) -> np.ndarray:
    """n uniform points in the closed box [lower, upper]; shape (n, d)."""
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    if lower.size == 0:
        return np.zeros((n, 0))
    return rng.uniform(lower, upper, size=(n, lower.size))
