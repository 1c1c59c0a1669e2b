"""Exponential maps, variational Jacobians, shooting BVPs, certified step
bounds and exact retractions, with fibration / groupoid / quadratic variants.

The standard solvers work on identity-anchor (tangent-bundle type) models,
where the flow is the second-order system q'' = gamma(q, q').  The Jacobian
of the time-h endpoint with respect to the initial fiber vector solves the
linear variational system

    U'' = B(t) U + F(t) U',     U(0) = 0,  U'(0) = Id,

with B and F the position/velocity derivatives of the acceleration along
the flow; it is integrated jointly with the base flow as one first-order
system and drives Newton shooting.

The groupoid solvers integrate the lifted SODE on the source-vertical
bundle from identity elements and shoot on the initial algebroid vector;
their output also reports the algebroid-valued curve a(t) (the image of the
lifted velocity under the vertical-bundle morphism) and its base curve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .algebroid import (
    AlgebroidModel, ChartBox, FibrationModel, SodeField, Trajectory, flow,
    flow_end, require_quadratic,
)
from .errors import (
    BoxTooLargeError, HTooSmallError, IntegrationFailureError, LeftDomainError,
    NoConvergenceError, OutOfChartError, SingularJacobianError,
)
from .groupoid import (
    AlgebroidPath, GroupoidModel, LiftedSode, lift_sode, psi_components,
)
from .numerics import (
    IntegratorConfig, NewtonConfig, fd_jacobian, integrate_ivp, newton_solve,
    sample_box, seeded_rng, STATUS_COMPLETED,
)

_RECOVERABLE = (LeftDomainError, IntegrationFailureError, OutOfChartError)


@dataclass
class BvpSolution:
    """Initial fiber vector connecting two base points in time h."""

    v: np.ndarray
    trajectory: Trajectory
    residual: float
    iterations: int


@dataclass
class VariationalResult:
    U: np.ndarray
    Udot: np.ndarray
    q_end: np.ndarray
    y_end: np.ndarray


@dataclass
class RetractionPair:
    """Initial and final fiber data of the connecting trajectory; the plus
    vector is the time-h flow of the minus vector (commuting diagram).
    residual/iterations report the shooting solve that produced it."""

    minus_base: np.ndarray
    minus: np.ndarray
    plus_base: np.ndarray
    plus: np.ndarray
    residual: float | None = None
    iterations: int | None = None


@dataclass
class CertificateConfig:
    grid_points: int = 11
    random_samples: int = 1000
    inflation: float = 1.01
    h_max: float = 10.0

    def __post_init__(self):
        if self.grid_points < 2 or self.random_samples < 0:
            raise ValueError("need grid_points >= 2 and random_samples >= 0")
        if self.inflation < 1.0:
            raise ValueError("inflation must be >= 1")


@dataclass
class SamplingReport:
    n_grid: int
    n_random: int
    box_lower: np.ndarray
    box_upper: np.ndarray
    argmax_M: np.ndarray
    argmax_C: np.ndarray
    argmax_Cdot: np.ndarray


@dataclass
class H0Certificate:
    """Certified uniqueness step bound from sampled Lipschitz data.

    All norms are infinity norms (the underlying theorem fixes none; this
    choice changes the numeric h0 and is part of the contract here).  The
    constants satisfy C h0^2/8 + Cdot h0/2 < 1, M h0^2/8 <= R and
    M h0/2 <= Rdot; sampled maxima are inflated by a small factor before
    solving since they underestimate suprema.
    """

    C: float
    Cdot: float
    M: float
    R: float
    Rdot: float
    h0: float
    margin: float
    bounds: tuple[float, float, float]
    report: SamplingReport

    def __post_init__(self):
        if not (0.0 < self.margin < 1.0):
            raise ValueError("margin must be in (0, 1)")
        if not self.C * self.h0 ** 2 / 8 + self.Cdot * self.h0 / 2 < 1.0:
            raise ValueError("certificate inconsistency: contraction bound")
        if self.M * self.h0 ** 2 / 8 > self.R * (1 + 1e-12):
            raise ValueError("certificate inconsistency: position bound")
        if self.M * self.h0 / 2 > self.Rdot * (1 + 1e-12):
            raise ValueError("certificate inconsistency: velocity bound")


@dataclass
class GroupoidTrajectory:
    """Samples of the lifted flow: chart elements and their vertical
    velocities."""

    ts: np.ndarray
    gs: np.ndarray
    vs: np.ndarray
    status: str
    t_exit: float | None = None
    message: str | None = None

    @property
    def completed(self) -> bool:
        return self.status == STATUS_COMPLETED


def _require_tangent(sode: SodeField, q):
    model = sode.model
    if model.n != model.k:
        raise ValueError("standard solvers need base dim == fiber rank")
    if model.n and np.max(np.abs(model.anchor_matrix(q) - np.eye(model.n))) > 1e-9:
        raise ValueError("standard solvers need the identity anchor "
                         "(tangent-bundle type model)")


# --- exponential maps --------------------------------------------------------------

def exp_point(sode: SodeField, h: float, q0, v,
              cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Base point of the time-h flow started at (q0, v); h = 0 is constant.
    Raises LeftDomainError when the flow exits the chart (the vector is not
    in the time-h flow domain)."""
    q, _ = flow_end(sode, q0, v, h, cfg)
    return q


def exp_pair(sode: SodeField, h: float, q0, v,
             cfg: IntegratorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(base point of v, time-h exponential point)."""
    return np.asarray(q0, float).copy(), exp_point(sode, h, q0, v, cfg)


def exp_mid(sode: SodeField, h: float, q0, v,
            cfg: IntegratorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint variant: exponential points at -h/2 and +h/2; equals the
    plain pair composed with the time -h/2 flow."""
    return (exp_point(sode, -h / 2.0, q0, v, cfg),
            exp_point(sode, h / 2.0, q0, v, cfg))


# --- variational system --------------------------------------------------------------

def _variational_full(sode: SodeField, h: float, q0, v,
                      cfg: IntegratorConfig | None) -> VariationalResult:
    model = sode.model
    n, k = model.n, model.k
    q0 = np.asarray(q0, float)
    v = np.asarray(v, float)
    if not model.base.contains(q0):
        raise OutOfChartError(f"initial base point {q0} outside chart box")

    def rhs(t, state):
        q = state[:n]
        y = state[n:n + k]
        U = state[n + k:n + k + k * k].reshape(k, k)
        Ud = state[n + k + k * k:].reshape(k, k)
        B, F = sode.gamma_jacobians(q, y)
        return np.concatenate([
            y, sode.gamma(q, y), Ud.ravel(), (B @ U + F @ Ud).ravel()])

    state0 = np.concatenate([q0, v, np.zeros(k * k), np.eye(k).ravel()])
    lo = np.concatenate([model.base.lower_array, np.full(k + 2 * k * k, -np.inf)])
    hi = np.concatenate([model.base.upper_array, np.full(k + 2 * k * k, np.inf)])
    if model.fiber_box is not None:
        lo[n:n + k] = model.fiber_box.lower_array
        hi[n:n + k] = model.fiber_box.upper_array
    sol = integrate_ivp(rhs, state0, h, cfg, box_lower=lo, box_upper=hi)
    if sol.status == "left-domain":
        raise LeftDomainError(f"flow left the chart box at t = {sol.t_exit}",
                              t_exit=sol.t_exit)
    if sol.status != STATUS_COMPLETED:
        raise IntegrationFailureError(sol.message or "integration failed")
    end = sol.end
    return VariationalResult(
        U=end[n + k:n + k + k * k].reshape(k, k).copy(),
        Udot=end[n + k + k * k:].reshape(k, k).copy(),
        q_end=end[:n].copy(),
        y_end=end[n:n + k].copy())


def variational_jacobian(sode: SodeField, h: float, q0, v,
                         cfg: IntegratorConfig | None = None) -> np.ndarray:
    """U(h): the Jacobian of the time-h exponential point with respect to
    the initial fiber vector, from the jointly-integrated linear variational
    system (U(0) = 0, U'(0) = Id)."""
    _require_tangent(sode, q0)
    return _variational_full(sode, h, q0, v, cfg).U


# --- shooting ---------------------------------------------------------------------

def bvp_shoot(sode: SodeField, h: float, q, q_target, guess=None,
              ncfg: NewtonConfig | None = None,
              icfg: IntegratorConfig | None = None) -> BvpSolution:
    """Newton shooting for the two-point boundary problem: find v with
    exp_point(h, q, v) = q_target.

    The default initial guess is the chart secant (q_target - q)/h.  In
    "variational" mode each iterate integrates the variational system once
    and reuses it for both the residual and the Newton matrix; U(h) with a
    condition estimate above 1e12 raises SingularJacobianError (conjugate
    point symptom: the shot left the small-time uniqueness neighbourhood).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    ncfg = ncfg or NewtonConfig()
    q = np.asarray(q, float)
    q_target = np.asarray(q_target, float)
    _require_tangent(sode, q)
    v0 = (q_target - q) / h if guess is None else np.asarray(guess, float)

    if ncfg.jacobian_mode == "variational":
        cache: dict[bytes, VariationalResult] = {}

        def combined(v) -> VariationalResult:
            key = v.tobytes()
            if key not in cache:
                cache[key] = _variational_full(sode, h, q, v, icfg)
            return cache[key]

        residual = lambda v: combined(v).q_end - q_target
        jacobian = lambda v: combined(v).U
    else:
        residual = lambda v: exp_point(sode, h, q, v, icfg) - q_target
        jacobian = lambda v: fd_jacobian(
            residual, v, step=1e-5 * (1.0 + float(np.linalg.norm(v))))

    res = newton_solve(residual, jacobian, v0, ncfg, recoverable=_RECOVERABLE)
    if res.status == "singular-jacobian":
        raise SingularJacobianError(
            "singular-jacobian: shooting matrix condition estimate above "
            "threshold (outside the small-time uniqueness neighbourhood)")
    if res.status != "converged":
        raise NoConvergenceError(
            f"no-convergence: {res.message}", best=res.x,
            residual_norm=res.residual_norm, iterations=res.iterations)
    traj = flow(sode, q, res.x, h, icfg)
    return BvpSolution(res.x, traj, res.residual_norm, res.iterations)


def retraction_pair(sode: SodeField, h: float, q, q_target,
                    ncfg: NewtonConfig | None = None,
                    icfg: IntegratorConfig | None = None,
                    h_floor: float = 1e-8) -> RetractionPair:
    """Exact retraction data: minus = initial, plus = final velocity of the
    connecting trajectory; plus is the time-h flow of minus."""
    if h <= h_floor:
        raise HTooSmallError(f"h-too-small: h = {h} <= {h_floor}")
    sol = bvp_shoot(sode, h, q, q_target, None, ncfg, icfg)
    return RetractionPair(
        minus_base=np.asarray(q, float).copy(), minus=sol.v,
        plus_base=np.asarray(q_target, float).copy(), plus=sol.trajectory.ys[-1].copy(),
        residual=sol.residual, iterations=sol.iterations)


# --- certified step bound -------------------------------------------------------------

def _contraction_root(C: float, Cdot: float) -> float:
    # positive root of (C/8) t^2 + (Cdot/2) t = 1
    if C == 0.0 and Cdot == 0.0:
        return math.inf
    if C == 0.0:
        return 2.0 / Cdot
    return (-Cdot / 2.0 + math.sqrt(Cdot ** 2 / 4.0 + C / 2.0)) / (C / 4.0)


def h0_certificate(sode: SodeField, q0, R: float, Rdot: float,
                   margin: float = 0.01,
                   cfg: CertificateConfig | None = None,
                   seed: int = 0) -> H0Certificate:
    """Sample Lipschitz and sup bounds of the acceleration on the closed box
    |q - q0|_inf <= R, |y|_inf <= Rdot and solve the three closed-form step
    bounds; h0 is (1 - margin) times their minimum, capped at h_max.

    C and Cdot bound the position/velocity derivative norms (so they are
    Lipschitz constants on the convex box), M bounds the acceleration.  The
    box is scanned on a grid of grid_points per axis plus seeded random
    points; the box must sit inside the chart ("box-too-large" otherwise).
    """
    cfg = cfg or CertificateConfig()
    if not (0.0 < margin < 1.0):
        raise ValueError("margin must be in (0, 1)")
    model = sode.model
    _require_tangent(sode, q0)
    q0 = np.asarray(q0, float)
    n, k = model.n, model.k
    q_lo, q_hi = q0 - R, q0 + R
    if np.any(q_lo < model.base.lower_array) or np.any(q_hi > model.base.upper_array):
        raise BoxTooLargeError(
            f"box-too-large: |q - q0| <= {R} pokes out of the chart box")
    if model.fiber_box is not None:
        if np.any(-Rdot < model.fiber_box.lower_array) or \
           np.any(Rdot > model.fiber_box.upper_array):
            raise BoxTooLargeError("box-too-large: velocity box exceeds fiber box")

    lo = np.concatenate([q_lo, np.full(k, -Rdot)])
    hi = np.concatenate([q_hi, np.full(k, Rdot)])
    axes = [np.linspace(lo[i], hi[i], cfg.grid_points) for i in range(n + k)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n + k)
    rand = sample_box(seeded_rng(seed), lo, hi, cfg.random_samples)
    points = np.vstack([grid, rand]) if rand.size else grid

    M = C = Cdot = 0.0
    arg_M = arg_C = arg_Cdot = points[0]
    for z in points:
        q, y = z[:n], z[n:]
        m_here = float(np.max(np.abs(sode.gamma(q, y))))
        B, F = sode.gamma_jacobians(q, y)
        c_here = float(np.max(np.sum(np.abs(B), axis=1)))      # induced inf-norm
        cd_here = float(np.max(np.sum(np.abs(F), axis=1)))
        if m_here > M:
            M, arg_M = m_here, z
        if c_here > C:
            C, arg_C = c_here, z
        if cd_here > Cdot:
            Cdot, arg_Cdot = cd_here, z

    C *= cfg.inflation
    Cdot *= cfg.inflation
    M *= cfg.inflation
    b1 = _contraction_root(C, Cdot)
    b2 = math.sqrt(8.0 * R / M) if M > 0 else math.inf
    b3 = 2.0 * Rdot / M if M > 0 else math.inf
    h0 = min((1.0 - margin) * min(b1, b2, b3), cfg.h_max)
    report = SamplingReport(
        n_grid=grid.shape[0], n_random=rand.shape[0] if rand.size else 0,
        box_lower=lo, box_upper=hi,
        argmax_M=np.asarray(arg_M), argmax_C=np.asarray(arg_C),
        argmax_Cdot=np.asarray(arg_Cdot))
    return H0Certificate(C=C, Cdot=Cdot, M=M, R=R, Rdot=Rdot, h0=h0,
                         margin=margin, bounds=(b1, b2, b3), report=report)


# --- fibration variant ------------------------------------------------------------------

def fibration_exp(fib: FibrationModel, sode: SodeField, h: float, q0, y0,
                  cfg: IntegratorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exponential pair for a vertical-bundle SODE: both output points share
    the projection value (the flow moves only along the fiber of pi)."""
    if sode.model is not fib.algebroid and sode.model.n != fib.algebroid.n:
        raise ValueError("SODE does not live on the fibration's vertical bundle")
    q0 = np.asarray(q0, float)
    q_end, _ = flow_end(sode, q0, y0, h, cfg)
    drift = np.max(np.abs(np.asarray(fib.projection(q_end))
                          - np.asarray(fib.projection(q0)))) if q0.size else 0.0
    if drift > 1e-10:
        raise RuntimeError(f"projection drifted by {drift:.3e} along the flow")
    return q0.copy(), q_end


# --- groupoid variants -------------------------------------------------------------------

def groupoid_flow(gpd: GroupoidModel, lifted: LiftedSode, g0, v0, t: float,
                  cfg: IntegratorConfig | None = None, *,
                  sample_dt: float | None = None) -> GroupoidTrajectory:
    """Integrate the lifted SODE from the state (g0, v0) inside the element
    chart (leaving it is reported as left-domain)."""
    m = gpd.m
    g0 = np.asarray(g0, float)
    v0 = np.asarray(v0, float)
    if not gpd.element_chart.contains(g0):
        raise OutOfChartError(f"element {g0} outside the chart of G")
    lo = np.concatenate([gpd.element_chart.lower_array, np.full(m, -np.inf)])
    hi = np.concatenate([gpd.element_chart.upper_array, np.full(m, np.inf)])
    state0 = np.concatenate([g0, v0])
    rhs = lifted.packed_rhs()
    if t >= 0:
        sol = integrate_ivp(rhs, state0, t, cfg, box_lower=lo, box_upper=hi,
                            sample_dt=sample_dt)
        ts, ys, t_exit = sol.ts, sol.ys, sol.t_exit
    else:
        rev = lambda s, state: -rhs(s, state)
        sol = integrate_ivp(rev, state0, -t, cfg, box_lower=lo, box_upper=hi,
                            sample_dt=sample_dt)
        ts = -sol.ts[::-1]
        ys = sol.ys[::-1]
        t_exit = -sol.t_exit if sol.t_exit is not None else None
    return GroupoidTrajectory(ts, ys[:, :m], ys[:, m:], sol.status,
                              t_exit=t_exit, message=sol.message)


def _require_gtraj_completed(gtraj: GroupoidTrajectory):
    if gtraj.status == "left-domain":
        raise LeftDomainError(
            f"lifted flow left the element chart at t = {gtraj.t_exit}",
            t_exit=gtraj.t_exit)
    if gtraj.status != STATUS_COMPLETED:
        raise IntegrationFailureError(gtraj.message or "integration failed")


def groupoid_exp(gpd: GroupoidModel, gamma: SodeField, h: float, q, a,
                 cfg: IntegratorConfig | None = None,
                 lifted: LiftedSode | None = None) -> np.ndarray:
    """Time-h groupoid exponential of the algebroid element a over q:
    integrate the lifted SODE from (identity(q), a in the fiber frame) and
    return the element reached; its source stays q throughout."""
    if lifted is None:
        lifted = lift_sode(gpd, gamma)
    q = np.asarray(q, float)
    a = np.asarray(a, float)
    g0 = np.asarray(gpd.identity(q), float)
    v0 = np.asarray(gpd.ag_frame(q), float) @ a
    gtraj = groupoid_flow(gpd, lifted, g0, v0, h, cfg)
    _require_gtraj_completed(gtraj)
    return gtraj.gs[-1].copy()


def groupoid_bvp(gpd: GroupoidModel, gamma: SodeField, h: float, g,
                 ncfg: NewtonConfig | None = None,
                 icfg: IntegratorConfig | None = None,
                 lifted: LiftedSode | None = None,
                 n_samples: int = 128) -> tuple[RetractionPair, AlgebroidPath, Trajectory]:
    """Shoot for the algebroid element whose time-h groupoid exponential is
    g (the connecting trajectory lives in the source fiber of g).

    Returns the retraction data (minus = a(0), plus = a(h)), the algebroid
    path a(t) obtained by pushing the lifted velocity through the morphism,
    and the base trajectory (q(t), a(t)) — an integral curve of the SODE on
    the algebroid running from source(g) to target(g).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    ncfg = ncfg or NewtonConfig()
    g = np.asarray(g, float)
    if lifted is None:
        lifted = lift_sode(gpd, gamma)
    q = np.asarray(gpd.source(g), float)
    e = np.asarray(gpd.identity(q), float)
    E = np.asarray(gpd.ag_frame(q), float)
    guess, *_ = np.linalg.lstsq(E, (g - e) / h, rcond=None)

    cache: dict[bytes, np.ndarray] = {}

    def endpoint(a) -> np.ndarray:
        key = a.tobytes()
        if key not in cache:
            gtraj = groupoid_flow(gpd, lifted, e, E @ a, h, icfg)
            _require_gtraj_completed(gtraj)
            cache[key] = gtraj.gs[-1]
        return cache[key]

    residual = lambda a: endpoint(a) - g

    def jacobian(a):
        step = 1e-5 * (1.0 + float(np.linalg.norm(a)))
        return fd_jacobian(residual, a, step=step)

    res = newton_solve(residual, jacobian, guess, ncfg, recoverable=_RECOVERABLE)
    if res.status == "singular-jacobian":
        raise SingularJacobianError("psi-singular: shooting matrix near singular")
    if res.status != "converged":
        raise NoConvergenceError(
            f"no-convergence: {res.message}", best=res.x,
            residual_norm=res.residual_norm, iterations=res.iterations)

    minus = res.x
    gtraj = groupoid_flow(gpd, lifted, e, E @ minus, h, icfg,
                          sample_dt=h / n_samples)
    _require_gtraj_completed(gtraj)
    fibers = np.array([psi_components(gpd, gi, vi)
                       for gi, vi in zip(gtraj.gs, gtraj.vs)])
    base = np.array([np.asarray(gpd.target(gi), float) for gi in gtraj.gs])
    base = base.reshape(len(gtraj.ts), gpd.algebroid.n)
    path = AlgebroidPath(gtraj.ts.copy(), base, fibers)
    base_traj = Trajectory(gtraj.ts.copy(), base, fibers, gtraj.status)
    pair = RetractionPair(
        minus_base=q.copy(), minus=minus,
        plus_base=np.asarray(gpd.target(g), float).copy(), plus=fibers[-1].copy(),
        residual=res.residual_norm, iterations=res.iterations)
    return pair, path, base_traj


# --- homogeneous quadratic specialization ---------------------------------------------------

def exp_one(sode: SodeField, q, v,
            cfg: IntegratorConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """The h = 1 exponential pair, defined for homogeneous quadratic fields
    (where rescaling of v trades against rescaling of time)."""
    require_quadratic(sode)
    return exp_pair(sode, 1.0, q, v, cfg)


def zero_section_jacobian(sode: SodeField, q, step: float = 1e-4,
                          cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Finite-difference Jacobian of the h = 1 exponential at the zero
    section, written in the block splitting (base directions along the zero
    section, fiber directions) on the source and (diagonal directions,
    second-factor fiber directions) on the target; the identity for
    quadratic fields."""
    require_quadratic(sode)
    _require_tangent(sode, q)
    q = np.asarray(q, float)
    n, k = sode.model.n, sode.model.k

    def chart_map(z):
        start, end = exp_pair(sode, 1.0, z[:n], z[n:], cfg)
        return np.concatenate([start, end])

    raw = fd_jacobian(chart_map, np.concatenate([q, np.zeros(k)]), step=step)
    P = np.block([[np.eye(n), np.zeros((n, k))], [np.eye(n), np.eye(k)]])
    return np.linalg.solve(P, raw)


def groupoid_zero_section_jacobian(gpd: GroupoidModel, gamma: SodeField,
                                   step: float = 1e-4,
                                   cfg: IntegratorConfig | None = None,
                                   q=None,
                                   lifted: LiftedSode | None = None) -> np.ndarray:
    """Groupoid version: Jacobian of (q, a) -> time-1 exponential element at
    a = 0, in the splitting (tangent of the identity section, algebroid
    fiber directions) of the tangent space at the identity element."""
    require_quadratic(gamma)
    if lifted is None:
        lifted = lift_sode(gpd, gamma)
    n, k = gpd.algebroid.n, gpd.algebroid.k
    q = gpd.base_chart.center if q is None else np.asarray(q, float)

    def chart_map(z):
        return groupoid_exp(gpd, gamma, 1.0, z[:n], z[n:], cfg, lifted=lifted)

    raw = fd_jacobian(chart_map, np.concatenate([q, np.zeros(k)]), step=step)
    E = np.asarray(gpd.ag_frame(q), float)
    if n:
        ident = lambda qq: np.asarray(gpd.identity(qq), float)
        T_eps = fd_jacobian(ident, q, step=1e-6 * (1.0 + float(np.linalg.norm(q))))
        P = np.hstack([T_eps, E])
    else:
        P = E
    return np.linalg.solve(P, raw)
