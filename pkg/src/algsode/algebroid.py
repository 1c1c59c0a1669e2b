"""Chart-level Lie algebroid models and SODE vector fields on them.

A model lives in a single chart: a box of base coordinates (q^i), a fiber
rank k with coordinates (y^alpha), an anchor table rho[i][alpha](q) and a
structure table C[alpha][beta][gamma](q), all scalar fields defined by
expression trees.  Base dimension 0 is legal and represents a Lie algebra
(all base-vector operations return empty vectors).

A SODE field adds fiber accelerations Gamma^alpha(q, y); its integral
curves solve

    dq^i/dt = rho^i_alpha(q) y^alpha,      dy^alpha/dt = Gamma^alpha(q, y),

which makes the base curve admissible by construction.  The bracket on
sections is represented only through the structure table; every computation
here needs only the anchor and, for validation, C.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import LeftDomainError, NotQuadraticError, OutOfChartError
from .expressions import Num, ScalarField, Sym, _add, _mul
from .numerics import (
    IntegratorConfig, integrate_ivp, sample_box, seeded_rng,
    STATUS_COMPLETED, STATUS_LEFT_DOMAIN,
)

#: scales used by the fiber-rescaling homogeneity probe
HOMOGENEITY_SCALES = (-1.0, 0.5, 2.0)


@dataclass(frozen=True)
class ChartBox:
    """A coordinate box; lower < upper componentwise, dim 0 allowed."""

    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if not (len(self.names) == len(self.lower) == len(self.upper)):
            raise ValueError("names/lower/upper length mismatch")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < hi:
                raise ValueError(f"need lower < upper, got [{lo}, {hi}]")

    @classmethod
    def cube(cls, dim: int, half_width: float, prefix: str = "q",
             center: float = 0.0) -> "ChartBox":
        names = tuple(f"{prefix}{i + 1}" for i in range(dim))
        return cls(names,
                   tuple(center - half_width for _ in range(dim)),
                   tuple(center + half_width for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, float)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower_array + self.upper_array)

    def contains(self, point: Sequence[float], slack: float = 0.0) -> bool:
        p = np.asarray(point, float)
        if p.size != self.dim:
            return False
        return bool(np.all(p >= self.lower_array - slack)
                    and np.all(p <= self.upper_array + slack))

    def sample(self, rng: np.random.Generator, n: int, shrink: float = 0.0) -> np.ndarray:
        lo = self.lower_array + shrink * (self.upper_array - self.lower_array)
        hi = self.upper_array - shrink * (self.upper_array - self.lower_array)
        return sample_box(rng, lo, hi, n)


def _as_field_table(rows, names, params) -> tuple:
    """Normalize a nested table of expression strings / ScalarFields."""
    out = []
    for row in rows:
        if isinstance(row, (str, ScalarField)):
            out.append(_as_field(row, names, params))
        else:
            out.append(_as_field_table(row, names, params))
    return tuple(out)


def _as_field(entry, names, params) -> ScalarField:
    if isinstance(entry, ScalarField):
        return entry
    return ScalarField.parse(str(entry), names, params)


@dataclass
class AlgebroidModel:
    """Anchor and structure tables over a base chart box.

    ``anchor[i][alpha]`` is rho^i_alpha(q) (n x k); ``structure`` is
    C[alpha][beta][gamma](q) (k x k x k), antisymmetric in (beta, gamma).
    Treated as immutable after construction.
    """

    base: ChartBox
    fiber_rank: int
    anchor: tuple            # n x k ScalarFields over base coords
    structure: tuple         # k x k x k ScalarFields over base coords
    fiber_names: tuple[str, ...] = ()
    fiber_box: ChartBox | None = None

    def __post_init__(self):
        if not self.fiber_names:
            self.fiber_names = tuple(f"y{a + 1}" for a in range(self.fiber_rank))
        if len(self.fiber_names) != self.fiber_rank:
            raise ValueError("fiber_names length must equal fiber_rank")
        if len(self.anchor) != self.base.dim:
            raise ValueError(f"anchor needs {self.base.dim} rows")
        for row in self.anchor:
            if len(row) != self.fiber_rank:
                raise ValueError(f"anchor rows need {self.fiber_rank} entries")
        if len(self.structure) != self.fiber_rank:
            raise ValueError(f"structure needs {self.fiber_rank} tables")

    @property
    def n(self) -> int:
        return self.base.dim

    @property
    def k(self) -> int:
        return self.fiber_rank

    @property
    def coord_names(self) -> tuple[str, ...]:
        return self.base.names + self.fiber_names

    def anchor_matrix(self, q: Sequence[float]) -> np.ndarray:
        return np.array([[f(q) for f in row] for row in self.anchor],
                        float).reshape(self.n, self.k)

    def structure_at(self, q: Sequence[float]) -> np.ndarray:
        return np.array([[[f(q) for f in row] for row in table]
                         for table in self.structure],
                        float).reshape(self.k, self.k, self.k)

    def structure_antisymmetry_defect(self, samples: int = 20, seed: int = 0) -> float:
        rng = seeded_rng(seed)
        pts = self.base.sample(rng, samples)
        worst = 0.0
        for q in pts:
            C = self.structure_at(q)
            worst = max(worst, float(np.max(np.abs(C + C.transpose(0, 2, 1)))))
        return worst

    def jacobi_defect(self, q: Sequence[float] | None = None) -> float:
        """Cyclic Jacobi sum of the structure table at q (base center by
        default).  Meaningful as an identity check for constant tables with
        zero anchor (the Lie algebra case)."""
        if q is None:
            q = self.base.center
        C = self.structure_at(q)
        k = self.k
        worst = 0.0
        for a in range(k):
            for b in range(k):
                for g in range(k):
                    for d in range(k):
                        s = sum(C[m, b, g] * C[a, m, d]
                                + C[m, g, d] * C[a, m, b]
                                + C[m, d, b] * C[a, m, g] for m in range(k))
                        worst = max(worst, abs(s))
        return worst

    def has_constant_structure(self) -> bool:
        return all(f.is_constant() for table in self.structure
                   for row in table for f in row)

    def has_zero_anchor(self) -> bool:
        zero = True
        q = self.base.center
        for row in self.anchor:
            for f in row:
                zero = zero and f.is_constant() and f(q) == 0.0
        return zero


def tangent_algebroid(box: ChartBox, params: dict | None = None) -> AlgebroidModel:
    """The tangent-bundle model over a chart: identity anchor, zero bracket."""
    n = box.dim
    names = box.names
    anchor = tuple(tuple(ScalarField.constant(1.0 if i == a else 0.0, names)
                         for a in range(n)) for i in range(n))
    zero = ScalarField.constant(0.0, names)
    structure = tuple(tuple(tuple(zero for _ in range(n)) for _ in range(n))
                      for _ in range(n))
    return AlgebroidModel(box, n, anchor, structure)


@dataclass
class SodeField:
    """Fiber accelerations Gamma^alpha(q, y) over an AlgebroidModel.

    ``quadratic_coeffs`` (k x k x k scalar fields over q, symmetric in the
    last two slots) is present exactly for fiberwise homogeneous quadratic
    fields; gamma is then the induced quadratic form.
    """

    model: AlgebroidModel
    gamma_fields: tuple            # k ScalarFields over (q, y)
    quadratic_coeffs: tuple | None = None
    _dq: dict = field(default_factory=dict, repr=False, compare=False)
    _dy: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.gamma_fields) != self.model.k:
            raise ValueError(f"need {self.model.k} gamma entries")

    def gamma(self, q: Sequence[float], y: Sequence[float]) -> np.ndarray:
        vals = list(q) + list(y)
        return np.array([f(vals) for f in self.gamma_fields], float)

    def _derivative_row(self, cache, wrt_names, offset, q, y):
        """Rows of d(gamma)/d(wrt); analytic when the trees allow, else
        central finite differences with step 1e-6 * (1 + |coordinate|)."""
        vals = list(q) + list(y)
        out = np.zeros((self.model.k, len(wrt_names)))
        for a, f in enumerate(self.gamma_fields):
            for j, name in enumerate(wrt_names):
                key = (a, name)
                if key not in cache:
                    cache[key] = f.derivative(name)
                df = cache[key]
                if df is not None:
                    out[a, j] = df(vals)
                else:
                    idx = offset + j
                    h = 1e-6 * (1.0 + abs(vals[idx]))
                    vp, vm = list(vals), list(vals)
                    vp[idx] += h
                    vm[idx] -= h
                    out[a, j] = (f(vp) - f(vm)) / (2 * h)
        return out

    def gamma_jacobians(self, q, y) -> tuple[np.ndarray, np.ndarray]:
        """(B, F) = (d gamma / dq, d gamma / dy) at (q, y)."""
        B = self._derivative_row(self._dq, self.model.base.names, 0, q, y)
        F = self._derivative_row(self._dy, self.model.fiber_names, self.model.n, q, y)
        return B, F

    def is_declared_quadratic(self) -> bool:
        return self.quadratic_coeffs is not None


@dataclass
class Trajectory:
    """Time samples of an admissible curve (t, q(t), y(t)) plus a status
    recording membership in the flow domain: completed, left-domain (with
    the exit time), or failure."""

    ts: np.ndarray           # (N,), strictly increasing
    qs: np.ndarray           # (N, n)
    ys: np.ndarray           # (N, k)
    status: str
    t_exit: float | None = None
    message: str | None = None

    @property
    def end(self) -> tuple[float, np.ndarray, np.ndarray]:
        return float(self.ts[-1]), self.qs[-1], self.ys[-1]

    @property
    def completed(self) -> bool:
        return self.status == STATUS_COMPLETED


@dataclass
class FibrationModel:
    """A vertical-bundle model V(pi) together with its projection pi.

    The algebroid's base chart covers Q; ``projection`` evaluates pi: Q -> M
    in chart coordinates.  The anchor is the inclusion of the vertical
    distribution, so flows freeze pi by construction.
    """

    algebroid: AlgebroidModel
    projection: Callable[[np.ndarray], np.ndarray]
    name: str = "fibration"


# --- operations ---------------------------------------------------------------

def anchor_apply(model: AlgebroidModel, q: Sequence[float],
                 y: Sequence[float]) -> np.ndarray:
    """Base velocity v^i = rho^i_alpha(q) y^alpha."""
    q = np.asarray(q, float)
    y = np.asarray(y, float)
    if not model.base.contains(q):
        raise OutOfChartError(f"base point {q} outside chart box")
    if y.size != model.k:
        raise ValueError(f"fiber vector must have length {model.k}")
    if model.n == 0:
        return np.zeros(0)
    return model.anchor_matrix(q) @ y


def sode_rhs(sode: SodeField, q: Sequence[float],
             y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """(dq/dt, dy/dt) = (rho(q) y, Gamma(q, y))."""
    qdot = anchor_apply(sode.model, q, y)
    if sode.model.fiber_box is not None and not sode.model.fiber_box.contains(y):
        raise OutOfChartError(f"fiber point {y} outside fiber box")
    return qdot, sode.gamma(q, y)


def _rhs_unchecked(sode: SodeField):
    """Integration right-hand side over the packed state (q, y); no box
    checks here — the integrator enforces the box on accepted steps."""
    n, k = sode.model.n, sode.model.k

    def rhs(t, state):
        q, y = state[:n], state[n:]
        qdot = sode.model.anchor_matrix(q) @ y if n else np.zeros(0)
        return np.concatenate([qdot, sode.gamma(q, y)])

    return rhs


def _state_box(model: AlgebroidModel):
    lo = list(model.base.lower)
    hi = list(model.base.upper)
    if model.fiber_box is not None:
        lo += list(model.fiber_box.lower)
        hi += list(model.fiber_box.upper)
    else:
        lo += [-math.inf] * model.k
        hi += [math.inf] * model.k
    return np.array(lo), np.array(hi)


def flow(sode: SodeField, q0: Sequence[float], y0: Sequence[float], t: float,
         cfg: IntegratorConfig | None = None, *,
         sample_dt: float | None = None) -> Trajectory:
    """Integrate the SODE from (q0, y0) for time t (t < 0 runs the
    time-reversed field); samples are returned in increasing t either way."""
    model = sode.model
    q0 = np.asarray(q0, float)
    y0 = np.asarray(y0, float)
    if not model.base.contains(q0):
        raise OutOfChartError(f"initial base point {q0} outside chart box")
    if model.fiber_box is not None and not model.fiber_box.contains(y0):
        raise OutOfChartError(f"initial fiber point {y0} outside fiber box")
    rhs = _rhs_unchecked(sode)
    lo, hi = _state_box(model)
    state0 = np.concatenate([q0, y0])
    if t >= 0:
        sol = integrate_ivp(rhs, state0, t, cfg, box_lower=lo, box_upper=hi,
                            sample_dt=sample_dt)
        ts = sol.ts
        ys = sol.ys
        t_exit = sol.t_exit
    else:
        rev = lambda s, state: -rhs(s, state)
        sol = integrate_ivp(rev, state0, -t, cfg, box_lower=lo, box_upper=hi,
                            sample_dt=sample_dt)
        ts = -sol.ts[::-1]
        ys = sol.ys[::-1]
        t_exit = -sol.t_exit if sol.t_exit is not None else None
    n = model.n
    return Trajectory(ts, ys[:, :n], ys[:, n:], sol.status,
                      t_exit=t_exit, message=sol.message)


def flow_end(sode: SodeField, q0, y0, t, cfg=None) -> tuple[np.ndarray, np.ndarray]:
    """State reached at time t by a flow that must complete; raises
    LeftDomainError or IntegrationFailureError otherwise.  For t < 0 this is
    the first row of the (ascending) trajectory."""
    traj = flow(sode, q0, y0, t, cfg)
    _require_completed(traj)
    idx = -1 if t >= 0 else 0
    return traj.qs[idx], traj.ys[idx]


def _require_completed(traj: Trajectory):
    if traj.status == STATUS_LEFT_DOMAIN:
        raise LeftDomainError(f"flow left the chart box at t = {traj.t_exit}",
                              t_exit=traj.t_exit)
    if traj.status != STATUS_COMPLETED:
        from .errors import IntegrationFailureError
        raise IntegrationFailureError(traj.message or "integration failed")


def admissibility_defect(model: AlgebroidModel, traj: Trajectory) -> float:
    """Max over interior samples of |Dq - rho(q) y| (infinity norm), with
    Dq a 5-point 4th-order centered difference.  Requires the trajectory to
    be uniformly sampled (use flow(..., sample_dt=...)); the stencil spacing
    is chosen by the caller so truncation stays below the target tolerance.
    """
    ts, qs, ys = traj.ts, traj.qs, traj.ys
    if ts.size < 5:
        raise ValueError("need at least 5 uniform samples")
    if model.n == 0:
        return 0.0
    dt = ts[1] - ts[0]
    worst = 0.0
    for i in range(2, ts.size - 2):
        window = ts[i - 2: i + 3]
        if np.max(np.abs(np.diff(window) - dt)) > 1e-9 * max(1.0, abs(dt)):
            continue  # clipped end sample; stencil not uniform there
        dq = (-qs[i + 2] + 8 * qs[i + 1] - 8 * qs[i - 1] + qs[i - 2]) / (12 * dt)
        defect = np.max(np.abs(dq - model.anchor_matrix(qs[i]) @ ys[i]))
        worst = max(worst, float(defect))
    return worst


def homogeneity_defect(sode: SodeField, samples: int = 100, seed: int = 0) -> float:
    """Max over sampled (q, y) and s in {-1, 1/2, 2} of
    |Gamma(q, s y) - s^2 Gamma(q, y)| (infinity norm); zero to roundoff
    exactly for fiberwise homogeneous quadratic fields."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    model = sode.model
    rng = seeded_rng(seed)
    qs = model.base.sample(rng, samples)
    if model.fiber_box is not None:
        ys = model.fiber_box.sample(rng, samples)
    else:
        ys = sample_box(rng, [-1.0] * model.k, [1.0] * model.k, samples)
    worst = 0.0
    for q, y in zip(qs, ys):
        g = sode.gamma(q, y)
        for s in HOMOGENEITY_SCALES:
            d = np.max(np.abs(sode.gamma(q, s * y) - s * s * g)) if model.k else 0.0
            worst = max(worst, float(d))
    return worst


def require_quadratic(sode: SodeField, tol: float = 1e-10):
    """Raise NotQuadraticError unless the field is homogeneous quadratic
    (declared coefficients, or rescaling defect <= tol on a quick sample)."""
    if sode.is_declared_quadratic():
        return
    d = homogeneity_defect(sode, samples=32, seed=0)
    if d > tol:
        raise NotQuadraticError(
            f"fiber-rescaling defect {d:.3e} > {tol:.1e}; not homogeneous quadratic")


def quadratic_rescale_defect(sode: SodeField, q0, y0, s: float, t: float,
                             cfg: IntegratorConfig | None = None) -> float:
    """|base of flow(q0, s y0, t)  -  base of flow(q0, y0, s t)| for a
    homogeneous quadratic field (trajectory rescaling law)."""
    require_quadratic(sode)
    qa, _ = flow_end(sode, q0, np.asarray(y0, float) * s, t, cfg)
    qb, _ = flow_end(sode, q0, y0, s * t, cfg)
    if sode.model.n == 0:
        return 0.0
    return float(np.max(np.abs(qa - qb)))


def spray_from_coefficients(model: AlgebroidModel, coeffs) -> SodeField:
    """Build the quadratic SODE Gamma^alpha = Gamma^alpha_{beta gamma}(q)
    y^beta y^gamma from a k x k x k coefficient table of scalar fields over
    the base coordinates (symmetrized in (beta, gamma) on input)."""
    k = model.k
    table = _as_field_table(coeffs, model.base.names, {})
    if len(table) != k or any(len(t) != k or any(len(r) != k for r in t) for t in table):
        raise ValueError(f"coefficient table must be {k}x{k}x{k}")
    names = model.coord_names
    params_all = {}
    for t in table:
        for r in t:
            for f in r:
                params_all.update(f.params)
    half = Num(0.5)
    sym = []
    gamma_fields = []
    for a in range(k):
        rows = []
        acc = Num(0.0)
        for b in range(k):
            row = []
            for g in range(k):
                cbg, cgb = table[a][b][g], table[a][g][b]
                if cbg.ast == cgb.ast:
                    node = cbg.ast
                else:
                    node = _mul(half, _add(cbg.ast, cgb.ast))
                params = {**cbg.params, **cgb.params}
                row.append(ScalarField(node, model.base.names, params))
                term = _mul(node, _mul(Sym(model.fiber_names[b]),
                                       Sym(model.fiber_names[g])))
                acc = _add(acc, term)
            rows.append(tuple(row))
        sym.append(tuple(rows))
        gamma_fields.append(ScalarField(acc, names, dict(params_all)))
    return SodeField(model, tuple(gamma_fields), quadratic_coeffs=tuple(sym))
