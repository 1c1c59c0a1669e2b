"""Chart-level Lie groupoid models and SODE lifting to the source-vertical
bundle.

A groupoid model is a chart on the arrow manifold G plus the structural
maps (source, target, identity, inverse, partial multiplication) as chart
callables, together with its algebroid: fibers are the source-vertical
tangent spaces at identities, concretely an ``ag_frame(q)`` whose columns
are the chart components of the fiber basis.

The morphism Psi sends a source-vertical vector v at g to the fiber over
target(g) by differentiating h -> g^-1 h along v.  Tangent maps default to
central finite differences with step 1e-6 * (1 + |state|); instances
override with closed forms (matrix groups, pair groupoid) where accuracy
matters.

States of the lifted SODE are pairs (g, v) with g in the chart of G and v
the chart components of a source-vertical tangent vector.  The fiber
correction of the lift is expressed in the left-invariant frame
L(g) = Tl_g applied to the fiber basis, in which Psi acts as the identity,
so no per-point linear solve is needed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .algebroid import AlgebroidModel, ChartBox, SodeField
from .errors import NotComposableError, NotVerticalError, PsiSingularError
from .numerics import seeded_rng, sample_box

COMPOSABILITY_TOL = 1e-10
VERTICALITY_TOL = 1e-6


def _fd_step(scale: float) -> float:
    return 1e-6 * (1.0 + scale)


@dataclass
class GroupoidModel:
    """Structural maps of a Lie groupoid in a single chart.

    ``ag_frame(q)`` gives the (m x k) chart components of the algebroid
    fiber basis at the identity over q; the anchor/structure tables live in
    ``algebroid``.  Optional closed forms: ``psi(g, v)``, ``left_frame(g)``
    (columns Tl_g e_alpha), ``d_source(g)``.  ``sample_arrow(rng, q)`` draws
    a chart element with source q (any source when q is None); used by the
    seeded axiom checks.
    """

    name: str
    element_chart: ChartBox
    algebroid: AlgebroidModel
    source: Callable
    target: Callable
    identity: Callable
    inverse: Callable
    multiply: Callable
    ag_frame: Callable
    psi: Callable | None = None
    left_frame: Callable | None = None
    d_source: Callable | None = None
    sample_arrow: Callable | None = None

    def __post_init__(self):
        m = self.element_chart.dim
        if m != self.algebroid.n + self.algebroid.k:
            raise ValueError("element chart dim must equal base dim + fiber rank")

    @property
    def m(self) -> int:
        return self.element_chart.dim

    @property
    def base_chart(self) -> ChartBox:
        return self.algebroid.base

    @property
    def k(self) -> int:
        return self.algebroid.k


@dataclass
class VerticalVector:
    """Chart components of a tangent vector at ``at`` annihilated by the
    source map's tangent."""

    at: np.ndarray
    components: np.ndarray


@dataclass
class AlgebroidPath:
    """An algebroid-valued curve a(t) over its base curve q(t)."""

    ts: np.ndarray       # (N,)
    base: np.ndarray     # (N, n)
    fibers: np.ndarray   # (N, k)


# --- tangent machinery ----------------------------------------------------------

def source_vertical_defect(gpd: GroupoidModel, g, v) -> float:
    """|T(source) applied to v| (infinity norm); 0 for vertical vectors."""
    g = np.asarray(g, float)
    v = np.asarray(v, float)
    if gpd.algebroid.n == 0:
        return 0.0
    if gpd.d_source is not None:
        dv = np.asarray(gpd.d_source(g), float) @ v
    else:
        eps = _fd_step(float(np.linalg.norm(g))) / max(1.0, float(np.linalg.norm(v)))
        dv = (np.asarray(gpd.source(g + eps * v), float)
              - np.asarray(gpd.source(g - eps * v), float)) / (2 * eps)
    return float(np.max(np.abs(dv))) if dv.size else 0.0


def psi_components(gpd: GroupoidModel, g, v) -> np.ndarray:
    """Psi(v at g) in fiber coordinates over target(g); no verticality check."""
    g = np.asarray(g, float)
    v = np.asarray(v, float)
    if gpd.psi is not None:
        return np.asarray(gpd.psi(g, v), float)
    gi = np.asarray(gpd.inverse(g), float)
    eps = _fd_step(float(np.linalg.norm(g))) / max(1.0, float(np.linalg.norm(v)))
    w = (np.asarray(gpd.multiply(gi, g + eps * v), float)
         - np.asarray(gpd.multiply(gi, g - eps * v), float)) / (2 * eps)
    E = np.asarray(gpd.ag_frame(gpd.target(g)), float)
    a, *_ = np.linalg.lstsq(E, w, rcond=None)
    return a


def left_frame_at(gpd: GroupoidModel, g) -> np.ndarray:
    """Columns Tl_g e_alpha(target(g)): the left-invariant frame of the
    source-vertical bundle, in which Psi is the identity."""
    g = np.asarray(g, float)
    if gpd.left_frame is not None:
        return np.asarray(gpd.left_frame(g), float)
    q = np.asarray(gpd.target(g), float)
    e = np.asarray(gpd.identity(q), float)
    E = np.asarray(gpd.ag_frame(q), float)
    eps = _fd_step(float(np.linalg.norm(g)))
    cols = []
    for a in range(gpd.k):
        col = E[:, a]
        cols.append((np.asarray(gpd.multiply(g, e + eps * col), float)
                     - np.asarray(gpd.multiply(g, e - eps * col), float)) / (2 * eps))
    return np.column_stack(cols)


# --- operations -------------------------------------------------------------------

def left_translate(gpd: GroupoidModel, g, h) -> np.ndarray:
    """gh, defined when target(g) = source(h)."""
    g = np.asarray(g, float)
    h = np.asarray(h, float)
    bg = np.asarray(gpd.target(g), float)
    ah = np.asarray(gpd.source(h), float)
    if bg.size and float(np.max(np.abs(bg - ah))) > COMPOSABILITY_TOL:
        raise NotComposableError(
            f"target(g)={bg} != source(h)={ah}; pair not composable")
    return np.asarray(gpd.multiply(g, h), float)


def psi_apply(gpd: GroupoidModel, v: VerticalVector) -> np.ndarray:
    """Fiber coordinates over target(g) of Psi(v_g) = Tl_{g^-1} v_g."""
    defect = source_vertical_defect(gpd, v.at, v.components)
    if defect > VERTICALITY_TOL:
        raise NotVerticalError(
            f"source-verticality defect {defect:.3e} > {VERTICALITY_TOL:.1e}")
    return psi_components(gpd, v.at, v.components)


@dataclass
class LiftedSode:
    """The unique SODE on the source-vertical bundle related to ``gamma``
    through Psi; evaluated pointwise on states (g, v)."""

    gpd: GroupoidModel
    gamma: SodeField
    aux_acc: Callable | None = None  # auxiliary vertical acceleration (g, v) -> (m,)

    def rhs(self, g, v) -> tuple[np.ndarray, np.ndarray]:
        """(dg/dt, dv/dt) at the state (g, v)."""
        gpd = self.gpd
        g = np.asarray(g, float)
        v = np.asarray(v, float)
        q = np.asarray(gpd.target(g), float)
        a = psi_components(gpd, g, v)
        gam = self.gamma.gamma(q, a)
        if self.aux_acc is not None:
            acc = np.asarray(self.aux_acc(g, v), float)
        else:
            acc = np.zeros_like(v)
        speed = max(1.0, float(np.linalg.norm(v)) + float(np.linalg.norm(acc)))
        s = _fd_step(float(np.linalg.norm(g)) + float(np.linalg.norm(v))) / speed
        a_plus = psi_components(gpd, g + s * v, v + s * acc)
        a_minus = psi_components(gpd, g - s * v, v - s * acc)
        ydot_aux = (a_plus - a_minus) / (2 * s)
        c = gam - ydot_aux
        vdot = acc + left_frame_at(gpd, g) @ c
        return v.copy(), vdot

    def packed_rhs(self):
        """rhs over the packed state (g, v) for the integrator."""
        m = self.gpd.m

        def f(t, state):
            gdot, vdot = self.rhs(state[:m], state[m:])
            return np.concatenate([gdot, vdot])

        return f


def lift_sode(gpd: GroupoidModel, gamma: SodeField,
              aux_acc: Callable | None = None, *,
              check_points: int = 8, seed: int = 0) -> LiftedSode:
    """Construct the lifted SODE, checking that the Psi fiber matrix is well
    conditioned on sampled chart points (else "psi-singular")."""
    if gamma.model.k != gpd.algebroid.k or gamma.model.n != gpd.algebroid.n:
        raise ValueError("SODE model does not match the groupoid's algebroid")
    rng = seeded_rng(seed)
    gs = gpd.element_chart.sample(rng, check_points, shrink=0.05)
    for g in gs:
        L = left_frame_at(gpd, g)
        M = np.column_stack([psi_components(gpd, g, L[:, a]) for a in range(gpd.k)])
        if not np.all(np.isfinite(M)) or np.linalg.cond(M) > 1e12:
            raise PsiSingularError(
                f"Psi fiber matrix near singular at chart point {g}")
    return LiftedSode(gpd, gamma, aux_acc)


def _rk4_step(rhs, state, h):
    k1 = rhs(0.0, state)
    k2 = rhs(0.0, state + h / 2 * k1)
    k3 = rhs(0.0, state + h / 2 * k2)
    k4 = rhs(0.0, state + h * k3)
    return state + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def psi_defect(gpd: GroupoidModel, lifted, gamma: SodeField,
               samples: int = 100, seed: int = 0) -> float:
    """Max over sampled vertical states of |T Psi (lifted field) - (field
    after Psi)|; the tangent of Psi is differenced across short flow
    segments of the lifted field."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = seeded_rng(seed)
    gs = gpd.element_chart.sample(rng, samples, shrink=0.15)
    coeffs = sample_box(rng, [-1.0] * gpd.k, [1.0] * gpd.k, samples)
    m = gpd.m
    rhs = lifted.packed_rhs() if hasattr(lifted, "packed_rhs") else lifted
    worst = 0.0
    for g, y in zip(gs, coeffs):
        v = left_frame_at(gpd, g) @ y
        state = np.concatenate([g, v])
        s = 1e-5 * (1.0 + float(np.linalg.norm(state)))
        plus = _rk4_step(rhs, state, s)
        minus = _rk4_step(rhs, state, -s)

        def through_psi(st):
            return np.concatenate([np.asarray(gpd.target(st[:m]), float),
                                   psi_components(gpd, st[:m], st[m:])])

        lhs = (through_psi(plus) - through_psi(minus)) / (2 * s)
        q = np.asarray(gpd.target(g), float)
        a = psi_components(gpd, g, v)
        qdot = gpd.algebroid.anchor_matrix(q) @ a if gpd.algebroid.n else np.zeros(0)
        rhs_vec = np.concatenate([qdot, gamma.gamma(q, a)])
        worst = max(worst, float(np.max(np.abs(lhs - rhs_vec))))
    return worst


def groupoid_anchor_check(gpd: GroupoidModel, samples: int = 100,
                          seed: int = 0) -> float:
    """Max defect of the anchor table against T(target) applied to fiber
    directions at identities (finite differences)."""
    if gpd.algebroid.n == 0:
        return 0.0
    rng = seeded_rng(seed)
    qs = gpd.base_chart.sample(rng, samples, shrink=0.05)
    coeffs = sample_box(rng, [-1.0] * gpd.k, [1.0] * gpd.k, samples)
    worst = 0.0
    for q, a in zip(qs, coeffs):
        e = np.asarray(gpd.identity(q), float)
        v = np.asarray(gpd.ag_frame(q), float) @ a
        eps = _fd_step(float(np.linalg.norm(e))) / max(1.0, float(np.linalg.norm(v)))
        tb = (np.asarray(gpd.target(e + eps * v), float)
              - np.asarray(gpd.target(e - eps * v), float)) / (2 * eps)
        rho = gpd.algebroid.anchor_matrix(q) @ a
        worst = max(worst, float(np.max(np.abs(rho - tb))))
    return worst


def groupoid_axiom_defects(gpd: GroupoidModel, samples: int = 100,
                           seed: int = 0) -> dict[str, float]:
    """Seeded max-norm defects of the groupoid axioms, one entry each."""
    if gpd.sample_arrow is None:
        raise ValueError(f"instance {gpd.name!r} provides no arrow sampler")
    rng = seeded_rng(seed)
    out = {
        "identity-source": 0.0, "identity-target": 0.0,
        "product-source": 0.0, "product-target": 0.0,
        "left-identity": 0.0, "right-identity": 0.0,
        "left-inverse": 0.0, "right-inverse": 0.0,
        "associativity": 0.0,
    }

    def bump(key, lhs, rhs):
        lhs, rhs = np.asarray(lhs, float), np.asarray(rhs, float)
        if lhs.size:
            out[key] = max(out[key], float(np.max(np.abs(lhs - rhs))))

    for _ in range(samples):
        q = gpd.base_chart.sample(rng, 1)[0]
        e = np.asarray(gpd.identity(q), float)
        bump("identity-source", gpd.source(e), q)
        bump("identity-target", gpd.target(e), q)
        g = np.asarray(gpd.sample_arrow(rng, q), float)
        h = np.asarray(gpd.sample_arrow(rng, np.asarray(gpd.target(g), float)), float)
        gh = np.asarray(gpd.multiply(g, h), float)
        bump("product-source", gpd.source(gh), gpd.source(g))
        bump("product-target", gpd.target(gh), gpd.target(h))
        bump("left-identity", gpd.multiply(gpd.identity(np.asarray(gpd.source(g), float)), g), g)
        bump("right-identity", gpd.multiply(g, gpd.identity(np.asarray(gpd.target(g), float))), g)
        gi = np.asarray(gpd.inverse(g), float)
        bump("left-inverse", gpd.multiply(gi, g), gpd.identity(np.asarray(gpd.target(g), float)))
        bump("right-inverse", gpd.multiply(g, gi), gpd.identity(np.asarray(gpd.source(g), float)))
        kk = np.asarray(gpd.sample_arrow(rng, np.asarray(gpd.target(h), float)), float)
        bump("associativity", gpd.multiply(g, gpd.multiply(h, kk)),
             gpd.multiply(gpd.multiply(g, h), kk))
    return out
