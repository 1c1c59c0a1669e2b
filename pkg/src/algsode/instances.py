"""Registry of built-in models: tangent bundles, a fibration, the pair
groupoid, the fibration groupoid, matrix groups, and the rigid body.

Every instance is data-defined (scalar fields are expression trees, group
charts are small closed-form callables); new models enter through config
expressions rather than plugins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebroid import (
    AlgebroidModel, ChartBox, FibrationModel, SodeField, spray_from_coefficients,
    tangent_algebroid,
)
from .errors import ConfigError
from .expressions import ScalarField
from .groupoid import GroupoidModel
from .numerics import sample_box

SO3_CHART_HALF_WIDTH = (math.pi - 0.1) / math.sqrt(3.0)  # box inside the log branch


@dataclass
class InstanceSpec:
    name: str
    params: dict = field(default_factory=dict)


@dataclass
class InstanceBundle:
    """A built model plus the SODE the tests and CLI run on it."""

    name: str
    kind: str                     # "algebroid" | "fibration" | "groupoid"
    model: object                 # AlgebroidModel | FibrationModel | GroupoidModel
    sode: SodeField | None = None
    description: str = ""

    @property
    def algebroid(self) -> AlgebroidModel:
        if self.kind == "algebroid":
            return self.model
        if self.kind == "fibration":
            return self.model.algebroid
        return self.model.algebroid


# --- SO(3) helpers ---------------------------------------------------------------

def hat(w) -> np.ndarray:
    w = np.asarray(w, float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def vee(W) -> np.ndarray:
    W = np.asarray(W, float)
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def so3_exp(theta) -> np.ndarray:
    """Rodrigues rotation from an axis-angle vector."""
    theta = np.asarray(theta, float)
    t = float(np.linalg.norm(theta))
    W = hat(theta)
    if t < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (np.eye(3) + math.sin(t) / t * W
            + (1.0 - math.cos(t)) / t ** 2 * (W @ W))


def so3_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation with angle < pi."""
    R = np.asarray(R, float)
    c = max(-1.0, min(1.0, 0.5 * (np.trace(R) - 1.0)))
    t = math.acos(c)
    w = vee(R - R.T)
    if t < 1e-8:
        return 0.5 * w * (1.0 + t * t / 6.0)
    return t / (2.0 * math.sin(t)) * w


def so3_right_jacobian(theta) -> np.ndarray:
    """J with body velocity = J(theta) d(theta)/dt along exponential
    coordinates."""
    theta = np.asarray(theta, float)
    t = float(np.linalg.norm(theta))
    W = hat(theta)
    if t < 1e-5:
        c1 = 0.5 - t * t / 24.0
        c2 = 1.0 / 6.0 - t * t / 120.0
    else:
        c1 = (1.0 - math.cos(t)) / t ** 2
        c2 = (t - math.sin(t)) / t ** 3
    return np.eye(3) - c1 * W + c2 * (W @ W)


# --- algebroid instances ------------------------------------------------------------

def _zero_coeffs(k: int):
    return tuple(tuple(tuple("0" for _ in range(k)) for _ in range(k))
                 for _ in range(k))


def _build_euclidean(params) -> InstanceBundle:
    dim = int(params.get("dim", 1))
    half = float(params.get("half_width", 10.0))
    model = tangent_algebroid(ChartBox.cube(dim, half))
    sode = spray_from_coefficients(model, _zero_coeffs(dim))
    return InstanceBundle("euclidean", "algebroid", model, sode,
                          "flat tangent bundle, zero spray")


def _build_harmonic(params) -> InstanceBundle:
    half = float(params.get("half_width", 10.0))
    model = tangent_algebroid(ChartBox.cube(1, half))
    gamma = (ScalarField.parse("-q1", model.coord_names),)
    return InstanceBundle("harmonic", "algebroid", model, SodeField(model, gamma),
                          "unit oscillator on the line")


def _build_pendulum(params) -> InstanceBundle:
    half = float(params.get("half_width", 10.0))
    model = tangent_algebroid(ChartBox.cube(1, half))
    gamma = (ScalarField.parse("-sin(q1)", model.coord_names),)
    return InstanceBundle("pendulum", "algebroid", model, SodeField(model, gamma),
                          "gravity pendulum on the line")


def _build_sphere_chart(params) -> InstanceBundle:
    half = float(params.get("half_width", 2.0))
    model = tangent_algebroid(ChartBox.cube(2, half))
    d = "(1+q1^2+q2^2)"
    coeffs = (
        ((f"2*q1/{d}", f"2*q2/{d}"), (f"2*q2/{d}", f"-2*q1/{d}")),
        ((f"-2*q2/{d}", f"2*q1/{d}"), (f"2*q1/{d}", f"2*q2/{d}")),
    )
    sode = spray_from_coefficients(model, coeffs)
    return InstanceBundle("sphere_chart", "algebroid", model, sode,
                          "round-sphere geodesic spray, stereographic chart")


def sphere_metric_speed(q, y) -> float:
    """|y|_g for the stereographic round metric; constant along geodesics."""
    r2 = float(q[0] ** 2 + q[1] ** 2)
    return 2.0 * math.sqrt(float(y[0] ** 2 + y[1] ** 2)) / (1.0 + r2)


def _vertical_r3_algebroid(params) -> AlgebroidModel:
    half = float(params.get("half_width", 5.0))
    base = ChartBox.cube(3, half)
    names = base.names
    anchor = (
        (ScalarField.constant(0.0, names), ScalarField.constant(0.0, names)),
        (ScalarField.constant(1.0, names), ScalarField.constant(0.0, names)),
        (ScalarField.constant(0.0, names), ScalarField.constant(1.0, names)),
    )
    zero = ScalarField.constant(0.0, names)
    structure = tuple(tuple(tuple(zero for _ in range(2)) for _ in range(2))
                      for _ in range(2))
    return AlgebroidModel(base, 2, anchor, structure)


def _build_fibration_r3(params) -> InstanceBundle:
    model = _vertical_r3_algebroid(params)
    f1 = str(params.get("f1", "0"))
    f2 = str(params.get("f2", "0"))
    gamma = (ScalarField.parse(f1, model.coord_names),
             ScalarField.parse(f2, model.coord_names))
    fib = FibrationModel(model, lambda q: np.asarray(q, float)[:1], "fibration_r3")
    return InstanceBundle("fibration_r3", "fibration", fib, SodeField(model, gamma),
                          "vertical bundle of (x,a,b) -> x on a box")


# --- groupoid instances ---------------------------------------------------------------

def _build_pair(params) -> InstanceBundle:
    dim = int(params.get("dim", 1))
    half = float(params.get("half_width", 10.0))
    base = ChartBox.cube(dim, half)
    ag = tangent_algebroid(base)
    gamma_src = params.get("gamma", tuple("0" for _ in range(dim)))
    if isinstance(gamma_src, str):
        gamma_src = (gamma_src,)
    gamma = tuple(ScalarField.parse(str(s), ag.coord_names) for s in gamma_src)
    element = ChartBox(tuple(f"g{i + 1}" for i in range(2 * dim)),
                       base.lower * 2, base.upper * 2)
    n = dim
    frame = np.vstack([np.zeros((n, n)), np.eye(n)])

    def sample_arrow(rng, q=None):
        if q is None:
            q = base.sample(rng, 1)[0]
        return np.concatenate([q, base.sample(rng, 1, shrink=0.05)[0]])

    gpd = GroupoidModel(
        name="pair",
        element_chart=element,
        algebroid=ag,
        source=lambda g: np.asarray(g, float)[:n],
        target=lambda g: np.asarray(g, float)[n:],
        identity=lambda q: np.concatenate([q, q]),
        inverse=lambda g: np.concatenate([np.asarray(g, float)[n:],
                                          np.asarray(g, float)[:n]]),
        multiply=lambda g, h: np.concatenate([np.asarray(g, float)[:n],
                                              np.asarray(h, float)[n:]]),
        ag_frame=lambda q: frame,
        psi=lambda g, v: np.asarray(v, float)[n:],
        left_frame=lambda g: frame,
        d_source=lambda g: np.hstack([np.eye(n), np.zeros((n, n))]),
        sample_arrow=sample_arrow,
    )
    return InstanceBundle("pair", "groupoid", gpd, SodeField(ag, gamma),
                          "pair groupoid over a box; algebroid is the tangent bundle")


def _lie_algebra_chart() -> ChartBox:
    return ChartBox((), (), ())


def _build_so2(params) -> InstanceBundle:
    base = _lie_algebra_chart()
    zero = ScalarField.constant(0.0, ())
    ag = AlgebroidModel(base, 1, (), (((zero,),),))
    gamma_src = str(params.get("gamma", "0"))
    sode = SodeField(ag, (ScalarField.parse(gamma_src, ag.coord_names),))
    element = ChartBox(("g1",), (-3.0,), (3.0,))

    gpd = GroupoidModel(
        name="so2",
        element_chart=element,
        algebroid=ag,
        source=lambda g: np.zeros(0),
        target=lambda g: np.zeros(0),
        identity=lambda q: np.zeros(1),
        inverse=lambda g: -np.asarray(g, float),
        multiply=lambda g, h: np.asarray(g, float) + np.asarray(h, float),
        ag_frame=lambda q: np.eye(1),
        psi=lambda g, v: np.asarray(v, float).copy(),
        left_frame=lambda g: np.eye(1),
        d_source=lambda g: np.zeros((0, 1)),
        sample_arrow=lambda rng, q=None: rng.uniform(-0.9, 0.9, size=1),
    )
    return InstanceBundle("so2", "groupoid", gpd, sode,
                          "rotation group in a 1-parameter chart")


def _build_gpi_r3(params) -> InstanceBundle:
    ag = _vertical_r3_algebroid(params)
    half = float(params.get("half_width", 5.0))
    f1 = str(params.get("f1", "0"))
    f2 = str(params.get("f2", "0"))
    sode = SodeField(ag, (ScalarField.parse(f1, ag.coord_names),
                          ScalarField.parse(f2, ag.coord_names)))
    element = ChartBox.cube(5, half, prefix="g")
    frame = np.vstack([np.zeros((3, 2)), np.eye(2)])

    def sample_arrow(rng, q=None):
        if q is None:
            q = ag.base.sample(rng, 1)[0]
        tail = sample_box(rng, [-half * 0.95] * 2, [half * 0.95] * 2, 1)[0]
        return np.concatenate([q, tail])

    gpd = GroupoidModel(
        name="gpi_r3",
        element_chart=element,
        algebroid=ag,
        source=lambda g: np.asarray(g, float)[:3],
        target=lambda g: np.asarray(g, float)[[0, 3, 4]],
        identity=lambda q: np.asarray(q, float)[[0, 1, 2, 1, 2]],
        inverse=lambda g: np.asarray(g, float)[[0, 3, 4, 1, 2]],
        multiply=lambda g, h: np.concatenate([np.asarray(g, float)[:3],
                                              np.asarray(h, float)[3:]]),
        ag_frame=lambda q: frame,
        psi=lambda g, v: np.asarray(v, float)[3:],
        left_frame=lambda g: frame,
        d_source=lambda g: np.hstack([np.eye(3), np.zeros((3, 2))]),
        sample_arrow=sample_arrow,
    )
    return InstanceBundle("gpi_r3", "groupoid", gpd, sode,
                          "groupoid of pairs with equal projection, (x,a,b) -> x")


def _so3_structure():
    """C^alpha_{beta gamma} of so(3): the Levi-Civita symbol."""
    eps = np.zeros((3, 3, 3))
    for (i, j, k), s in (((0, 1, 2), 1.0), ((1, 2, 0), 1.0), ((2, 0, 1), 1.0),
                         ((0, 2, 1), -1.0), ((2, 1, 0), -1.0), ((1, 0, 2), -1.0)):
        eps[k, i, j] = s  # C^k_{ij} = epsilon_{ijk}
    return tuple(tuple(tuple(ScalarField.constant(eps[a, b, g], ())
                             for g in range(3)) for b in range(3))
                 for a in range(3))


def _inertia_matrix(params) -> np.ndarray:
    raw = params.get("inertia", (1.0, 2.0, 3.0))
    arr = np.asarray(raw, float)
    I = np.diag(arr) if arr.ndim == 1 else arr
    if I.shape != (3, 3) or not np.allclose(I, I.T, atol=1e-12):
        raise ConfigError("inertia must be a length-3 diagonal or symmetric 3x3")
    if np.any(np.linalg.eigvalsh(I) <= 0):
        raise ConfigError("inertia must be positive definite")
    return I


def rigid_body_acc(I: np.ndarray, xi) -> np.ndarray:
    """Euler's equations: acceleration I^-1 (I xi x xi)."""
    xi = np.asarray(xi, float)
    return np.linalg.solve(I, np.cross(I @ xi, xi))


def _build_so3(params) -> InstanceBundle:
    I = _inertia_matrix(params)
    spray = str(params.get("spray", "rigid"))
    base = _lie_algebra_chart()
    ag = AlgebroidModel(base, 3, (), _so3_structure())
    if spray == "free":
        sode = spray_from_coefficients(ag, _zero_coeffs(3))
    elif spray == "rigid":
        # symmetrized coefficients of xi -> I^-1 (I xi x xi)
        e = np.eye(3)
        coeffs = []
        for a in range(3):
            rows = []
            for b in range(3):
                row = []
                for g in range(3):
                    val = 0.5 * (rigid_body_acc(I, e[b] + e[g])
                                 - rigid_body_acc(I, e[b])
                                 - rigid_body_acc(I, e[g]))[a]
                    row.append(ScalarField.constant(float(val), ()))
                rows.append(tuple(row))
            coeffs.append(tuple(rows))
        sode = spray_from_coefficients(ag, tuple(coeffs))
    else:
        raise ConfigError(f"unknown spray {spray!r} (use 'rigid' or 'free')")

    element = ChartBox.cube(3, SO3_CHART_HALF_WIDTH, prefix="g")

    def multiply(g, h):
        return so3_log(so3_exp(g) @ so3_exp(h))

    gpd = GroupoidModel(
        name="so3_rigid_body",
        element_chart=element,
        algebroid=ag,
        source=lambda g: np.zeros(0),
        target=lambda g: np.zeros(0),
        identity=lambda q: np.zeros(3),
        inverse=lambda g: -np.asarray(g, float),
        multiply=multiply,
        ag_frame=lambda q: np.eye(3),
        psi=lambda g, v: so3_right_jacobian(g) @ np.asarray(v, float),
        left_frame=lambda g: np.linalg.inv(so3_right_jacobian(g)),
        d_source=lambda g: np.zeros((0, 3)),
        sample_arrow=lambda rng, q=None: rng.uniform(-0.5, 0.5, size=3),
    )
    bundle = InstanceBundle("so3_rigid_body", "groupoid", gpd, sode,
                            "rotation group in exponential coordinates; "
                            "rigid-body or free spray on its algebra")
    bundle.inertia = I
    return bundle


_REGISTRY = {
    "euclidean": _build_euclidean,
    "harmonic": _build_harmonic,
    "pendulum": _build_pendulum,
    "sphere_chart": _build_sphere_chart,
    "fibration_r3": _build_fibration_r3,
    "pair": _build_pair,
    "so2": _build_so2,
    "gpi_r3": _build_gpi_r3,
    "so3_rigid_body": _build_so3,
}


def list_instances() -> list[str]:
    return sorted(_REGISTRY)


def build_model(spec: InstanceSpec) -> InstanceBundle:
    """Build a registry instance; unknown names and bad params raise
    ConfigError."""
    if spec.name not in _REGISTRY:
        raise ConfigError(
            f"unknown instance {spec.name!r}; known: {', '.join(list_instances())}")
    return _REGISTRY[spec.name](dict(spec.params))


def get(name: str, **params) -> InstanceBundle:
    return build_model(InstanceSpec(name, params))
