"""Invariant suite behind the `verify` CLI command.

Each check returns a measured defect and the bound it must stay under;
bounds follow the per-type contracts (groupoid axioms at 1e-10 on 100
seeded samples, morphism-relatedness at 1e-6, admissibility at 1e-9 on a
uniformly resampled flow, and so on).  Sample counts are chosen so a full
run over the registry stays interactive; the acceptance tests re-run the
heavyweight versions at their stated counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebroid import (
    admissibility_defect, flow, flow_end, homogeneity_defect,
)
from .expmap import (
    exp_mid, exp_pair, fibration_exp, retraction_pair, variational_jacobian,
    exp_point,
)
from .groupoid import (
    VerticalVector, groupoid_anchor_check, groupoid_axiom_defects,
    left_frame_at, lift_sode, psi_apply, psi_defect,
)
from .instances import InstanceBundle, build_model, InstanceSpec, list_instances
from .numerics import IntegratorConfig, NewtonConfig, fd_jacobian, seeded_rng

_ICFG = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)
_NCFG = NewtonConfig(residual_tol=1e-10)


@dataclass
class CheckResult:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound


def _tangent_samples(bundle, rng, count):
    n = bundle.algebroid.n
    q0s = rng.uniform(-0.3, 0.3, size=(count, n))
    vs = rng.uniform(-0.8, 0.8, size=(count, n))
    return q0s, vs


def _check_structure(bundle: InstanceBundle, out: list):
    model = bundle.algebroid
    out.append(CheckResult("structure-antisymmetry",
                           model.structure_antisymmetry_defect(20, seed=0), 0.0))
    if model.has_constant_structure() and model.has_zero_anchor():
        out.append(CheckResult("jacobi-identity", model.jacobi_defect(), 0.0))
    if bundle.sode is not None and bundle.sode.is_declared_quadratic():
        out.append(CheckResult("spray-homogeneity",
                               homogeneity_defect(bundle.sode, 100, seed=0), 1e-12))


def _check_admissibility(bundle: InstanceBundle, out: list, q0, y0, t=1.0):
    traj = flow(bundle.sode, q0, y0, t, _ICFG, sample_dt=5e-3)
    if not traj.completed:
        out.append(CheckResult("admissibility (flow completed)", 1.0, 0.0))
        return
    out.append(CheckResult("admissibility",
                           admissibility_defect(bundle.algebroid, traj), 1e-9))


def _check_tangent_pipeline(bundle: InstanceBundle, out: list, seed: int):
    rng = seeded_rng(seed)
    sode = bundle.sode
    h = 0.4
    q0s, vs = _tangent_samples(bundle, rng, 10)
    worst_rt = worst_comm = worst_mid = 0.0
    for q0, v in zip(q0s, vs):
        start, end = exp_pair(sode, h, q0, v, _ICFG)
        pair = retraction_pair(sode, h, start, end, _NCFG, _ICFG)
        worst_rt = max(worst_rt, float(np.max(np.abs(pair.minus - v))))
        _, y_end = flow_end(sode, start, pair.minus, h, _ICFG)
        worst_comm = max(worst_comm, float(np.max(np.abs(pair.plus - y_end))))
        mid = exp_mid(sode, h, q0, v, _ICFG)
        qb, yb = flow_end(sode, q0, v, -h / 2, _ICFG)
        ref = exp_pair(sode, h, qb, yb, _ICFG)
        worst_mid = max(worst_mid,
                        float(np.max(np.abs(np.concatenate(mid)
                                            - np.concatenate(ref)))))
    out.append(CheckResult("retraction-round-trip", worst_rt, 1e-7))
    out.append(CheckResult("commuting-diagram", worst_comm, 1e-9))
    out.append(CheckResult("midpoint-identity", worst_mid, 1e-9))

    q0, v = q0s[0], vs[0]
    U = variational_jacobian(sode, 0.5, q0, v, _ICFG)
    J = fd_jacobian(lambda w: exp_point(sode, 0.5, q0, w, _ICFG), v, step=5e-4)
    rel = float(np.linalg.norm(U - J) / max(1.0, np.linalg.norm(U)))
    out.append(CheckResult("variational-vs-fd-jacobian", rel, 1e-5))


def _check_fibration(bundle: InstanceBundle, out: list, seed: int):
    rng = seeded_rng(seed)
    worst_drift = worst_pi = 0.0
    for _ in range(10):
        q0 = rng.uniform(-0.5, 0.5, 3)
        y0 = rng.uniform(-0.5, 0.5, 2)
        traj = flow(bundle.sode, q0, y0, 2.0, _ICFG)
        worst_drift = max(worst_drift,
                          float(np.max(np.abs(traj.qs[:, 0] - q0[0]))))
        start, end = fibration_exp(bundle.model, bundle.sode, 1.0, q0, y0, _ICFG)
        worst_pi = max(worst_pi, float(np.max(np.abs(
            np.asarray(bundle.model.projection(end))
            - np.asarray(bundle.model.projection(start))))))
    out.append(CheckResult("frozen-base-coordinates", worst_drift, 1e-10))
    out.append(CheckResult("projection-equality", worst_pi, 1e-10))
    _check_admissibility(bundle, out, [0.2, 0.1, -0.1], [0.3, -0.2])


def _check_groupoid(bundle: InstanceBundle, out: list, seed: int):
    gpd = bundle.model
    defects = groupoid_axiom_defects(gpd, samples=100, seed=seed)
    out.append(CheckResult("groupoid-axioms", max(defects.values()), 1e-10))
    out.append(CheckResult("associativity", defects["associativity"], 1e-10))

    rng = seeded_rng(seed)
    q = gpd.base_chart.sample(rng, 1)[0]
    e = np.asarray(gpd.identity(q), float)
    E = np.asarray(gpd.ag_frame(q), float)
    M = np.column_stack([psi_apply(gpd, VerticalVector(e, E[:, a]))
                         for a in range(gpd.k)])
    out.append(CheckResult("psi-identity-at-identities",
                           float(np.max(np.abs(M - np.eye(gpd.k)))), 1e-12))
    out.append(CheckResult("anchor-vs-target-tangent",
                           groupoid_anchor_check(gpd, 50, seed=seed), 1e-7))

    lifted = lift_sode(gpd, bundle.sode)
    out.append(CheckResult("lift-relatedness (psi defect)",
                           psi_defect(gpd, lifted, bundle.sode, 50, seed), 1e-6))
    aux = lambda g, v: 0.25 * v
    other = lift_sode(gpd, bundle.sode, aux_acc=aux)
    worst_base = worst_aux = 0.0
    for _ in range(50):
        g = gpd.element_chart.sample(rng, 1, shrink=0.2)[0]
        v = left_frame_at(gpd, g) @ rng.uniform(-1, 1, gpd.k)
        gdot, acc1 = lifted.rhs(g, v)
        _, acc2 = other.rhs(g, v)
        worst_base = max(worst_base, float(np.max(np.abs(gdot - v))))
        worst_aux = max(worst_aux, float(np.max(np.abs(acc1 - acc2))))
    out.append(CheckResult("lift-is-sode (base part)", worst_base, 1e-10))
    out.append(CheckResult("lift-unique-across-aux", worst_aux, 1e-8))


def verify_instance(name: str, params: dict | None = None,
                    seed: int = 0) -> list[CheckResult]:
    """Run the invariant suite appropriate to the instance's type."""
    bundle = build_model(InstanceSpec(name, params or {}))
    out: list[CheckResult] = []
    _check_structure(bundle, out)
    if bundle.kind == "algebroid":
        n = bundle.algebroid.n
        _check_admissibility(bundle, out, [0.1] * n, [0.4] * n)
        _check_tangent_pipeline(bundle, out, seed)
    elif bundle.kind == "fibration":
        _check_fibration(bundle, out, seed)
    else:
        _check_groupoid(bundle, out, seed)
    return out


def verify_all(seed: int = 0) -> dict[str, list[CheckResult]]:
    return {name: verify_instance(name, seed=seed) for name in list_instances()}
