import dataclasses
import math

import numpy as np
import pytest

from algsode.errors import (
    NotComposableError, NotVerticalError, PsiSingularError,
)
from algsode.groupoid import (
    VerticalVector, groupoid_anchor_check, groupoid_axiom_defects,
    left_frame_at, left_translate, lift_sode, psi_apply, psi_components,
    psi_defect, source_vertical_defect,
)
from algsode.instances import get, so3_exp, so3_log
from algsode.numerics import seeded_rng


def strip_closed_forms(gpd):
    """The same groupoid with only structural maps: forces the generic
    finite-difference tangent machinery."""
    return dataclasses.replace(gpd, psi=None, left_frame=None, d_source=None)


# --- left_translate ---------------------------------------------------------------

def test_left_translate_pair():
    gpd = get("pair").model
    out = left_translate(gpd, [0.0, 1.0], [1.0, 5.0])
    assert np.allclose(out, [0.0, 5.0])


def test_left_translate_identity_is_identity():
    gpd = get("pair").model
    e = gpd.identity(np.array([1.0]))
    h = np.array([1.0, 4.0])  # source q = 1
    assert np.allclose(left_translate(gpd, e, h), h)


def test_left_translate_so2_adds_angles():
    gpd = get("so2").model
    out = left_translate(gpd, [0.3], [0.5])
    assert out[0] == pytest.approx(0.8)  # rotation composition


def test_left_translate_rejects_non_composable():
    gpd = get("pair").model
    with pytest.raises(NotComposableError):
        left_translate(gpd, [0.0, 1.0], [2.0, 3.0])


# --- psi ---------------------------------------------------------------------------

def test_psi_identity_at_identities():
    for name in ("pair", "so3_rigid_body", "gpi_r3", "so2"):
        gpd = get(name).model
        q = gpd.base_chart.sample(seeded_rng(0), 1)[0]
        e = np.asarray(gpd.identity(q), float)
        E = np.asarray(gpd.ag_frame(q), float)
        M = np.column_stack([
            psi_apply(gpd, VerticalVector(e, E[:, a])) for a in range(gpd.k)])
        assert np.allclose(M, np.eye(gpd.k), atol=1e-12), name


def test_psi_pair_carries_second_slot():
    gpd = get("pair").model
    a = psi_apply(gpd, VerticalVector(np.array([0.4, -0.7]), np.array([0.0, 2.5])))
    assert np.allclose(a, [2.5])


def test_psi_so3_body_velocity_matrix_oracle():
    # tangent vector with matrix representative R(theta) xi^ maps to xi
    gpd = get("so3_rigid_body").model
    theta = np.array([0.4, -0.2, 0.7])
    xi = np.array([0.3, 0.1, -0.5])
    R = so3_exp(theta)
    eps = 1e-7
    v = (so3_log(R @ so3_exp(eps * xi)) - so3_log(R @ so3_exp(-eps * xi))) / (2 * eps)
    a = psi_apply(gpd, VerticalVector(theta, v))
    assert np.allclose(a, xi, atol=1e-7)


def test_psi_rejects_non_vertical():
    gpd = get("pair").model
    with pytest.raises(NotVerticalError):
        psi_apply(gpd, VerticalVector(np.array([0.0, 0.0]), np.array([1.0, 0.0])))


def test_vertical_defect_fd_matches_closed_form():
    gpd = get("gpi_r3").model
    bare = strip_closed_forms(gpd)
    g = np.array([0.2, 0.3, -0.1, 0.5, 0.4])
    v_vert = np.array([0.0, 0.0, 0.0, 1.0, -2.0])
    v_bad = np.array([0.3, 0.0, 0.0, 1.0, 0.0])
    assert source_vertical_defect(bare, g, v_vert) <= 1e-9
    assert source_vertical_defect(bare, g, v_bad) >= 0.29


def test_generic_fd_psi_matches_closed_forms():
    rng = seeded_rng(5)
    for name, tol in (("pair", 1e-9), ("gpi_r3", 1e-9), ("so3_rigid_body", 1e-6)):
        gpd = get(name).model
        bare = strip_closed_forms(gpd)
        for _ in range(5):
            g = gpd.element_chart.sample(rng, 1, shrink=0.2)[0]
            y = rng.uniform(-1, 1, size=gpd.k)
            v = left_frame_at(gpd, g) @ y
            assert np.allclose(psi_components(bare, g, v),
                               psi_components(gpd, g, v), atol=tol), name
            assert np.allclose(left_frame_at(bare, g),
                               left_frame_at(gpd, g), atol=tol), name


# --- lifting -----------------------------------------------------------------------

def test_lift_pair_freezes_first_slot():
    bundle = get("pair", gamma="-q1")
    lifted = lift_sode(bundle.model, bundle.sode)
    g = np.array([0.3, 0.8])
    v = np.array([0.0, 1.7])
    gdot, vdot = lifted.rhs(g, v)
    assert np.allclose(gdot, v)
    assert abs(vdot[0]) <= 1e-12
    assert vdot[1] == pytest.approx(-0.8, abs=1e-10)  # original field at slot 2


def test_lift_is_sode_on_vertical_bundle():
    # base-velocity part of the lifted field is the state's vector itself
    bundle = get("so3_rigid_body")
    lifted = lift_sode(bundle.model, bundle.sode)
    rng = seeded_rng(7)
    for _ in range(20):
        g = bundle.model.element_chart.sample(rng, 1, shrink=0.2)[0]
        v = left_frame_at(bundle.model, g) @ rng.uniform(-1, 1, 3)
        gdot, _ = lifted.rhs(g, v)
        assert np.max(np.abs(gdot - v)) <= 1e-10


def test_lift_unique_across_auxiliary_choices():
    rng = seeded_rng(11)
    for name, aux in (
        ("pair", lambda g, v: np.array([0.0, -1.3 * v[1] + 0.4])),
        ("so3_rigid_body", lambda g, v: 0.3 * v + 0.1),
    ):
        bundle = get(name)
        base = lift_sode(bundle.model, bundle.sode)
        other = lift_sode(bundle.model, bundle.sode, aux_acc=aux)
        for _ in range(100):
            g = bundle.model.element_chart.sample(rng, 1, shrink=0.2)[0]
            v = left_frame_at(bundle.model, g) @ rng.uniform(-1, 1, bundle.model.k)
            _, a1 = base.rhs(g, v)
            _, a2 = other.rhs(g, v)
            assert np.max(np.abs(a1 - a2)) <= 1e-8, name


def test_psi_defect_small_for_true_lifts():
    for name in ("pair", "so3_rigid_body"):
        bundle = get(name, gamma="-q1") if name == "pair" else get(name)
        lifted = lift_sode(bundle.model, bundle.sode)
        d = psi_defect(bundle.model, lifted, bundle.sode, samples=100, seed=0)
        assert d <= 1e-6, f"{name}: defect {d}"


def test_psi_defect_flags_corrupted_lift():
    bundle = get("so3_rigid_body")  # rigid spray, eta != 0
    lifted = lift_sode(bundle.model, bundle.sode)

    class Corrupted:
        def rhs(self, g, v):
            return v.copy(), np.zeros_like(v)  # fiber term zeroed

        def packed_rhs(self):
            m = bundle.model.m

            def f(t, state):
                gdot, vdot = self.rhs(state[:m], state[m:])
                return np.concatenate([gdot, vdot])
            return f

    # scale: eta at the sampled states is O(1)
    rng = seeded_rng(0)
    etas = []
    for _ in range(100):
        g = bundle.model.element_chart.sample(rng, 1, shrink=0.15)[0]
        y = rng.uniform(-1, 1, 3)
        v = left_frame_at(bundle.model, g) @ y
        etas.append(np.linalg.norm(
            bundle.sode.gamma([], psi_components(bundle.model, g, v))))
    d = psi_defect(bundle.model, Corrupted(), bundle.sode, samples=100, seed=0)
    assert d >= 0.1 * max(etas)


def test_lift_detects_singular_psi():
    bundle = get("pair")
    broken = dataclasses.replace(bundle.model,
                                 psi=lambda g, v: np.zeros(1),
                                 left_frame=None)
    with pytest.raises(PsiSingularError):
        lift_sode(broken, bundle.sode)


# --- anchor relation and axioms -------------------------------------------------------

def test_groupoid_anchor_pair_identity():
    assert groupoid_anchor_check(get("pair").model, 100, seed=0) <= 1e-7


def test_groupoid_anchor_lie_group_zero():
    assert groupoid_anchor_check(get("so3_rigid_body").model, 10, seed=0) == 0.0


def test_groupoid_anchor_fibration_inclusion():
    assert groupoid_anchor_check(get("gpi_r3").model, 100, seed=0) <= 1e-7


@pytest.mark.parametrize("name", ["pair", "so2", "gpi_r3", "so3_rigid_body"])
def test_groupoid_axioms(name):
    defects = groupoid_axiom_defects(get(name).model, samples=100, seed=0)
    for key, val in defects.items():
        assert val <= 1e-10, f"{name}: {key} = {val}"
