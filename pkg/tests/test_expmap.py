import math

import numpy as np
import pytest

from algsode.algebroid import flow, flow_end
from algsode.errors import (
    BoxTooLargeError, HTooSmallError, LeftDomainError, NoConvergenceError,
    NotQuadraticError, SingularJacobianError,
)
from algsode.expmap import (
    CertificateConfig, bvp_shoot, exp_mid, exp_one, exp_pair, exp_point,
    fibration_exp, groupoid_bvp, groupoid_exp, groupoid_flow,
    groupoid_zero_section_jacobian, h0_certificate, retraction_pair,
    variational_jacobian, zero_section_jacobian,
)
from algsode.groupoid import left_frame_at, lift_sode, psi_components
from algsode.instances import get, so3_exp
from algsode.numerics import IntegratorConfig, NewtonConfig, fd_jacobian, seeded_rng

TIGHT = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)
TOL10 = IntegratorConfig(abs_tol=1e-10, rel_tol=1e-10)


def expm_series(A, terms=40):
    """Matrix exponential by truncated series (independent oracle)."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for n in range(1, terms):
        term = term @ A / n
        out = out + term
    return out


# --- exponential maps -----------------------------------------------------------

def test_exp_point_h_zero_is_constant():
    assert exp_point(get("harmonic").sode, 0.0, [0.3], [5.0])[0] == 0.3


def test_exp_point_euclidean():
    assert exp_point(get("euclidean").sode, 0.5, [0.0], [2.0])[0] == pytest.approx(1.0, abs=1e-12)


def test_exp_point_harmonic_closed_form():
    # q(t) = v sin t
    q = exp_point(get("harmonic").sode, math.pi / 6, [0.0], [2.0], TIGHT)
    assert abs(q[0] - 1.0) <= 1e-8
    with pytest.raises(LeftDomainError):
        exp_point(get("harmonic", half_width=1.5).sode, 2.0, [0.0], [2.0])


def test_exp_pair():
    start, end = exp_pair(get("euclidean").sode, 0.5, [0.0], [2.0])
    assert start[0] == 0.0 and end[0] == pytest.approx(1.0, abs=1e-12)
    start, end = exp_pair(get("harmonic").sode, math.pi / 6, [0.0], [2.0], TIGHT)
    assert abs(end[0] - 1.0) <= 1e-8
    start, end = exp_pair(get("harmonic").sode, 0.0, [0.7], [2.0])
    assert start[0] == 0.7 and end[0] == 0.7


def test_exp_mid():
    left, right = exp_mid(get("euclidean").sode, 1.0, [0.0], [2.0])
    assert left[0] == pytest.approx(-1.0, abs=1e-12)
    assert right[0] == pytest.approx(1.0, abs=1e-12)
    left, right = exp_mid(get("harmonic").sode, math.pi / 3, [0.0], [2.0], TIGHT)
    assert abs(left[0] + 1.0) <= 1e-8 and abs(right[0] - 1.0) <= 1e-8
    left, right = exp_mid(get("harmonic").sode, 0.0, [0.4], [2.0])
    assert left[0] == 0.4 and right[0] == 0.4


def test_midpoint_composition_identity():
    # midpoint pair equals the plain pair after flowing backward by h/2
    sode = get("pendulum").sode
    h, q0, v = 0.8, [0.3], [0.7]
    mid = exp_mid(sode, h, q0, v, TIGHT)
    qb, yb = flow_end(sode, q0, v, -h / 2, TIGHT)
    pair = exp_pair(sode, h, qb, yb, TIGHT)
    assert abs(mid[0][0] - pair[0][0]) <= 1e-9
    assert abs(mid[1][0] - pair[1][0]) <= 1e-9


# --- variational Jacobian ----------------------------------------------------------

def test_variational_euclidean_linear():
    U = variational_jacobian(get("euclidean").sode, 0.7, [0.0], [1.0])
    assert U[0, 0] == pytest.approx(0.7, abs=1e-12)


def test_variational_harmonic_sine():
    U = variational_jacobian(get("harmonic").sode, math.pi / 2, [0.0], [0.5], TOL10)
    assert abs(U[0, 0] - 1.0) <= 1e-8


def test_variational_small_time_identity():
    for name in ("harmonic", "sphere_chart"):
        sode = get(name).sode
        q0 = [0.1] * sode.model.n
        v = [0.4] * sode.model.k
        U = variational_jacobian(sode, 1e-4, q0, v, TIGHT)
        assert np.max(np.abs(U / 1e-4 - np.eye(sode.model.k))) <= 1e-3


@pytest.mark.parametrize("name,h", [("harmonic", 0.5), ("pendulum", 1.0),
                                    ("sphere_chart", 0.5)])
def test_variational_matches_fd_jacobian(name, h):
    sode = get(name).sode
    q0 = np.array([0.2] * sode.model.n)
    v = np.array([0.5, -0.3][: sode.model.k])
    U = variational_jacobian(sode, h, q0, v, TOL10)
    J = fd_jacobian(lambda w: exp_point(sode, h, q0, w, TOL10), v, step=5e-4)
    rel = np.linalg.norm(U - J) / max(1.0, np.linalg.norm(U))
    assert rel <= 1e-5


# --- shooting -----------------------------------------------------------------------

def test_bvp_euclidean_exact():
    sol = bvp_shoot(get("euclidean").sode, 0.5, [0.0], [1.0])
    assert sol.v[0] == pytest.approx(2.0, abs=1e-12)
    assert sol.iterations == 0  # the secant guess already solves it


def test_bvp_harmonic_closed_form():
    sol = bvp_shoot(get("harmonic").sode, math.pi / 6, [0.0], [1.0], None,
                    NewtonConfig(residual_tol=1e-10), TOL10)
    assert abs(sol.v[0] - 2.0) <= 1e-8


def test_bvp_harmonic_loop_tangent():
    # loop through q = 1: q(t) = cos t + tan(h/2) sin t returns at t = h
    h = 0.5
    sol = bvp_shoot(get("harmonic").sode, h, [1.0], [1.0], None,
                    NewtonConfig(residual_tol=1e-10), TOL10)
    assert abs(sol.v[0] - math.tan(h / 2)) <= 1e-8


def test_bvp_finite_difference_mode():
    sol = bvp_shoot(get("pendulum").sode, 0.7, [0.2], [0.5], None,
                    NewtonConfig(jacobian_mode="finite-difference",
                                 residual_tol=1e-9), TOL10)
    q = exp_point(get("pendulum").sode, 0.7, [0.2], sol.v, TOL10)
    assert abs(q[0] - 0.5) <= 1e-8


def test_bvp_singular_at_conjugate_time():
    # U(pi) = sin(pi) = 0 for the oscillator: loop shooting at h = pi is singular
    with pytest.raises((SingularJacobianError, NoConvergenceError)):
        bvp_shoot(get("harmonic").sode, math.pi, [0.0], [0.5], None, None, TOL10)


def test_bvp_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        bvp_shoot(get("harmonic").sode, 0.0, [0.0], [1.0])


# --- retraction pairs -----------------------------------------------------------------

def test_retraction_euclidean():
    pair = retraction_pair(get("euclidean").sode, 0.5, [0.0], [1.0])
    assert pair.minus[0] == pytest.approx(2.0, abs=1e-12)
    assert pair.plus[0] == pytest.approx(2.0, abs=1e-12)


def test_retraction_harmonic():
    pair = retraction_pair(get("harmonic").sode, math.pi / 6, [0.0], [1.0],
                           NewtonConfig(residual_tol=1e-10), TOL10)
    assert abs(pair.minus[0] - 2.0) <= 1e-8
    assert abs(pair.plus[0] - math.sqrt(3.0)) <= 1e-8  # v cos h


def test_retraction_h_too_small():
    with pytest.raises(HTooSmallError):
        retraction_pair(get("euclidean").sode, 0.0, [0.0], [1.0])


def test_round_trip_small_sample():
    sode = get("pendulum").sode
    rng = seeded_rng(1)
    h = 0.4
    for _ in range(10):
        q0 = rng.uniform(-0.5, 0.5, 1)
        v = rng.uniform(-1.0, 1.0, 1)
        start, end = exp_pair(sode, h, q0, v, TOL10)
        pair = retraction_pair(sode, h, start, end,
                               NewtonConfig(residual_tol=1e-10), TOL10)
        assert abs(pair.minus[0] - v[0]) <= 1e-7
        # commuting diagram: plus is the time-h flow of minus
        _, yend = flow_end(sode, start, pair.minus, h, TOL10)
        assert abs(pair.plus[0] - yend[0]) <= 1e-9


def test_nonsingular_exponential_where_variational_is():
    # full-pair Jacobian is nonsingular wherever det U(h) is away from zero
    sode = get("harmonic").sode
    h = 1.2
    U = variational_jacobian(sode, h, [0.1], [0.6], TOL10)
    assert abs(np.linalg.det(U)) > 1e-8

    def full(z):
        start, end = exp_pair(sode, h, z[:1], z[1:], TOL10)
        return np.concatenate([start, end])

    J = fd_jacobian(full, np.array([0.1, 0.6]), step=1e-5)
    assert abs(np.linalg.det(J)) > 1e-10


# --- h0 certificates ---------------------------------------------------------------------

def test_h0_euclidean_capped():
    cert = h0_certificate(get("euclidean").sode, [0.0], 1.0, 2.0)
    assert cert.C == 0.0 and cert.M == 0.0
    assert cert.h0 == CertificateConfig().h_max
    assert all(math.isinf(b) for b in cert.bounds)


def test_h0_harmonic_closed_form():
    cfg = CertificateConfig()
    cert = h0_certificate(get("harmonic").sode, [0.0], 1.0, 2.0, margin=0.01, cfg=cfg)
    # exact maxima on the box: C = 1, Cdot = 0, M = 1 (grid hits the corners)
    assert cert.C == pytest.approx(cfg.inflation, abs=1e-12)
    assert cert.Cdot == 0.0
    assert cert.M == pytest.approx(cfg.inflation, abs=1e-12)
    expected = 0.99 * math.sqrt(8.0 / cfg.inflation)
    assert cert.h0 == pytest.approx(expected, rel=1e-12)
    # within 1% of the uninflated closed form
    assert abs(cert.h0 - 0.99 * 2 * math.sqrt(2)) <= 0.01 * 0.99 * 2 * math.sqrt(2)


def test_h0_pendulum_closed_form():
    cfg = CertificateConfig()
    cert = h0_certificate(get("pendulum").sode, [0.0], 0.5, 0.3, margin=0.01, cfg=cfg)
    # monotone acceleration: M = sin(1/2) at the corner, C = cos(0) = 1
    assert cert.M == pytest.approx(cfg.inflation * math.sin(0.5), abs=1e-12)
    assert cert.C == pytest.approx(cfg.inflation, abs=1e-12)
    expected = 0.99 * 2.0 * 0.3 / (cfg.inflation * math.sin(0.5))
    assert cert.h0 == pytest.approx(expected, rel=1e-12)
    assert abs(cert.h0 - 1.239) <= 0.02 * 1.239


def test_h0_box_too_large():
    with pytest.raises(BoxTooLargeError):
        h0_certificate(get("harmonic").sode, [0.0], 20.0, 1.0)


def test_h0_invariants_recorded():
    cert = h0_certificate(get("pendulum").sode, [0.0], 0.5, 0.3)
    assert cert.C * cert.h0 ** 2 / 8 + cert.Cdot * cert.h0 / 2 < 1.0
    assert cert.M * cert.h0 ** 2 / 8 <= cert.R
    assert cert.M * cert.h0 / 2 <= cert.Rdot
    assert cert.report.n_grid == 11 ** 2 and cert.report.n_random == 1000


# --- fibration ---------------------------------------------------------------------------

def test_fibration_free_vertical_motion():
    bundle = get("fibration_r3")
    start, end = fibration_exp(bundle.model, bundle.sode, 1.0,
                               [0.0, 0.0, 0.0], [1.0, 0.0])
    assert np.allclose(start, [0.0, 0.0, 0.0])
    assert np.allclose(end, [0.0, 1.0, 0.0], atol=1e-12)


def test_fibration_position_dependent_force():
    # fiber force -(1 + x^2) q^alpha; at x = 0 the fiber motion is the unit
    # oscillator: a(t) = a0 cos t + va0 sin t
    bundle = get("fibration_r3", f1="-(1+q1^2)*q2", f2="-(1+q1^2)*q3")
    h = 0.9
    start, end = fibration_exp(bundle.model, bundle.sode, h,
                               [0.0, 0.4, -0.2], [0.3, 0.5], TIGHT)
    assert end[0] == start[0]
    assert abs(end[1] - (0.4 * math.cos(h) + 0.3 * math.sin(h))) <= 1e-8
    assert abs(end[2] - (-0.2 * math.cos(h) + 0.5 * math.sin(h))) <= 1e-8


def test_fibration_h_zero():
    bundle = get("fibration_r3")
    start, end = fibration_exp(bundle.model, bundle.sode, 0.0,
                               [0.1, 0.2, 0.3], [1.0, 1.0])
    assert np.allclose(start, end)


# --- groupoid exponential ------------------------------------------------------------------

def test_groupoid_exp_h_zero_is_identity():
    bundle = get("pair")
    g = groupoid_exp(bundle.model, bundle.sode, 0.0, [0.4], [2.0])
    assert np.allclose(g, [0.4, 0.4])


def test_groupoid_exp_pair_reduces_to_exp_pair():
    bundle = get("pair")  # zero spray on the tangent algebroid
    g = groupoid_exp(bundle.model, bundle.sode, 0.5, [0.0], [2.0])
    assert np.allclose(g, [0.0, 1.0], atol=1e-10)
    start, end = exp_pair(get("euclidean").sode, 0.5, [0.0], [2.0])
    assert np.allclose(g, [start[0], end[0]], atol=1e-10)


def test_groupoid_exp_so3_quarter_turn():
    bundle = get("so3_rigid_body", spray="free")
    theta = groupoid_exp(bundle.model, bundle.sode, 1.0, [], [0.0, 0.0, math.pi / 2],
                         TOL10)
    R = so3_exp(theta)
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.max(np.abs(R - expected)) <= 1e-8


def test_groupoid_flow_matches_matrix_exponential():
    # free spray: the element curve is g0 * exp(t xi) (series oracle)
    bundle = get("so3_rigid_body", spray="free")
    gpd = bundle.model
    lifted = lift_sode(gpd, bundle.sode)
    theta0 = np.array([0.3, -0.2, 0.4])
    xi = np.array([0.2, 0.5, -0.1])
    v0 = left_frame_at(gpd, theta0) @ xi
    gtraj = groupoid_flow(gpd, lifted, theta0, v0, 1.0, TOL10)
    assert gtraj.completed
    from algsode.instances import hat, so3_log
    expected = so3_log(so3_exp(theta0) @ expm_series(hat(xi)))
    assert np.max(np.abs(gtraj.gs[-1] - expected)) <= 1e-8


def test_groupoid_exp_source_stays_fixed():
    bundle = get("gpi_r3", f1="-q2", f2="-q3")
    gpd = bundle.model
    lifted = lift_sode(gpd, bundle.sode)
    q = np.array([0.3, 0.1, -0.2])
    v0 = np.asarray(gpd.ag_frame(q), float) @ np.array([0.4, -0.1])
    gtraj = groupoid_flow(gpd, lifted, np.asarray(gpd.identity(q), float), v0,
                          1.5, TOL10, sample_dt=0.05)
    assert gtraj.completed
    for g in gtraj.gs:
        assert np.max(np.abs(np.asarray(gpd.source(g)) - q)) <= 1e-10


def test_groupoid_exp_left_domain():
    bundle = get("so3_rigid_body", spray="free")
    with pytest.raises(LeftDomainError):
        groupoid_exp(bundle.model, bundle.sode, 1.0, [], [0.0, 0.0, 2.5], TOL10)


# --- groupoid BVP -------------------------------------------------------------------------

def test_groupoid_bvp_identity_element():
    # the loop at an identity has zero initial vector when the field
    # vanishes on the zero section (free spray) or at an equilibrium
    bundle = get("pair")  # zero spray
    gpd = bundle.model
    g = np.asarray(gpd.identity(np.array([0.5])), float)
    pair, path, base = groupoid_bvp(gpd, bundle.sode, 0.7, g,
                                    NewtonConfig(residual_tol=1e-9), TOL10)
    assert np.max(np.abs(pair.minus)) <= 1e-8
    assert np.max(np.abs(path.fibers)) <= 1e-7
    assert np.max(np.abs(base.qs - 0.5)) <= 1e-7

    bundle = get("pair", gamma="-q1")
    g = np.asarray(bundle.model.identity(np.array([0.0])), float)
    pair, _, _ = groupoid_bvp(bundle.model, bundle.sode, 0.7, g,
                              NewtonConfig(residual_tol=1e-9), TOL10)
    assert np.max(np.abs(pair.minus)) <= 1e-8


def test_groupoid_bvp_so3_recovers_rotation_vector():
    bundle = get("so3_rigid_body", spray="free")
    g = np.array([0.0, 0.0, math.pi / 2])
    pair, path, base = groupoid_bvp(bundle.model, bundle.sode, 1.0, g,
                                    NewtonConfig(residual_tol=1e-9), TOL10)
    assert np.max(np.abs(pair.minus - g)) <= 1e-8
    # plus = time-h flow of minus on the algebroid (free: constant)
    assert np.max(np.abs(pair.plus - g)) <= 1e-8


def test_groupoid_bvp_pair_matches_standard_shooting():
    bundle = get("pair", gamma="-q1")
    h = math.pi / 6
    g = np.array([0.0, 1.0])
    pair, path, base = groupoid_bvp(bundle.model, bundle.sode, h, g,
                                    NewtonConfig(residual_tol=1e-9), TOL10)
    assert abs(pair.minus[0] - 2.0) <= 1e-8
    sol = bvp_shoot(get("harmonic").sode, h, [0.0], [1.0], None,
                    NewtonConfig(residual_tol=1e-10), TOL10)
    assert abs(pair.minus[0] - sol.v[0]) <= 1e-8
    # base trajectory runs from source(g) to target(g)
    assert abs(base.qs[0, 0] - 0.0) <= 1e-8
    assert abs(base.qs[-1, 0] - 1.0) <= 1e-8
    # commuting diagram against the independent algebroid flow
    _, a_end = flow_end(get("harmonic").sode, [0.0], pair.minus, h, TOL10)
    assert abs(pair.plus[0] - a_end[0]) <= 1e-9


def test_reparametrized_path_is_morphism_image_of_velocity():
    # unit-interval reparametrization: abar(s) = h a(sh) must equal the
    # morphism applied to d(sigma(sh))/ds, and the curve joins the identity to g
    bundle = get("pair", gamma="-q1")
    gpd = bundle.model
    h = math.pi / 6
    g = np.array([0.0, 1.0])
    pair, path, base = groupoid_bvp(gpd, bundle.sode, h, g,
                                    NewtonConfig(residual_tol=1e-9), TOL10)
    lifted = lift_sode(gpd, bundle.sode)
    e = np.asarray(gpd.identity(np.asarray(gpd.source(g), float)), float)
    E = np.asarray(gpd.ag_frame(np.asarray(gpd.source(g), float)), float)
    n_samples = 256
    gtraj = groupoid_flow(gpd, lifted, e, E @ pair.minus, h, TOL10,
                          sample_dt=h / n_samples)
    assert np.max(np.abs(gtraj.gs[0] - e)) <= 1e-8
    assert np.max(np.abs(gtraj.gs[-1] - g)) <= 1e-8
    ds = 1.0 / n_samples
    worst = 0.0
    for i in range(2, len(gtraj.ts) - 2, 16):
        dsigma = (-gtraj.gs[i + 2] + 8 * gtraj.gs[i + 1]
                  - 8 * gtraj.gs[i - 1] + gtraj.gs[i - 2]) / (12 * ds)
        abar = h * psi_components(gpd, gtraj.gs[i], gtraj.vs[i])
        through = psi_components(gpd, gtraj.gs[i], dsigma)
        worst = max(worst, float(np.max(np.abs(abar - through))))
    assert worst <= 1e-6


# --- quadratic specialization ----------------------------------------------------------------

def test_exp_one_zero_vector():
    start, end = exp_one(get("sphere_chart").sode, [0.3, -0.1], [0.0, 0.0])
    assert np.allclose(start, end)


def test_exp_one_euclidean():
    start, end = exp_one(get("euclidean").sode, [0.0], [3.0])
    assert end[0] == pytest.approx(3.0, abs=1e-12)


def test_exp_one_requires_quadratic():
    with pytest.raises(NotQuadraticError):
        exp_one(get("harmonic").sode, [0.0], [1.0])


def test_exp_one_traces_rescaled_flow():
    sode = get("sphere_chart").sode
    q0, v = np.array([0.1, 0.2]), np.array([0.5, -0.4])
    traj = flow(sode, q0, v, 1.0, TIGHT, sample_dt=0.25)
    for t, qt in ((0.25, traj.qs[1]), (0.5, traj.qs[2]), (0.75, traj.qs[3])):
        start, end = exp_one(sode, q0, t * v, TIGHT)
        assert np.max(np.abs(end - qt)) <= 1e-8


def test_zero_section_jacobian_euclidean():
    M = zero_section_jacobian(get("euclidean").sode, [0.0])
    assert np.max(np.abs(M - np.eye(2))) <= 1e-12


def test_zero_section_jacobian_sphere():
    M = zero_section_jacobian(get("sphere_chart").sode, [0.0, 0.0], cfg=TOL10)
    assert np.max(np.abs(M - np.eye(4))) <= 1e-4


def test_zero_section_jacobian_so3_groupoid():
    bundle = get("so3_rigid_body", spray="free")
    M = groupoid_zero_section_jacobian(bundle.model, bundle.sode, cfg=TOL10)
    assert np.max(np.abs(M - np.eye(3))) <= 1e-4


def test_lifted_field_fiber_homogeneity():
    # quadratic algebroid SODE lifts to a field quadratic in the velocity slot
    bundle = get("so3_rigid_body")  # rigid spray, quadratic
    gpd = bundle.model
    lifted = lift_sode(gpd, bundle.sode)
    rng = seeded_rng(4)
    worst = 0.0
    for _ in range(25):
        g = gpd.element_chart.sample(rng, 1, shrink=0.2)[0]
        v = left_frame_at(gpd, g) @ rng.uniform(-1, 1, 3)
        _, acc = lifted.rhs(g, v)
        for s in (-1.0, 0.5, 2.0):
            _, acc_s = lifted.rhs(g, s * v)
            worst = max(worst, float(np.max(np.abs(acc_s - s * s * acc))))
    assert worst <= 1e-8
