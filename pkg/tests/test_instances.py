import numpy as np
import pytest

from algsode.algebroid import homogeneity_defect
from algsode.errors import ConfigError
from algsode.instances import (
    InstanceSpec, build_model, get, list_instances, so3_exp, so3_log,
    so3_right_jacobian, hat, vee,
)


def test_registry_lists_all_builtins():
    names = list_instances()
    for expected in ("euclidean", "harmonic", "pendulum", "sphere_chart",
                     "fibration_r3", "pair", "so2", "gpi_r3", "so3_rigid_body"):
        assert expected in names


def test_unknown_instance():
    with pytest.raises(ConfigError):
        build_model(InstanceSpec("moebius"))


def test_euclidean_dims():
    bundle = build_model(InstanceSpec("euclidean", {"dim": 2}))
    assert bundle.algebroid.n == 2 and bundle.algebroid.k == 2
    assert np.allclose(bundle.algebroid.anchor_matrix([0.0, 0.0]), np.eye(2))
    assert np.allclose(bundle.sode.gamma([0.1, 0.2], [1.0, 2.0]), 0.0)


def test_fibration_structure_tables():
    model = get("fibration_r3").algebroid
    A = model.anchor_matrix([0.0, 0.0, 0.0])
    assert np.allclose(A, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(model.structure_at([0.1, 0.2, 0.3]), 0.0)


def test_so3_inertia_validation():
    with pytest.raises(ConfigError):
        get("so3_rigid_body", inertia=(1.0, -2.0, 3.0))
    with pytest.raises(ConfigError):
        get("so3_rigid_body", inertia=np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))
    bundle = get("so3_rigid_body", inertia=(2.0, 2.0, 4.0))
    assert np.allclose(bundle.inertia, np.diag([2.0, 2.0, 4.0]))
    with pytest.raises(ConfigError):
        get("so3_rigid_body", spray="cubic")


def test_so3_structure_constants():
    model = get("so3_rigid_body").algebroid
    C = model.structure_at([])
    # bracket of the first two basis sections is the third
    assert C[2, 0, 1] == 1.0 and C[2, 1, 0] == -1.0
    assert C[0, 1, 2] == 1.0 and C[1, 0, 2] == -1.0
    assert model.structure_antisymmetry_defect() == 0.0
    assert model.jacobi_defect() == 0.0


def test_all_sprays_declared_quadratic_are_quadratic():
    for name in ("euclidean", "sphere_chart", "so3_rigid_body"):
        bundle = get(name)
        assert bundle.sode.is_declared_quadratic()
        assert homogeneity_defect(bundle.sode, 100, seed=0) <= 1e-12, name


# --- rotation helpers ---------------------------------------------------------

def test_hat_vee_round_trip():
    w = np.array([0.3, -0.7, 1.1])
    assert np.allclose(vee(hat(w)), w)
    assert np.allclose(hat(w).T, -hat(w))


def test_exp_log_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = rng.uniform(-1.5, 1.5, 3)
        R = so3_exp(theta)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(so3_log(R), theta, atol=1e-10)
    assert np.allclose(so3_exp([0.0, 0.0, 0.0]), np.eye(3))
    assert np.allclose(so3_log(np.eye(3)), 0.0)


def test_right_jacobian_is_body_velocity_factor():
    # vee(R^T dR/dt) along theta(t) = theta + t w equals J(theta) w
    rng = np.random.default_rng(1)
    for _ in range(10):
        theta = rng.uniform(-1.2, 1.2, 3)
        w = rng.uniform(-1, 1, 3)
        eps = 1e-6
        Rp, Rm = so3_exp(theta + eps * w), so3_exp(theta - eps * w)
        body = vee(so3_exp(theta).T @ (Rp - Rm) / (2 * eps))
        assert np.allclose(so3_right_jacobian(theta) @ w, body, atol=1e-8)
    # small-angle series branch
    assert np.allclose(so3_right_jacobian([1e-7, 0, 0]), np.eye(3) - 0.5 * hat([1e-7, 0, 0]),
                       atol=1e-10)


def test_pair_instance_custom_gamma():
    bundle = get("pair", dim=2, gamma=("-q1", "-2*q2"))
    assert bundle.model.m == 4
    assert np.allclose(bundle.sode.gamma([1.0, 1.0], [0.0, 0.0]), [-1.0, -2.0])
