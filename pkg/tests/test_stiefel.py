import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_psd
from loft.errors import DegenerateDirectionError, InvalidInputError
from loft.matcore import covariance
from loft.objective import ObjectiveInputs, eval_objective
from loft.stiefel import (check_point, orthonormality_error, pca_init, principal_angles, random_stiefel,
                          retract_qr, tangent_project)

dims = st.integers(1, 9).flatmap(lambda d: st.tuples(st.just(d), st.integers(1, d)))


def tangent_residual(u, xi):
    return np.linalg.norm(u.T @ xi + xi.T @ u)


def test_tangent_project_removes_base_component():
    xi = tangent_project(np.array([[1.0], [0.0]]), np.array([[2.5], [-7.0]]))
    np.testing.assert_array_equal(xi, [[0.0], [-7.0]])


def test_tangent_vector_is_fixed(rng):
    u = random_stiefel(7, 3, 1)
    a = rng.standard_normal((3, 3))
    g = u @ (a - a.T) + (np.eye(7) - u @ u.T) @ rng.standard_normal((7, 3))
    np.testing.assert_allclose(tangent_project(u, g), g, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(dims, st.integers(0, 2 ** 32 - 1))
def test_tangent_project_linear_idempotent(ds, seed):
    d, s = ds
    rng = np.random.default_rng(seed)
    u = random_stiefel(d, s, seed)
    g1, g2 = rng.standard_normal((2, d, s))
    a, b = rng.standard_normal(2)
    p1 = tangent_project(u, g1)
    assert np.linalg.norm(tangent_project(u, p1) - p1) <= 1e-10
    lhs = tangent_project(u, a * g1 + b * g2)
    assert np.linalg.norm(lhs - (a * p1 + b * tangent_project(u, g2))) <= 1e-10 * (1 + abs(a) + abs(b))
    assert tangent_residual(u, p1) <= 1e-8 * (1 + np.linalg.norm(p1))


def test_tangent_project_shape_mismatch():
    with pytest.raises(InvalidInputError):
        tangent_project(np.eye(3)[:, :2], np.ones((3, 1)))


def test_retract_zero_step_is_exact():
    u = random_stiefel(6, 2, 3)
    out = retract_qr(u, np.zeros_like(u))
    assert np.array_equal(out, u) and out is not u


@pytest.mark.parametrize("t", [0.0, 0.3, -2.0, 10.0])
def test_retract_analytic_normalisation(t):
    out = retract_qr(np.array([[1.0], [0.0]]), np.array([[0.0], [t]]))
    np.testing.assert_allclose(out, np.array([[1.0], [t]]) / np.sqrt(1 + t * t), atol=1e-15)


def test_retract_first_order(rng):
    for seed in range(10):
        u = random_stiefel(8, 3, seed)
        xi = tangent_project(u, rng.standard_normal((8, 3)))
        xi *= 1e-4 / np.linalg.norm(xi)
        assert np.linalg.norm(retract_qr(u, xi) - (u + xi)) <= 1e-7


def test_retract_depends_only_on_sum(rng):
    u = random_stiefel(5, 2, 0)
    xi = tangent_project(u, rng.standard_normal((5, 2)))
    v = random_stiefel(5, 2, 9)
    a = retract_qr(u, xi)
    b = retract_qr(v, (u + xi) - v)
    np.testing.assert_allclose(a, b, atol=1e-13)
    assert a.tobytes() == retract_qr(u, xi).tobytes()


def test_retract_degenerate():
    u = np.array([[1.0], [0.0]])
    with pytest.raises(DegenerateDirectionError):
        retract_qr(u, -u)


@settings(max_examples=40, deadline=None)
@given(dims, st.integers(0, 2 ** 32 - 1))
def test_random_stiefel_orthonormal_and_deterministic(ds, seed):
    d, s = ds
    u = random_stiefel(d, s, seed)
    assert u.shape == (d, s)
    assert orthonormality_error(u) <= 1e-10
    assert u.tobytes() == random_stiefel(d, s, seed).tobytes()


def test_random_stiefel_square_is_orthogonal():
    for seed in range(5):
        u = random_stiefel(6, 6, seed)
        # |det U| = prod |R_ii| of its own QR, which is 1 for an orthogonal matrix
        _, r = np.linalg.qr(u)
        assert abs(abs(np.prod(np.diag(r))) - 1) <= 1e-8
        assert abs(abs(np.linalg.det(u)) - 1) <= 1e-8


def test_random_stiefel_rejects_bad_dims():
    with pytest.raises(InvalidInputError):
        random_stiefel(2, 3, 0)
    with pytest.raises(InvalidInputError):
        random_stiefel(3, 0, 0)


def test_pca_init_diagonal():
    u = pca_init(np.diag([3.0, 2.0, 1.0]), 2)
    assert np.max(principal_angles(u, np.eye(3)[:, :2])) < 1e-12


def test_pca_init_full_rank_gives_zero_jrm(rng):
    sigma = random_psd(rng, 5)
    u = pca_init(covariance(rng.standard_normal((20, 5))), 5)
    val = eval_objective(u, ObjectiveInputs(sigma, sigma))
    assert abs(val.J_rm) < 1e-20 and abs(val.J_fg - 1) < 1e-12


def test_pca_init_matches_power_iteration(rng):
    for _ in range(5):
        sigma = random_psd(rng, 8)
        x = np.ones(8)
        for _ in range(2000):
            x = sigma @ x
            x /= np.linalg.norm(x)
        u = pca_init(sigma, 1)
        assert abs(abs(float(u[:, 0] @ x)) - 1) < 1e-9


def test_pca_init_rejects_bad_s():
    with pytest.raises(InvalidInputError):
        pca_init(np.eye(3), 4)


def test_check_point():
    check_point(np.eye(3)[:, :2])
    with pytest.raises(InvalidInputError):
        check_point(np.ones((3, 2)))
    with pytest.raises(InvalidInputError):
        check_point(np.eye(2, 3))


def test_principal_angles():
    a = np.eye(3)[:, :1]
    b = np.array([[1.0], [1.0], [0.0]])
    np.testing.assert_allclose(principal_angles(a, b), [np.pi / 4])
    np.testing.assert_allclose(principal_angles(np.eye(3)[:, :2], np.eye(3)[:, [1, 0]]), [0, 0], atol=1e-7)
