"""Stiefel manifold St(d, s): d x s matrices with orthonormal columns.

Points are plain float64 arrays.  Tangent vectors at U are d x s arrays xi with
U^T xi skew-symmetric; the metric is the embedded Euclidean one.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .matcore import CovarianceSummary, as_matrix, sym_eig, thin_qr

ORTHO_TOL = 1e-6


def orthonormality_error(u: np.ndarray) -> float:
    return float(np.linalg.norm(u.T @ u - np.eye(u.shape[1]), "fro"))


def check_point(u, tol: float = ORTHO_TOL) -> np.ndarray:
    """Validate a Stiefel point and return it as a float64 array."""
    u = as_matrix(u, "U")
    d, s = u.shape
    if s > d:
        raise InvalidInputError(f"Stiefel point needs s <= d, got {d}x{s}")
    err = orthonormality_error(u)
    if err > tol:
        raise InvalidInputError(f"columns of U are not orthonormal (||U^T U - I|| = {err:.3e})")
    return u


def sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def tangent_project(u, g) -> np.ndarray:
    """Orthogonal projection of an ambient d x s matrix onto T_U St."""
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != u.shape:
        raise InvalidInputError(f"direction shape {g.shape} does not match point {u.shape}")
    return g - u @ sym(u.T @ g)


def retract_qr(u, xi) -> np.ndarray:
    """QR retraction: Q factor of U + xi with positive diag(R)."""
    u = np.asarray(u, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != u.shape:
        raise InvalidInputError(f"step shape {xi.shape} does not match point {u.shape}")
    if not np.any(xi):
        return u.copy()
    q, _ = thin_qr(u + xi)
    return q


def random_stiefel(d: int, s: int, seed=None) -> np.ndarray:
    if not 1 <= s <= d:
        raise InvalidInputError(f"need 1 <= s <= d, got d={d}, s={s}")
    rng = np.random.default_rng(seed)
    q, _ = thin_qr(rng.standard_normal((d, s)))
    return q


def pca_init(cov, s: int, backend: str = "auto") -> np.ndarray:
    """Top-``s`` eigenvectors of a covariance as an orthonormal frame."""
    matrix = cov.matrix if isinstance(cov, CovarianceSummary) else cov
    d = np.shape(matrix)[0]
    if not 1 <= s <= d:
        raise InvalidInputError(f"need 1 <= s <= d, got d={d}, s={s}")
    eig = sym_eig(matrix, backend=backend)
    return eig.vectors[:, :s].copy()


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between range(a) and range(b)."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    cos = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(cos, -1.0, 1.0))
