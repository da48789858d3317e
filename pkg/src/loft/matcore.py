"""Dense real-matrix kernels.

Everything is float64 numpy.  Matrices are validated on entry (2-D, non-empty,
finite) and returned as fresh arrays; nothing here mutates its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, NumericalFailure, DegenerateDirectionError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# Above this size sym_eig's "auto" backend hands off to LAPACK; the
# vectorised Jacobi sweep costs O(d^3) numpy work per sweep.
JACOBI_MAX_DIM = 128
QR_RANK_TOL = 1e-12


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite, non-empty 2-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} is empty (shape {a.shape})")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def as_symmetric(x, name: str = "matrix") -> np.ndarray:
    a = as_matrix(x, name)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    return 0.5 * (a + a.T)


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise InvalidInputError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def trace(a) -> float:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"trace needs a square matrix, got {a.shape}")
    return float(np.trace(a))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(as_matrix(a), "fro"))


# -- covariance -------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceSummary:
    """Second-moment summary of a feature split.

    ``matrix`` is the centred covariance when ``centered`` is true and the raw
    second moment otherwise; ``mean`` is stored either way.  Divisor is 1/n.
    """

    matrix: np.ndarray
    count: int
    mean: np.ndarray
    centered: bool = True
    trace: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "trace", float(np.trace(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


class CovarianceAccumulator:
    """Single-pass covariance over row batches (Chan et al. merge rule)."""

    def __init__(self, dim: int, centered: bool = True):
        if dim < 1:
            raise InvalidInputError("dimension must be positive")
        self.dim = dim
        self.centered = centered
        self.count = 0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros((dim, dim))

    def update(self, rows) -> None:
        rows = as_matrix(rows, "features")
        if rows.shape[1] != self.dim:
            raise InvalidInputError(f"expected {self.dim} columns, got {rows.shape[1]}")
        nb = rows.shape[0]
        if self.centered:
            mean_b = rows.mean(axis=0)
            dev = rows - mean_b
            m2_b = dev.T @ dev
            delta = mean_b - self._mean
            total = self.count + nb
            self._m2 += m2_b + np.outer(delta, delta) * (self.count * nb / total)
            self._mean += delta * (nb / total)
        else:
            self._m2 += rows.T @ rows
            total = self.count + nb
            self._mean += (rows.sum(axis=0) - nb * self._mean) / total
        self.count = total

    def finalize(self) -> CovarianceSummary:
        if self.count == 0:
            raise InvalidInputError("no samples accumulated")
        cov = self._m2 / self.count
        cov = 0.5 * (cov + cov.T)
        return CovarianceSummary(cov, self.count, self._mean.copy(), self.centered)


def covariance(features, centering: bool = True, batch_rows: int = 4096) -> CovarianceSummary:
    """Covariance (1/n divisor) of the rows of ``features`` in one pass."""
    z = as_matrix(features, "features")
    acc = CovarianceAccumulator(z.shape[1], centered=centering)
    for start in range(0, z.shape[0], batch_rows):
        acc.update(z[start:start + batch_rows])
    return acc.finalize()


def pool_covariances(summaries, weighting: str = "count") -> CovarianceSummary:
    """Merge summaries of disjoint splits into one.

    ``weighting="count"`` reproduces the covariance of the concatenated data
    exactly; ``"equal"`` gives every summary the same mixture weight.
    """
    summaries = list(summaries)
    if not summaries:
        raise InvalidInputError("nothing to pool")
    dims = {s.dim for s in summaries}
    modes = {s.centered for s in summaries}
    if len(dims) != 1:
        raise InvalidInputError(f"dimension mismatch among summaries: {sorted(dims)}")
    if len(modes) != 1:
        raise InvalidInputError("cannot pool centred with uncentred summaries")
    counts = np.array([s.count for s in summaries], dtype=np.float64)
    if weighting == "count":
        w = counts / counts.sum()
    elif weighting == "equal":
        w = np.full(len(summaries), 1.0 / len(summaries))
    else:
        raise InvalidInputError(f"unknown weighting {weighting!r}")
    mean = sum(wi * s.mean for wi, s in zip(w, summaries))
    cov = np.zeros_like(summaries[0].matrix)
    for wi, s in zip(w, summaries):
        cov += wi * s.matrix
        if s.centered:
            dm = s.mean - mean
            cov += wi * np.outer(dm, dm)
    cov = 0.5 * (cov + cov.T)
    return CovarianceSummary(cov, int(counts.sum()), mean, summaries[0].centered)


# -- symmetric eigendecomposition --------------------------------------------


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending; ``vectors[:, i]`` pairs with ``values[i]``."""

    values: np.ndarray
    vectors: np.ndarray


@lru_cache(maxsize=32)
def _tournament(n: int) -> tuple:
    """Round-robin schedule: n-1 rounds of n/2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        p = np.array([min(players[i], players[n - 1 - i]) for i in range(n // 2)])
        q = np.array([max(players[i], players[n - 1 - i]) for i in range(n // 2)])
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _off_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.linalg.norm(off, "fro"))


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int):
    d = a.shape[0]
    n = d + (d % 2)
    if n != d:
        # pad with a decoupled zero row/column; its pairs never rotate
        a = np.pad(a, ((0, 1), (0, 1)))
    v = np.eye(n)
    scale = np.linalg.norm(a, "fro")
    threshold = tol * scale
    rounds = _tournament(n)
    off = _off_norm(a)
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise NumericalFailure(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(off-diagonal residual {off:.3e}, threshold {threshold:.3e})")
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rp, rq = a[p, :], a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p], a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
        sweeps += 1
        off = _off_norm(a)
    return np.diag(a)[:d].copy(), v[:d, :d].copy()


def _canonical(values: np.ndarray, vectors: np.ndarray) -> EigenDecomposition:
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.where(vectors[pivot, np.arange(vectors.shape[1])] < 0, -1.0, 1.0)
    return EigenDecomposition(values, vectors * signs)


def sym_eig(a, backend: str = "auto", tol: float = JACOBI_TOL,
            max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix.

    Eigenvalues come back in descending order and each eigenvector has its
    largest-magnitude entry positive, so the output is deterministic.
    ``backend`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_DIM``).
    """
    a = as_symmetric(a)
    if backend == "auto":
        backend = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if backend == "jacobi":
        values, vectors = _jacobi(a.copy(), tol, max_sweeps)
    elif backend == "lapack":
        values, vectors = np.linalg.eigh(a)
    else:
        raise InvalidInputError(f"unknown eigensolver backend {backend!r}")
    return _canonical(values, vectors)


# -- QR ---------------------------------------------------------------------


def thin_qr(m, rank_tol: float = QR_RANK_TOL):
    """Thin QR with a positive diagonal on R, which makes it unique."""
    m = as_matrix(m)
    d, s = m.shape
    if d < s:
        raise InvalidInputError(f"thin QR needs rows >= cols, got {m.shape}")
    q, r = np.linalg.qr(m, mode="reduced")
    diag = np.diag(r)
    if np.min(np.abs(diag)) <= rank_tol:
        col = int(np.argmin(np.abs(diag)))
        raise DegenerateDirectionError(
            f"matrix is rank deficient: column {col} has residual norm {abs(diag[col]):.3e}")
    signs = np.where(diag < 0, -1.0, 1.0)
    return q * signs, r * signs[:, None]
