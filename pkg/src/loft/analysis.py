"""Spectrum and reconstruction diagnostics for feature splits."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCovarianceError, InvalidInputError
from .matcore import CovarianceSummary, as_matrix, as_symmetric, covariance, sym_eig
from .stiefel import pca_init

DEFAULT_TOP_K = 12
PSD_TOL = 1e-9


@dataclass(frozen=True)
class SpectrumReport:
    normalized_eigenvalues: np.ndarray
    k: int
    trace: float
    explained_variance_curve: np.ndarray
    eigenvalues: np.ndarray

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "trace": self.trace,
            "normalized_eigenvalues": self.normalized_eigenvalues.tolist(),
            "explained_variance_curve": self.explained_variance_curve.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }

    def to_text(self) -> str:
        lines = [f"{'i':>4}  {'lambda_i':>14}  {'lambda_i/l1':>12}  {'cumulative':>10}"]
        for i, lam in enumerate(self.eigenvalues):
            norm = f"{self.normalized_eigenvalues[i]:12.6f}" if i < self.k else " " * 12
            lines.append(f"{i + 1:>4}  {lam:14.6e}  {norm}  {self.explained_variance_curve[i]:10.6f}")
        lines.append(f"trace = {self.trace:.6e}")
        return "\n".join(lines)


def _eigenvalues(cov) -> np.ndarray:
    matrix = cov.matrix if isinstance(cov, CovarianceSummary) else as_symmetric(cov, "covariance")
    return sym_eig(matrix).values


def spectrum(cov, k: int = DEFAULT_TOP_K) -> SpectrumReport:
    """Top-k eigenvalues normalised by the largest, plus the cumulative
    explained-variance curve over the full spectrum."""
    lam = _eigenvalues(cov)
    if not 1 <= k <= lam.size:
        raise InvalidInputError(f"k must be in [1, {lam.size}], got {k}")
    if lam[0] <= 0:
        raise DegenerateCovarianceError(f"largest eigenvalue is {lam[0]:.3e}; nothing to normalise by")
    total = float(np.sum(lam))
    if lam[-1] < -PSD_TOL * max(total, lam[0]):
        raise InvalidInputError(f"matrix is not PSD (smallest eigenvalue {lam[-1]:.3e})")
    # clip round-off negatives so the curve stays monotone
    lam = np.clip(lam, 0.0, None)
    total = float(np.sum(lam))
    return SpectrumReport(lam[:k] / lam[0], k, total, np.cumsum(lam) / total, lam)


def select_dim(cov, fraction: float = 0.95) -> int:
    """Smallest s whose top-s eigenvalues explain at least ``fraction`` of the trace."""
    if not 0 < fraction <= 1:
        raise InvalidInputError(f"fraction must be in (0, 1], got {fraction}")
    lam = np.clip(_eigenvalues(cov), 0.0, None)
    total = np.sum(lam)
    if not total > 0:
        raise DegenerateCovarianceError("covariance has zero trace")
    if fraction == 1.0:
        return int(np.count_nonzero(lam > 1e-12 * lam[0]))
    curve = np.cumsum(lam) / total
    # relative slack keeps exact boundary hits (0.9 == 0.9) on the right side
    return int(np.argmax(curve >= fraction * (1 - 1e-12)) + 1)


@dataclass(frozen=True)
class ReconstructionReport:
    errors: np.ndarray
    projected_norms: np.ndarray
    s: int

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    def as_dict(self, per_sample: bool = False) -> dict:
        out = {
            "s": self.s,
            "n": int(self.errors.size),
            "mean": self.mean,
            "median": self.median,
            "max": self.max,
            "mean_projected_norm": float(np.mean(self.projected_norms)),
        }
        if per_sample:
            out["errors"] = self.errors.tolist()
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "error", "projected_norm"])
        for i, (e, p) in enumerate(zip(self.errors, self.projected_norms)):
            w.writerow([i, repr(float(e)), repr(float(p))])
        return buf.getvalue()


def reconstruction_errors(u, features, mean=None) -> ReconstructionReport:
    """e = ||U U^T zbar - zbar|| per row, with zbar = z - mean.

    ``mean`` defaults to the rows' own mean.
    """
    u = as_matrix(u, "U")
    z = as_matrix(features, "features")
    if z.shape[1] != u.shape[0]:
        raise InvalidInputError(f"features have {z.shape[1]} columns, projector expects {u.shape[0]}")
    mean = z.mean(axis=0) if mean is None else np.asarray(mean, dtype=np.float64)
    if mean.shape != (u.shape[0],):
        raise InvalidInputError(f"mean has shape {mean.shape}, expected ({u.shape[0]},)")
    zbar = z - mean
    proj = (zbar @ u) @ u.T
    return ReconstructionReport(
        np.linalg.norm(proj - zbar, axis=1), np.linalg.norm(proj, axis=1), u.shape[1])


@dataclass(frozen=True)
class SeparabilityReport:
    s: int
    remaining: ReconstructionReport
    forgetting: ReconstructionReport

    @property
    def error_ratio(self) -> float:
        """mean e(fg) / mean e(rm)."""
        return self.forgetting.mean / self.remaining.mean

    def as_dict(self) -> dict:
        return {
            "s": self.s,
            "remaining": self.remaining.as_dict(),
            "forgetting": self.forgetting.as_dict(),
            "error_ratio": self.error_ratio,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def separability_report(z_rm, z_fg, s: int, rm_cov: Optional[CovarianceSummary] = None) -> SeparabilityReport:
    """Fit U from the top-s principal directions of the remaining split and
    measure both splits against it, centred with the remaining-split mean."""
    z_rm = as_matrix(z_rm, "remaining features")
    z_fg = as_matrix(z_fg, "forgetting features")
    if z_rm.shape[1] != z_fg.shape[1]:
        raise InvalidInputError("splits disagree on feature dimension")
    cov = rm_cov if rm_cov is not None else covariance(z_rm)
    u = pca_init(cov, s)
    mean = cov.mean
    return SeparabilityReport(s, reconstruction_errors(u, z_rm, mean), reconstruction_errors(u, z_fg, mean))
