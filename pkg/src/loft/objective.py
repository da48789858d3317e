"""Two-term subspace unlearning objective and its Euclidean gradient.

    J(U) = (Tr(U^T S_fg U) / Tr S_fg)^2
         + (Tr(S_rm - U U^T S_rm U U^T) / Tr S_rm)^2
        [+ (Tr(U^T S_fgp U) / Tr S_fgp)^2]      continual mode

The first term measures forgetting-set variance kept inside range(U); the
second the remaining-set variance lost outside it.  Trace normalisation makes
every term scale-free and bounded by 1 on the manifold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateCovarianceError, InvalidInputError
from .matcore import CovarianceSummary, as_symmetric, sym_eig


# Ratios are in [0, 1] on the manifold; a few ulps past either end is rounding.
ROUNDING_SLACK = 1e-12


def _snap(t):
    if -ROUNDING_SLACK < t < 0.0:
        return 0.0
    if 1.0 < t < 1.0 + ROUNDING_SLACK:
        return 1.0
    return t


def _matrix(x, name):
    if x is None:
        return None
    if isinstance(x, CovarianceSummary):
        x = x.matrix
    return as_symmetric(x, name)


@dataclass(frozen=True)
class ObjectiveInputs:
    """Covariances feeding the objective.

    ``use_fg``/``use_rm`` switch terms off for ablations; ``use_fg`` also
    governs the continual term.
    """

    sigma_fg: np.ndarray
    sigma_rm: np.ndarray
    sigma_fgp: Optional[np.ndarray] = None
    use_fg: bool = True
    use_rm: bool = True

    def __post_init__(self):
        fg = _matrix(self.sigma_fg, "sigma_fg")
        rm = _matrix(self.sigma_rm, "sigma_rm")
        fgp = _matrix(self.sigma_fgp, "sigma_fgp")
        dims = {m.shape[0] for m in (fg, rm, fgp) if m is not None}
        if len(dims) != 1:
            raise InvalidInputError(f"covariances disagree on dimension: {sorted(dims)}")
        for name, m in (("forgetting", fg), ("remaining", rm), ("previous-forgetting", fgp)):
            if m is not None and not np.trace(m) > 0:
                raise DegenerateCovarianceError(
                    f"{name} covariance has non-positive trace {np.trace(m):.3e}")
        object.__setattr__(self, "sigma_fg", fg)
        object.__setattr__(self, "sigma_rm", rm)
        object.__setattr__(self, "sigma_fgp", fgp)

    @property
    def dim(self) -> int:
        return self.sigma_rm.shape[0]

    @property
    def continual(self) -> bool:
        return self.sigma_fgp is not None


@dataclass(frozen=True)
class ObjectiveValue:
    J: float
    J_fg: float
    J_rm: float
    J_fgp: Optional[float] = None

    def as_dict(self) -> dict:
        out = {"J": self.J, "J_fg": self.J_fg, "J_rm": self.J_rm}
        if self.J_fgp is not None:
            out["J_fgp"] = self.J_fgp
        return out


def _check_u(u, inputs):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != inputs.dim:
        raise InvalidInputError(f"U of shape {u.shape} does not match dimension {inputs.dim}")
    return u


def _ratios(u, inputs):
    """Normalised numerators (t_fg, t_rm, t_fgp) plus reusable products."""
    fg_u = inputs.sigma_fg @ u
    rm_u = inputs.sigma_rm @ u
    gram = u.T @ u
    tr_fg = np.trace(inputs.sigma_fg)
    tr_rm = np.trace(inputs.sigma_rm)
    t_fg = np.sum(u * fg_u) / tr_fg
    # Tr(U U^T S U U^T) = Tr((U^T S U)(U^T U))
    t_rm = (tr_rm - np.sum((u.T @ rm_u) * gram)) / tr_rm
    t_fgp = fgp_u = None
    if inputs.sigma_fgp is not None:
        fgp_u = inputs.sigma_fgp @ u
        t_fgp = np.sum(u * fgp_u) / np.trace(inputs.sigma_fgp)
    return t_fg, t_rm, t_fgp, fg_u, rm_u, fgp_u


def eval_objective(u, inputs: ObjectiveInputs) -> ObjectiveValue:
    u = _check_u(u, inputs)
    t_fg, t_rm, t_fgp, *_ = _ratios(u, inputs)
    t_fg, t_rm = _snap(t_fg), _snap(t_rm)
    t_fgp = None if t_fgp is None else _snap(t_fgp)
    j_fg, j_rm = float(t_fg ** 2), float(t_rm ** 2)
    j_fgp = None if t_fgp is None else float(t_fgp ** 2)
    total = 0.0
    if inputs.use_fg:
        total += j_fg + (j_fgp or 0.0)
    if inputs.use_rm:
        total += j_rm
    return ObjectiveValue(total, j_fg, j_rm, j_fgp)


def euclid_grad(u, inputs: ObjectiveInputs) -> np.ndarray:
    """Gradient of ``eval_objective(U).J`` w.r.t. the raw entries of U.

    Valid off the manifold too, so finite differences need no constraint
    handling.
    """
    u = _check_u(u, inputs)
    t_fg, t_rm, t_fgp, fg_u, rm_u, fgp_u = _ratios(u, inputs)
    g = np.zeros_like(u)
    if inputs.use_fg:
        g += (4.0 * t_fg / np.trace(inputs.sigma_fg)) * fg_u
        if fgp_u is not None:
            g += (4.0 * t_fgp / np.trace(inputs.sigma_fgp)) * fgp_u
    if inputs.use_rm:
        uut_rm_u = u @ (u.T @ rm_u)
        rm_uut_u = rm_u @ (u.T @ u)
        g -= (4.0 * t_rm / np.trace(inputs.sigma_rm)) * (rm_uut_u + uut_rm_u)
    return g


def min_trace_oracle(m, k: int):
    """Minimiser of Tr(U^T M U) over St(dim, k): the bottom-k eigenvectors.

    Returns ``(frame, value)`` where ``value`` is the sum of the k smallest
    eigenvalues.
    """
    m = as_symmetric(m, "M")
    if not 1 <= k <= m.shape[0]:
        raise InvalidInputError(f"need 1 <= k <= {m.shape[0]}, got {k}")
    eig = sym_eig(m)
    frame = eig.vectors[:, ::-1][:, :k].copy()
    return frame, float(np.sum(eig.values[::-1][:k]))
