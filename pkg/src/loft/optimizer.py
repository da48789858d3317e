"""Riemannian Adam on the Stiefel manifold and the fit loop around it."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import DegenerateDirectionError, InvalidInputError, NumericalFailure
from .objective import ObjectiveInputs, ObjectiveValue, euclid_grad, eval_objective
from .stiefel import ORTHO_TOL, orthonormality_error, pca_init, random_stiefel, retract_qr, tangent_project

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    steps: int = 50
    schedule: str = "constant"
    seed: int = 0
    init: str = "pca"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidInputError("betas must lie in [0, 1)")
        if self.steps < 1:
            raise InvalidInputError("steps must be at least 1")
        if self.schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown schedule {self.schedule!r}")
        if self.init not in ("pca", "random"):
            raise InvalidInputError(f"unknown init {self.init!r}")

    def lr_at(self, step: int) -> float:
        """Learning rate for the 0-based ``step``."""
        if self.schedule == "constant":
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * step / self.steps))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimizerState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "OptimizerState":
        return cls(0, np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class StepRecord:
    step: int
    J: float
    J_fg: float
    J_rm: float
    J_fgp: Optional[float]
    grad_norm: float
    seconds: float

    def as_line(self) -> str:
        parts = [f"step={self.step}", f"J={self.J:.10e}", f"J_fg={self.J_fg:.10e}",
                 f"J_rm={self.J_rm:.10e}"]
        if self.J_fgp is not None:
            parts.append(f"J_fgp={self.J_fgp:.10e}")
        parts += [f"grad_norm={self.grad_norm:.6e}", f"seconds={self.seconds:.6f}"]
        return " ".join(parts)


@dataclass
class FitTrace:
    """Per-step log of a fit.

    ``records[i]`` holds the objective *after* step i+1 and the Riemannian
    gradient norm at the point the step was taken from.
    """

    initial: ObjectiveValue
    records: List[StepRecord] = field(default_factory=list)
    best_step: int = 0
    best: Optional[ObjectiveValue] = None
    failure: Optional[str] = None

    def lines(self) -> List[str]:
        head = f"step=0 J={self.initial.J:.10e} J_fg={self.initial.J_fg:.10e} J_rm={self.initial.J_rm:.10e}"
        return [head] + [r.as_line() for r in self.records]

    def summary(self) -> dict:
        return {
            "executed_steps": len(self.records),
            "initial": self.initial.as_dict(),
            "best_step": self.best_step,
            "best": None if self.best is None else self.best.as_dict(),
            "final_grad_norm": self.records[-1].grad_norm if self.records else None,
            "failure": self.failure,
        }


class FitAborted(NumericalFailure):
    """A step failed; the partial trace and best point so far are attached."""

    def __init__(self, message, trace: FitTrace, best_point: np.ndarray):
        super().__init__(message)
        self.trace = trace
        self.best_point = best_point


# Tangent components this small relative to the ambient gradient are rounding
# left over from the projection; Adam would rescale them to unit-size steps.
NOISE_FLOOR = 64 * np.finfo(np.float64).eps


def riemannian_grad(u, inputs: ObjectiveInputs, weight_decay: float = 0.0) -> np.ndarray:
    g = euclid_grad(u, inputs)
    if weight_decay:
        g = g + weight_decay * u
    xi = tangent_project(u, g)
    if np.linalg.norm(xi) <= NOISE_FLOOR * np.linalg.norm(g):
        return np.zeros_like(xi)
    return xi


def adam_step(u, state: OptimizerState, inputs: ObjectiveInputs, config: OptimizerConfig):
    """One Riemannian Adam update; returns ``(new_point, new_state, grad_norm)``.

    Moments live in ambient coordinates; the first moment is carried to the
    new tangent space by projection after the QR retraction.
    """
    if state.m.shape != u.shape or state.v.shape != u.shape:
        raise InvalidInputError("optimizer state does not match the point's shape")
    b1, b2 = config.beta1, config.beta2
    xi = riemannian_grad(u, inputs, config.weight_decay)
    if not np.all(np.isfinite(xi)):
        raise NumericalFailure("non-finite Riemannian gradient")
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * xi
    v = b2 * state.v + (1.0 - b2) * xi * xi
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    direction = m_hat / (np.sqrt(v_hat) + config.epsilon)
    lr = config.lr_at(state.step)
    try:
        u_new = retract_qr(u, -lr * tangent_project(u, direction))
    except DegenerateDirectionError as exc:
        raise DegenerateDirectionError(f"retraction failed at step {t}: {exc}") from exc
    err = orthonormality_error(u_new)
    if err > ORTHO_TOL:
        raise NumericalFailure(f"orthonormality lost at step {t}: {err:.3e}")
    m = tangent_project(u_new, m)
    return u_new, OptimizerState(t, m, v), float(np.linalg.norm(xi))


def initial_point(inputs: ObjectiveInputs, s: int, config: OptimizerConfig) -> np.ndarray:
    if config.init == "pca":
        return pca_init(inputs.sigma_rm, s)
    return random_stiefel(inputs.dim, s, config.seed)


def fit(inputs: ObjectiveInputs, config: OptimizerConfig = OptimizerConfig(), s: Optional[int] = None,
        u0: Optional[np.ndarray] = None, callback=None):
    """Run ``config.steps`` Adam steps; return the best iterate and the trace.

    The starting point counts as a candidate, so the returned objective never
    exceeds the initial one.  ``callback(step, point)`` sees every iterate.
    """
    if u0 is None:
        if s is None:
            raise InvalidInputError("either s or an initial point is required")
        if not 1 <= s <= inputs.dim:
            raise InvalidInputError(f"need 1 <= s <= d={inputs.dim}, got {s}")
        u = initial_point(inputs, s, config)
    else:
        u = np.array(u0, dtype=np.float64)
    value = eval_objective(u, inputs)
    trace = FitTrace(initial=value, best=value)
    best_u = u.copy()
    state = OptimizerState.zeros(u.shape)
    start = time.perf_counter()
    for k in range(config.steps):
        try:
            u, state, gnorm = adam_step(u, state, inputs, config)
            value = eval_objective(u, inputs)
            if not math.isfinite(value.J):
                raise NumericalFailure(f"non-finite objective at step {k + 1}")
        except NumericalFailure as exc:
            trace.failure = str(exc)
            raise FitAborted(str(exc), trace, best_u) from exc
        rec = StepRecord(k + 1, value.J, value.J_fg, value.J_rm, value.J_fgp, gnorm,
                         time.perf_counter() - start)
        trace.records.append(rec)
        log.debug(rec.as_line())
        if callback is not None:
            callback(k + 1, u)
        if value.J < trace.best.J:
            trace.best, trace.best_step, best_u = value, k + 1, u.copy()
    return best_u, trace
