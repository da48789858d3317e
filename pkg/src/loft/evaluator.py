"""Desk-scale unlearning metrics over a linear head on (projected) features."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .matcore import as_matrix

PROBE_EPOCHS = 500
PROBE_LR = 0.1


@dataclass(frozen=True)
class LinearHead:
    """logits(z) = W z + b with W of shape (C, d)."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.weight, "head weight")
        b = np.asarray(self.bias, dtype=np.float64)
        if w.shape[0] < 2:
            raise InvalidInputError("a head needs at least two classes")
        if b.shape != (w.shape[0],) or not np.all(np.isfinite(b)):
            raise InvalidInputError("bias must be a finite vector with one entry per class")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, features, u: Optional[np.ndarray] = None) -> np.ndarray:
        z = as_matrix(features, "features")
        if z.shape[1] != self.dim:
            raise InvalidInputError(f"features have {z.shape[1]} columns, head expects {self.dim}")
        if u is not None:
            u = np.asarray(u, dtype=np.float64)
            if u.shape[0] != self.dim:
                raise InvalidInputError(f"projector is {u.shape[0]}-dimensional, head expects {self.dim}")
            z = (z @ u) @ u.T
        return z @ self.weight.T + self.bias


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def probe_train(features, labels, classes: Optional[int] = None, epochs: int = PROBE_EPOCHS,
                lr: float = PROBE_LR) -> LinearHead:
    """Multinomial logistic regression by full-batch gradient descent from zero.

    Deterministic: no randomness is involved at all.
    """
    z = as_matrix(features, "features")
    y = np.asarray(labels)
    if y.shape != (z.shape[0],):
        raise InvalidInputError("one label per row is required")
    if y.size == 0 or y.min() < 0:
        raise InvalidInputError("labels must be non-negative")
    classes = int(y.max()) + 1 if classes is None else classes
    counts = np.bincount(y, minlength=classes)
    if counts.size > classes:
        raise InvalidInputError(f"label {y.max()} out of range for {classes} classes")
    if classes < 2:
        raise InvalidInputError("need at least two classes to train a probe")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InvalidInputError(f"classes without samples: {empty.tolist()}")
    n, d = z.shape
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((classes, d))
    b = np.zeros(classes)
    for _ in range(epochs):
        resid = (_softmax(z @ w.T + b) - onehot) / n
        w -= lr * (resid.T @ z)
        b -= lr * resid.sum(axis=0)
    return LinearHead(w, b)


def predict(head: LinearHead, features, u=None) -> np.ndarray:
    # argmax returns the first maximum, so ties go to the lowest class index
    return np.argmax(head.logits(features, u), axis=1)


def accuracy(head: LinearHead, u, features, labels) -> float:
    """Percentage of rows whose argmax logit equals the label."""
    y = np.asarray(labels)
    z = as_matrix(features, "features")
    if y.shape != (z.shape[0],):
        raise InvalidInputError("one label per row is required")
    return 100.0 * float(np.mean(predict(head, z, u) == y))


def confidences(head: LinearHead, u, features) -> np.ndarray:
    """Max-softmax confidence per row."""
    return _softmax(head.logits(features, u)).max(axis=1)


def memorized_fraction(conf: np.ndarray, tau: float) -> float:
    return 100.0 * float(np.mean(np.asarray(conf) >= tau))


def calibrate_threshold(member_conf, nonmember_conf) -> float:
    """Threshold maximising member/non-member accuracy of the rule conf >= tau.

    Candidates are the observed confidences plus +inf; ties go to the
    smallest threshold, the conservative choice for an unlearning audit.
    """
    member_conf = np.asarray(member_conf, dtype=np.float64)
    nonmember_conf = np.asarray(nonmember_conf, dtype=np.float64)
    if member_conf.size == 0 or nonmember_conf.size == 0:
        raise InvalidInputError("calibration sets must be non-empty")
    candidates = np.append(np.unique(np.concatenate([member_conf, nonmember_conf])), np.inf)
    m_sorted = np.sort(member_conf)
    n_sorted = np.sort(nonmember_conf)
    members_hit = m_sorted.size - np.searchsorted(m_sorted, candidates, side="left")
    nonmembers_rejected = np.searchsorted(n_sorted, candidates, side="left")
    acc = (members_hit + nonmembers_rejected) / (m_sorted.size + n_sorted.size)
    return float(candidates[int(np.argmax(acc))])


def mia_score(head: LinearHead, u, fg_features, member_features, nonmember_features) -> float:
    """Confidence-threshold membership attack: % of forgetting rows judged members.

    The attack is calibrated on the model under evaluation (head with ``u``).
    """
    fg = as_matrix(fg_features, "forgetting features")
    tau = calibrate_threshold(confidences(head, u, as_matrix(member_features, "member features")),
                              confidences(head, u, as_matrix(nonmember_features, "non-member features")))
    return memorized_fraction(confidences(head, u, fg), tau)


@dataclass(frozen=True)
class MetricsTable:
    acc_rm_tr: float
    acc_fg_tr: float
    acc_rm_te: float
    acc_fg_te: float
    mia: Optional[float] = None
    avg_gap: Optional[float] = None

    def __post_init__(self):
        for f in fields(self)[:5]:
            v = getattr(self, f.name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise InvalidInputError(f"{f.name}={v} is not a percentage")

    def entries(self):
        return (self.acc_rm_tr, self.acc_fg_tr, self.acc_rm_te, self.acc_fg_te, self.mia)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsTable":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def to_text(self, reference: Optional["MetricsTable"] = None) -> str:
        heads = ["Acc_rm^tr", "Acc_fg^tr", "Acc_rm^te", "Acc_fg^te", "MIA"]
        cells = []
        ref = reference.entries() if reference is not None else (None,) * 5
        for v, r in zip(self.entries(), ref):
            if v is None:
                cells.append("-")
            elif r is None:
                cells.append(f"{v:.2f}")
            else:
                cells.append(f"{v:.2f} ({abs(v - r):.2f})")
        if self.avg_gap is not None:
            heads.append("Avg.G.")
            cells.append(f"{self.avg_gap:.2f}")
        widths = [max(len(h), len(c)) for h, c in zip(heads, cells)]
        return "\n".join([
            "  ".join(h.rjust(w) for h, w in zip(heads, widths)),
            "  ".join(c.rjust(w) for c, w in zip(cells, widths)),
        ])


def avg_gap(candidate: MetricsTable, reference: MetricsTable) -> float:
    """Mean absolute gap over the four accuracies and MIA."""
    pairs = list(zip(candidate.entries(), reference.entries()))
    if any(a is None or b is None for a, b in pairs):
        raise InvalidInputError("average gap needs all five entries in both tables")
    return float(np.mean([abs(a - b) for a, b in pairs]))


def absorb(head: LinearHead, u) -> LinearHead:
    """Fold the projector into the head: W' = W U U^T, bias unchanged."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != head.dim:
        raise InvalidInputError(f"projector of shape {u.shape} does not match head dimension {head.dim}")
    return LinearHead((head.weight @ u) @ u.T, head.bias.copy())


def evaluate(head: LinearHead, u, rm_train, fg_train, rm_test, fg_test,
             member=None, nonmember=None, reference: Optional[MetricsTable] = None) -> MetricsTable:
    """Fill a MetricsTable from labelled splits (FeatureMatrix-like objects with
    ``values`` and ``labels``)."""
    accs = [accuracy(head, u, split.values, split.labels) for split in (rm_train, fg_train, rm_test, fg_test)]
    mia = None
    if member is not None and nonmember is not None:
        mia = mia_score(head, u, fg_train.values, member.values, nonmember.values)
    table = MetricsTable(*accs, mia=mia)
    if reference is not None:
        table = MetricsTable(*accs, mia=mia, avg_gap=avg_gap(table, reference))
    return table
