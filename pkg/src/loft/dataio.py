"""File formats and the synthetic feature generator.

Binary layouts (all little-endian):

FMAT  ``FMAT1\\n`` u32 rows, u32 cols, u8 flags (bit 0: labels present),
      rows*cols f32 row-major, then rows u32 labels when flagged.
FPRJ  same as FMAT with magic ``FPRJ1\\n``; stores the d x s basis U, no labels.
FCOV  ``FCOV1\\n`` u32 dim, dim*dim f64, f64 trace, u64 count, dim f64 mean.
HEAD  an FMAT block holding the C x d weight (no labels) followed by C f32 biases.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import FormatError, InvalidInputError
from .matcore import CovarianceSummary

FMAT_MAGIC = b"FMAT1\n"
FPRJ_MAGIC = b"FPRJ1\n"
FCOV_MAGIC = b"FCOV1\n"
_U32_MAX = 2 ** 32 - 1


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (values.shape[0],):
                raise InvalidInputError(f"{labels.size} labels for {values.shape[0]} rows")
            if labels.size and (labels.min() < 0 or not np.all(labels == np.round(labels))):
                raise InvalidInputError("labels must be non-negative integers")
            object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def subset(self, mask) -> "FeatureMatrix":
        labels = None if self.labels is None else self.labels[mask]
        return FeatureMatrix(self.values[mask], labels)

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        values = np.vstack([p.values for p in parts])
        if any(p.labels is None for p in parts):
            return FeatureMatrix(values)
        return FeatureMatrix(values, np.concatenate([p.labels for p in parts]))


# -- binary helpers ---------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.data) - self.pos} left",
                              offset=self.pos, path=self.path)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt).copy()

    def magic(self, expected: bytes):
        got = self.data[:len(expected)]
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", offset=0, path=self.path)
        self.pos = len(expected)

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} unexpected trailing bytes",
                              offset=self.pos, path=self.path)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _matrix_block(r: _Reader, labels_allowed: bool):
    start = r.pos
    rows, cols = r.unpack("<II", "header")
    (flags,) = r.unpack("<B", "flags")
    if rows == 0 or cols == 0:
        raise FormatError(f"empty dimensions {rows}x{cols}", offset=start, path=r.path)
    if rows * cols * 4 > len(r.data) - r.pos:
        raise FormatError(f"dimensions {rows}x{cols} exceed the payload ({len(r.data) - r.pos} bytes left)",
                          offset=r.pos, path=r.path)
    if flags & ~1 or (flags & 1 and not labels_allowed):
        raise FormatError(f"unsupported flags 0x{flags:02x}", offset=start + 8, path=r.path)
    payload_at = r.pos
    values = r.array("<f4", rows * cols, "payload").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError("non-finite value in payload", offset=payload_at + 4 * bad, path=r.path)
    labels = r.array("<u4", rows, "labels").astype(np.int64) if flags & 1 else None
    return values, labels


def _pack_matrix(magic: bytes, values: np.ndarray, labels=None) -> bytes:
    values = np.asarray(values)
    rows, cols = values.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        raise InvalidInputError("matrix too large for a u32 header")
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(values, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise InvalidInputError("values must be finite and within f32 range")
    out = [magic, struct.pack("<IIB", rows, cols, 1 if labels is not None else 0), payload.tobytes()]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.size and (labels.min() < 0 or labels.max() > _U32_MAX):
            raise InvalidInputError("labels do not fit in u32")
        out.append(labels.astype("<u4").tobytes())
    return b"".join(out)


def _write_bytes(path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


# -- FMAT / FPRJ ------------------------------------------------------------


def write_fmat(path, fm: FeatureMatrix) -> None:
    _write_bytes(path, _pack_matrix(FMAT_MAGIC, fm.values, fm.labels))


def read_fmat(path) -> FeatureMatrix:
    r = _Reader(_read_bytes(path), path)
    r.magic(FMAT_MAGIC)
    values, labels = _matrix_block(r, labels_allowed=True)
    r.finish()
    return FeatureMatrix(values, labels)


def write_projector(path, u: np.ndarray) -> None:
    _write_bytes(path, _pack_matrix(FPRJ_MAGIC, u))


def read_projector(path) -> np.ndarray:
    r = _Reader(_read_bytes(path), path)
    r.magic(FPRJ_MAGIC)
    values, _ = _matrix_block(r, labels_allowed=False)
    r.finish()
    if values.shape[1] > values.shape[0]:
        raise FormatError(f"projector is {values.shape[0]}x{values.shape[1]}; needs d >= s", path=path)
    return values


# -- FCOV -------------------------------------------------------------------


def write_fcov(path, cov: CovarianceSummary) -> None:
    d = cov.dim
    _write_bytes(path, b"".join([
        FCOV_MAGIC,
        struct.pack("<I", d),
        np.ascontiguousarray(cov.matrix, dtype="<f8").tobytes(),
        struct.pack("<dQ", cov.trace, cov.count),
        np.ascontiguousarray(cov.mean, dtype="<f8").tobytes(),
    ]))


def read_fcov(path, centered: bool = True) -> CovarianceSummary:
    """Read a covariance file.  The layout does not record the centring mode,
    so the caller states it."""
    r = _Reader(_read_bytes(path), path)
    r.magic(FCOV_MAGIC)
    (d,) = r.unpack("<I", "header")
    if d == 0:
        raise FormatError("zero dimension", offset=len(FCOV_MAGIC), path=path)
    if 8 * (d * d + d + 2) > len(r.data) - r.pos:
        raise FormatError(f"dimension {d} exceeds the payload", offset=r.pos, path=path)
    matrix = r.array("<f8", d * d, "payload").reshape(d, d)
    trace, count = r.unpack("<dQ", "trailer")
    mean = r.array("<f8", d, "mean")
    r.finish()
    if not (np.all(np.isfinite(matrix)) and np.all(np.isfinite(mean))):
        raise FormatError("non-finite values in covariance", path=path)
    return CovarianceSummary(matrix, int(count), mean, centered)


# -- linear head ------------------------------------------------------------


def write_head(path, weight: np.ndarray, bias: np.ndarray) -> None:
    bias = np.asarray(bias)
    if bias.shape != (weight.shape[0],):
        raise InvalidInputError("bias length must equal the number of classes")
    with np.errstate(over="ignore"):
        bias32 = bias.astype("<f4")
    if not np.all(np.isfinite(bias32)):
        raise InvalidInputError("bias must be finite and within f32 range")
    _write_bytes(path, _pack_matrix(FMAT_MAGIC, weight) + bias32.tobytes())


def read_head(path) -> Tuple[np.ndarray, np.ndarray]:
    r = _Reader(_read_bytes(path), path)
    r.magic(FMAT_MAGIC)
    weight, _ = _matrix_block(r, labels_allowed=False)
    bias = r.array("<f4", weight.shape[0], "bias").astype(np.float64)
    if not np.all(np.isfinite(bias)):
        raise FormatError("non-finite bias", path=path)
    r.finish()
    return weight, bias


# -- CSV --------------------------------------------------------------------


def read_csv(path, has_header: bool = True, label_column=None) -> FeatureMatrix:
    """Numeric CSV (RFC 4180 quoting).  ``label_column`` is a header name or a
    0-based column index."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = None
    first_line = 1
    if has_header:
        if not rows:
            raise FormatError("missing header", path=path)
        header, rows = rows[0], rows[1:]
        first_line = 2
    numbered = [(first_line + i, row) for i, row in enumerate(rows) if row]
    if not numbered:
        raise FormatError("no data rows", path=path)
    width = len(header) if header is not None else len(numbered[0][1])
    label_idx = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise FormatError(f"label column {label_column!r} not found", path=path)
            label_idx = header.index(label_column)
        else:
            label_idx = int(label_column)
            if not 0 <= label_idx < width:
                raise FormatError(f"label column {label_idx} out of range", path=path)
    values, labels = [], []
    for line, row in numbered:
        if len(row) != width:
            raise FormatError(f"line {line}: expected {width} fields, got {len(row)}", path=path)
        rec = []
        for j, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                raise FormatError(f"line {line}: non-numeric cell {cell!r}", path=path) from None
            if not np.isfinite(x):
                raise FormatError(f"line {line}: non-finite cell {cell!r}", path=path)
            if j == label_idx:
                if x != int(x) or x < 0:
                    raise FormatError(f"line {line}: label {cell!r} is not a non-negative integer",
                                      path=path)
                labels.append(int(x))
            else:
                rec.append(x)
        values.append(rec)
    if not values[0]:
        raise FormatError("no feature columns", path=path)
    return FeatureMatrix(np.array(values), np.array(labels) if label_idx is not None else None)


def read_features(path, label_column=None) -> FeatureMatrix:
    """FMAT or CSV, chosen by the file's leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(len(FMAT_MAGIC))
    if head == FMAT_MAGIC:
        return read_fmat(path)
    if Path(path).suffix.lower() == ".csv":
        return read_csv(path, has_header=True, label_column=label_column)
    return read_fmat(path)


# -- synthetic generator ----------------------------------------------------

REGIMES = ("pretrained", "exact")
_SPLITS = {"train": 0, "test": 1}
_MEAN_SCALE = {"exact": 3.0, "pretrained": 0.2}


@dataclass(frozen=True)
class SyntheticScenario:
    """Gaussian class clusters around a designated top subspace.

    ``pretrained``: every class, forgotten or not, comes from the same
    cluster model inside the top subspace.
    ``exact``: remaining classes as above; forgetting classes put most of
    their energy in private directions outside it, keeping a fraction
    ``alignment`` of their mean inside.

    ``mean_scale`` (class-mean norm) defaults per regime: well separated
    clusters for ``exact``, weak ones for ``pretrained`` so that the split
    spectra are dominated by the shared within-class covariance.
    """

    regime: str = "exact"
    d: int = 32
    classes: int = 6
    per_class: int = 200
    forget: Tuple[int, ...] = (0, 1)
    seed: int = 0
    top_dim: int = 8
    noise: float = 0.1
    alignment: float = 0.8
    mean_scale: Optional[float] = None
    decay: float = 0.85
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "forget", tuple(sorted(int(c) for c in self.forget)))
        if self.mean_scale is None:
            object.__setattr__(self, "mean_scale", _MEAN_SCALE.get(self.regime, 1.0))
        if self.regime not in REGIMES:
            raise InvalidInputError(f"regime must be one of {REGIMES}")
        if self.split not in _SPLITS:
            raise InvalidInputError(f"split must be one of {tuple(_SPLITS)}")
        if self.classes < 2 or self.per_class < 1:
            raise InvalidInputError("need at least 2 classes and 1 sample per class")
        if not self.forget or not set(self.forget) <= set(range(self.classes)):
            raise InvalidInputError("forgetting classes must be a non-empty subset of the classes")
        if len(self.forget) == self.classes:
            raise InvalidInputError("at least one class must remain")
        if not 1 <= self.top_dim <= self.d:
            raise InvalidInputError("need 1 <= top_dim <= d")
        if self.regime == "exact" and self.d - self.top_dim < 2 * len(self.forget):
            raise InvalidInputError(
                f"exact regime needs d - top_dim >= {2 * len(self.forget)} private directions")
        if not self.mean_scale >= 0 or not self.noise >= 0 or not 0 < self.decay <= 1:
            raise InvalidInputError("mean_scale and noise must be >= 0 and decay in (0, 1]")
        if not 0 <= self.alignment <= 1:
            raise InvalidInputError("alignment must be in [0, 1]")


def _unit(v):
    return v / np.linalg.norm(v)


def synth(sc: SyntheticScenario) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """Return ``(Z_rm, Z_fg)`` for the scenario; deterministic per seed.

    Geometry (basis, class means) depends only on ``seed``; ``split`` only
    changes the samples drawn.
    """
    geo = np.random.default_rng([sc.seed, 0])
    basis, _ = np.linalg.qr(geo.standard_normal((sc.d, sc.d)))
    top, rest = basis[:, :sc.top_dim], basis[:, sc.top_dim:]
    sigma_top = sc.decay ** np.arange(sc.top_dim)
    coef = [sc.mean_scale * _unit(geo.standard_normal(sc.top_dim)) for _ in range(sc.classes)]
    means = [top @ c for c in coef]
    # In-subspace part of forgetting means avoids the span of the remaining
    # means: directions carrying remaining-set variance but no class signal.
    kept = np.array([coef[c] for c in range(sc.classes) if c not in sc.forget]).T
    basis_kept, _ = np.linalg.qr(kept)
    inside = []
    for _ in range(sc.classes):
        g = geo.standard_normal(sc.top_dim)
        g_perp = g - basis_kept @ (basis_kept.T @ g)
        inside.append(top @ _unit(g_perp if np.linalg.norm(g_perp) > 1e-8 * np.linalg.norm(g) else g))

    rng = np.random.default_rng([sc.seed, 1, _SPLITS[sc.split]])
    rm_parts, fg_parts = [], []
    for c in range(sc.classes):
        n = sc.per_class
        noise = sc.noise * rng.standard_normal((n, sc.d))
        within = (rng.standard_normal((n, sc.top_dim)) * sigma_top) @ top.T
        if c in sc.forget and sc.regime == "exact":
            i = sc.forget.index(c)
            a, b = rest[:, 2 * i], rest[:, 2 * i + 1]
            mean = sc.mean_scale * (sc.alignment * inside[c] + np.sqrt(1 - sc.alignment ** 2) * a)
            private = np.outer(rng.standard_normal(n), a) + 0.5 * np.outer(rng.standard_normal(n), b)
            z = mean + sc.alignment * within + private + noise
        else:
            z = means[c] + within + noise
        part = FeatureMatrix(z, np.full(n, c))
        (fg_parts if c in sc.forget else rm_parts).append(part)
    return FeatureMatrix.concat(rm_parts), FeatureMatrix.concat(fg_parts)
