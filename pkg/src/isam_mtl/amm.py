"""Per-subject Hebbian associative memory.

Patterns are bipolar: spike vectors map {0,1} -> {-1,+1}, and a class ``c``
out of ``m`` is the vector with +1 at ``c`` and -1 elsewhere. The memory is
``W = sum_j y_j x_j^T`` (shape ``[m, D]``), kept in int64 so it is exact and
order-independent. Real-valued features (the tanh ablation) are stored
as-is in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fileio import write_csv, write_json


@dataclass
class PatternPair:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y)
        if not np.all(np.abs(self.y) == 1) or np.count_nonzero(self.y == 1) != 1:
            raise ValueError("y must be a bipolar one-hot vector")


@dataclass
class AMMatrix:
    W: np.ndarray
    subject_id: int = 0
    encoding: str = "bipolar"
    class_names: list[str] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


def bipolar_onehot(label: int, n_classes: int) -> np.ndarray:
    y = -np.ones(n_classes, dtype=np.int64)
    y[label] = 1
    return y


def sgn(v: np.ndarray) -> np.ndarray:
    """+1 where v > 0, else -1 (zero maps to -1)."""
    return np.where(np.asarray(v) > 0, 1, -1).astype(np.int64)


def to_patterns(features: np.ndarray) -> np.ndarray:
    """Bipolarize binary spike features row-wise; pass real-valued features through."""
    features = np.asarray(features)
    if np.all((features == 0) | (features == 1)):
        # int8 keeps large stacks compact; the fit widens chunk by chunk
        x = features.astype(np.int8)
        x *= 2
        x -= 1
        return x
    return features.astype(np.float64)


_FIT_CHUNK = 256


def hebbian_fit_arrays(X: np.ndarray, labels: Sequence[int], n_classes: int, subject_id: int = 0) -> AMMatrix:
    """One-pass Hebbian memory from stacked patterns ``X [N, D]`` and integer labels."""
    X = np.asarray(X)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a nonempty [N, D] pattern matrix")
    if len(labels) != len(X):
        raise ValueError(f"{len(X)} patterns but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    exact = np.issubdtype(X.dtype, np.integer)
    dtype = np.int64 if exact else np.float64
    # sum_j y_j x_j^T with bipolar y: +x into its class row, -x into all others.
    # fixed-size chunks keep the widened copy cache-resident, so cost stays linear in N
    per_class = np.zeros((n_classes, X.shape[1]), dtype=dtype)
    for start in range(0, len(X), _FIT_CHUNK):
        chunk = X[start:start + _FIT_CHUNK].astype(dtype)
        lab = labels[start:start + _FIT_CHUNK]
        for c in np.unique(lab):
            per_class[c] += chunk[lab == c].sum(axis=0)
    W = 2 * per_class - per_class.sum(axis=0, keepdims=True)
    return AMMatrix(W, subject_id, "bipolar" if exact else "real")


def hebbian_fit_features(features: np.ndarray, rows: np.ndarray, labels: Sequence[int], n_classes: int,
                         subject_id: int = 0) -> AMMatrix:
    """Stream raw encoder features ``features[rows]`` through ``to_patterns`` into one memory.

    Equivalent to ``hebbian_fit_arrays(to_patterns(features[rows]), labels, ...)`` without
    materializing the selected rows or their patterns.
    """
    rows = np.asarray(rows)
    labels = np.asarray(labels, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("need at least one row to fit")
    if len(labels) != len(rows):
        raise ValueError(f"{len(rows)} rows but {len(labels)} labels")
    acc, encoding = None, None
    for start in range(0, len(rows), _FIT_CHUNK):
        X = to_patterns(features[rows[start:start + _FIT_CHUNK]])
        part = hebbian_fit_arrays(X, labels[start:start + _FIT_CHUNK], n_classes, subject_id)
        if encoding is not None and part.encoding != encoding:
            raise ValueError("features mix binary spike rows with real-valued rows")
        encoding = part.encoding
        acc = part.W if acc is None else acc + part.W
    return AMMatrix(acc, subject_id, encoding)


def hebbian_fit(pairs: Sequence[PatternPair], subject_id: int = 0) -> AMMatrix:
    """``W = sum_j y_j x_j^T`` over the given pairs."""
    if len(pairs) == 0:
        raise ValueError("hebbian_fit needs at least one pattern pair")
    D, m = pairs[0].x.shape[0], pairs[0].y.shape[0]
    exact = all(np.issubdtype(p.x.dtype, np.integer) for p in pairs)
    W = np.zeros((m, D), dtype=np.int64 if exact else np.float64)
    for i, p in enumerate(pairs):
        if p.x.shape != (D,) or p.y.shape != (m,):
            raise ValueError(f"pair {i} has dims ({p.x.shape}, {p.y.shape}), expected (({D},), ({m},))")
        W += np.outer(p.y, p.x).astype(W.dtype)
    return AMMatrix(W, subject_id, "bipolar" if exact else "real")


def _check_dim(x: np.ndarray, amm: AMMatrix) -> None:
    if x.shape[-1] != amm.dim:
        raise ValueError(f"pattern length {x.shape[-1]} != memory width {amm.dim}")


def classify(x, amm: AMMatrix) -> int | np.ndarray:
    """``argmax W x``; ties go to the lowest class index. Accepts one pattern or a stack."""
    x = np.asarray(x)
    _check_dim(x, amm)
    scores = x @ amm.W.T
    return np.argmax(scores, axis=-1) if x.ndim > 1 else int(np.argmax(scores))


@dataclass
class Retrieval:
    x: np.ndarray
    y: np.ndarray
    converged: bool
    iters: int


def bam_retrieve(x0, amm: AMMatrix, max_iters: int = 32) -> Retrieval:
    """Alternate ``y <- sgn(W x)``, ``x <- sgn(W^T y)`` (simultaneous) until neither changes.

    The initial ``y`` is ``sgn(W x0)``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    x = np.asarray(x0)
    _check_dim(x, amm)
    W = amm.W
    y = sgn(W @ x)
    for it in range(1, max_iters + 1):
        y_new = sgn(W @ x)
        x_new = sgn(W.T @ y)
        stable = np.array_equal(x_new, x) and np.array_equal(y_new, y)
        x, y = x_new, y_new
        if stable:
            return Retrieval(x, y, True, it)
    return Retrieval(x, y, False, max_iters)


def reverse_feature(y, amm: AMMatrix) -> np.ndarray:
    """``W^T y`` without thresholding."""
    y = np.asarray(y)
    if y.shape[-1] != amm.n_classes:
        raise ValueError(f"class vector length {y.shape[-1]} != {amm.n_classes}")
    return amm.W.T @ y


def export_amm(amm: AMMatrix, csv_path, json_path) -> None:
    write_csv(csv_path, [f"f{i}" for i in range(amm.dim)], amm.W.tolist())
    write_json(json_path, {
        "subject_id": int(amm.subject_id),
        "n_classes": amm.n_classes,
        "dim": amm.dim,
        "encoding": amm.encoding,
        "dtype": str(amm.W.dtype),
        "class_names": amm.class_names or [str(c) for c in range(amm.n_classes)],
    })


def import_amm(csv_path, json_path) -> AMMatrix:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    dtype = np.int64 if meta.get("dtype", "int64").startswith("int") else np.float64
    W = np.loadtxt(csv_path, delimiter=",", skiprows=1, dtype=dtype, ndmin=2)
    if W.shape != (meta["n_classes"], meta["dim"]):
        raise ValueError(f"{csv_path}: matrix shape {W.shape} disagrees with sidecar")
    return AMMatrix(W, meta["subject_id"], meta["encoding"], meta["class_names"])
