"""Sparse dataset container and LibSVM ingestion.

Rows are stored CSR-style. An absent entry means *missing*; an explicitly
stored 0.0 is a present value. Binary-classification labels must be 0/1,
regression labels are unrestricted.
"""

from __future__ import annotations

import gzip
import io
import math
import os
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    """Raised on malformed LibSVM input, with the offending line number."""


@dataclass
class DataMatrix:
    """Instance-major sparse matrix with labels and optional weights."""

    indptr: np.ndarray  # int64, length n_rows + 1
    indices: np.ndarray  # int32 feature indices, strictly increasing per row
    values: np.ndarray  # float64, all finite
    labels: np.ndarray  # float64, length n_rows
    n_features: int
    instance_weights: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (feature_indices, values) of row ``i``."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def weights(self) -> np.ndarray:
        if self.instance_weights is None:
            return np.ones(self.n_rows)
        return self.instance_weights

    def validate(self) -> None:
        n = self.n_rows
        if len(self.labels) != n:
            raise ValueError("label length does not match row count")
        if self.instance_weights is not None:
            if len(self.instance_weights) != n:
                raise ValueError("weight length does not match row count")
            if not np.all(self.instance_weights > 0):
                raise ValueError("instance weights must be positive")
        if self.nnz:
            if self.indices.min() < 0 or self.indices.max() >= self.n_features:
                raise ValueError("feature index out of range")
            if not np.all(np.isfinite(self.values)):
                raise ValueError("non-finite feature value")
        for i in range(n):
            idx, _ = self.row(i)
            if len(idx) > 1 and not np.all(np.diff(idx) > 0):
                raise ValueError(f"row {i}: feature indices not strictly increasing")

    def take(self, rows: np.ndarray) -> "DataMatrix":
        """New matrix containing the given rows, in the given order."""
        rows = np.asarray(rows, dtype=np.int64)
        lengths = (self.indptr[rows + 1] - self.indptr[rows]).astype(np.int64)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int32)
        values = np.empty(indptr[-1], dtype=np.float64)
        for out_i, r in enumerate(rows):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            indices[indptr[out_i]:indptr[out_i + 1]] = self.indices[lo:hi]
            values[indptr[out_i]:indptr[out_i + 1]] = self.values[lo:hi]
        w = None if self.instance_weights is None else self.instance_weights[rows]
        return DataMatrix(indptr, indices, values, self.labels[rows], self.n_features, w)

    def stats(self) -> "DatasetStats":
        counts = np.bincount(self.indices, minlength=self.n_features) if self.nnz else np.zeros(self.n_features, dtype=np.int64)
        total_cells = self.n_rows * self.n_features
        density = self.nnz / total_cells if total_cells else 0.0
        return DatasetStats(nnz=self.nnz, density=density, per_feature_counts=counts.astype(np.int64))

    @classmethod
    def from_rows(
        cls,
        rows: list[list[tuple[int, float]]],
        labels,
        n_features: int | None = None,
        instance_weights=None,
    ) -> "DataMatrix":
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum([len(r) for r in rows], out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int32)
        values = np.empty(indptr[-1], dtype=np.float64)
        pos = 0
        for r in rows:
            for j, v in r:
                indices[pos] = j
                values[pos] = v
                pos += 1
        if n_features is None:
            n_features = int(indices.max()) + 1 if len(indices) else 0
        w = None if instance_weights is None else np.asarray(instance_weights, dtype=np.float64)
        m = cls(indptr, indices, values, np.asarray(labels, dtype=np.float64), n_features, w)
        m.validate()
        return m

    @classmethod
    def from_dense(cls, x: np.ndarray, labels, instance_weights=None) -> "DataMatrix":
        """Dense array to a fully-present sparse matrix (no missing cells)."""
        x = np.asarray(x, dtype=np.float64)
        n, m = x.shape
        indptr = np.arange(0, n * m + 1, m, dtype=np.int64)
        indices = np.tile(np.arange(m, dtype=np.int32), n)
        w = None if instance_weights is None else np.asarray(instance_weights, dtype=np.float64)
        return cls(indptr, indices, x.ravel().copy(), np.asarray(labels, dtype=np.float64), m, w)


@dataclass
class DatasetStats:
    nnz: int
    density: float
    per_feature_counts: np.ndarray


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, os.PathLike)):
        if str(source).endswith(".gz"):
            return io.TextIOWrapper(gzip.open(source, "rb"), encoding="utf-8")
        return open(source, "r", encoding="utf-8")
    return source


def parse_libsvm(source, one_based: bool = False, n_features: int | None = None) -> DataMatrix:
    """Parse LibSVM text (``<label> <idx>:<val> ...``) into a DataMatrix.

    ``source`` is a text stream or a path; ``.gz`` paths are decompressed.
    Blank lines are skipped. Unless overridden, n_features is one past the
    largest index seen.
    """
    indices: list[int] = []
    values: list[float] = []
    indptr = [0]
    labels: list[float] = []
    max_index = -1
    stream = _open_text(source)
    close = isinstance(source, (str, os.PathLike))
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad label {parts[0]!r}") from exc
            prev = -1
            for tok in parts[1:]:
                idx_s, _, val_s = tok.partition(":")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError as exc:
                    raise ParseError(f"line {lineno}: malformed token {tok!r}") from exc
                if one_based:
                    idx -= 1
                if idx < 0:
                    raise ParseError(f"line {lineno}: negative feature index in {tok!r}")
                if idx <= prev:
                    raise ParseError(f"line {lineno}: non-increasing feature index {idx}")
                if not math.isfinite(val):
                    raise ParseError(f"line {lineno}: non-finite value in {tok!r}")
                indices.append(idx)
                values.append(val)
                prev = idx
            indptr.append(len(indices))
            max_index = max(max_index, prev)
    finally:
        if close:
            stream.close()
    if n_features is None:
        n_features = max_index + 1
    elif max_index >= n_features:
        raise ParseError(f"feature index {max_index} exceeds configured n_features {n_features}")
    return DataMatrix(
        np.asarray(indptr, dtype=np.int64),
        np.asarray(indices, dtype=np.int32),
        np.asarray(values, dtype=np.float64),
        np.asarray(labels, dtype=np.float64),
        n_features,
    )


def serialize_libsvm(matrix: DataMatrix, stream) -> None:
    """Write LibSVM text with full-precision values (repr round-trips)."""
    for i in range(matrix.n_rows):
        idx, vals = matrix.row(i)
        fields = [repr(float(matrix.labels[i]))]
        fields += [f"{j}:{v!r}" for j, v in zip(idx.tolist(), vals.tolist())]
        stream.write(" ".join(fields) + "\n")


def split_holdout(matrix: DataMatrix, fraction: float, seed: int) -> tuple[DataMatrix, DataMatrix]:
    """Deterministic (train, holdout) partition; no row dropped or duplicated."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = matrix.n_rows
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_hold = min(max(int(round(fraction * n)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    hold = np.sort(perm[:n_hold])
    train = np.sort(perm[n_hold:])
    return matrix.take(train), matrix.take(hold)
