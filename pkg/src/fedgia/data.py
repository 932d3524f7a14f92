"""Synthetic non-i.i.d. data generation, dataset partitioning, and file loaders."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import ClientDataset, LossModel, coerce_binary_labels

Array = np.ndarray


class DataFormatError(ValueError):
    """Raised when an input file does not parse."""


@dataclass
class SyntheticSpec:
    """Parameters for the non-i.i.d. linear regression generator."""

    m: int
    n: int = 100
    d_range: tuple[int, int] = (50, 150)
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")
        lo, hi = self.d_range
        if lo < 1 or lo > hi:
            raise ValueError(f"invalid per-client size range {self.d_range}")


@dataclass
class FederatedProblem:
    """A fixed split of samples across clients plus the loss they share."""

    clients: list[ClientDataset]
    loss: LossModel
    n: int

    def __post_init__(self):
        if not self.clients:
            raise ValueError("problem needs at least one client")
        for c in self.clients:
            if c.n != self.n:
                raise ValueError("all clients must share the feature dimension")
        if self.loss.is_logistic:
            for c in self.clients:
                c.labels = coerce_binary_labels(c.labels)

    @property
    def m(self) -> int:
        return len(self.clients)

    @property
    def d(self) -> int:
        return sum(c.d for c in self.clients)

    def digest(self) -> str:
        """Content hash over all client arrays; equal hashes mean identical data."""
        h = hashlib.sha256()
        for c in self.clients:
            h.update(np.ascontiguousarray(c.features).tobytes())
            h.update(np.ascontiguousarray(c.labels).tobytes())
        return h.hexdigest()


def _student_t5(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    # explicit ratio-of-normals construction keeps the stream portable
    z = rng.standard_normal(shape)
    chi2 = np.sum(rng.standard_normal(shape + (5,)) ** 2, axis=-1)
    return z / np.sqrt(chi2 / 5.0)


def generate_linear_noniid(spec: SyntheticSpec, loss: LossModel | None = None) -> FederatedProblem:
    """Draw pooled samples from three distributions, shuffle, split contiguously.

    Each sample row (features and label jointly) comes from one of: standard
    normal, Student's t with 5 degrees of freedom, or uniform on [-5, 5].
    Deterministic given the spec's seed.
    """
    if loss is None:
        loss = LossModel("ls")
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.d_range
    sizes = rng.integers(lo, hi + 1, size=spec.m)
    d = int(sizes.sum())
    k1 = math.ceil(d / 3)
    k2 = math.ceil(d / 3)
    k3 = d - k1 - k2
    cols = spec.n + 1
    blocks = [
        rng.standard_normal((k1, cols)),
        _student_t5(rng, (k2, cols)),
        rng.uniform(-5.0, 5.0, size=(k3, cols)),
    ]
    pool = np.concatenate(blocks, axis=0)
    pool = pool[rng.permutation(d)]
    clients = []
    start = 0
    for sz in sizes:
        part = pool[start : start + sz]
        clients.append(ClientDataset(part[:, : spec.n], part[:, spec.n]))
        start += sz
    return FederatedProblem(clients, loss, spec.n)


def partition_dataset(
    features: Array, labels: Array, m: int, seed: int, loss: LossModel | None = None
) -> FederatedProblem:
    """Randomly permute rows and split into m near-equal contiguous groups."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    d, n = features.shape
    if d < m:
        raise ValueError(f"cannot split {d} samples into {m} clients")
    if loss is None:
        loss = LossModel("ls")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d)
    features = features[perm]
    labels = labels[perm]
    base, extra = divmod(d, m)
    clients = []
    start = 0
    for i in range(m):
        sz = base + (1 if i < extra else 0)
        clients.append(ClientDataset(features[start : start + sz], labels[start : start + sz]))
        start += sz
    return FederatedProblem(clients, loss, n)


def load_dataset(
    path: str,
    fmt: str = "csv",
    n_features: int | None = None,
    skip_header: bool = False,
) -> tuple[Array, Array]:
    """Load a dense (features, labels) pair from a CSV or LIBSVM file.

    CSV: comma-separated, last column is the label. LIBSVM: lines of
    "<label> <idx>:<val> ..." with 1-based indices.
    """
    fmt = fmt.lower()
    if fmt == "csv":
        return _load_csv(path, skip_header)
    if fmt == "libsvm":
        return _load_libsvm(path, n_features)
    raise ValueError(f"unknown dataset format {fmt!r}")


def _load_csv(path: str, skip_header: bool) -> tuple[Array, Array]:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and skip_header:
                continue
            line = line.strip("\r\n")
            if not line:
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if width is None:
                width = len(vals)
                if width < 2:
                    raise DataFormatError(f"{path}: line {lineno}: need >= 2 columns")
            elif len(vals) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(vals)}"
                )
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    mat = np.asarray(rows, dtype=np.float64)
    return mat[:, :-1], mat[:, -1]


def _load_libsvm(path: str, n_features: int | None) -> tuple[Array, Array]:
    labels = []
    entries = []  # per row: list of (0-based col, value)
    max_idx = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split()
            try:
                labels.append(float(toks[0]))
                row = []
                for tok in toks[1:]:
                    idx_s, val_s = tok.split(":", 1)
                    idx = int(idx_s)
                    if idx < 1:
                        raise ValueError(f"index {idx} is not 1-based")
                    row.append((idx - 1, float(val_s)))
                    max_idx = max(max_idx, idx)
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            entries.append(row)
    if not entries:
        raise DataFormatError(f"{path}: no data rows")
    n = n_features if n_features is not None else max_idx
    if max_idx > n:
        raise DataFormatError(f"{path}: feature index {max_idx} exceeds n={n}")
    features = np.zeros((len(entries), n))
    for i, row in enumerate(entries):
        for j, v in row:
            features[i, j] = v
    return features, np.asarray(labels)
