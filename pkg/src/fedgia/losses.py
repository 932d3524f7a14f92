"""Per-client loss functions, gradients, and curvature bounds.

Three loss families are supported: plain least squares, l2-regularized
logistic regression, and logistic regression with a nonconvex smoothed-l0
style regularizer. Each client holds a dense feature matrix A (one sample
per row) and a label vector b; all losses are normalized by the client's
sample count.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

Array = np.ndarray


class LossKind(str, Enum):
    LEAST_SQUARES = "ls"
    LOGISTIC_L2 = "logl2"
    LOGISTIC_NONCONVEX = "lognc"


_DEFAULT_MU = {
    LossKind.LEAST_SQUARES: 0.0,
    LossKind.LOGISTIC_L2: 0.001,
    LossKind.LOGISTIC_NONCONVEX: 0.01,
}


@dataclass
class LossModel:
    """A loss family plus its regularization weight."""

    kind: LossKind
    mu: float | None = None

    def __post_init__(self):
        self.kind = LossKind(self.kind)
        if self.mu is None:
            self.mu = _DEFAULT_MU[self.kind]
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")

    @property
    def is_logistic(self) -> bool:
        return self.kind in (LossKind.LOGISTIC_L2, LossKind.LOGISTIC_NONCONVEX)


@dataclass
class ClientDataset:
    """One client's samples: features (d x n, one sample per row) and labels (d,)."""

    features: Array
    labels: Array

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"labels length {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError("dataset must have at least one sample and one feature")

    @property
    def d(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @cached_property
    def gram(self) -> Array:
        """A^T A, computed once and reused by both curvature-bound variants."""
        return self.features.T @ self.features


class BoundVariant(str, Enum):
    GRAM = "gram"
    DIAGONAL = "diag"


@dataclass
class CurvatureBound:
    """PSD surrogate curvature: a full Gram-style matrix or a scalar multiple of I."""

    variant: BoundVariant
    matrix: Array | None = None  # n x n symmetric PSD, Gram variant only
    scale: float = 0.0  # c meaning c*I, Diagonal variant only

    def norm(self) -> float:
        if self.variant is BoundVariant.GRAM:
            return spectral_norm(self.matrix)
        return self.scale

    def apply(self, v: Array) -> Array:
        if self.variant is BoundVariant.GRAM:
            return self.matrix @ v
        return self.scale * v


def coerce_binary_labels(labels: Array) -> Array:
    """Map {-1,+1} labels to {0,1}; reject anything outside {0,1,-1,+1}."""
    labels = np.asarray(labels, dtype=np.float64)
    ok01 = np.isin(labels, (0.0, 1.0))
    if ok01.all():
        return labels
    okpm = np.isin(labels, (-1.0, 1.0))
    if okpm.all():
        logger.info("remapping {-1,+1} labels to {0,1}")
        return np.where(labels < 0, 0.0, 1.0)
    bad = labels[~(ok01 | okpm)]
    raise ValueError(f"labels must lie in {{0,1}} or {{-1,+1}}; found {bad[:5]}")


def _check_dim(data: ClientDataset, x: Array) -> Array:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (data.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({data.n},)")
    return x


def _sigmoid(t: Array) -> Array:
    # tanh form is overflow-free for large |t|
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def loss_value(model: LossModel, data: ClientDataset, x: Array) -> float:
    x = _check_dim(data, x)
    z = data.features @ x
    d = data.d
    if model.kind is LossKind.LEAST_SQUARES:
        r = z - data.labels
        return float(0.5 / d * (r @ r))
    # np.logaddexp(0, z) == ln(1 + e^z) without overflow
    core = float(np.logaddexp(0.0, z).sum() - data.labels @ z)
    if model.kind is LossKind.LOGISTIC_L2:
        return (core + 0.5 * model.mu * (x @ x)) / d
    reg = 0.5 * model.mu * float(np.sum(x * x / (1.0 + x * x)))
    return (core + reg) / d


def loss_gradient(model: LossModel, data: ClientDataset, x: Array) -> Array:
    x = _check_dim(data, x)
    z = data.features @ x
    d = data.d
    if model.kind is LossKind.LEAST_SQUARES:
        return data.features.T @ (z - data.labels) / d
    g = data.features.T @ (_sigmoid(z) - data.labels) / d
    if model.kind is LossKind.LOGISTIC_L2:
        return g + (model.mu / d) * x
    return g + (model.mu / d) * x / (1.0 + x * x) ** 2


def curvature_bound(
    model: LossModel, data: ClientDataset, variant: BoundVariant | str
) -> CurvatureBound:
    """Per-client surrogate curvature H_i, Gram matrix or scalar diagonal form."""
    variant = BoundVariant(variant)
    B = data.gram
    d = data.d
    if model.kind is LossKind.LEAST_SQUARES:
        if variant is BoundVariant.GRAM:
            return CurvatureBound(variant, matrix=B / d)
        return CurvatureBound(variant, scale=spectral_norm(B) / d)
    if model.kind is LossKind.LOGISTIC_L2:
        if variant is BoundVariant.GRAM:
            return CurvatureBound(variant, matrix=B / (4 * d))
        return CurvatureBound(variant, scale=spectral_norm(B) / (4 * d))
    if variant is BoundVariant.GRAM:
        H = B / (4 * d) + (model.mu / d) * np.eye(data.n)
        return CurvatureBound(variant, matrix=H)
    return CurvatureBound(variant, scale=(spectral_norm(B) + 4 * model.mu) / (4 * d))


def spectral_norm(B: Array, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix via power iteration.

    Deterministic all-ones start vector; warns and returns the best estimate
    if the iteration cap is reached.
    """
    B = np.asarray(B, dtype=np.float64)
    n = B.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        lam_new = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    warnings.warn("power iteration did not converge; returning best estimate")
    return lam
