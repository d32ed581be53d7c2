"""Loss functions, per-instance gradient statistics and the closed-form
leaf weight / structure score / split gain of the second-order objective.

Squared error uses the convention l = 1/2 (yhat - y)^2, so h = 1 per unit
weight. Instance weights multiply both g and h.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Loss(enum.Enum):
    SQUARED_ERROR = "squared_error"
    LOGISTIC = "logistic"

    @classmethod
    def from_name(cls, name: str) -> "Loss":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown loss {name!r}")


@dataclass(frozen=True)
class RegParams:
    """Regularization: L2 on leaf weights, per-leaf penalty, shrinkage."""

    reg_lambda: float = 1.0
    gamma: float = 0.0
    eta: float = 0.1

    def __post_init__(self):
        if self.reg_lambda < 0:
            raise ValueError("lambda must be >= 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must be in (0, 1]")


@dataclass
class GradientPairs:
    """First/second-order statistics per instance; h >= 0 everywhere."""

    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        if len(self.g) != len(self.h):
            raise ValueError("g and h length mismatch")


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def gradients(loss: Loss, labels, raw_predictions, instance_weights=None) -> GradientPairs:
    """Gradient pairs of the loss at the given raw (pre-transform) scores."""
    y = np.asarray(labels, dtype=np.float64)
    yhat = np.asarray(raw_predictions, dtype=np.float64)
    if len(y) != len(yhat):
        raise ValueError("labels and predictions length mismatch")
    w = np.ones_like(y) if instance_weights is None else np.asarray(instance_weights, dtype=np.float64)
    if loss is Loss.SQUARED_ERROR:
        g = (yhat - y) * w
        h = w.copy()
    elif loss is Loss.LOGISTIC:
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("logistic loss requires labels in {0, 1}")
        p = sigmoid(yhat)
        g = (p - y) * w
        h = p * (1.0 - p) * w
    else:  # pragma: no cover
        raise ValueError(f"unhandled loss {loss}")
    assert np.all(h >= 0)
    return GradientPairs(g, h)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    """Optimal leaf score -G / (H + lambda)."""
    denom = H + reg_lambda
    if denom <= 0:
        raise ValueError("H + lambda must be positive")
    return -G / denom


def structure_score(leaf_stats, reg_lambda: float, gamma: float) -> float:
    """Quality of a fixed tree structure: -1/2 sum G^2/(H+lambda) + gamma*T."""
    total = 0.0
    count = 0
    for G, H in leaf_stats:
        if H < 0:
            raise ValueError("leaf hessian sum must be >= 0")
        total += G * G / (H + reg_lambda)
        count += 1
    return -0.5 * total + gamma * count


def split_gain(G_L: float, H_L: float, G_R: float, H_R: float, reg_lambda: float, gamma: float) -> float:
    """Loss reduction of splitting (G_L+G_R, H_L+H_R) into the two children."""
    if H_L < 0 or H_R < 0:
        raise ValueError("child hessian sums must be >= 0")
    lam = reg_lambda
    return 0.5 * (
        G_L * G_L / (H_L + lam)
        + G_R * G_R / (H_R + lam)
        - (G_L + G_R) ** 2 / (H_L + H_R + lam)
    ) - gamma


def weighted_regression_view(pairs: GradientPairs) -> tuple[np.ndarray, np.ndarray]:
    """Rewrite the objective as weighted squared loss: labels g/h, weights h.

    Entries with h == 0 are omitted (they contribute nothing to the fit).
    """
    mask = pairs.h > 0
    return pairs.g[mask] / pairs.h[mask], pairs.h[mask].copy()
