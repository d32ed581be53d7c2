"""Evaluation metrics: rank-sum AUC, logloss, RMSE."""

from __future__ import annotations

import numpy as np

PROB_CLIP = 1e-15


def auc(labels, scores) -> float:
    """Probability a random positive outranks a random negative; ties count 1/2."""
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if len(y) != len(s):
        raise ValueError("labels and scores length mismatch")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC requires both classes present")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # average ranks over tied score groups (1-based midranks)
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    mid = 0.5 * (starts + ends - 1) + 1.0
    ranks[order] = np.repeat(mid, ends - starts)
    rank_sum_pos = float(np.sum(ranks[y == 1]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def logloss(labels, probabilities) -> float:
    """Mean negative log-likelihood with probabilities clipped away from 0/1."""
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    if len(y) != len(p):
        raise ValueError("labels and probabilities length mismatch")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def rmse(labels, predictions) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("rmse of empty input")
    if len(y) != len(p):
        raise ValueError("labels and predictions length mismatch")
    return float(np.sqrt(np.mean((y - p) ** 2)))


METRICS = {"auc": auc, "logloss": logloss, "rmse": rmse}
