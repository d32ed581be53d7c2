"""Weighted quantile summary with tracked approximation error.

A summary stores distinct positions with lower/upper rank bounds
(rmin, rmax) and a point weight w. Construction from raw points is
exact (eps = 0); merging two summaries keeps max(eps_a, eps_b); pruning
to a budget of b adds 1/b. Rank bookkeeping is float, so all invariant
checks carry a small relative slack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

#: relative slack for float rank arithmetic in <=-style checks
RANK_SLACK = 1e-12


class SummaryEntry(NamedTuple):
    x: float
    rmin: float
    rmax: float
    w: float


@dataclass(frozen=True)
class WeightedQuantileSummary:
    xs: np.ndarray  # distinct positions, strictly increasing
    rmin: np.ndarray  # lower bound on rank strictly below x
    rmax: np.ndarray  # upper bound on rank up to and including x
    w: np.ndarray  # weight attributed to x
    total_weight: float
    eps: float

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def entries(self) -> Iterator[SummaryEntry]:
        for i in range(len(self.xs)):
            yield SummaryEntry(self.xs[i], self.rmin[i], self.rmax[i], self.w[i])


def summary_from_points(values, weights) -> WeightedQuantileSummary:
    """Exact (eps = 0) summary of a weighted multiset.

    Duplicate positions have their weights pooled; rmin/rmax are the true
    strictly-below / up-to-and-including weighted ranks.
    """
    x = np.asarray(values, dtype=np.float64)
    wt = np.asarray(weights, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("cannot summarize an empty multiset")
    if len(x) != len(wt):
        raise ValueError("values and weights length mismatch")
    if not np.all(wt > 0):
        raise ValueError("weights must be positive")
    if not np.all(np.isfinite(x)):
        raise ValueError("positions must be finite")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = wt[order]
    boundary = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    uniq = xs[boundary]
    pooled = np.add.reduceat(ws, boundary)
    rmax = np.cumsum(pooled)
    rmin = rmax - pooled
    return WeightedQuantileSummary(uniq, rmin, rmax, pooled, float(rmax[-1]), 0.0)


def _extended_arrays(s: WeightedQuantileSummary, ys: np.ndarray):
    """Vectorized extension of (rmin, rmax, w) to arbitrary positions."""
    idx = np.searchsorted(s.xs, ys, side="left")
    k = len(s.xs)
    exact = (idx < k) & (s.xs[np.minimum(idx, k - 1)] == ys)
    rmin = np.empty(len(ys))
    rmax = np.empty(len(ys))
    w = np.zeros(len(ys))
    # exact hits copy the entry
    e = np.flatnonzero(exact)
    rmin[e] = s.rmin[idx[e]]
    rmax[e] = s.rmax[idx[e]]
    w[e] = s.w[idx[e]]
    miss = np.flatnonzero(~exact)
    mi = idx[miss]
    below = mi == 0  # y < x_1
    above = mi == k  # y > x_k
    between = ~(below | above)
    rmin[miss[below]] = 0.0
    rmax[miss[below]] = 0.0
    rmin[miss[above]] = s.rmax[-1]
    rmax[miss[above]] = s.rmax[-1]
    b = miss[between]
    bi = mi[between]
    rmin[b] = s.rmin[bi - 1] + s.w[bi - 1]
    rmax[b] = s.rmax[bi] - s.w[bi]
    return rmin, rmax, w


def extended_ranks(s: WeightedQuantileSummary, y: float) -> tuple[float, float, float]:
    """(rmin, rmax, w) of the summary's rank functions extended to any y."""
    rmin, rmax, w = _extended_arrays(s, np.asarray([y], dtype=np.float64))
    return float(rmin[0]), float(rmax[0]), float(w[0])


def merge(a: WeightedQuantileSummary, b: WeightedQuantileSummary) -> WeightedQuantileSummary:
    """Combine two summaries; the result tracks max(eps_a, eps_b).

    Output positions are the union of both entry sets and each rank field
    is the sum of the two inputs' extended rank functions at that point.
    """
    xs = np.union1d(a.xs, b.xs)
    rmin_a, rmax_a, w_a = _extended_arrays(a, xs)
    rmin_b, rmax_b, w_b = _extended_arrays(b, xs)
    return WeightedQuantileSummary(
        xs,
        rmin_a + rmin_b,
        rmax_a + rmax_b,
        w_a + w_b,
        a.total_weight + b.total_weight,
        max(a.eps, b.eps),
    )


def _query_many(s: WeightedQuantileSummary, ds: np.ndarray) -> np.ndarray:
    """Vectorized rank query: position whose rank band is closest to d."""
    mids = 0.5 * (s.rmin + s.rmax)
    two_d = 2.0 * ds
    out = np.empty(len(ds))
    lo = two_d < s.rmin[0] + s.rmax[0]
    hi = two_d >= s.rmin[-1] + s.rmax[-1]
    out[lo] = s.xs[0]
    out[hi] = s.xs[-1]
    mid_mask = ~(lo | hi)
    # mids[i] <= d < mids[i+1]; ties on the boundary take the higher interval
    i = np.searchsorted(mids, ds[mid_mask], side="right") - 1
    left_better = two_d[mid_mask] < s.rmin[i] + s.w[i] + s.rmax[i + 1] - s.w[i + 1]
    out[mid_mask] = np.where(left_better, s.xs[i], s.xs[i + 1])
    return out


def query(s: WeightedQuantileSummary, d: float) -> float:
    """Return the stored position whose rank is closest to d in [0, total]."""
    if d < 0 or d > s.total_weight:
        raise ValueError("query rank outside [0, total_weight]")
    return float(_query_many(s, np.asarray([d], dtype=np.float64))[0])


def prune(s: WeightedQuantileSummary, b: int) -> WeightedQuantileSummary:
    """Shrink to at most b+1 entries; the tracked eps grows by 1/b.

    Kept positions are rank queries at i/b of the total weight for
    i = 0..b, de-duplicated; their rank fields are copied unchanged.
    """
    if b < 1:
        raise ValueError("prune budget must be >= 1")
    ds = np.arange(b + 1, dtype=np.float64) / b * s.total_weight
    picked = _query_many(s, ds)
    keep_x = np.unique(picked)  # sorted, first occurrence semantics
    idx = np.searchsorted(s.xs, keep_x)
    return WeightedQuantileSummary(
        s.xs[idx],
        s.rmin[idx],
        s.rmax[idx],
        s.w[idx],
        s.total_weight,
        s.eps + 1.0 / b,
    )


def measured_eps(s: WeightedQuantileSummary) -> float:
    """Largest rank-band gap over the summary, normalized by total weight.

    This is the observed approximation level: the max over per-entry bands
    (rmax - rmin - w) and consecutive-entry gaps
    (rmax[i+1] - rmin[i] - w[i+1] - w[i]).
    """
    point = np.max(s.rmax - s.rmin - s.w)
    if len(s.xs) > 1:
        gap = np.max(s.rmax[1:] - s.rmin[:-1] - s.w[1:] - s.w[:-1])
        point = max(point, gap)
    return float(point / s.total_weight) if s.total_weight > 0 else 0.0


def validate_summary(s: WeightedQuantileSummary) -> None:
    """Check every structural invariant; raises ValueError on violation."""
    slack = RANK_SLACK * max(s.total_weight, 1.0)
    if len(s.xs) == 0:
        raise ValueError("empty summary")
    if not np.all(np.isfinite(s.xs)):
        raise ValueError("non-finite position")
    if len(s.xs) > 1 and not np.all(np.diff(s.xs) > 0):
        raise ValueError("positions not strictly increasing")
    if np.any(s.w < -slack) or np.any(s.rmin < -slack):
        raise ValueError("negative rank field")
    if np.any(s.rmin + s.w > s.rmax + slack):
        raise ValueError("rmin + w > rmax")
    if abs(s.rmin[0]) > slack or abs(s.rmax[0] - s.w[0]) > slack:
        raise ValueError("first entry not exact at the minimum")
    if abs(s.rmax[-1] - s.total_weight) > slack:
        raise ValueError("last entry rmax != total weight")
    if abs(s.rmin[-1] + s.w[-1] - s.total_weight) > slack:
        raise ValueError("last entry not exact at the maximum")
    if len(s.xs) > 1:
        if np.any(s.rmin[:-1] + s.w[:-1] > s.rmin[1:] + slack):
            raise ValueError("rmin ordering violated")
        if np.any(s.rmax[:-1] > s.rmax[1:] - s.w[1:] + slack):
            raise ValueError("rmax ordering violated")
    if measured_eps(s) > s.eps + RANK_SLACK:
        raise ValueError("measured eps exceeds tracked eps")


def to_text(s: WeightedQuantileSummary) -> str:
    """Debug serialization; not a stability-guaranteed format."""
    lines = [f"{float(s.total_weight)!r} {float(s.eps)!r}"]
    lines += [f"{float(x)!r} {float(a)!r} {float(b)!r} {float(w)!r}" for x, a, b, w in s.entries]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> WeightedQuantileSummary:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    total, eps = (float(t) for t in lines[0].split())
    rows = np.asarray([[float(t) for t in ln.split()] for ln in lines[1:]])
    return WeightedQuantileSummary(rows[:, 0], rows[:, 1], rows[:, 2], rows[:, 3], total, eps)
