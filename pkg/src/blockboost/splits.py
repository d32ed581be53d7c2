"""Split search over value-sorted columns.

Three strategies share one vectorized kernel:

* exact greedy - every boundary between consecutive distinct values,
* histogram (approximate) - gains evaluated at proposed thresholds only,
* sparsity-aware - both scan only non-missing entries and learn the
  default direction for missing values from the data.

The frontier engines evaluate all nodes of one tree level in a single
pass over each column; the single-node operations wrap them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .objective import RegParams
from .sketch import prune, summary_from_points, _query_many

_counters = {"entries_scanned": 0, "proposal_calls": 0}


def reset_counters() -> None:
    _counters["entries_scanned"] = 0
    _counters["proposal_calls"] = 0


def counters() -> dict:
    return dict(_counters)


@dataclass
class SplitCandidate:
    """Best split of one node; stats include missing mass on the default side."""

    feature: int
    threshold: float  # go left iff value < threshold
    default_left: bool
    gain: float
    G_L: float
    H_L: float
    G_R: float
    H_R: float


@dataclass
class NodeStats:
    """Aggregate statistics and instance handle of one tree node."""

    G: float
    H: float
    rows: np.ndarray


@dataclass
class ProposalSet:
    """Per-feature sorted candidate thresholds, min/max included."""

    thresholds: dict[int, np.ndarray] = field(default_factory=dict)


class SortedColumns:
    """Feature-major (row, value) pairs globally sorted by value.

    Equal values keep ascending row order, so scans are deterministic
    regardless of how the data was blocked.
    """

    def __init__(self, n_features: int, n_rows: int, col_indptr, rows, values):
        self.n_features = n_features
        self.n_rows = n_rows
        self.col_indptr = col_indptr
        self.rows = rows
        self.values = values

    def feature(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.col_indptr[k], self.col_indptr[k + 1]
        return self.rows[lo:hi], self.values[lo:hi]

    @classmethod
    def from_entries(cls, n_features, n_rows, cols, rows, values) -> "SortedColumns":
        order = np.lexsort((rows, values, cols))
        cols = cols[order]
        rows = np.asarray(rows, dtype=np.int64)[order]
        values = values[order]
        indptr = np.zeros(n_features + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=n_features), out=indptr[1:])
        return cls(n_features, n_rows, indptr, rows, values)

    @classmethod
    def from_matrix(cls, matrix) -> "SortedColumns":
        row_ids = np.repeat(
            np.arange(matrix.n_rows, dtype=np.int64), np.diff(matrix.indptr)
        )
        return cls.from_entries(
            matrix.n_features, matrix.n_rows, matrix.indices, row_ids, matrix.values
        )

    @classmethod
    def from_store(cls, store) -> "SortedColumns":
        """One streaming pass over a block store; blocks may live on disk."""
        cols_parts, rows_parts, vals_parts = [], [], []
        for block in store.iter_blocks():
            counts = np.diff(block.col_indptr)
            cols_parts.append(np.repeat(np.arange(store.n_features, dtype=np.int32), counts))
            rows_parts.append(block.row_begin + block.offsets.astype(np.int64))
            vals_parts.append(block.values)
        return cls.from_entries(
            store.n_features,
            store.n_rows,
            np.concatenate(cols_parts) if cols_parts else np.zeros(0, np.int32),
            np.concatenate(rows_parts) if rows_parts else np.zeros(0, np.int64),
            np.concatenate(vals_parts) if vals_parts else np.zeros(0, np.float64),
        )


def _midpoint_thresholds(v_lo: np.ndarray, v_hi: np.ndarray) -> np.ndarray:
    # guard against midpoints rounding onto the lower value
    t = 0.5 * (v_lo + v_hi)
    return np.where(t > v_lo, t, v_hi)


def _gain(GL, HL, GR, HR, lam, gamma):
    G = GL + GR
    H = HL + HR
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma
    return np.where(np.isnan(val), -np.inf, val)


def _better(new: tuple, cur: tuple | None) -> bool:
    # compare (gain, feature, threshold); higher gain wins, ties prefer
    # lower feature then lower threshold
    if cur is None:
        return True
    if new[0] != cur[0]:
        return new[0] > cur[0]
    if new[1] != cur[1]:
        return new[1] < cur[1]
    return new[2] < cur[2]


def _scan_feature_exact(feature, rows, vals, node_of_row, sub_g, sub_h,
                        node_G, node_H, node_cnt, lam, gamma, min_child):
    """Best exact split per node for one feature column.

    Returns {node_id: (gain, feature, threshold, default_left, GL, HL, GR, HR)}.
    """
    nid = node_of_row[rows]
    keep = nid >= 0
    rows = rows[keep]
    vals = vals[keep]
    nid = nid[keep]
    _counters["entries_scanned"] += len(rows)
    if len(rows) < 2:
        return {}
    order = np.argsort(nid, kind="stable")
    ns = nid[order]
    vs = vals[order]
    gs = sub_g[rows[order]]
    hs = sub_h[rows[order]]

    seg_start = np.flatnonzero(np.r_[True, ns[1:] != ns[:-1]])
    seg_end = np.r_[seg_start[1:], len(ns)]
    seg_node = ns[seg_start]
    seg_of = np.repeat(np.arange(len(seg_start)), seg_end - seg_start)

    cg = np.cumsum(gs)
    ch = np.cumsum(hs)
    off_g = (cg[seg_start] - gs[seg_start])[seg_of]
    off_h = (ch[seg_start] - hs[seg_start])[seg_of]
    GLn = cg - off_g  # non-missing prefix sums in value order
    HLn = ch - off_h
    seg_Gn = GLn[seg_end - 1]  # per-segment non-missing totals
    seg_Hn = HLn[seg_end - 1]

    same_seg = np.r_[seg_of[1:] == seg_of[:-1], False]
    boundary = same_seg.copy()
    boundary[:-1] &= vs[1:] > vs[:-1]
    pos = np.flatnonzero(boundary)
    if len(pos) == 0:
        return {}

    p_node = ns[pos]
    p_seg = seg_of[pos]
    Gt = node_G[p_node]
    Ht = node_H[p_node]
    GL = GLn[pos]
    HL = HLn[pos]
    thr = _midpoint_thresholds(vs[pos], vs[pos + 1])

    # missing goes right: left child is the scanned prefix
    GR_r = Gt - GL
    HR_r = Ht - HL
    gain_r = _gain(GL, HL, GR_r, HR_r, lam, gamma)
    gain_r[(HL < min_child) | (HR_r < min_child)] = -np.inf

    has_missing = (seg_end - seg_start)[p_seg] < node_cnt[p_node]
    if np.any(has_missing):
        # missing goes left: right child is the non-missing suffix
        GR_l = seg_Gn[p_seg] - GL
        HR_l = seg_Hn[p_seg] - HL
        GL_l = Gt - GR_l
        HL_l = Ht - HR_l
        gain_l = _gain(GL_l, HL_l, GR_l, HR_l, lam, gamma)
        gain_l[(HL_l < min_child) | (HR_l < min_child)] = -np.inf
        gain_l[~has_missing] = -np.inf
    else:
        gain_l = np.full(len(pos), -np.inf)

    go_left_default = gain_l > gain_r  # ties default right
    gain = np.where(go_left_default, gain_l, gain_r)

    best: dict[int, tuple] = {}
    starts = np.flatnonzero(np.r_[True, p_node[1:] != p_node[:-1]])
    ends = np.r_[starts[1:], len(pos)]
    for s, e in zip(starts, ends):
        i = s + int(np.argmax(gain[s:e]))
        if not np.isfinite(gain[i]):
            continue
        if go_left_default[i]:
            GR = seg_Gn[p_seg[i]] - GL[i]
            HR = seg_Hn[p_seg[i]] - HL[i]
            cand = (float(gain[i]), feature, float(thr[i]), True,
                    float(Gt[i] - GR), float(Ht[i] - HR), float(GR), float(HR))
        else:
            cand = (float(gain[i]), feature, float(thr[i]), False,
                    float(GL[i]), float(HL[i]), float(Gt[i] - GL[i]), float(Ht[i] - HL[i]))
        best[int(p_node[i])] = cand
    return best


def _hist_best_for_node(feature, props, Gb, Hb, Cb, Gt, Ht, cnt, lam, gamma, min_child):
    """Evaluate bucket boundaries of one (node, feature) histogram."""
    L = len(props)
    if L < 2:
        return None
    cumG = np.cumsum(Gb)
    cumH = np.cumsum(Hb)
    Gn = cumG[-1]
    Hn = cumH[-1]
    nonmissing = int(np.sum(Cb))
    GL = cumG[:-1]
    HL = cumH[:-1]
    GR_r = Gt - GL
    HR_r = Ht - HL
    gain_r = _gain(GL, HL, GR_r, HR_r, lam, gamma)
    gain_r[(HL < min_child) | (HR_r < min_child)] = -np.inf
    if nonmissing < cnt:
        GR_l = Gn - GL
        HR_l = Hn - HL
        GL_l = Gt - GR_l
        HL_l = Ht - HR_l
        gain_l = _gain(GL_l, HL_l, GR_l, HR_l, lam, gamma)
        gain_l[(HL_l < min_child) | (HR_l < min_child)] = -np.inf
    else:
        gain_l = np.full(L - 1, -np.inf)
    go_left = gain_l > gain_r
    gain = np.where(go_left, gain_l, gain_r)
    i = int(np.argmax(gain))
    if not np.isfinite(gain[i]):
        return None
    thr = float(np.nextafter(props[i], np.inf))  # left iff value <= props[i]
    if go_left[i]:
        GR = float(Gn - GL[i])
        HR = float(Hn - HL[i])
        return (float(gain[i]), feature, thr, True, float(Gt - GR), float(Ht - HR), GR, HR)
    return (float(gain[i]), feature, thr, False,
            float(GL[i]), float(HL[i]), float(Gt - GL[i]), float(Ht - HL[i]))


def _scan_feature_hist(feature, rows, vals, node_of_row, sub_g, sub_h,
                       node_G, node_H, node_cnt, lam, gamma, min_child,
                       props=None, eps=None):
    """Histogram split per node for one feature.

    ``props`` gives shared (global) proposals; when None, proposals are
    re-derived per node from the node's h-weighted values (local mode).
    """
    nid = node_of_row[rows]
    keep = nid >= 0
    rows = rows[keep]
    vals = vals[keep]
    nid = nid[keep]
    _counters["entries_scanned"] += len(rows)
    if len(rows) == 0:
        return {}
    best: dict[int, tuple] = {}
    order = np.argsort(nid, kind="stable")
    ns = nid[order]
    vs = vals[order]
    gs = sub_g[rows[order]]
    hs = sub_h[rows[order]]
    starts = np.flatnonzero(np.r_[True, ns[1:] != ns[:-1]])
    ends = np.r_[starts[1:], len(ns)]
    for s, e in zip(starts, ends):
        node = int(ns[s])
        v = vs[s:e]
        g_seg = gs[s:e]
        h_seg = hs[s:e]
        if props is None:
            if not np.any(h_seg > 0):
                continue
            node_props = propose_candidates(v, h_seg, eps)
        else:
            node_props = props
        L = len(node_props)
        # bucket v: values in (props[v-1], props[v]]
        bucket = np.clip(np.searchsorted(node_props, v, side="left"), 0, L - 1)
        Gb = np.bincount(bucket, weights=g_seg, minlength=L)
        Hb = np.bincount(bucket, weights=h_seg, minlength=L)
        Cb = np.bincount(bucket, minlength=L)
        cand = _hist_best_for_node(
            feature, node_props, Gb, Hb, Cb,
            float(node_G[node]), float(node_H[node]), int(node_cnt[node]),
            lam, gamma, min_child,
        )
        if cand is not None:
            best[node] = cand
    return best


def _run_feature_scans(columns, features, scan_one, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(scan_one, features))
    else:
        results = [scan_one(k) for k in features]
    merged: dict[int, tuple] = {}
    for per_feature in results:  # features ascending: ties resolve to low feature
        for node, cand in per_feature.items():
            if _better(cand, merged.get(node)):
                merged[node] = cand
    return {
        node: SplitCandidate(c[1], c[2], c[3], c[0], c[4], c[5], c[6], c[7])
        for node, c in merged.items()
        if c[0] > 0.0
    }


def best_splits_exact(columns: SortedColumns, features, node_of_row, sub_g, sub_h,
                      node_G, node_H, node_cnt, params: RegParams,
                      min_child: float = 0.0, threads: int = 1) -> dict[int, SplitCandidate]:
    """Best exact (sparsity-aware) split for every frontier node at once."""
    lam, gamma = params.reg_lambda, params.gamma

    def scan_one(k):
        rows, vals = columns.feature(k)
        return _scan_feature_exact(k, rows, vals, node_of_row, sub_g, sub_h,
                                   node_G, node_H, node_cnt, lam, gamma, min_child)

    return _run_feature_scans(columns, features, scan_one, threads)


def best_splits_hist(columns: SortedColumns, features, node_of_row, sub_g, sub_h,
                     node_G, node_H, node_cnt, params: RegParams,
                     proposals: dict[int, np.ndarray] | None = None,
                     eps: float | None = None,
                     min_child: float = 0.0, threads: int = 1) -> dict[int, SplitCandidate]:
    """Histogram split for every frontier node.

    Pass ``proposals`` for the global variant; pass ``eps`` alone for the
    local variant (proposals re-derived per node).
    """
    if proposals is None and eps is None:
        raise ValueError("need proposals (global) or eps (local)")
    lam, gamma = params.reg_lambda, params.gamma

    def scan_one(k):
        rows, vals = columns.feature(k)
        props = None if proposals is None else proposals.get(k)
        if proposals is not None and props is None:
            return {}
        return _scan_feature_hist(k, rows, vals, node_of_row, sub_g, sub_h,
                                  node_G, node_H, node_cnt, lam, gamma, min_child,
                                  props=props, eps=eps)

    return _run_feature_scans(columns, features, scan_one, threads)


def propose_candidates(values, h_weights, eps: float) -> np.ndarray:
    """Candidate thresholds whose adjacent weighted-rank gaps stay below
    eps times the total hessian mass, min and max included.

    Built from a weighted quantile summary pruned to ceil(1/eps)+1 entries
    and queried at evenly spaced ranks; where the selected points still
    leave a provable rank gap >= eps * total, intermediate summary entries
    are added (down to consecutive entries, which cannot be refined).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(h_weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("h-weights must be >= 0")
    mask = w > 0
    if not np.any(mask):
        raise ValueError("all h-weights are zero; node should be a leaf")
    _counters["proposal_calls"] += 1
    s = summary_from_points(v[mask], w[mask])
    budget = math.ceil(1.0 / eps) + 1
    if len(s) > budget + 1:
        s = prune(s, budget)
    total = s.total_weight
    ds = np.minimum(np.arange(math.ceil(1.0 / eps) + 1, dtype=np.float64) * eps * total, total)
    ds = np.unique(np.r_[ds, total])
    picked = np.unique(_query_many(s, ds))
    sel = set(np.searchsorted(s.xs, picked).tolist())
    sel.add(0)
    sel.add(len(s) - 1)
    # refine any pair whose rank-band gap could reach eps * total
    ordered = sorted(sel)
    stack = list(zip(ordered[:-1], ordered[1:]))
    while stack:
        ia, ib = stack.pop()
        if ib - ia <= 1:
            continue
        if s.rmax[ib] - s.w[ib] - s.rmin[ia] < eps * total:
            continue
        mid = (ia + ib) // 2
        sel.add(mid)
        stack.append((ia, mid))
        stack.append((mid, ib))
    return s.xs[sorted(sel)]


def _node_arrays(node: NodeStats, n_rows: int):
    node_of_row = np.full(n_rows, -1, dtype=np.int64)
    node_of_row[node.rows] = 0
    node_G = np.asarray([node.G])
    node_H = np.asarray([node.H])
    node_cnt = np.asarray([len(node.rows)])
    return node_of_row, node_G, node_H, node_cnt


def sparsity_aware_split(node: NodeStats, columns: SortedColumns, sub_g, sub_h,
                         params: RegParams, min_child_hessian: float = 0.0,
                         features=None) -> SplitCandidate | None:
    """Best split of one node, scanning only non-missing entries and
    learning the default direction for missing values."""
    node_of_row, node_G, node_H, node_cnt = _node_arrays(node, columns.n_rows)
    if features is None:
        features = range(columns.n_features)
    found = best_splits_exact(columns, features, node_of_row, sub_g, sub_h,
                              node_G, node_H, node_cnt, params, min_child_hessian)
    return found.get(0)


def exact_greedy(node: NodeStats, columns: SortedColumns, sub_g, sub_h,
                 params: RegParams, min_child_hessian: float = 0.0,
                 features=None) -> SplitCandidate | None:
    """Exact greedy enumeration of every value boundary.

    Missing entries are handled by the sparsity-aware scan, which reduces
    to the dense algorithm when every entry is present.
    """
    return sparsity_aware_split(node, columns, sub_g, sub_h, params,
                                min_child_hessian, features)


def histogram_split(node: NodeStats, proposals: ProposalSet | dict, columns: SortedColumns,
                    sub_g, sub_h, params: RegParams,
                    min_child_hessian: float = 0.0) -> SplitCandidate | None:
    """Best split of one node evaluated at proposed thresholds only."""
    if isinstance(proposals, ProposalSet):
        proposals = proposals.thresholds
    node_of_row, node_G, node_H, node_cnt = _node_arrays(node, columns.n_rows)
    found = best_splits_hist(columns, sorted(proposals.keys()), node_of_row, sub_g, sub_h,
                             node_G, node_H, node_cnt, params,
                             proposals=proposals, min_child=min_child_hessian)
    return found.get(0)
