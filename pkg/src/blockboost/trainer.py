"""Boosting loop: gradient refresh, level-wise tree growth over sorted
column blocks, shrinkage, column subsampling and model (de)serialization.

Trees are grown breadth-first to max_depth; all frontier nodes of a level
are evaluated in one pass per column. Leaf weights are shrunk by eta at
the time they are stored, and the training prediction cache is updated
incrementally, so predict() on training rows reproduces it bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .blocks import BlockStore, BlockStoreConfig, build_blocks
from .data import DataMatrix
from .objective import Loss, RegParams, gradients, sigmoid
from .splits import SortedColumns, best_splits_exact, best_splits_hist, propose_candidates

TREE_METHODS = ("exact", "approx_global", "approx_local")


@dataclass
class TrainConfig:
    num_rounds: int
    max_depth: int = 8
    eta: float = 0.1
    reg_lambda: float = 1.0
    gamma: float = 0.0
    colsample: float = 1.0
    subsample: float = 1.0
    tree_method: str = "exact"
    eps: float = 0.03
    seed: int = 0
    min_child_hessian: float = 0.0
    loss: str = "squared_error"
    threads: int = 0  # 0 = auto

    def __post_init__(self):
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.colsample <= 1:
            raise ValueError("colsample must be in (0, 1]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.tree_method not in TREE_METHODS:
            raise ValueError(f"tree_method must be one of {TREE_METHODS}")
        if not 0 < self.eps < 1:
            raise ValueError("eps must be in (0, 1)")
        if self.min_child_hessian < 0:
            raise ValueError("min_child_hessian must be >= 0")
        Loss.from_name(self.loss)
        RegParams(self.reg_lambda, self.gamma, self.eta)

    def reg_params(self) -> RegParams:
        return RegParams(self.reg_lambda, self.gamma, self.eta)


@dataclass
class Tree:
    """Binary tree in parallel arrays indexed by node id (root = 0)."""

    feature: list[int] = field(default_factory=list)  # -1 for leaves
    threshold: list[float] = field(default_factory=list)
    default_left: list[bool] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    weight: list[float] = field(default_factory=list)  # leaf score, eta included

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(0.0)
        return len(self.feature) - 1

    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    base_score: float
    loss: Loss
    n_features: int


class _PredictColumns:
    """Lazy dense per-feature value arrays with NaN marking missing cells."""

    def __init__(self, matrix: DataMatrix):
        self.matrix = matrix
        self._cache: dict[int, np.ndarray] = {}

    def col(self, k: int) -> np.ndarray:
        arr = self._cache.get(k)
        if arr is None:
            arr = np.full(self.matrix.n_rows, np.nan)
            if k < self.matrix.n_features:
                mask = self.matrix.indices == k
                rows = np.searchsorted(
                    self.matrix.indptr, np.flatnonzero(mask), side="right") - 1
                arr[rows] = self.matrix.values[mask]
            self._cache[k] = arr
        return arr


def _predict_tree(tree: Tree, cols: _PredictColumns, n: int) -> np.ndarray:
    """Leaf weight per row for one tree; missing follows default directions."""
    assign = np.zeros(n, dtype=np.int64)
    for nid in range(tree.n_nodes()):
        if tree.feature[nid] < 0:
            continue
        at = np.flatnonzero(assign == nid)
        if len(at) == 0:
            continue
        vals = cols.col(tree.feature[nid])[at]
        go_left = vals < tree.threshold[nid]  # NaN compares False
        missing = np.isnan(vals)
        if tree.default_left[nid]:
            go_left |= missing
        assign[at] = np.where(go_left, tree.left[nid], tree.right[nid])
    weights = np.asarray(tree.weight)
    return weights[assign]


def _as_matrix(rows, n_features: int) -> DataMatrix:
    if isinstance(rows, DataMatrix):
        return rows
    return DataMatrix.from_rows(
        [list(r) for r in rows], np.zeros(len(rows)), n_features=max(
            n_features, 1 + max((j for r in rows for j, _ in r), default=-1))
    )


def predict(ensemble: TreeEnsemble, rows, output_margin: bool = False) -> np.ndarray:
    """Ensemble scores per row: base score plus the sum of tree outputs.

    For logistic loss the result is a probability unless ``output_margin``
    requests the raw (logit-scale) score.
    """
    matrix = _as_matrix(rows, ensemble.n_features)
    cols = _PredictColumns(matrix)
    out = np.full(matrix.n_rows, ensemble.base_score)
    for tree in ensemble.trees:
        out += _predict_tree(tree, cols, matrix.n_rows)
    if ensemble.loss is Loss.LOGISTIC and not output_margin:
        return sigmoid(out)
    return out


def _global_proposals(columns: SortedColumns, features, h: np.ndarray, eps: float):
    props = {}
    for k in features:
        rows, vals = columns.feature(k)
        if len(rows) == 0:
            continue
        hw = h[rows]
        if not np.any(hw > 0):
            continue
        props[k] = propose_candidates(vals, hw, eps)
    return props


def _grow_tree(columns: SortedColumns, g, h, features, config: TrainConfig,
               threads: int) -> tuple[Tree, np.ndarray]:
    """Grow one tree level-wise; returns the tree and each row's leaf id."""
    n = columns.n_rows
    params = config.reg_params()
    tree = Tree()
    tree.add_node()
    node_of_row = np.zeros(n, dtype=np.int64)
    frontier = [0]
    lam = config.reg_lambda

    proposals = None
    if config.tree_method == "approx_global":
        proposals = _global_proposals(columns, features, h, config.eps)

    for depth in range(config.max_depth + 1):
        if not frontier:
            break
        size = tree.n_nodes()
        node_G = np.bincount(node_of_row, weights=g, minlength=size)
        node_H = np.bincount(node_of_row, weights=h, minlength=size)
        node_cnt = np.bincount(node_of_row, minlength=size)

        def finalize(nid):
            denom = node_H[nid] + lam
            tree.weight[nid] = config.eta * (-node_G[nid] / denom) if denom > 0 else 0.0

        if depth == config.max_depth:
            for nid in frontier:
                finalize(nid)
            break

        # mask non-frontier rows out of the scan
        scan_nodes = np.full(size, -1, dtype=np.int64)
        scan_nodes[frontier] = frontier
        scan_map = scan_nodes[node_of_row]

        if config.tree_method == "exact":
            found = best_splits_exact(columns, features, scan_map, g, h,
                                      node_G, node_H, node_cnt, params,
                                      config.min_child_hessian, threads)
        elif config.tree_method == "approx_global":
            found = best_splits_hist(columns, features, scan_map, g, h,
                                     node_G, node_H, node_cnt, params,
                                     proposals=proposals,
                                     min_child=config.min_child_hessian, threads=threads)
        else:
            found = best_splits_hist(columns, features, scan_map, g, h,
                                     node_G, node_H, node_cnt, params,
                                     eps=config.eps,
                                     min_child=config.min_child_hessian, threads=threads)

        next_frontier = []
        split_nodes = []
        for nid in frontier:
            cand = found.get(nid)
            if cand is None:
                finalize(nid)
                continue
            left = tree.add_node()
            right = tree.add_node()
            tree.feature[nid] = cand.feature
            tree.threshold[nid] = cand.threshold
            tree.default_left[nid] = cand.default_left
            tree.left[nid] = left
            tree.right[nid] = right
            split_nodes.append(nid)
            next_frontier += [left, right]
        if not split_nodes:
            break

        # route rows: present values by threshold, the rest by default
        size = tree.n_nodes()
        thr = np.zeros(size)
        left_child = np.zeros(size, dtype=np.int64)
        right_child = np.zeros(size, dtype=np.int64)
        default_child = np.full(size, -1, dtype=np.int64)
        split_on = {}
        for nid in split_nodes:
            thr[nid] = tree.threshold[nid]
            left_child[nid] = tree.left[nid]
            right_child[nid] = tree.right[nid]
            default_child[nid] = tree.left[nid] if tree.default_left[nid] else tree.right[nid]
            split_on.setdefault(tree.feature[nid], []).append(nid)
        for k, nids in split_on.items():
            rows, vals = columns.feature(k)
            is_here = np.zeros(size, dtype=bool)
            is_here[nids] = True
            nid_arr = node_of_row[rows]
            sel = is_here[nid_arr]
            r = rows[sel]
            node_sel = nid_arr[sel]
            node_of_row[r] = np.where(vals[sel] < thr[node_sel],
                                      left_child[node_sel], right_child[node_sel])
        pending = default_child[node_of_row] >= 0
        node_of_row[pending] = default_child[node_of_row[pending]]
        frontier = next_frontier

    return tree, node_of_row


def train(matrix: DataMatrix, config: TrainConfig, eval_set: DataMatrix | None = None,
          block_config: BlockStoreConfig | None = None, log_fn=None,
          store: BlockStore | None = None) -> TreeEnsemble:
    """Train an ensemble of ``num_rounds`` trees.

    ``log_fn(round, name, value)`` receives per-round evaluation records
    when an eval set is given. A prebuilt ``store`` may be passed to reuse
    blocks across runs.
    """
    loss = Loss.from_name(config.loss)
    if loss is Loss.LOGISTIC and not np.all((matrix.labels == 0) | (matrix.labels == 1)):
        raise ValueError("logistic loss requires labels in {0, 1}")
    if store is None:
        store = build_blocks(matrix, block_config)
    columns = SortedColumns.from_store(store)
    n = matrix.n_rows
    m = matrix.n_features
    base_score = 0.0
    ensemble = TreeEnsemble([], base_score, loss, m)
    preds = np.full(n, base_score)
    weights = matrix.weights()
    rng = np.random.default_rng(config.seed)
    threads = config.threads if config.threads > 0 else 1

    eval_cols = None
    eval_preds = None
    if eval_set is not None:
        eval_cols = _PredictColumns(eval_set)
        eval_preds = np.full(eval_set.n_rows, base_score)

    n_cols = max(1, int(math.floor(config.colsample * m)))
    for t in range(config.num_rounds):
        features = np.sort(rng.choice(m, size=n_cols, replace=False)) if n_cols < m \
            else np.arange(m)
        pairs = gradients(loss, matrix.labels, preds, weights)
        g, h = pairs.g, pairs.h
        if config.subsample < 1.0:
            drop = rng.random(n) >= config.subsample
            g = g.copy()
            h = h.copy()
            g[drop] = 0.0
            h[drop] = 0.0
        tree, leaf_of_row = _grow_tree(columns, g, h, features, config, threads)
        ensemble.trees.append(tree)
        preds = preds + np.asarray(tree.weight)[leaf_of_row]
        if eval_set is not None:
            eval_preds = eval_preds + _predict_tree(tree, eval_cols, eval_set.n_rows)
            if log_fn is not None:
                if loss is Loss.LOGISTIC:
                    p = sigmoid(eval_preds)
                    log_fn(t, "logloss", metrics_mod.logloss(eval_set.labels, p))
                else:
                    log_fn(t, "rmse", metrics_mod.rmse(eval_set.labels, eval_preds))
    ensemble.cached_train_predictions = preds
    return ensemble


def _hexf(x: float) -> str:
    return float(x).hex()


def save_model(ensemble: TreeEnsemble, path: str) -> None:
    """Versioned line-oriented text format with hex floats (bit-exact)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("version 1\n")
        f.write(f"loss {ensemble.loss.value}\n")
        f.write(f"base_score {_hexf(ensemble.base_score)}\n")
        f.write(f"num_features {ensemble.n_features}\n")
        f.write(f"num_trees {len(ensemble.trees)}\n")
        for i, tree in enumerate(ensemble.trees):
            f.write(f"tree {i}\n")
            for nid in range(tree.n_nodes()):
                if tree.feature[nid] >= 0:
                    d = "L" if tree.default_left[nid] else "R"
                    f.write(
                        f"N {nid} {tree.feature[nid]} {_hexf(tree.threshold[nid])} "
                        f"{d} {tree.left[nid]} {tree.right[nid]}\n"
                    )
                else:
                    f.write(f"L {nid} {_hexf(tree.weight[nid])}\n")


class ModelFormatError(ValueError):
    pass


def load_model(path: str) -> TreeEnsemble:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != "version 1":
        raise ModelFormatError(f"unknown model version header: {lines[0] if lines else '<empty>'}")
    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tree "):
        key, _, value = lines[pos].partition(" ")
        header[key] = value
        pos += 1
    try:
        loss = Loss.from_name(header["loss"])
        base_score = float.fromhex(header["base_score"])
        n_features = int(header["num_features"])
        num_trees = int(header["num_trees"])
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad model header: {exc}") from exc
    trees: list[Tree] = []
    current: list[str] | None = None
    groups: list[list[str]] = []
    for ln in lines[pos:]:
        if ln.startswith("tree "):
            current = []
            groups.append(current)
        elif current is None:
            raise ModelFormatError(f"node record outside any tree: {ln!r}")
        else:
            current.append(ln)
    if len(groups) != num_trees:
        raise ModelFormatError(f"expected {num_trees} trees, found {len(groups)}")
    for records in groups:
        tree = Tree()
        parsed = []
        max_id = -1
        for ln in records:
            parts = ln.split()
            try:
                if parts[0] == "N":
                    nid, feat = int(parts[1]), int(parts[2])
                    thr = float.fromhex(parts[3])
                    dleft = parts[4] == "L"
                    if parts[4] not in ("L", "R"):
                        raise ValueError(f"bad default direction {parts[4]!r}")
                    lc, rc = int(parts[5]), int(parts[6])
                    parsed.append(("N", nid, feat, thr, dleft, lc, rc))
                    max_id = max(max_id, nid, lc, rc)
                elif parts[0] == "L":
                    nid = int(parts[1])
                    w = float.fromhex(parts[2])
                    parsed.append(("L", nid, w))
                    max_id = max(max_id, nid)
                else:
                    raise ValueError(f"unknown record kind {parts[0]!r}")
            except (IndexError, ValueError) as exc:
                raise ModelFormatError(f"malformed node record {ln!r}: {exc}") from exc
        for _ in range(max_id + 1):
            tree.add_node()
        for rec in parsed:
            if rec[0] == "N":
                _, nid, feat, thr, dleft, lc, rc = rec
                tree.feature[nid] = feat
                tree.threshold[nid] = thr
                tree.default_left[nid] = dleft
                tree.left[nid] = lc
                tree.right[nid] = rc
            else:
                _, nid, w = rec
                tree.weight[nid] = w
        trees.append(tree)
    return TreeEnsemble(trees, base_score, loss, n_features)
