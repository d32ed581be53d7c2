"""Desk-scale experiment harness behind the ``bench`` subcommand.

Every experiment generates its dataset internally from a seed and emits
``experiment,key,value`` CSV rows, so runs need no downloads. A real
dataset path can be supplied for the reference run.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import sketch
from .data import DataMatrix, parse_libsvm, split_holdout
from .metrics import auc
from .objective import Loss, RegParams, gradients
from .splits import NodeStats, SortedColumns, counters, reset_counters, sparsity_aware_split
from .trainer import TrainConfig, predict, train

EXPERIMENTS = ("approx-vs-exact", "sparsity-speedup", "block-size-sweep", "sketch-guarantee",
               "higgs-reference")


# ---------------------------------------------------------------- datasets

def make_binary_task(n: int, m: int, seed: int) -> DataMatrix:
    """Dense binary task driven by sharp per-feature thresholds.

    The signal is a sum of indicator terms at thresholds that do not line
    up with coarse quantile grids, so low-resolution split proposals lose
    measurable accuracy.
    """
    rng = np.random.default_rng(seed)
    x = rng.random((n, m))
    t = rng.uniform(0.15, 0.85, size=m)
    a = rng.uniform(0.6, 1.6, size=m) * rng.choice([-1.0, 1.0], size=m)
    logit = (np.where(x > t, 1.0, 0.0) * a).sum(axis=1)
    for _ in range(m // 2):
        j, k = rng.choice(m, size=2, replace=False)
        c = rng.uniform(0.8, 1.8) * rng.choice([-1.0, 1.0])
        logit += c * ((x[:, j] > t[j]) & (x[:, k] > t[k]))
    logit = 2.0 * (logit - logit.mean()) / logit.std()
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)
    return DataMatrix.from_dense(x, y)


def make_onehot_task(n: int, m: int, density: float, seed: int) -> DataMatrix:
    """Sparse one-hot style data: each row activates ~density*m features."""
    rng = np.random.default_rng(seed)
    k = max(1, int(round(density * m)))
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = np.empty(n * k, dtype=np.int32)
    for i in range(n):
        cols[i * k:(i + 1) * k] = np.sort(rng.choice(m, size=k, replace=False))
    vals = np.ones(n * k)
    beta = rng.normal(size=m)
    logit = np.add.reduceat(beta[cols], np.arange(0, n * k, k))
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.float64)
    indptr = np.arange(0, n * k + 1, k, dtype=np.int64)
    return DataMatrix(indptr, cols, vals, y, m)


def make_separable_task(n: int, seed: int) -> DataMatrix:
    """Linearly separable two-feature binary task."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, 2))
    y = (x[:, 0] + x[:, 1] > 1.0).astype(np.float64)
    return DataMatrix.from_dense(x, y)


# ------------------------------------------------------------- experiments

def run_sketch_guarantee(seed: int = 0, n: int = 20000):
    """Measured vs theoretical eps after pruning an exact summary."""
    rng = np.random.default_rng(seed)
    values = rng.normal(size=n)
    weights = np.exp(rng.uniform(-3, 3, size=n))
    base = sketch.summary_from_points(values, weights)
    rows = []
    for b in (2, 5, 10, 50, 100, 500):
        pruned = sketch.prune(base, b)
        rows.append(("sketch-guarantee", f"b={b}.theoretical_eps", 1.0 / b))
        rows.append(("sketch-guarantee", f"b={b}.measured_eps", sketch.measured_eps(pruned)))
    return rows


def run_approx_vs_exact(eps_list=(0.3, 0.1, 0.05), seed: int = 0,
                        n_train: int = 20000, n_test: int = 10000,
                        m: int = 20, rounds: int = 50, max_depth: int = 6):
    """Per-round test AUC of exact greedy vs approximate proposals."""
    data = make_binary_task(n_train + n_test, m, seed)
    train_m, test_m = split_holdout(data, n_test / (n_train + n_test), seed + 1)
    rows = []

    def run(name, method, eps):
        cfg = TrainConfig(num_rounds=rounds, max_depth=max_depth, eta=0.1,
                          tree_method=method, eps=eps, seed=seed, loss="logistic")
        history = []
        ens = train(train_m, cfg, eval_set=test_m,
                    log_fn=lambda r, k, v: history.append((r, k, v)))
        score = predict(ens, test_m, output_margin=True)
        final = auc(test_m.labels, score)
        rows.append(("approx-vs-exact", f"{name}.final_auc", final))
        for r, k, v in history:
            rows.append(("approx-vs-exact", f"{name}.round{r}.{k}", v))
        return final

    results = {"exact": run("exact", "exact", 0.03)}
    for eps in eps_list:
        results[f"global_eps{eps}"] = run(f"approx_global_eps{eps}", "approx_global", eps)
    results["local_eps0.05"] = run("approx_local_eps0.05", "approx_local", 0.05)
    return rows, results


def run_sparsity_speedup(seed: int = 0, n: int = 50000, m: int = 2000,
                         density: float = 0.005):
    """Root-split timing: sparsity-aware scan vs dense-scan baseline."""
    data = make_onehot_task(n, m, density, seed)
    columns = SortedColumns.from_matrix(data)
    pairs = gradients(Loss.LOGISTIC, data.labels, np.zeros(n))
    g, h = pairs.g, pairs.h
    params = RegParams(1.0, 0.0, 0.1)
    node = NodeStats(float(g.sum()), float(h.sum()), np.arange(n))

    reset_counters()
    t0 = time.perf_counter()
    sparse_best = sparsity_aware_split(node, columns, g, h, params)
    sparse_time = time.perf_counter() - t0
    scanned = counters()["entries_scanned"]

    t0 = time.perf_counter()
    dense_best = _dense_scan_split(data, g, h, params)
    dense_time = time.perf_counter() - t0

    rows = [
        ("sparsity-speedup", "nnz", data.nnz),
        ("sparsity-speedup", "dense_cells", n * m),
        ("sparsity-speedup", "sparse_seconds", sparse_time),
        ("sparsity-speedup", "dense_seconds", dense_time),
        ("sparsity-speedup", "speedup", dense_time / sparse_time),
        ("sparsity-speedup", "entries_scanned", scanned),
        ("sparsity-speedup", "sparse_gain", 0.0 if sparse_best is None else sparse_best.gain),
        ("sparsity-speedup", "dense_gain", 0.0 if dense_best is None else dense_best[0]),
    ]
    return rows


def _dense_scan_split(data: DataMatrix, g, h, params: RegParams):
    """Naive baseline: treat every cell as present (missing scanned as 0)."""
    n, m = data.n_rows, data.n_features
    G, H = float(g.sum()), float(h.sum())
    lam, gamma = params.reg_lambda, params.gamma
    best = None
    for k in range(m):
        col = np.zeros(n)
        krows, kvals = _feature_entries(data, k)
        col[krows] = kvals
        order = np.argsort(col, kind="stable")
        vs = col[order]
        GL = np.cumsum(g[order])
        HL = np.cumsum(h[order])
        valid = np.flatnonzero(vs[1:] > vs[:-1])
        if len(valid) == 0:
            continue
        GLv, HLv = GL[valid], HL[valid]
        GRv, HRv = G - GLv, H - HLv
        gain = 0.5 * (GLv**2 / (HLv + lam) + GRv**2 / (HRv + lam) - G**2 / (H + lam)) - gamma
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            thr = 0.5 * (vs[valid[i]] + vs[valid[i] + 1])
            best = (float(gain[i]), k, float(thr))
    return best


def _feature_entries(data: DataMatrix, k: int):
    mask = data.indices == k
    rows = np.searchsorted(data.indptr, np.flatnonzero(mask), side="right") - 1
    return rows, data.values[mask]


def run_block_size_sweep(seed: int = 0, n: int = 30000, m: int = 10, rounds: int = 5,
                         sizes=(256, 1024, 4096, 16384, 65536)):
    """Training wall time across block sizes (cache/parallelism analog)."""
    from .blocks import BlockStoreConfig

    data = make_binary_task(n, m, seed)
    rows = []
    for size in sizes:
        cfg = TrainConfig(num_rounds=rounds, max_depth=6, tree_method="approx_global",
                          eps=0.05, seed=seed, loss="logistic")
        t0 = time.perf_counter()
        train(data, cfg, block_config=BlockStoreConfig(block_size=size))
        rows.append(("block-size-sweep", f"block_size={size}.seconds",
                     time.perf_counter() - t0))
    return rows


def run_higgs_reference(data_path: str, rounds: int = 500, subset: int = 1000000,
                        seed: int = 0):
    """Reference run on user-supplied Higgs data (exact greedy, depth 8)."""
    data = parse_libsvm(data_path)
    if data.n_rows > subset:
        data = data.take(np.arange(subset))
    train_m, test_m = split_holdout(data, 0.2, seed)
    cfg = TrainConfig(num_rounds=rounds, max_depth=8, eta=0.1, tree_method="exact",
                      seed=seed, loss="logistic")
    ens = train(train_m, cfg)
    score = predict(ens, test_m, output_margin=True)
    value = auc(test_m.labels, score)
    return [
        ("higgs-reference", "test_auc", value),
        ("higgs-reference", "published_reference_auc", 0.8304),
    ]


def proposal_count_summary(eps: float, m: int) -> float:
    """Expected proposal count per feature, roughly 1/eps."""
    return math.ceil(1.0 / eps)
