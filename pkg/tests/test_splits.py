import numpy as np
import pytest

from blockboost.objective import RegParams
from blockboost.splits import (
    NodeStats,
    SortedColumns,
    counters,
    exact_greedy,
    histogram_split,
    propose_candidates,
    reset_counters,
    sparsity_aware_split,
)

from conftest import dense_to_matrix


def root_node(g, h):
    return NodeStats(float(g.sum()), float(h.sum()), np.arange(len(g)))


def brute_force_best(x, g, h, lam, gamma):
    """Enumerate every (feature, midpoint, default direction) via the gain
    formula recomputed from scratch; NaN cells are missing."""
    n, m = x.shape
    G, H = g.sum(), h.sum()
    parent = G * G / (H + lam)
    best = None
    for j in range(m):
        col = x[:, j]
        present = np.isfinite(col)
        vals = np.unique(col[present])
        if len(vals) < 2:
            continue
        for thr in (vals[:-1] + vals[1:]) / 2:
            for default_left in (False, True):
                left = np.where(present, col < thr, default_left)
                GL, HL = g[left].sum(), h[left].sum()
                GR, HR = G - GL, H - HL
                gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-15):
                    best = (gain, j, thr, default_left)
    return best


def make_columns(x):
    matrix = dense_to_matrix(x)
    return SortedColumns.from_matrix(matrix), matrix


# ------------------------------------------------------------ exact greedy

def test_depth1_textbook_example():
    x = np.asarray([[1.0], [2.0]])
    g = np.asarray([-1.0, 1.0])
    h = np.asarray([1.0, 1.0])
    cols, _ = make_columns(x)
    cand = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    assert cand is not None
    assert cand.feature == 0
    assert cand.threshold == pytest.approx(1.5)
    assert cand.gain == pytest.approx(0.5)
    assert (cand.G_L, cand.H_L) == (pytest.approx(-1.0), pytest.approx(1.0))
    assert (cand.G_R, cand.H_R) == (pytest.approx(1.0), pytest.approx(1.0))


def test_exact_matches_brute_force_dense():
    rng = np.random.default_rng(10)
    for _ in range(150):
        n = int(rng.integers(2, 40))
        m = int(rng.integers(1, 4))
        x = rng.normal(size=(n, m))
        if rng.random() < 0.4:
            x = np.round(x)  # tied values
        g = rng.normal(size=n)
        h = rng.uniform(0.05, 2.0, size=n)
        lam = float(rng.uniform(0, 2))
        cols, _ = make_columns(x)
        cand = exact_greedy(root_node(g, h), cols, g, h, RegParams(lam, 0.0))
        oracle = brute_force_best(x, g, h, lam, 0.0)
        if oracle is None:
            assert cand is None
        else:
            assert cand is not None
            assert cand.gain == pytest.approx(oracle[0], rel=1e-9, abs=1e-12)


def test_sparsity_aware_matches_brute_force_with_missing():
    rng = np.random.default_rng(11)
    for _ in range(150):
        n = int(rng.integers(3, 40))
        m = int(rng.integers(1, 4))
        x = rng.normal(size=(n, m))
        x[rng.random(size=x.shape) < 0.3] = np.nan
        g = rng.normal(size=n)
        h = rng.uniform(0.05, 2.0, size=n)
        cols, _ = make_columns(x)
        cand = sparsity_aware_split(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
        oracle = brute_force_best(x, g, h, 1.0, 0.0)
        if oracle is None:
            assert cand is None
        else:
            assert cand is not None
            assert cand.gain == pytest.approx(oracle[0], rel=1e-9, abs=1e-12)


def test_default_direction_matches_two_way_enumeration():
    # three missing instances carrying negative gradient should pull the
    # default direction toward the side that benefits from their weight
    x = np.asarray([[1.0], [2.0], [3.0], [4.0], [np.nan], [np.nan], [np.nan]])
    g = np.asarray([-1.0, -1.0, 1.0, 1.0, -2.0, -2.0, -2.0])
    h = np.ones(7)
    cols, _ = make_columns(x)
    cand = sparsity_aware_split(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    oracle = brute_force_best(x, g, h, 1.0, 0.0)
    assert cand.gain == pytest.approx(oracle[0], rel=1e-9)
    assert cand.default_left == oracle[3]
    # the missing mass must sit on the default side of the G/H sums
    total_G = g.sum()
    side_G = cand.G_L if cand.default_left else cand.G_R
    assert cand.G_L + cand.G_R == pytest.approx(total_G)
    assert (side_G < 0) == (g[4:].sum() < 0)


def test_no_missing_defaults_right_on_tie():
    # fully dense feature: both default directions give identical gain, and
    # the tie resolves to default right
    x = np.asarray([[1.0], [2.0], [3.0], [4.0]])
    g = np.asarray([-1.0, -1.0, 1.0, 1.0])
    h = np.ones(4)
    cols, _ = make_columns(x)
    cand = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    assert cand is not None
    assert not cand.default_left


def test_all_missing_feature_contributes_nothing():
    x = np.asarray([[np.nan, 1.0], [np.nan, 2.0], [np.nan, 3.0]])
    g = np.asarray([-1.0, 0.0, 1.0])
    h = np.ones(3)
    cols, _ = make_columns(x)
    cand = sparsity_aware_split(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    assert cand is not None
    assert cand.feature == 1


def test_constant_feature_yields_no_split():
    x = np.full((5, 1), 3.0)
    g = np.asarray([-2.0, -1.0, 0.0, 1.0, 2.0])
    h = np.ones(5)
    cols, _ = make_columns(x)
    assert exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0)) is None


def test_gamma_prunes_weak_splits():
    x = np.asarray([[1.0], [2.0]])
    g = np.asarray([-1.0, 1.0])
    h = np.ones(2)
    cols, _ = make_columns(x)
    # gain without gamma is 0.5; a gamma of 0.6 makes it negative
    assert exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.6)) is None


def test_tie_break_prefers_lowest_feature_then_threshold():
    # two identical features produce identical gains; feature 0 must win
    x = np.asarray([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    g = np.asarray([-1.0, -1.0, 1.0, 1.0])
    h = np.ones(4)
    cols, _ = make_columns(x)
    cand = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    assert cand.feature == 0
    # symmetric gradients make thresholds 1.5 and 3.5 equally good on a
    # single feature; the lower threshold must win
    x2 = np.asarray([[1.0], [2.0], [3.0], [4.0]])
    g2 = np.asarray([-1.0, 1.0, 1.0, -1.0])
    cols2, _ = make_columns(x2)
    cand2 = exact_greedy(root_node(g2, h), cols2, g2, h, RegParams(1.0, 0.0))
    assert cand2.threshold == pytest.approx(1.5)


def test_min_child_hessian_filters_candidates():
    x = np.asarray([[1.0], [2.0], [3.0], [4.0]])
    g = np.asarray([-5.0, 1.0, 1.0, 1.0])
    h = np.asarray([0.5, 1.0, 1.0, 1.0])
    cols, _ = make_columns(x)
    unrestricted = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    assert unrestricted.threshold == pytest.approx(1.5)
    restricted = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0),
                              min_child_hessian=1.0)
    assert restricted is None or restricted.threshold > 1.5


def test_threads_do_not_change_result():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(200, 8))
    g = rng.normal(size=200)
    h = rng.uniform(0.1, 2.0, size=200)
    cols, _ = make_columns(x)
    a = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    b = exact_greedy(root_node(g, h), cols, g, h, RegParams(1.0, 0.0), features=None)
    assert (a.feature, a.threshold, a.gain) == (b.feature, b.threshold, b.gain)


# --------------------------------------------------------------- histogram

def test_histogram_degenerates_to_exact():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n = int(rng.integers(4, 50))
        m = int(rng.integers(1, 4))
        x = rng.normal(size=(n, m))
        if rng.random() < 0.4:
            x = np.round(x * 2) / 2
        g = rng.normal(size=n)
        h = rng.uniform(0.05, 2.0, size=n)
        cols, _ = make_columns(x)
        node = root_node(g, h)
        params = RegParams(1.0, 0.0)
        exact = exact_greedy(node, cols, g, h, params)
        proposals = {k: np.unique(x[:, k]) for k in range(m)}
        hist = histogram_split(node, proposals, cols, g, h, params)
        if exact is None:
            assert hist is None
            continue
        assert hist is not None
        assert hist.feature == exact.feature
        assert hist.gain == pytest.approx(exact.gain, rel=1e-9, abs=1e-12)
        # identical partitions: same rows go left under both thresholds
        col = x[:, exact.feature]
        np.testing.assert_array_equal(col < hist.threshold, col < exact.threshold)


def test_histogram_respects_bucket_boundaries():
    # proposals {2.0, 4.0}: the only useful partition is {x <= 2.0} vs {x > 2.0}
    x = np.asarray([[1.0], [2.0], [3.0], [4.0]])
    g = np.asarray([-1.0, -1.0, 1.0, 1.0])
    h = np.ones(4)
    cols, _ = make_columns(x)
    cand = histogram_split(root_node(g, h), {0: np.asarray([2.0, 4.0])},
                           cols, g, h, RegParams(1.0, 0.0))
    assert cand is not None
    left = x[:, 0] < cand.threshold
    np.testing.assert_array_equal(left, [True, True, False, False])


# ---------------------------------------------------------------- proposals

def test_propose_candidates_rank_gap_property():
    rng = np.random.default_rng(14)
    for eps in (0.5, 0.2, 0.1, 0.05):
        for _ in range(20):
            n = int(rng.integers(10, 500))
            v = rng.normal(size=n)
            if rng.random() < 0.3:
                v = np.round(v)
            w = rng.uniform(0.01, 3.0, size=n)
            props = propose_candidates(v, w, eps)
            assert np.all(np.diff(props) > 0)
            assert props[0] == v.min() and props[-1] == v.max()
            # adjacent proposals cut the weighted ranks into gaps < eps*omega
            order = np.argsort(v)
            sv, cw = v[order], np.cumsum(w[order])
            omega = cw[-1]
            for a, b in zip(props[:-1], props[1:]):
                # strictly-below rank of b minus inclusive rank of a
                r_lo = cw[np.searchsorted(sv, a, "right") - 1]
                i = np.searchsorted(sv, b, "left")
                r_hi = cw[i - 1] if i > 0 else 0.0
                assert r_hi - r_lo < eps * omega + 1e-9 * omega


def test_propose_candidates_includes_heavy_points():
    # one point holding most of the mass must appear among the proposals
    v = np.asarray([1.0, 2.0, 3.0, 4.0, 5.0])
    w = np.asarray([1.0, 1.0, 100.0, 1.0, 1.0])
    props = propose_candidates(v, w, 0.2)
    assert 3.0 in props


def test_propose_candidates_single_value():
    props = propose_candidates(np.full(10, 7.0), np.ones(10), 0.1)
    np.testing.assert_array_equal(props, [7.0])


# ----------------------------------------------------------------- counters

def test_entries_scanned_tracks_nnz():
    rng = np.random.default_rng(15)
    n, m = 500, 30
    x = rng.normal(size=(n, m))
    x[rng.random(size=x.shape) < 0.9] = np.nan  # ~10% present
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 1.0, size=n)
    cols, matrix = make_columns(x)
    reset_counters()
    sparsity_aware_split(root_node(g, h), cols, g, h, RegParams(1.0, 0.0))
    scanned = counters()["entries_scanned"]
    assert scanned <= 2 * matrix.nnz
    assert scanned >= matrix.nnz  # every present entry is visited at least once


def test_proposal_calls_counted():
    rng = np.random.default_rng(16)
    n, m = 300, 5
    x = rng.normal(size=(n, m))
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 1.0, size=n)
    cols, _ = make_columns(x)
    reset_counters()
    for k in range(m):
        _, vals = cols.feature(k)
        propose_candidates(vals, np.ones(len(vals)), 0.1)
    assert counters()["proposal_calls"] == m


# ------------------------------------------------------------ sorted columns

def test_sorted_columns_orderings():
    rng = np.random.default_rng(17)
    x = np.round(rng.normal(size=(50, 3)), 1)
    cols, matrix = make_columns(x)
    for k in range(3):
        rows, vals = cols.feature(k)
        assert np.all(np.diff(vals) >= 0)
        # equal values keep ascending row order (stable sort)
        for v in np.unique(vals):
            seg = rows[vals == v]
            assert np.all(np.diff(seg) > 0)
        # contents match the original column
        np.testing.assert_allclose(np.sort(vals), np.sort(x[rows, k]))
