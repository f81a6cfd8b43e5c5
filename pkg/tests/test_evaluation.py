import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from rgat.evaluation import (FilterIndex, RankReport, build_filter, filtered_rank, query_rng,
                             rank_triplets)
from rgat.graph import Triplet


def brute_force_rank(scores, gold, filter_set, seed):
    """Enumerate every candidate, sort by (score desc, tie priority), return gold's position."""
    priority = np.random.default_rng(seed).permutation(len(scores))
    cands = [e for e in range(len(scores)) if e == gold or e not in filter_set]
    ordered = sorted(cands, key=lambda e: (-scores[e], priority[e]))
    return ordered.index(gold) + 1


def test_filter_examples():
    f = build_filter([[Triplet(0, 1, 2)]], 3)
    assert f[(0, 1)] == {2} and f[(2, 4)] == {0}
    f = build_filter([[Triplet(0, 1, 2), Triplet(0, 1, 2)], [Triplet(0, 1, 2)]], 3)
    assert f[(0, 1)] == {2}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 5)), min_size=1, max_size=30))
def test_filter_conservation_and_membership(ts):
    triplets = [Triplet(*t) for t in ts]
    f = build_filter([triplets[: len(triplets) // 2], triplets[len(triplets) // 2:]], 3)
    assert sum(len(v) for k, v in f.items() if k[1] < 3) == len(set(triplets))
    for s, r, o in triplets:
        assert o in f[(s, r)] and s in f[(o, r + 3)]


def test_rank_trivial_cases():
    assert filtered_rank(np.array([0.1, 0.9, 0.3]), 1, {1}, 0) == 1
    assert filtered_rank(np.array([0.1, 0.5, 0.9]), 1, {1}, 0) == 2
    assert filtered_rank(np.array([0.1, 0.5, 0.9]), 1, {1, 2}, 0) == 1
    with pytest.raises(IndexError):
        filtered_rank(np.zeros(3), 5, set(), 0)


def test_rank_matches_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for trial in range(100):
        n = int(rng.integers(2, 21))
        scores = rng.integers(0, 4, size=n).astype(float)  # coarse values force ties
        gold = int(rng.integers(n))
        filt = set(rng.choice(n, size=int(rng.integers(0, n)), replace=False).tolist()) | {gold}
        assert filtered_rank(scores, gold, filt, trial) == brute_force_rank(scores, gold, filt, trial)


def test_all_tied_rank_is_uniform():
    n = 10
    ranks = np.array([filtered_rank(np.zeros(n), 3, {3}, s) for s in range(2000)])
    assert abs(ranks.mean() - (n + 1) / 2) < 0.25
    counts = np.bincount(ranks, minlength=n + 1)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_filter_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = 15
    scores = rng.integers(0, 5, size=n).astype(float)
    gold = int(rng.integers(n))
    small = {gold} | set(rng.choice(n, 3).tolist())
    big = small | set(rng.choice(n, 5).tolist())
    assert filtered_rank(scores, gold, big, seed) <= filtered_rank(scores, gold, small, seed)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=30))
def test_report_invariants(ranks):
    rep = RankReport(np.array(ranks), 40)
    m = rep.metrics()
    assert 0 < m["mrr"] <= 1
    assert m["hits@1"] <= m["hits@3"] <= m["hits@10"]
    assert m["mrr"] == pytest.approx(np.mean(1 / np.array(ranks)))


def test_report_analytic_example():
    rep = RankReport(np.array([1, 4]), 10)
    assert rep.mrr == pytest.approx(0.625)
    assert rep.hits(3) == 0.5
    assert "mrr=0.625000" in rep.metric_lines()


def test_rank_triplets_matches_brute_force_on_small_graph():
    rng = np.random.default_rng(1)
    n_e, n_r = 12, 3
    table = rng.integers(0, 3, size=(2 * n_r, n_e, n_e)).astype(float)
    triplets = [Triplet(int(rng.integers(n_e)), int(rng.integers(n_r)), int(rng.integers(n_e))) for _ in range(15)]
    filt = build_filter([triplets[:10], triplets[10:]], n_r)
    rep = rank_triplets(lambda s, r: table[r, s], triplets[10:], filt, n_e, n_r, seed=7, batch_size=3)
    expect = []
    for i, (s, r, o) in enumerate(triplets[10:]):
        for d, (q, rel, gold) in enumerate([(s, r, o), (o, r + n_r, s)]):
            prio = query_rng(7, i, d).permutation(n_e)
            cands = [e for e in range(n_e) if e == gold or e not in filt[(q, rel)]]
            order = sorted(cands, key=lambda e: (-table[rel, q, e], prio[e]))
            expect.append(order.index(gold) + 1)
    np.testing.assert_array_equal(rep.ranks, expect)


def test_single_triplet_perfect_scores():
    def score(s, r):
        out = np.zeros((len(s), 3))
        out[r == 0, 1] = 1.0
        out[r == 1, 0] = 1.0
        return out

    rep = rank_triplets(score, [Triplet(0, 0, 1)], build_filter([[Triplet(0, 0, 1)]], 1), 3, 1)
    assert rep.mrr == 1.0 and all(v == 1.0 for v in rep.metrics().values())


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        rank_triplets(lambda s, r: None, [], FilterIndex(), 3, 1)


def test_ranking_is_deterministic():
    rng = np.random.default_rng(2)
    table = np.zeros((2, 8, 8))
    ts = [Triplet(int(a), 0, int(b)) for a, b in rng.integers(0, 8, size=(6, 2))]
    filt = build_filter([ts], 1)
    a = rank_triplets(lambda s, r: table[r, s], ts, filt, 8, 1, seed=3).ranks
    b = rank_triplets(lambda s, r: table[r, s], ts, filt, 8, 1, seed=3, batch_size=1).ranks
    np.testing.assert_array_equal(a, b)
