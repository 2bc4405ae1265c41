import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinval import stats
from clinval.stats import LabeledPair, LabeledPairSet

import oracles

levels = st.integers(1, 4)


def P(pred, ref, task="t"):
    return LabeledPairSet.from_labels(pred, ref, task)


def test_f1_hand_case():
    pairs = [LabeledPair(str(i), "t", p, r) for i, (p, r) in enumerate([(1, 1), (1, 2), (2, 2), (2, 2)])]
    assert abs(stats.per_class_f1(pairs, 2) - 0.8) <= 1e-9
    assert abs(stats.per_class_f1(pairs, 2) - oracles.f1_direct([1, 1, 2, 2], [1, 2, 2, 2], 2)) <= 1e-12


def test_f1_perfect_and_absent():
    ps = P([1, 2, 2, 3], [1, 2, 2, 3])
    f = stats.f1_by_class(ps)
    assert f[1] == f[2] == f[3] == 1.0 and f[4] is None
    assert stats.per_class_f1(ps, 4) == 0.0 and not stats.class_represented(ps, 4)
    assert stats.task_macro_f1(ps) == 1.0


def test_macro_single_task_identity():
    one = P([1, 2, 3], [1, 2, 4])
    per, overall = stats.macro_f1({"a": one})
    assert overall == per["a"]


def test_macro_two_classes_one_missed():
    # class 1: precision 1/2, recall 1 -> 2/3; class 2 never predicted -> 0
    assert stats.task_macro_f1(P([1] * 6, [1] * 3 + [2] * 3)) == pytest.approx(1 / 3, abs=1e-15)


def test_macro_equal_task_weighting():
    small = P([1, 2, 1, 1, 2, 2, 1, 2, 1, 2], [1, 2, 2, 1, 1, 2, 2, 1, 1, 2])
    big = P([1, 1, 2] * 300, [1, 2, 2] * 300)
    per, overall = stats.macro_f1({"small": small, "big": big})
    assert overall == pytest.approx((per["small"] + per["big"]) / 2, abs=1e-15)


def test_macro_from_pairset_splits_tasks():
    ps = P([1, 2], [1, 2], "a").concat(LabeledPairSet(["x", "y"], ["b", "b"], [1, 1], [1, 2]))
    per, overall = stats.macro_f1(ps)
    assert per["a"] == 1.0 and overall == pytest.approx((1.0 + per["b"]) / 2)


def _linear(i, j):
    return abs(i - j) / 3


def test_kappa_identical():
    assert stats.weighted_kappa(P([1, 2, 3, 4, 2], [1, 2, 3, 4, 2])) == 1.0


def test_kappa_reversed_negative():
    ref = [1, 2, 3, 4] * 5
    pred = [5 - r for r in ref]
    got = stats.weighted_kappa(P(pred, ref))
    want = oracles.kappa_direct(pred, ref, _linear)
    assert abs(got - want) <= 1e-9 and got < 0


def test_kappa_constant_predictions():
    ref = [1, 2, 3, 4, 4, 2]
    got = stats.weighted_kappa(P([2] * 6, ref))
    assert got is not None and abs(got - oracles.kappa_direct([2] * 6, ref, _linear)) <= 1e-9
    assert got <= 0


def test_kappa_undefined():
    assert stats.weighted_kappa(P([2, 2], [2, 2])) is None


@settings(max_examples=300)
@given(st.lists(st.tuples(levels, levels), min_size=1, max_size=40))
def test_kappa_matches_direct_oracle(rows):
    pred, ref = [p for p, _ in rows], [r for _, r in rows]
    got = stats.weighted_kappa(P(pred, ref))
    want = oracles.kappa_direct(pred, ref, _linear)
    if want is None:
        assert got is None
    else:
        assert abs(got - want) <= 1e-9 and got <= 1 + 1e-12


def test_kappa_unweighted_exhaustive_sampling():
    rng = random.Random(0)
    for _ in range(10_000):
        n = rng.randint(1, 12)
        pred = [rng.randint(1, 4) for _ in range(n)]
        ref = [rng.randint(1, 4) for _ in range(n)]
        got = stats.weighted_kappa(P(pred, ref), "unweighted")
        want = oracles.cohen_kappa_unweighted(pred, ref)
        assert (got is None) == (want is None)
        if want is not None:
            assert abs(got - want) <= 1e-9


def test_kappa_sklearn_cross_check():
    sk = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(3)
    pred, ref = rng.integers(1, 5, 200), rng.integers(1, 5, 200)
    got = stats.weighted_kappa(P(pred, ref))
    assert got == pytest.approx(sk.cohen_kappa_score(pred, ref, weights="linear"), abs=1e-12)


def test_alpha_identical():
    assert stats.krippendorff_alpha([[1, 1, 1], [3, 3, 3], [4, 4, None]]) == 1.0


@pytest.mark.parametrize("metric", ["ordinal", "interval", "nominal"])
def test_alpha_swapped_pair_negative(metric):
    # Coincidences: o[1,4] = o[4,1] = 2, n = 4, n_1 = n_4 = 2.
    # D_o = 2*2*d/4 = d, D_e = 2*2*2*d/12 = 2d/3, alpha = 1 - 3/2.
    got = stats.krippendorff_alpha([[1, 4], [4, 1]], metric)
    assert abs(got - (-0.5)) <= 1e-9


def test_alpha_singletons_ignored():
    assert stats.krippendorff_alpha([[2, 2], [1, None], [None, 4], [3, None]]) == 1.0
    with pytest.raises(ValueError):
        stats.krippendorff_alpha([[1, None], [None, 4]])


def test_alpha_coincidence_counts():
    values, o = stats.coincidence_matrix([[1, 4], [4, 1], [2, None]])
    assert values.tolist() == [1.0, 4.0]
    assert o.tolist() == [[0.0, 2.0], [2.0, 0.0]]


@settings(max_examples=200)
@given(st.lists(st.tuples(levels, levels), min_size=2, max_size=25))
def test_alpha_interval_two_raters_matches_pairwise(rows):
    pooled = {v for r in rows for v in r}
    if len(pooled) < 2:
        return
    got = stats.krippendorff_alpha([list(r) for r in rows], "interval")
    assert abs(got - oracles.alpha_interval_pairwise([list(r) for r in rows])) <= 1e-9


@given(st.lists(st.lists(st.one_of(st.none(), levels), min_size=2, max_size=4), min_size=1, max_size=20))
def test_alpha_at_most_one(rows):
    try:
        a = stats.krippendorff_alpha(rows)
    except ValueError:
        return
    assert a is None or a <= 1 + 1e-12


def _mc(b, c):
    base = [True] * b + [False] * c
    cand = [False] * b + [True] * c
    return stats.mcnemar(base, cand)


def test_mcnemar_identical():
    r = stats.mcnemar([True, False, True], [True, False, True])
    assert (r.b, r.c, r.p) == (0, 0, 1.0)


def test_mcnemar_exact():
    r = _mc(5, 15)
    assert r.method == "exact" and (r.b, r.c) == (5, 15)
    assert abs(r.p - 2 * 21700 / 1048576) <= 1e-9
    assert abs(r.p - oracles.mcnemar_exact_p(5, 15)) <= 1e-12
    assert round(r.p, 4) == 0.0414


def test_mcnemar_chi2():
    r = _mc(40, 80)
    assert r.method == "chi2"
    assert abs(r.statistic - 39**2 / 120) <= 1e-9
    assert abs(r.p - oracles.chi2_1df_sf(39**2 / 120)) <= 1e-3
    assert abs(r.p - 3.7e-4) <= 1e-3


@given(st.integers(0, 40), st.integers(0, 40))
def test_mcnemar_symmetric(b, c):
    assert _mc(b, c).p == pytest.approx(_mc(c, b).p, abs=1e-15)
    assert 0.0 <= _mc(b, c).p <= 1.0


def test_mcnemar_length_mismatch():
    with pytest.raises(ValueError):
        stats.mcnemar([True], [True, False])


def test_bonferroni_examples():
    assert stats.bonferroni([0.04]) == [(0.04, True)]
    flags = stats.bonferroni([0.01] + [0.5] * 9)
    assert flags[0] == (0.01, False)
    assert all(sig for _, sig in stats.bonferroni([0.0] * 7))
    with pytest.raises(ValueError):
        stats.bonferroni([])


def test_binary_examples():
    assert stats.binary_metrics(P([1, 3, 4, 2], [1, 3, 4, 2])).to_dict() | {} == {
        "sensitivity": 1.0, "specificity": 1.0, "f1": 1.0, "accuracy": 1.0, "tp": 2, "fn": 0, "fp": 0, "tn": 2,
    }
    m = stats.binary_metrics(P([1, 2, 1, 2], [1, 2, 3, 4]))
    assert (m.sensitivity, m.specificity, m.accuracy) == (0.0, 1.0, 0.5)


def test_binary_hand_table():
    pred = [3] * 45 + [2] * 5 + [4] * 10 + [1] * 40
    ref = [4] * 45 + [3] * 5 + [1] * 10 + [2] * 40
    m = stats.binary_metrics(P(pred, ref))
    assert (m.tp, m.fn, m.fp, m.tn) == (45, 5, 10, 40)
    assert abs(m.sensitivity - 0.9) <= 1e-9 and abs(m.specificity - 0.8) <= 1e-9
    assert abs(m.f1 - 90 / 105) <= 1e-9 and abs(m.accuracy - 0.85) <= 1e-9


def test_binary_undefined_rates():
    m = stats.binary_metrics(P([1, 2], [1, 2]))
    assert m.sensitivity is None and m.f1 is None and m.specificity == 1.0


def test_bootstrap_constant_and_deterministic():
    ps = P([1, 2, 3, 4] * 30, [1, 2, 3, 4] * 30)
    assert stats.bootstrap_std(ps, stats.overall_macro_f1, 200, 1) == 0.0
    noisy = P(list(np.random.default_rng(0).integers(1, 5, 120)), [1, 2, 3, 4] * 30)
    a = stats.bootstrap_std(noisy, stats.accuracy, 200, 9)
    assert a == stats.bootstrap_std(noisy, stats.accuracy, 200, 9) and a > 0
    with pytest.raises(ValueError):
        stats.bootstrap_std(ps, stats.accuracy, 50)


def bernoulli_set(n, p):
    k = int(round(n * p))
    ref = [1] * n
    pred = [1] * k + [2] * (n - k)
    return P(pred, ref)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bootstrap_binomial_closed_form(seed):
    n, p = 200, 0.75
    got = stats.bootstrap_std(bernoulli_set(n, p), stats.accuracy, 2000, seed)
    want = math.sqrt(p * (1 - p) / n)
    assert abs(got - want) / want <= 0.15


def test_bootstrap_stratified_keeps_task_sizes():
    seen = []

    def metric(ps):
        seen.append(sorted((t, int(np.sum(ps.tasks == t))) for t in set(ps.tasks.tolist())))
        return 0.0

    ps = P([1] * 5, [1] * 5, "a").concat(LabeledPairSet(list("vwxyz") + ["q"], ["b"] * 6, [1] * 6, [2] * 6))
    stats.bootstrap_std(ps, metric, 100, 0)
    assert all(s == [("a", 5), ("b", 6)] for s in seen)


def test_pearson_examples():
    xs = [1.0, 2.0, 3.0, 4.5]
    assert stats.pearson_r(xs, [2 * x + 1 for x in xs]) == pytest.approx(1.0, abs=1e-12)
    assert stats.pearson_r(xs, [-x for x in xs]) == pytest.approx(-1.0, abs=1e-12)
    assert abs(stats.pearson_r([1, 2, 3], [2, 1, 3]) - 0.5) <= 1e-9
    assert abs(stats.pearson_r([1, 2, 3], [2, 1, 3]) - oracles.pearson_direct([1, 2, 3], [2, 1, 3])) <= 1e-12
    assert stats.pearson_r([1, 1, 1], [1, 2, 3]) is None


@given(st.lists(st.tuples(levels, levels), min_size=1, max_size=50))
def test_rates_in_unit_interval(rows):
    ps = P([p for p, _ in rows], [r for _, r in rows])
    in01 = lambda v: v is None or 0.0 <= v <= 1.0
    m = stats.binary_metrics(ps)
    assert all(in01(v) for v in (m.sensitivity, m.specificity, m.f1, m.accuracy))
    assert all(in01(v) for v in stats.f1_by_class(ps).values())
    assert in01(stats.overall_macro_f1(ps)) and in01(stats.accuracy(ps))


def test_pairset_rejects_bad_levels_and_duplicates():
    with pytest.raises(ValueError):
        P([0], [1])
    with pytest.raises(ValueError):
        LabeledPairSet.from_pairs([LabeledPair("a", "t", 1, 1), LabeledPair("a", "t", 2, 2)])
