import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from channelwise.metrics import (
    EvaluationReport,
    SplitPlan,
    compare_models,
    make_splits,
    mape,
    mape_detail,
    monetary,
    pearson,
    stratified_report,
    wilcoxon_signed_rank,
)
from channelwise.metrics import _exact_distribution, _ranks


@dataclass
class P:
    patient_id: str
    actual_cost: float
    predicted_cost: float


@dataclass
class S:
    severity: str
    entropy_quintile: int
    need_level: str = "low_need"


def brute_force_wilcoxon(d):
    """Two-sided p by enumerating every sign pattern of the nonzero |d| ranks."""
    d = np.asarray(d, float)
    d = d[d != 0]
    ranks = scipy.stats.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    n = len(d)
    totals = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=n)]
    lower = sum(t <= w + 1e-9 for t in totals) / 2 ** n
    upper = sum(t >= w - 1e-9 for t in totals) / 2 ** n
    return min(1.0, 2 * min(lower, upper))


# ---------------------------------------------------------------- MAPE


def test_mape_perfect():
    assert mape([100, 200], [100, 200]) == 0.0


def test_mape_example():
    assert math.isclose(mape([100, 200], [110, 180]), 10.0, rel_tol=1e-15)


def test_mape_matches_loop():
    rng = np.random.default_rng(0)
    a, p = rng.gamma(2, 500, 50), rng.gamma(2, 500, 50)
    loop = 100 * sum(abs(x - y) / x for x, y in zip(a, p)) / 50
    assert abs(mape(a, p) - loop) < 1e-10


def test_mape_excludes_zero_actuals():
    value, used, excluded = mape_detail([0, 100], [50, 90])
    assert value == pytest.approx(10.0) and (used, excluded) == (1, 1)


def test_mape_all_zero_actuals():
    with pytest.raises(ValueError, match="zero"):
        mape([0, 0], [1, 2])


def test_mape_length_mismatch():
    with pytest.raises(ValueError):
        mape([1, 2], [1])


# ---------------------------------------------------------------- monetary


def test_monetary_example():
    m = monetary([100, 50], [80, 60])
    assert (m.mae, m.underpay, m.overpay, m.netpay) == (15, 20, 10, 30)


def test_monetary_perfect():
    m = monetary([3.5, 7.25], [3.5, 7.25])
    assert m.mae == m.underpay == m.overpay == m.netpay == 0


def test_monetary_identities_exact_on_1000_patients():
    rng = np.random.default_rng(1)
    a = rng.gamma(1.5, 3000, 1000)
    p = a * rng.lognormal(0, 0.5, 1000)
    m = monetary(a, p)
    assert m.netpay == m.overpay + m.underpay
    assert m.mae * m.n == m.netpay
    # rationals of the inputs, so the identities survive any summation order
    m2 = monetary(a[::-1], p[::-1])
    assert m2.netpay == m.netpay


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6)), min_size=1, max_size=40))
def test_monetary_identities_property(pairs):
    a, p = zip(*pairs)
    m = monetary(a, p)
    assert m.netpay == m.underpay + m.overpay
    assert m.mae * m.n == m.netpay
    assert m.netpay == sum(abs(Fraction(x) - Fraction(y)) for x, y in pairs)


# ---------------------------------------------------------------- Wilcoxon


def test_wilcoxon_identical_vectors():
    r = wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])
    assert r.p_value == 1.0 and r.flagged and r.method == "degenerate"


def test_wilcoxon_all_positive_ten():
    r = wilcoxon_signed_rank(np.arange(1, 11, dtype=float))
    assert r.method == "exact"
    assert r.p_value == 2 / 2 ** 10
    assert abs(r.p_value - 0.00195) < 1e-5


def test_wilcoxon_too_few():
    with pytest.raises(ValueError, match="at least 5"):
        wilcoxon_signed_rank([1.0, 2.0, -1.0])


@pytest.mark.parametrize("trial", range(200))
def test_wilcoxon_equals_enumeration(trial):
    rng = np.random.default_rng(trial)
    n = int(rng.integers(5, 13))
    d = rng.normal(0.3, 1, n)
    if trial % 3 == 0:
        d = np.round(d, 1)          # ties among |d|
        d[d == 0] = 0.7
        d = np.append(d, 0.0)       # and a zero difference, which is dropped
    assert wilcoxon_signed_rank(d).p_value == pytest.approx(brute_force_wilcoxon(d), abs=1e-12)


def test_wilcoxon_matches_scipy_exact():
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = rng.normal(0.2, 1, 15)
        ours = wilcoxon_signed_rank(d).p_value
        ref = scipy.stats.wilcoxon(d, method="exact").pvalue
        assert ours == pytest.approx(ref, abs=1e-12)


def test_wilcoxon_normal_approximation_close_to_exact_at_30():
    rng = np.random.default_rng(7)
    for _ in range(10):
        d = rng.normal(0.1, 1, 30)
        approx = wilcoxon_signed_rank(d)
        assert approx.method == "normal"
        ranks = _ranks(np.abs(d))
        counts = _exact_distribution([int(round(2 * r)) for r in ranks])
        w2 = int(round(2 * ranks[d > 0].sum()))
        exact = min(1.0, 2 * min(sum(counts[: w2 + 1]), sum(counts[w2:])) / 2 ** 30)
        assert abs(approx.p_value - exact) < 0.02


def test_wilcoxon_normal_matches_scipy():
    d = np.random.default_rng(8).normal(0.3, 1, 40)
    ref = scipy.stats.wilcoxon(d, method="approx", correction=True).pvalue
    assert wilcoxon_signed_rank(d).p_value == pytest.approx(ref, rel=1e-9)


def test_compare_models_pairs_shared_patients():
    a = {f"p{i}": float(i) for i in range(12)}
    b = {f"p{i}": float(i) + 1 for i in range(12)}
    b["extra"] = 3.0
    out = compare_models(a, b, "shuffle 0")
    assert out["n_pairs"] == 12 and out["p_value"] == pytest.approx(2 / 2 ** 12)


# ---------------------------------------------------------------- Pearson


def test_pearson_affine():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 3) == pytest.approx(1.0, abs=1e-15)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-15)


def test_pearson_matches_covariance_formula():
    rng = np.random.default_rng(9)
    x, y = rng.normal(size=100), rng.normal(size=100)
    cov = np.cov(x, y, ddof=1)
    assert abs(pearson(x, y) - cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])) < 1e-12


def test_pearson_zero_variance():
    with pytest.raises(ValueError, match="zero variance"):
        pearson([1, 1, 1], [1, 2, 3])


# ---------------------------------------------------------------- splits


def test_split_sizes_for_ten():
    (train, val, test), = make_splits([f"p{i}" for i in range(10)], SplitPlan(n_shuffles=1))
    assert (len(train), len(val), len(test)) == (6, 2, 2)
    assert sorted(train + val + test) == sorted(f"p{i}" for i in range(10))


def test_splits_deterministic():
    ids = [f"p{i}" for i in range(50)]
    assert make_splits(ids, SplitPlan(seed=3, n_shuffles=4)) == make_splits(ids, SplitPlan(seed=3, n_shuffles=4))
    assert make_splits(ids, SplitPlan(seed=3, n_shuffles=1)) != make_splits(ids, SplitPlan(seed=4, n_shuffles=1))


def test_test_appearances_average_four():
    ids = [f"p{i:04d}" for i in range(1000)]
    counts = {}
    for _, _, test in make_splits(ids, SplitPlan(n_shuffles=20)):
        for pid in test:
            counts[pid] = counts.get(pid, 0) + 1
    assert sum(counts.values()) / 1000 == 4.0
    assert max(counts.values()) < 12


def test_split_plan_validation():
    with pytest.raises(ValueError, match="sum"):
        SplitPlan(fractions=(0.5, 0.2, 0.2))
    with pytest.raises(ValueError, match="at least 10"):
        make_splits(["a", "b"], SplitPlan())


# ---------------------------------------------------------------- stratified reports


def _preds(n=40, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.gamma(2, 1000, n)
    p = a * rng.lognormal(0, 0.4, n)
    preds = [P(f"p{i:03d}", a[i], p[i]) for i in range(n)]
    strata = {f"p{i:03d}": S(["simple_chronic", "disabled"][i % 2], i % 5 + 1) for i in range(n)}
    return preds, strata


def test_single_stratum_equals_overall():
    preds, _ = _preds()
    strata = {p.patient_id: S("simple_chronic", 1) for p in preds}
    rep = stratified_report(preds, strata, "severity")
    overall = rep.select(group_by="overall")[0]
    only = rep.select(group_by="severity", stratum="simple_chronic")[0]
    for k in ("mape", "mae", "underpay", "overpay", "netpay", "n"):
        assert only[k] == overall[k]


def test_netpay_additive_over_strata():
    preds, strata = _preds()
    rep = stratified_report(preds, strata, "severity")
    overall = rep.select(group_by="overall")[0]["_money"].netpay
    parts = sum(r["_money"].netpay for r in rep.select(group_by="severity") if r["n"])
    assert parts == overall


def test_empty_strata_reported_with_none():
    preds, strata = _preds()
    rep = stratified_report(preds, strata, "severity")
    empty = rep.select(group_by="severity", stratum="frail_elderly")[0]
    assert empty["n"] == 0 and empty["mape"] is None


def test_cost_level_top_five_percent():
    preds, strata = _preds(n=100)
    rep = stratified_report(preds, strata, "cost_level")
    assert rep.select(group_by="cost_level", stratum="high_cost")[0]["n"] == 5


def test_missing_stratum_is_an_error():
    preds, strata = _preds()
    strata.pop("p000")
    with pytest.raises(KeyError, match="no stratum"):
        stratified_report(preds, strata, "severity")


def test_report_summary_and_files(tmp_path):
    report = EvaluationReport()
    for s in range(3):
        preds, strata = _preds(seed=s)
        report.extend(stratified_report(preds, strata, ("severity", "entropy_quintile"), model="a", shuffle=s))
        worse = [P(p.patient_id, p.actual_cost, p.predicted_cost * 1.3) for p in preds]
        report.extend(stratified_report(worse, strata, ("severity", "entropy_quintile"), model="b", shuffle=s))
    (row,) = [r for r in report.summary() if r["model"] == "a" and r["group_by"] == "overall"]
    vals = [r["mape"] for r in report.select("a", "overall")]
    assert row["mape_mean"] == pytest.approx(np.mean(vals))
    assert row["mape_sd"] == pytest.approx(np.std(vals, ddof=1))
    imp = [r for r in report.improvements("b", "a") if r["group_by"] == "overall"][0]
    assert imp["mape_improvement"] == pytest.approx(report.mean_mape("b") - report.mean_mape("a"))
    report.write_csv(tmp_path / "r.csv")
    report.write_json(tmp_path / "r.json")
    assert len((tmp_path / "r.csv").read_text().splitlines()) == len(report.rows) + 1
    assert "summary" in json.loads((tmp_path / "r.json").read_text())
    table = report.format_table("entropy_quintile")
    assert "MAPE by entropy_quintile" in table and "±" in table
