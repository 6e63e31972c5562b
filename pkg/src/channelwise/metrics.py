"""Evaluation protocol: MAPE and monetary errors, Wilcoxon signed-rank test,
Pearson correlation, repeated random sub-sampling and stratified reports.

Monetary sums are accumulated as exact rationals of the float inputs, so
``Netpay == Overpay + Underpay`` and ``MAE * N == Netpay`` hold exactly
whatever the summation order; they are converted to float only for display.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import norm

logger = logging.getLogger(__name__)

GROUPINGS = ("severity", "entropy_quintile", "cost_level", "need_level")
HIGH_COST_SHARE = 0.05
EXACT_WILCOXON_MAX_N = 25


def _pair(actuals, predictions):
    a = np.asarray(actuals, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if a.shape != p.shape or a.ndim != 1:
        raise ValueError(f"actuals {a.shape} and predictions {p.shape} must be equal-length vectors")
    return a, p


def mape_detail(actuals, predictions):
    """``(MAPE in percent, n used, n excluded for zero actual cost)``."""
    a, p = _pair(actuals, predictions)
    keep = a > 0
    if not keep.any():
        raise ValueError("MAPE undefined: every actual cost is zero")
    value = 100.0 * float(np.mean(np.abs(a[keep] - p[keep]) / a[keep]))
    return value, int(keep.sum()), int((~keep).sum())


def mape(actuals, predictions):
    """Mean absolute percentage error in percent; zero-actual patients are excluded."""
    return mape_detail(actuals, predictions)[0]


@dataclass(frozen=True)
class Monetary:
    mae: Fraction
    underpay: Fraction
    overpay: Fraction
    netpay: Fraction
    n: int

    def as_floats(self):
        return {k: float(getattr(self, k)) for k in ("mae", "underpay", "overpay", "netpay")}


def monetary(actuals, predictions):
    """MAE and the sign-partitioned dollar error sums.

    Underpay sums ``A - P`` where the prediction falls short, Overpay sums
    ``P - A`` where it overshoots; Netpay is their total.
    """
    a, p = _pair(actuals, predictions)
    under = sum((Fraction(x) - Fraction(y) for x, y in zip(a, p) if x > y), Fraction(0))
    over = sum((Fraction(y) - Fraction(x) for x, y in zip(a, p) if y > x), Fraction(0))
    net = under + over
    mae = net / len(a) if len(a) else Fraction(0)
    return Monetary(mae, under, over, net, len(a))


# ---------------------------------------------------------------- Wilcoxon signed-rank


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float        # W+, sum of ranks of positive differences
    p_value: float
    n: int                  # nonzero differences
    method: str             # "exact", "normal" or "degenerate"
    flagged: bool = False


def _ranks(x):
    """Average ranks (1-based) of ``x``."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_distribution(doubled_ranks):
    """Counts of each attainable doubled W+ over all 2^n sign patterns."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


def wilcoxon_signed_rank(a, b=None):
    """Two-sided Wilcoxon signed-rank test on paired samples (or differences if ``b`` is None).

    Zero differences are dropped.  Up to 25 remaining pairs the null
    distribution is enumerated exactly (tied ranks included); above that a
    normal approximation with tie and continuity corrections is used.
    """
    d = np.asarray(a, dtype=float) if b is None else np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        logger.warning("wilcoxon: all differences are zero; p = 1 by convention")
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", flagged=True)
    if n < 5:
        raise ValueError(f"wilcoxon needs at least 5 nonzero differences, got {n}")
    ranks = _ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_distribution(doubled)
        w2 = int(round(2 * w_plus))
        total = 2 ** n
        lower = Fraction(int(sum(counts[: w2 + 1])), total)
        upper = Fraction(int(sum(counts[w2:])), total)
        p = min(1.0, float(2 * min(lower, upper)))
        return WilcoxonResult(w_plus, p, n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    dev = abs(w_plus - mean)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(w_plus, float(min(1.0, 2.0 * norm.sf(z))), n, "normal")


def pearson(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length vectors of at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError(f"pearson undefined: zero variance in {'x' if sx == 0 else 'y'}")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------- splits


@dataclass
class SplitPlan:
    seed: int = 0
    n_shuffles: int = 20
    fractions: tuple = (0.6, 0.2, 0.2)
    partitions: list = field(default_factory=list)   # [(train, val, test)] of patient-id lists

    def __post_init__(self):
        if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9 or min(self.fractions) < 0:
            raise ValueError(f"split fractions must be three nonnegative values summing to 1, got {self.fractions}")
        if self.n_shuffles < 1:
            raise ValueError("n_shuffles must be positive")


def make_splits(patient_ids, plan: SplitPlan):
    """Fill ``plan.partitions`` with one independent train/val/test split per shuffle."""
    ids = sorted(set(patient_ids))
    n = len(ids)
    if n < 10:
        raise ValueError(f"need at least 10 patients to split, got {n}")
    n_train = int(round(plan.fractions[0] * n))
    n_val = int(round(plan.fractions[1] * n))
    plan.partitions = []
    for s in range(plan.n_shuffles):
        perm = np.random.default_rng([plan.seed, s]).permutation(n)
        picked = [ids[i] for i in perm]
        plan.partitions.append((picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]))
    return plan.partitions


# ---------------------------------------------------------------- stratified reports


def stratum_labels(group_by, patient_ids, strata, actuals):
    """Stratum of each patient under ``group_by``."""
    if group_by not in GROUPINGS:
        raise ValueError(f"group_by must be one of {GROUPINGS}")
    if group_by == "cost_level":
        k = max(1, math.ceil(HIGH_COST_SHARE * len(actuals)))
        order = sorted(range(len(actuals)), key=lambda i: (-actuals[i], patient_ids[i]))
        top = set(order[:k])
        return ["high_cost" if i in top else "other" for i in range(len(actuals))]
    missing = [pid for pid in patient_ids if pid not in strata]
    if missing:
        raise KeyError(f"{len(missing)} predicted patients have no stratum, e.g. {missing[0]}")
    return [str(getattr(strata[pid], group_by)) for pid in patient_ids]


STRATUM_ORDER = {
    "severity": ("relatively_healthy", "simple_chronic", "minor_complex_chronic",
                 "major_complex_chronic", "frail_elderly", "disabled"),
    "entropy_quintile": ("1", "2", "3", "4", "5"),
    "cost_level": ("other", "high_cost"),
    "need_level": ("low_need", "high_need"),
}

REPORT_COLUMNS = ["model", "shuffle", "group_by", "stratum", "n", "n_zero_actual",
                  "mape", "mae", "underpay", "overpay", "netpay"]


def metric_row(model, shuffle, group_by, stratum, actuals, predictions):
    row = dict(model=model, shuffle=shuffle, group_by=group_by, stratum=stratum, n=len(actuals))
    if not len(actuals):
        row.update(n_zero_actual=0, mape=None, mae=None, underpay=None, overpay=None, netpay=None)
        return row
    money = monetary(actuals, predictions)
    a = np.asarray(actuals, dtype=float)
    row["n_zero_actual"] = int((a <= 0).sum())
    row["mape"] = mape(actuals, predictions) if (a > 0).any() else None
    row.update(money.as_floats())
    row["_money"] = money
    return row


@dataclass
class EvaluationReport:
    """Per-shuffle, per-stratum metric rows plus pairwise significance tests."""

    rows: list = field(default_factory=list)
    tests: list = field(default_factory=list)

    def extend(self, other: "EvaluationReport"):
        self.rows.extend(other.rows)
        self.tests.extend(other.tests)
        return self

    def select(self, model=None, group_by=None, stratum=None):
        return [r for r in self.rows
                if (model is None or r["model"] == model)
                and (group_by is None or r["group_by"] == group_by)
                and (stratum is None or r["stratum"] == stratum)]

    def mean_mape(self, model, group_by="overall", stratum="all"):
        vals = [r["mape"] for r in self.select(model, group_by, stratum) if r["mape"] is not None]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self):
        """Cross-shuffle mean and standard deviation per (model, group_by, stratum)."""
        groups = defaultdict(list)
        for r in self.rows:
            groups[(r["model"], r["group_by"], r["stratum"])].append(r)
        out = []
        for (model, gb, st), rs in groups.items():
            entry = dict(model=model, group_by=gb, stratum=st, shuffles=len(rs), n=sum(r["n"] for r in rs))
            for k in ("mape", "mae", "underpay", "overpay", "netpay"):
                vals = [r[k] for r in rs if r[k] is not None]
                entry[f"{k}_mean"] = float(np.mean(vals)) if vals else None
                entry[f"{k}_sd"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None)
            out.append(entry)
        return sorted(out, key=_summary_key)

    def improvements(self, baseline, candidate):
        """MAPE difference (baseline minus candidate, percentage points) per stratum."""
        out = []
        base = {(r["group_by"], r["stratum"]): r for r in self.summary() if r["model"] == baseline}
        for r in self.summary():
            if r["model"] != candidate or (r["group_by"], r["stratum"]) not in base:
                continue
            b = base[(r["group_by"], r["stratum"])]
            diff = None if b["mape_mean"] is None or r["mape_mean"] is None else b["mape_mean"] - r["mape_mean"]
            out.append(dict(baseline=baseline, candidate=candidate, group_by=r["group_by"],
                            stratum=r["stratum"], mape_improvement=diff))
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                            for c in REPORT_COLUMNS])

    def write_json(self, path, extra=None):
        payload = dict(summary=self.summary(), tests=self.tests)
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def format_table(self, group_by, models=None):
        """Plain-text MAPE table (mean ± sd over shuffles) for one grouping."""
        rows = [r for r in self.summary() if r["group_by"] in (group_by, "overall")]
        models = models or sorted({r["model"] for r in rows})
        strata = [s for s in ("all",) + STRATUM_ORDER.get(group_by, ())
                  if any(r["stratum"] == s for r in rows)]
        width = max([len(m) for m in models] + [10])
        lines = [f"MAPE by {group_by}", " " * 24 + "".join(m.rjust(width + 2) for m in models)]
        cell = {(r["model"], r["stratum"]): r for r in rows}
        for s in strata:
            line = s.ljust(24)
            for m in models:
                r = cell.get((m, s))
                txt = "-" if r is None or r["mape_mean"] is None else f"{r['mape_mean']:.1f}±{r['mape_sd']:.1f}"
                line += txt.rjust(width + 2)
            lines.append(line)
        return "\n".join(lines)


def _summary_key(r):
    order = STRATUM_ORDER.get(r["group_by"], ())
    pos = order.index(r["stratum"]) if r["stratum"] in order else -1
    return (r["model"], r["group_by"], pos, r["stratum"])


def stratified_report(predictions, strata, group_by=GROUPINGS, model="model", shuffle=0):
    """Metric rows overall and per stratum for one model's predictions in one shuffle.

    ``predictions`` holds objects with ``patient_id``, ``actual_cost`` and
    ``predicted_cost``; ``strata`` maps patient id to a StrataAssignment.
    Every stratum of a grouping gets a row, with ``n = 0`` and empty metrics
    when nobody falls in it.
    """
    if isinstance(group_by, str):
        group_by = (group_by,)
    ids = [p.patient_id for p in predictions]
    a = [float(p.actual_cost) for p in predictions]
    q = [float(p.predicted_cost) for p in predictions]
    report = EvaluationReport()
    report.rows.append(metric_row(model, shuffle, "overall", "all", a, q))
    for gb in group_by:
        labels = stratum_labels(gb, ids, strata, a)
        names = list(STRATUM_ORDER.get(gb, ())) + sorted(set(labels) - set(STRATUM_ORDER.get(gb, ())))
        for s in names:
            idx = [i for i, lab in enumerate(labels) if lab == s]
            report.rows.append(metric_row(model, shuffle, gb, s, [a[i] for i in idx], [q[i] for i in idx]))
    return report


def absolute_errors(predictions):
    return {p.patient_id: abs(float(p.actual_cost) - float(p.predicted_cost)) for p in predictions}


def absolute_percentage_errors(predictions):
    """Per-patient ``|A - P| / A`` for patients with positive actual cost (the MAPE summands)."""
    return {p.patient_id: abs(float(p.actual_cost) - float(p.predicted_cost)) / float(p.actual_cost)
            for p in predictions if p.actual_cost > 0}


def compare_models(errors_a, errors_b, scope):
    """Wilcoxon test on paired per-patient errors of two models over shared patients."""
    shared = sorted(set(errors_a) & set(errors_b))
    res = wilcoxon_signed_rank([errors_a[k] for k in shared], [errors_b[k] for k in shared])
    return dict(scope=scope, n_pairs=len(shared), n_nonzero=res.n, statistic=res.statistic,
                p_value=res.p_value, method=res.method, flagged=res.flagged)
