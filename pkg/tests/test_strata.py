import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelwise.claims import ClaimEvent, PatientProfile
from channelwise.strata import (
    ConditionMap,
    SeverityCounts,
    assign_severity,
    entropy_terms,
    event_entropy,
    normalize_and_bucket,
    profile_entropy,
    read_strata,
    severity_from_counts,
    stratify,
    write_strata,
)

# six worked entropy examples: counts and their published intermediate rows
WORKED_COUNTS = [(12, 0, 0), (10, 1, 1), (4, 4, 4), (6, 0, 0), (4, 1, 1), (2, 2, 2)]
WORKED_P = [(0.867, 0.067, 0.067), (0.733, 0.133, 0.133), (0.333, 0.333, 0.333),
        (0.778, 0.111, 0.111), (0.556, 0.222, 0.222), (0.333, 0.333, 0.333)]
WORKED_LOG = [(-0.062, -1.176, -1.176), (-0.135, -0.875, -0.875), (-0.477, -0.477, -0.477),
          (-0.109, -0.954, -0.954), (-0.255, -0.653, -0.653), (-0.477, -0.477, -0.477)]
WORKED_PROD = [(-0.054, -0.078, -0.078), (-0.099, -0.117, -0.117), (-0.159, -0.159, -0.159),
           (-0.085, -0.106, -0.106), (-0.142, -0.145, -0.145), (-0.159, -0.159, -0.159)]
WORKED_SUM = [-0.211, -0.332, -0.477, -0.297, -0.432, -0.477]
WORKED_ENTROPY = [2.53, 3.99, 5.73, 1.78, 2.59, 2.86]


def _event(day, n_dx, n_px, n_rx):
    return ClaimEvent(day=day, dx_codes=tuple(f"D{i}" for i in range(n_dx)),
                      px_codes=tuple(f"P{i}" for i in range(n_px)), rx_codes=tuple(f"R{i}" for i in range(n_rx)),
                      n_medical_claims=1 if n_dx + n_px else 0, n_pharmacy_claims=1 if n_rx else 0)


def _profile(pid, counts, start=dt.date(2016, 1, 1)):
    events = tuple(_event(start + dt.timedelta(days=i), *c) for i, c in enumerate(counts))
    return PatientProfile(pid, events)


@pytest.mark.parametrize("k", range(6))
def test_worked_entropy_rows(k):
    probs, logs, products = entropy_terms(*WORKED_COUNTS[k])
    assert np.allclose(probs, WORKED_P[k], atol=0.005)
    assert np.allclose(logs, WORKED_LOG[k], atol=0.005)
    assert np.allclose(products, WORKED_PROD[k], atol=0.005)
    assert abs(products.sum() - WORKED_SUM[k]) <= 0.005
    assert abs(event_entropy(*WORKED_COUNTS[k]) - WORKED_ENTROPY[k]) <= 0.01


def test_empty_event_has_zero_entropy():
    assert event_entropy(0, 0, 0) == 0.0


@pytest.mark.parametrize("n", range(0, 101))
def test_uniform_closed_form(n):
    # equal up to the last bit: the float log10 of a rounded 1/3 cannot do better than one ulp
    expected = 3 * n * math.log10(3)
    assert abs(event_entropy(n, n, n) - expected) <= math.ulp(expected)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_entropy_is_nonnegative_and_channel_symmetric(a, b, c):
    h = event_entropy(a, b, c)
    assert h >= 0
    assert math.isclose(h, event_entropy(c, a, b), rel_tol=1e-12, abs_tol=1e-12)


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        event_entropy(-1, 0, 0)


def test_profile_entropy_single_event():
    assert abs(profile_entropy(_profile("p", [(4, 4, 4)])) - 5.73) <= 0.01


def test_profile_entropy_is_event_mean():
    a, b = event_entropy(3, 1, 0), event_entropy(0, 0, 5)
    assert profile_entropy(_profile("p", [(3, 1, 0), (0, 0, 5)])) == (a + b) / 2


def test_profile_without_events_is_nan():
    assert math.isnan(profile_entropy(PatientProfile("p", ())))


def test_normalize_and_bucket_small():
    z, q = normalize_and_bucket([1, 2, 3, 4, 5])
    assert z.tolist() == [0, 0.25, 0.5, 0.75, 1]
    assert q.tolist() == [1, 2, 3, 4, 5]


def test_zero_variance_goes_to_first_quintile():
    z, q = normalize_and_bucket([2.0, 2.0, 2.0])
    assert not z.any() and (q == 1).all()


def test_quintiles_equal_sized():
    rng = np.random.default_rng(0)
    x = np.round(rng.gamma(2.0, size=10_000), 1)       # plenty of ties
    _, q = normalize_and_bucket(x)
    assert np.bincount(q)[1:].tolist() == [2000] * 5
    # ranks respect the value order
    for k in range(1, 5):
        assert x[q == k].max() <= x[q == k + 1].min()


def test_quintile_ties_broken_by_patient_id():
    _, q = normalize_and_bucket([1.0] * 4 + [2.0], patient_ids=["e", "d", "c", "b", "a"])
    assert q.tolist() == [4, 3, 2, 1, 5]


@pytest.mark.parametrize("counts,expected", [
    (SeverityCounts(0, 0, 0, False, 0), "relatively_healthy"),
    (SeverityCounts(0, 3, 0, False, 0), "simple_chronic"),
    (SeverityCounts(1, 0, 0, False, 0), "minor_complex_chronic"),
    (SeverityCounts(3, 0, 0, False, 0), "major_complex_chronic"),
    (SeverityCounts(0, 6, 0, False, 0), "major_complex_chronic"),
    (SeverityCounts(1, 0, 2, False, 0), "frail_elderly"),
    (SeverityCounts(4, 0, 0, True, 0), "disabled"),
])
def test_severity_rules(counts, expected):
    assert severity_from_counts(counts) == expected


def _cmap():
    cmap = ConditionMap()
    cmap.add("diabetes", "CCC", ["D0"])
    cmap.add("hypertension", "NCC", ["D1", "P0"])
    cmap.add("falls", "frailty", ["D2"])
    cmap.add("walker", "frailty", ["P1"])
    cmap.add("esrd", "disabled_flag", ["D9"])
    return cmap


def test_severity_from_profile_counts_distinct_conditions():
    p = _profile("p", [(2, 1, 0), (2, 0, 0)])   # D0, D1 on two days and P0: one CCC, one NCC
    assert assign_severity(p, _cmap()) == "minor_complex_chronic"


def test_condition_map_rejects_conflicts():
    cmap = _cmap()
    with pytest.raises(ValueError, match="both"):
        cmap.add("other", "NCC", ["D0"])
    with pytest.raises(ValueError, match="category"):
        cmap.add("x", "weird", [])


def test_condition_map_round_trip(tmp_path):
    cmap = _cmap()
    cmap.write(tmp_path / "c.csv")
    back = ConditionMap.read(tmp_path / "c.csv")
    assert back.conditions == cmap.conditions and back.code_to_condition == cmap.code_to_condition


def test_shipped_demo_map_loads():
    cmap = ConditionMap.demo()
    assert {"CCC", "NCC", "frailty", "disabled_flag"} <= set(cmap.conditions.values())


def test_stratify_and_strata_file(tmp_path):
    profiles = [_profile(f"p{i}", [(i % 4, i % 3, i % 2)] * 1) for i in range(10)]
    out = stratify(profiles, _cmap())
    write_strata(out, tmp_path / "s.csv")
    assert read_strata(tmp_path / "s.csv") == out
    assert sorted(a.entropy_quintile for a in out) == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5]
