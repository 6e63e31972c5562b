import datetime as dt

import pytest

from channelwise.claims import (
    ClaimRecord,
    ClaimsFormatError,
    aggregate_events,
    build_profiles,
    ingest_claims,
    journey_stats,
    read_claims_file,
    write_claims,
)
from channelwise.synth import SynthConfig, generate_cohort

from conftest import D1, D2, D3, write_medical, write_pharmacy


def test_sample_medical_row(tmp_path):
    path = tmp_path / "m.csv"
    write_medical(path, [("pt1", "clm1", "prov1", D1, ("Dx1", "Dx2", "Dx8"), "Px4", 10.0)])
    (rec,), rejects = read_claims_file(path, "medical")
    assert not rejects
    assert rec.dx_codes == ("Dx1", "Dx2", "Dx8") and rec.px_code == "Px4" and rec.rx_code is None


def test_single_pharmacy_row(tmp_path):
    path = tmp_path / "p.csv"
    write_pharmacy(path, [("pt1", "clm5", "prov3", D2, "Rx1", 12.50)])
    (rec,), _ = read_claims_file(path, "pharmacy")
    assert rec.claim_kind == "pharmacy" and rec.rx_code == "Rx1" and rec.amount_paid == 12.50
    assert rec.dx_codes == () and rec.px_code is None


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "m.csv"
    write_medical(path, [])
    assert read_claims_file(path, "medical") == ([], [])


def test_wrong_header_is_fatal(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("patient_id,claim_id\n")
    with pytest.raises(ClaimsFormatError, match="header"):
        read_claims_file(path, "medical")


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        read_claims_file(tmp_path / "nope.csv", "medical")


def test_bad_rows_are_rejected_and_reported(tmp_path):
    med = tmp_path / "m.csv"
    rows = [("p1", f"c{i}", "prov", D1, ("D1",), None, 1.0) for i in range(200)]
    write_medical(med, rows)
    with open(med, "a") as fh:
        fh.write("p1,cX,prov,2016-13-45" + "," * 10 + ",1,1,1\n")
    phar = tmp_path / "p.csv"
    write_pharmacy(phar, [])
    report = tmp_path / "rejects.txt"
    records = ingest_claims(med, phar, reject_report=report)
    assert len(records) == 200 and len(records.rejects) == 1
    assert "m.csv:202" in report.read_text()


def test_too_many_rejects_is_fatal(tmp_path):
    med = tmp_path / "m.csv"
    write_medical(med, [("p1", "c1", "prov", D1, ("D1",), None, 1.0)])
    with open(med, "a") as fh:
        fh.write("p1,c2,prov,2016-01-01" + "," * 10 + ",-5,1,1\n")
    phar = tmp_path / "p.csv"
    write_pharmacy(phar, [])
    with pytest.raises(ClaimsFormatError, match="rejected"):
        ingest_claims(med, phar)


def test_record_invariants():
    with pytest.raises(ValueError, match="rx code"):
        ClaimRecord("p", "c", "v", "medical", D1, rx_code="R1")
    with pytest.raises(ValueError, match="dx/px"):
        ClaimRecord("p", "c", "v", "pharmacy", D1, dx_codes=("D1",))
    with pytest.raises(ValueError, match="nonnegative"):
        ClaimRecord("p", "c", "v", "medical", D1, amount_paid=-1.0)


def test_sample_profile_events(sample_profile):
    p = sample_profile
    assert [e.day for e in p.events] == [D1, D2, D3]
    d2 = p.events[1]
    assert d2.provider_ids == ("prov1", "prov2", "prov3")
    assert d2.rx_codes == ("Rx1", "Rx2")
    assert d2.px_codes == ("Px1", "Px2", "Px6")
    assert d2.medical_cost == 25.0 + 300.0 + 150.0 and d2.pharmacy_cost == 42.5
    assert p.target_cost == 500.0
    assert p.n_medical_events == 3 and p.n_pharmacy_events == 1


def test_channel_lengths_respect_bounds(sample_profile):
    p = sample_profile
    T = len(p.events)
    M = len(p.channel_events("dx"))
    assert M == len(p.channel_events("px")) and M <= T and len(p.channel_events("rx")) <= T


def test_result_year_only_patient_is_excluded():
    recs = [ClaimRecord("p1", "c1", "v", "medical", dt.date(2017, 1, 5), ("D1",), amount_paid=5.0)] * 3
    profiles = build_profiles(recs, 2016)
    assert len(profiles) == 0 and profiles.n_excluded == 1


def test_no_result_year_claims_gives_zero_target():
    recs = [ClaimRecord("p1", f"c{i}", "v", "medical", dt.date(2016, 1, 5 + i), ("D1",)) for i in range(2)]
    (p,) = build_profiles(recs, 2016)
    assert p.target_cost == 0.0


def test_single_claim_patient_is_excluded():
    recs = [ClaimRecord("p1", "c1", "v", "medical", dt.date(2016, 1, 5), ("D1",))]
    assert len(build_profiles(recs, 2016)) == 0


def test_day_aggregation_is_identity(sample_profile):
    assert aggregate_events(sample_profile, "day") == sample_profile


def test_month_aggregation_merges_and_sums(sample_profile):
    month = aggregate_events(sample_profile, "month")
    assert [e.day for e in month.events] == [dt.date(2016, 3, 1), dt.date(2016, 4, 1)]
    march = month.events[0]
    first, second = sample_profile.events[:2]
    assert march.medical_cost == first.medical_cost + second.medical_cost
    assert march.n_days == 2
    assert sorted(march.dx_codes) == sorted(first.dx_codes + second.dx_codes)


def test_forty_events_aggregate_to_at_most_twelve_months():
    days = sorted({dt.date(2016, 1, 1) + dt.timedelta(days=9 * i) for i in range(40)})
    recs = [ClaimRecord("p", f"c{i}", "v", "medical", d, ("D1",), amount_paid=1.0) for i, d in enumerate(days)]
    (p,) = build_profiles(recs, 2016)
    assert len(p.events) == 40
    month = aggregate_events(p, "month")
    assert len(month.events) == len({(d.year, d.month) for d in days}) <= 12
    assert sum(e.n_days for e in month.events) == 40


def test_cannot_refine_granularity(sample_profile):
    with pytest.raises(ValueError, match="refine"):
        aggregate_events(aggregate_events(sample_profile, "month"), "week")


def test_journey_providers_single_event():
    recs = [ClaimRecord("p", "c1", "prov1", "medical", D1, ("D1",)),
            ClaimRecord("p", "c2", "prov2", "medical", D1, ("D2",))]
    (p,) = build_profiles(recs, 2016)
    _, avg = journey_stats([p])
    assert avg["day"].providers == 2


def test_journey_average_monthly_codes():
    a = [ClaimRecord("a", f"c{i}", "v", "medical", D1, (c,)) for i, c in enumerate(["X", "X"])]
    b = [ClaimRecord("b", f"c{i}", "v", "medical", D1, (c,)) for i, c in enumerate(["X", "Y", "Z"])]
    _, avg = journey_stats(build_profiles(a + b, 2016))
    assert avg["month"].codes == 2


def test_generated_claims_round_trip(tmp_path):
    cohort = generate_cohort(SynthConfig(n_patients=15, seed=2))
    write_claims(cohort.records, tmp_path / "m.csv", tmp_path / "p.csv")
    back = ingest_claims(tmp_path / "m.csv", tmp_path / "p.csv")
    key = lambda r: (r.claim_id, r.service_date, r.px_code or "", r.rx_code or "")
    assert sorted(back, key=key) == sorted(cohort.records, key=key)


def test_higher_tiers_see_more_providers():
    config = SynthConfig(n_patients=600, seed=4)
    cohort = generate_cohort(config)
    profiles = build_profiles(cohort.records, 2016)
    tiers = {t.patient_id: t.tier for t in cohort.labels}
    per_patient, _ = journey_stats(profiles)
    by_tier = {}
    for s in per_patient:
        by_tier.setdefault(tiers[s.patient_id], []).append(s.by_granularity["day"].providers)
    means = [sum(v) / len(v) for _, v in sorted(by_tier.items())]
    assert all(b > a for a, b in zip(means, means[1:])), means
