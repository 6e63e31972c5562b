import math

import numpy as np
import pytest

from channelwise.claims import build_profiles
from channelwise.strata import ConditionMap, profile_entropy
from channelwise.synth import (
    DEFAULT_SEVERITY_MIX,
    SIGNAL_EFFECT,
    SynthConfig,
    condition_map,
    draw_tiers,
    generate_cohort,
    read_labels,
    signal_codes,
)


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(SynthConfig(n_patients=300, seed=11))


def test_same_seed_gives_identical_files(tmp_path):
    config = SynthConfig(n_patients=25, seed=5)
    a = generate_cohort(config).write(tmp_path / "a")
    b = generate_cohort(config).write(tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_different_seed_differs():
    a = generate_cohort(SynthConfig(n_patients=10, seed=1)).records
    b = generate_cohort(SynthConfig(n_patients=10, seed=2)).records
    assert a != b


def test_default_mix_at_ten_thousand():
    tiers = draw_tiers(SynthConfig(n_patients=10_000, severity_mix=DEFAULT_SEVERITY_MIX))
    shares = np.bincount(tiers, minlength=7)[1:] / 10_000
    assert np.all(np.abs(shares - np.array(DEFAULT_SEVERITY_MIX)) <= 0.01)


def test_severity_mix_validation_names_field():
    with pytest.raises(ValueError, match="severity_mix"):
        SynthConfig(severity_mix=(0.1, 0.1, 0.1, 0.2, 0.2, 0.2))


@pytest.mark.parametrize("field,value", [("signal_strength", 1.5), ("n_patients", 0), ("n_rx_codes", 0)])
def test_config_validation(field, value):
    with pytest.raises(ValueError, match=field):
        SynthConfig(**{field: value})


def test_signal_strength_zero_removes_the_effect():
    on = generate_cohort(SynthConfig(n_patients=200, seed=3, signal_strength=0.8))
    off = generate_cohort(SynthConfig(n_patients=200, seed=3, signal_strength=0.0))
    obs = lambda c: [r for r in c.records if r.service_date.year == 2016]
    assert obs(on) == obs(off)
    factor = math.exp(SIGNAL_EFFECT * 0.8)
    n_signal = 0
    for a, b in zip(on.labels, off.labels):
        assert a.has_signal == b.has_signal
        expected = b.expected_cost * (factor if a.has_signal else 1.0)
        assert a.expected_cost == pytest.approx(expected, rel=1e-12)
        n_signal += a.has_signal
    assert 0 < n_signal < 200


def test_second_line_codes_only_in_signal_patients(cohort):
    _, second_line, first_line = signal_codes(cohort.config)
    signal = {t.patient_id for t in cohort.labels if t.has_signal}
    users = {r.patient_id for r in cohort.records if r.rx_code in second_line}
    assert users == signal
    assert {r.patient_id for r in cohort.records if r.rx_code in first_line} - signal


def test_labels_file(cohort, tmp_path):
    paths = cohort.write(tmp_path)
    labels = read_labels(paths["labels"])
    assert len(labels) == 300
    t = cohort.labels[0]
    assert labels[t.patient_id] == (t.tier, t.expected_cost)


def test_higher_tiers_have_more_activity(cohort):
    profiles = {p.patient_id: p for p in build_profiles(cohort.records, 2016)}
    events, codes, entropy = {}, {}, {}
    for t in cohort.labels:
        p = profiles[t.patient_id]
        events.setdefault(t.tier, []).append(len(p.events))
        codes.setdefault(t.tier, []).append(np.mean([len(e.codes) for e in p.events]))
        entropy.setdefault(t.tier, []).append(profile_entropy(p))
    for stat in (events, codes, entropy):
        means = [np.mean(stat[k]) for k in range(1, 7)]
        assert all(b > a for a, b in zip(means, means[1:])), means


def test_every_patient_has_observation_and_result_claims(cohort):
    profiles = build_profiles(cohort.records, 2016)
    assert len(profiles) == 300 and profiles.n_excluded == 0
    assert all(p.target_cost > 0 for p in profiles)


def test_shipped_condition_map_matches_generator():
    shipped = ConditionMap.demo()
    current = condition_map(SynthConfig())
    assert shipped.conditions == current.conditions
    assert shipped.code_to_condition == current.code_to_condition
