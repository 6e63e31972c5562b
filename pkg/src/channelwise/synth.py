"""Synthetic claims cohorts with need-severity tiers and a planted cross-channel signal.

Patients are drawn into six tiers (relatively healthy .. disabled).  A tier
fixes which chronic conditions, frailty indicators and disability flags a
patient carries; higher tiers see more claim days, more providers per day
and more codes per day.  Every condition owns a slice of the dx, px and rx
vocabularies, so codes of one condition co-occur.

Next-year cost is driven by three things a model can see in the
observation year:

* the tier and a latent intensity that also scales claim volume,
* the pharmacy spend, which persists year over year (medical spend does not),
* the planted signal: a day on which an inflammatory-arthritis diagnosis
  and a second-line therapy prescription occur together multiplies
  next-year cost by ``exp(SIGNAL_EFFECT * signal_strength)``.  The therapy is then
  refilled on later claim days.  Decoy days pair the same diagnosis with
  first-line drugs, are refilled the same way, and carry no effect.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .claims import MEDICAL, PHARMACY, ClaimRecord, write_claims
from .strata import ConditionMap

DEFAULT_SEVERITY_MIX = (0.11, 0.19, 0.26, 0.18, 0.17, 0.09)

CCC = [
    "acute_mi_ischemic_heart_disease", "chronic_kidney_disease", "congestive_heart_failure",
    "diabetes", "dementia", "lung_disease", "psychiatric_disease", "specified_heart_arrhythmias",
    "stroke",
]
NCC = [
    "amputation_status", "arthritis_inflammatory_tissue", "artificial_openings",
    "benign_prostatic_hyperplasia", "neuromuscular_disease", "cystic_fibrosis",
    "endocrine_metabolic", "eye_disease", "hematological_disease", "inflammatory_bowel_disease",
    "immune_disorders", "hyperlipidemia", "liver_biliary_disease", "cancer", "osteoporosis",
    "paralytic_diseases", "skin_ulcer", "substance_abuse", "thyroid_disease", "hypertension",
]
FRAILTY = [
    "abnormality_of_gait", "protein_calorie_malnutrition", "adult_failure_to_thrive", "cachexia",
    "debility", "difficulty_in_walking", "fall", "muscular_wasting", "muscle_weakness",
    "decubitus_ulcer", "senility", "durable_medical_equipment",
]
DISABLED = ["end_stage_renal_disease", "disability_status"]
ACUTE = [
    "acute_respiratory", "injury", "preventive_visit", "gastro", "dermatology", "dental",
    "urinary_infection", "musculoskeletal_pain",
]
SIGNAL = "inflammatory_arthritis"

TIER_EVENTS = (10, 15, 24, 32, 40, 50)        # mean claim days per year
TIER_PROVIDERS = (0.7, 1.2, 2.0, 3.4, 4.8, 6.3)  # extra claims per day beyond the first
TIER_PHARMACY = (0.15, 0.3, 0.35, 0.4, 0.45, 0.45)
TIER_SIGNAL = (0.03, 0.06, 0.12, 0.2, 0.26, 0.32)
TIER_DECOY = (0.05, 0.08, 0.12, 0.15, 0.18, 0.2)
TIER_DRUG_COST = (30.0, 60.0, 90.0, 130.0, 160.0, 200.0)
PHARMACY_ONLY_DAY = 0.05     # share of claim days with prescriptions but no visit
DRUG_SPREAD = 0.6            # sigma of the patient-level log drug cost
SIGNAL_EFFECT = 2.5          # log cost multiplier per unit signal_strength
REFILL = 0.4                 # chance a later claim day refills a therapy started on a signal/decoy day


@dataclass
class SynthConfig:
    n_patients: int = 2000
    severity_mix: tuple[float, ...] = DEFAULT_SEVERITY_MIX
    n_dx_codes: int = 480
    n_px_codes: int = 160
    n_rx_codes: int = 240
    seed: int = 0
    signal_strength: float = 0.8
    observation_year: int = 2016
    # lognormal (mean of log, sigma) of a medical claim's paid amount, per tier
    claim_cost_mu: tuple[float, ...] = (4.6, 4.9, 5.2, 5.5, 5.7, 5.9)
    claim_cost_sigma: float = 0.9
    # next-year medical cost level per tier (dollars) and outcome noise
    next_medical: tuple[float, ...] = (900.0, 2200.0, 4500.0, 9000.0, 13000.0, 18000.0)
    outcome_sigma: float = 0.3

    def __post_init__(self):
        self.severity_mix = tuple(float(p) for p in self.severity_mix)
        if len(self.severity_mix) != 6:
            raise ValueError("severity_mix needs six probabilities")
        if any(p < 0 for p in self.severity_mix) or abs(sum(self.severity_mix) - 1.0) > 1e-9:
            raise ValueError(f"severity_mix must be nonnegative and sum to 1, got sum {sum(self.severity_mix)}")
        for name in ("n_dx_codes", "n_px_codes", "n_rx_codes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")

    @property
    def result_year(self):
        return self.observation_year + 1


@dataclass
class Condition:
    name: str
    category: str
    dx: list[str]
    px: list[str]
    rx: list[str]


def _slices(prefix, n_codes, names, width=4):
    codes = [f"{prefix}{i:0{width}d}" for i in range(n_codes)]
    out = {name: [] for name in names}
    for i, code in enumerate(codes):
        out[names[i % len(names)]].append(code)
    return out


def catalog(config: SynthConfig) -> dict[str, Condition]:
    """Conditions with their code slices; ordering is fixed so codes are stable across seeds."""
    kinds = ([(n, "CCC") for n in CCC] + [(n, "NCC") for n in NCC] + [(n, "frailty") for n in FRAILTY]
             + [(n, "disabled_flag") for n in DISABLED] + [(n, "acute") for n in ACUTE]
             + [(SIGNAL, "signal")])
    names = [n for n, _ in kinds]
    dx = _slices("D", config.n_dx_codes, names)
    px = _slices("P", config.n_px_codes, names)
    rx = _slices("R", config.n_rx_codes, names)
    return {n: Condition(n, cat, dx[n], px[n], rx[n]) for n, cat in kinds}


def condition_map(config: SynthConfig) -> ConditionMap:
    """Severity map covering the chronic, frailty and disability codes of ``config``'s vocabulary."""
    cmap = ConditionMap()
    for cond in catalog(config).values():
        if cond.category in ("CCC", "NCC", "frailty", "disabled_flag"):
            cmap.add(cond.name, cond.category, cond.dx + cond.px)
    return cmap


def signal_codes(config: SynthConfig):
    """``(dx codes, second-line rx codes, first-line rx codes)`` of the planted signal."""
    cond = catalog(config)[SIGNAL]
    half = max(len(cond.rx) // 2, 1)
    return cond.dx, cond.rx[:half], cond.rx[half:] or cond.rx[:half]


def draw_tiers(config: SynthConfig) -> np.ndarray:
    """Tier (1..6) per patient with counts apportioned exactly to ``severity_mix``."""
    n = config.n_patients
    raw = np.array(config.severity_mix) * n
    counts = np.floor(raw).astype(int)
    rest = np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]
    counts[rest] += 1
    tiers = np.repeat(np.arange(1, 7), counts)
    return np.random.default_rng([config.seed, 0xC0FFEE]).permutation(tiers)


@dataclass
class PatientTruth:
    patient_id: str
    tier: int
    expected_cost: float
    has_signal: bool


@dataclass
class SyntheticCohort:
    config: SynthConfig
    records: list[ClaimRecord]
    labels: list[PatientTruth] = field(default_factory=list)

    def write(self, out_dir):
        """Write ``medical.csv``, ``pharmacy.csv``, ``labels.csv`` and ``condition_map.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = dict(medical=out / "medical.csv", pharmacy=out / "pharmacy.csv",
                     labels=out / "labels.csv", condition_map=out / "condition_map.csv")
        write_claims(self.records, paths["medical"], paths["pharmacy"])
        write_labels(self.labels, paths["labels"])
        condition_map(self.config).write(paths["condition_map"])
        return paths


def write_labels(labels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "true_tier", "true_expected_cost"])
        for t in labels:
            w.writerow([t.patient_id, t.tier, repr(t.expected_cost)])


def read_labels(path):
    with open(path, newline="") as fh:
        return {r["patient_id"]: (int(r["true_tier"]), float(r["true_expected_cost"]))
                for r in csv.DictReader(fh)}


def _pick(rng, items, k):
    k = min(k, len(items))
    return [items[i] for i in sorted(rng.choice(len(items), size=k, replace=False))]


def _chronic_profile(rng, tier):
    """Counts of (CCC, NCC, frailty, disabled) conditions consistent with the tier's definition."""
    if tier == 1:
        return 0, 0, 0, 0
    if tier == 2:
        return 0, int(rng.integers(1, 5)), int(rng.integers(0, 2)), 0
    if tier == 3:
        return int(rng.integers(1, 3)), int(rng.integers(0, 5)), int(rng.integers(0, 2)), 0
    if tier == 4:
        return int(rng.integers(3, 6)), int(rng.integers(2, 8)), int(rng.integers(0, 2)), 0
    if tier == 5:
        return int(rng.integers(1, 5)), int(rng.integers(2, 7)), int(rng.integers(2, 5)), 0
    return int(rng.integers(2, 6)), int(rng.integers(3, 9)), int(rng.integers(0, 2)), 1


def _money(x):
    return round(float(x), 2)


def _patient(config, cat, index, tier, sig_dx, sig_rx2, sig_rx1):
    rng = np.random.default_rng([config.seed, index])
    pid = f"P{index:06d}"
    t = tier - 1
    n_ccc, n_ncc, n_frail, n_dis = _chronic_profile(rng, tier)
    chronic = (_pick(rng, CCC, n_ccc) + _pick(rng, NCC, n_ncc) + _pick(rng, FRAILTY, n_frail)
               + _pick(rng, DISABLED, n_dis))
    acute = _pick(rng, ACUTE, int(rng.integers(2, 5)))
    intensity = rng.normal(0.0, 0.5)
    year = config.observation_year
    start = dt.date(year, 1, 1)
    n_days_year = (dt.date(year + 1, 1, 1) - start).days

    n_events = int(np.clip(2 + rng.poisson(TIER_EVENTS[t] * math.exp(0.3 * intensity)), 2, 200))
    days = sorted(int(d) for d in rng.choice(n_days_year, size=n_events, replace=False))
    n_regular = 2 + tier
    providers = [f"V{index:06d}-{k}" for k in range(n_regular)]
    pharmacies = [f"PH{int(rng.integers(0, 40)):03d}"]

    has_signal = bool(rng.random() < TIER_SIGNAL[t])
    decoy = bool(rng.random() < TIER_DECOY[t])
    special = {}
    free_days = list(range(n_events))
    if has_signal:
        for d in _pick(rng, free_days, int(rng.integers(1, 3))):
            special[d] = "signal"
    if decoy:
        remaining = [d for d in free_days if d not in special]
        for d in _pick(rng, remaining, 1):
            special[d] = "decoy"

    drug_level = TIER_DRUG_COST[t] * math.exp(rng.normal(0.0, DRUG_SPREAD))
    uncovered = list(chronic)
    records = []
    claim_no = 0
    therapy = None                # rx code started on the first signal or decoy day
    for k, day_offset in enumerate(days):
        day = start + dt.timedelta(days=day_offset)
        n_claims = 1 + rng.poisson(TIER_PROVIDERS[t])
        if k == 0 and uncovered:
            n_claims = max(n_claims, min(len(uncovered), 8))
        kind_tag = special.get(k)
        if kind_tag:
            n_claims = max(n_claims, 2)
        if not kind_tag and rng.random() < PHARMACY_ONLY_DAY:
            kinds = [PHARMACY] * n_claims
        else:
            kinds = [MEDICAL] + [PHARMACY if rng.random() < TIER_PHARMACY[t] else MEDICAL
                                 for _ in range(n_claims - 1)]
        if kind_tag:
            kinds = [MEDICAL, PHARMACY] + kinds[2:]
        if uncovered and MEDICAL not in kinds:
            kinds[0] = MEDICAL
        refill = therapy is not None and not kind_tag and rng.random() < REFILL
        if refill:
            kinds = kinds + [PHARMACY]
            n_claims += 1
        pool = providers + [f"X{int(rng.integers(0, 5000)):05d}" for _ in range(n_claims)]
        day_providers = _pick(rng, pool, n_claims)
        rng.shuffle(day_providers)
        for j, kind in enumerate(kinds):
            claim_no += 1
            claim_id = f"{pid}-C{claim_no:05d}"
            prov = day_providers[j]
            if kind == MEDICAL:
                if kind_tag and j == 0:
                    cond = cat[SIGNAL]
                    dx_pool = sig_dx
                elif uncovered:
                    cond = cat[uncovered.pop(0)]
                    dx_pool = cond.dx
                else:
                    names = chronic if chronic and rng.random() < 0.7 else acute
                    cond = cat[names[int(rng.integers(0, len(names)))]]
                    dx_pool = cond.dx
                dx = _pick(rng, dx_pool, int(rng.integers(1, 4)))
                if rng.random() < 0.3:
                    extra = cat[acute[int(rng.integers(0, len(acute)))]]
                    dx = dx + _pick(rng, extra.dx, 1)
                px = cond.px[int(rng.integers(0, len(cond.px)))] if cond.px and rng.random() < 0.6 else None
                amount = _money(rng.lognormal(config.claim_cost_mu[t] + 0.6 * intensity, config.claim_cost_sigma))
                records.append(ClaimRecord(pid, claim_id, prov, MEDICAL, day, tuple(dx[:10]), px, None,
                                           amount, _money(amount * 1.6), _money(amount * 1.2)))
            else:
                if kind_tag and j == 1:
                    rx = (sig_rx2 if kind_tag == "signal" else sig_rx1)
                    rx_code = rx[int(rng.integers(0, len(rx)))]
                    therapy = therapy or rx_code
                    amount = _money(drug_level * rng.lognormal(0.0, 0.3))
                elif refill and j == len(kinds) - 1:
                    rx_code = therapy
                    amount = _money(drug_level * rng.lognormal(0.0, 0.3))
                else:
                    names = chronic if chronic else acute
                    cond = cat[names[int(rng.integers(0, len(names)))]]
                    if not cond.rx:
                        cond = cat[acute[0]]
                    rx_code = cond.rx[int(rng.integers(0, len(cond.rx)))]
                    amount = _money(drug_level * rng.lognormal(0.0, 0.3))
                records.append(ClaimRecord(pid, claim_id, pharmacies[0], PHARMACY, day, (), None, rx_code,
                                           amount, _money(amount * 1.3), _money(amount * 1.1)))

    pharmacy_obs = sum(r.amount_paid for r in records if r.claim_kind == PHARMACY)
    medical_next = config.next_medical[t] * math.exp(0.6 * intensity)
    multiplier = math.exp(SIGNAL_EFFECT * config.signal_strength) if has_signal else 1.0
    expected = (medical_next + pharmacy_obs) * multiplier
    actual = expected * rng.lognormal(-0.5 * config.outcome_sigma ** 2, config.outcome_sigma)

    n_result = 1 + int(rng.poisson(3))
    shares = rng.dirichlet(np.ones(n_result))
    next_start = dt.date(year + 1, 1, 1)
    for j in range(n_result):
        claim_no += 1
        day = next_start + dt.timedelta(days=int(rng.integers(0, 365)))
        amount = _money(actual * shares[j])
        cond = cat[(chronic or acute)[0]]
        records.append(ClaimRecord(pid, f"{pid}-C{claim_no:05d}", providers[0], MEDICAL, day,
                                   (cond.dx[0],), None, None, amount, _money(amount * 1.6),
                                   _money(amount * 1.2)))
    return records, PatientTruth(pid, tier, expected, has_signal)


def generate_cohort(config: SynthConfig) -> SyntheticCohort:
    """Deterministic synthetic cohort; each patient draws from its own seeded stream."""
    cat = catalog(config)
    sig_dx, sig_rx2, sig_rx1 = signal_codes(config)
    tiers = draw_tiers(config)
    records, labels = [], []
    for index, tier in enumerate(tiers):
        recs, truth = _patient(config, cat, index, int(tier), sig_dx, sig_rx2, sig_rx1)
        records.extend(recs)
        labels.append(truth)
    return SyntheticCohort(config, records, labels)
