"""Multi-channel entropy index, entropy quintiles and need-severity categories.

The entropy of a claim event weighs how many codes it carries by how evenly
they spread across the diagnosis, procedure and medication channels::

    P(x)    = (E_x + 1) / (Len + 3)        x in {dx, px, rx}, Len = E_dx + E_px + E_rx
    entropy = Len * |sum_x P(x) log10 P(x)|

A profile's entropy is the mean over its events.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .claims import PatientProfile, aggregate_events

logger = logging.getLogger(__name__)

SEVERITY_CATEGORIES = (
    "relatively_healthy",
    "simple_chronic",
    "minor_complex_chronic",
    "major_complex_chronic",
    "frail_elderly",
    "disabled",
)
HIGH_NEED = frozenset(SEVERITY_CATEGORIES[3:])
CONDITION_CATEGORIES = ("CCC", "NCC", "frailty", "disabled_flag")


def entropy_terms(n_dx, n_px, n_rx):
    """Smoothed channel probabilities and their ``P log10 P`` products."""
    counts = np.array([n_dx, n_px, n_rx], dtype=float)
    if np.any(counts < 0):
        raise ValueError("code counts must be nonnegative")
    probs = (counts + 1.0) / (counts.sum() + 3.0)
    logs = np.log10(probs)
    return probs, logs, probs * logs


def event_entropy(n_dx, n_px, n_rx):
    length = n_dx + n_px + n_rx
    _, _, products = entropy_terms(n_dx, n_px, n_rx)
    return float(length * abs(products.sum()))


def profile_entropy(profile: PatientProfile, granularity=None):
    """Mean event entropy over the profile's events (at ``granularity`` if given).

    Returns ``nan`` for a profile without events.
    """
    if granularity is not None:
        profile = aggregate_events(profile, granularity)
    if not profile.events:
        logger.warning("profile %s has no claim events; entropy undefined", profile.patient_id)
        return math.nan
    return float(np.mean([
        event_entropy(len(e.dx_codes), len(e.px_codes), len(e.rx_codes)) for e in profile.events
    ]))


def normalize_and_bucket(entropies, patient_ids=None):
    """Min-max scale to [0, 1] and assign rank quintiles 1..5.

    Ties are ordered by patient id, so every quintile holds n/5 patients
    (up to rounding).  A zero-variance cohort maps to 0 and quintile 1.
    """
    x = np.asarray(entropies, dtype=float)
    if x.size == 0:
        raise ValueError("normalize_and_bucket needs a nonempty cohort")
    if patient_ids is None:
        patient_ids = [f"{i:012d}" for i in range(len(x))]
    lo, hi = x.min(), x.max()
    if hi == lo:
        logger.warning("zero-variance entropy cohort; all patients placed in quintile 1")
        return np.zeros_like(x), np.ones(len(x), dtype=int)
    normalized = (x - lo) / (hi - lo)
    order = sorted(range(len(x)), key=lambda i: (x[i], patient_ids[i]))
    quintile = np.empty(len(x), dtype=int)
    for rank, i in enumerate(order):
        quintile[i] = rank * 5 // len(x) + 1
    return normalized, quintile


@dataclass
class ConditionMap:
    """Code -> (condition name, category) associations."""

    conditions: dict[str, str] = field(default_factory=dict)  # name -> category
    code_to_condition: dict[str, str] = field(default_factory=dict)

    def add(self, name, category, codes):
        if category not in CONDITION_CATEGORIES:
            raise ValueError(f"unknown condition category {category!r}")
        if self.conditions.get(name, category) != category:
            raise ValueError(f"condition {name!r} listed under two categories")
        self.conditions[name] = category
        for code in codes:
            prev = self.code_to_condition.get(code)
            if prev is not None and prev != name:
                raise ValueError(f"code {code!r} mapped to both {prev!r} and {name!r}")
            self.code_to_condition[code] = name

    @classmethod
    def read(cls, path):
        cmap = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["condition_name", "category", "codes"]:
                raise ValueError(f"{path}: expected columns condition_name,category,codes")
            for row in reader:
                codes = [c for c in row["codes"].split(";") if c]
                cmap.add(row["condition_name"], row["category"], codes)
        return cmap

    @classmethod
    def demo(cls):
        """Map shipped for the synthetic generator's default vocabulary."""
        with resources.as_file(resources.files("channelwise") / "data" / "condition_map.csv") as p:
            return cls.read(p)

    def write(self, path):
        by_condition = {name: [] for name in self.conditions}
        for code, name in self.code_to_condition.items():
            by_condition[name].append(code)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition_name", "category", "codes"])
            for name in sorted(self.conditions):
                w.writerow([name, self.conditions[name], ";".join(sorted(by_condition[name]))])


@dataclass
class SeverityCounts:
    ccc: int
    ncc: int
    frailty: int
    esrd_or_disabled: bool
    unmapped_codes: int


def condition_counts(profile: PatientProfile, cmap: ConditionMap) -> SeverityCounts:
    found = set()
    unmapped = 0
    for e in profile.events:
        for code in e.dx_codes + e.px_codes:
            name = cmap.code_to_condition.get(code)
            if name is None:
                unmapped += 1
            else:
                found.add(name)
    cats = [cmap.conditions[n] for n in found]
    return SeverityCounts(
        ccc=cats.count("CCC"),
        ncc=cats.count("NCC"),
        frailty=cats.count("frailty"),
        esrd_or_disabled="disabled_flag" in cats,
        unmapped_codes=unmapped,
    )


def severity_from_counts(c: SeverityCounts) -> str:
    """Highest-severity category whose rule the counts satisfy."""
    if c.esrd_or_disabled:
        return "disabled"
    if c.frailty >= 2:
        return "frail_elderly"
    if c.ccc >= 3 or c.ncc >= 6:
        return "major_complex_chronic"
    if c.ccc >= 1:
        return "minor_complex_chronic"
    if c.ncc >= 1:
        return "simple_chronic"
    return "relatively_healthy"


def assign_severity(profile: PatientProfile, cmap: ConditionMap) -> str:
    return severity_from_counts(condition_counts(profile, cmap))


@dataclass
class StrataAssignment:
    patient_id: str
    profile_entropy: float
    normalized_entropy: float
    entropy_quintile: int
    severity: str
    ccc_count: int
    ncc_count: int
    frailty_count: int
    esrd_or_disabled: bool

    @property
    def need_level(self):
        return "high_need" if self.severity in HIGH_NEED else "low_need"


def stratify(profiles, cmap: ConditionMap, granularity="day"):
    """Entropy, quintile and severity for every profile with at least one event."""
    kept, entropies = [], []
    for p in profiles:
        h = profile_entropy(p, granularity)
        if math.isnan(h):
            continue
        kept.append(p)
        entropies.append(h)
    ids = [p.patient_id for p in kept]
    normalized, quint = normalize_and_bucket(entropies, ids)
    out = []
    for p, h, z, q in zip(kept, entropies, normalized, quint):
        c = condition_counts(p, cmap)
        out.append(StrataAssignment(
            patient_id=p.patient_id, profile_entropy=h, normalized_entropy=float(z),
            entropy_quintile=int(q), severity=severity_from_counts(c), ccc_count=c.ccc,
            ncc_count=c.ncc, frailty_count=c.frailty, esrd_or_disabled=c.esrd_or_disabled,
        ))
    unmapped = sum(condition_counts(p, cmap).unmapped_codes for p in kept)
    logger.info("severity coverage: %d code occurrences not in the condition map", unmapped)
    return out


STRATA_COLUMNS = ["patient_id", "profile_entropy", "normalized", "quintile", "severity",
                  "ccc_count", "ncc_count", "frailty_count", "esrd_or_disabled"]


def write_strata(assignments, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STRATA_COLUMNS)
        for a in assignments:
            w.writerow([a.patient_id, repr(a.profile_entropy), repr(a.normalized_entropy),
                        a.entropy_quintile, a.severity, a.ccc_count, a.ncc_count, a.frailty_count,
                        int(a.esrd_or_disabled)])


def read_strata(path):
    with open(path, newline="") as fh:
        return [
            StrataAssignment(
                patient_id=r["patient_id"], profile_entropy=float(r["profile_entropy"]),
                normalized_entropy=float(r["normalized"]), entropy_quintile=int(r["quintile"]),
                severity=r["severity"], ccc_count=int(r["ccc_count"]), ncc_count=int(r["ncc_count"]),
                frailty_count=int(r["frailty_count"]), esrd_or_disabled=bool(int(r["esrd_or_disabled"])),
            )
            for r in csv.DictReader(fh)
        ]
