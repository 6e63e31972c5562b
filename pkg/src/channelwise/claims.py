"""Administrative claims: row schema, file ingestion, claim events and patient profiles.

Two delimited files make up a claims extract, one for medical claims and one
for pharmacy claims::

    medical:  patient_id,claim_id,provider_id,service_date,dx1..dx10,px_code,
              amount_paid,amount_billed,amount_allowed
    pharmacy: patient_id,claim_id,provider_id,service_date,rx_code,
              amount_paid,amount_billed,amount_allowed

Dates are ISO-8601 (``YYYY-MM-DD``); empty code cells mean "absent".  All
claims of one patient on one day form a :class:`ClaimEvent`; the events of the
observation year plus the paid total of the following year form a
:class:`PatientProfile`.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

MEDICAL = "medical"
PHARMACY = "pharmacy"
GRANULARITIES = ("day", "week", "month")
CHANNELS = ("dx", "px", "rx", "cost")
MAX_DX = 10
MAX_REJECT_FRACTION = 0.01

MEDICAL_COLUMNS = (
    ["patient_id", "claim_id", "provider_id", "service_date"]
    + [f"dx{i}" for i in range(1, MAX_DX + 1)]
    + ["px_code", "amount_paid", "amount_billed", "amount_allowed"]
)
PHARMACY_COLUMNS = [
    "patient_id", "claim_id", "provider_id", "service_date", "rx_code",
    "amount_paid", "amount_billed", "amount_allowed",
]


class ClaimsFormatError(ValueError):
    """Raised when a claims file cannot be ingested."""


@dataclass(frozen=True)
class ClaimRecord:
    patient_id: str
    claim_id: str
    provider_id: str
    claim_kind: str
    service_date: dt.date
    dx_codes: tuple[str, ...] = ()
    px_code: str | None = None
    rx_code: str | None = None
    amount_paid: float = 0.0
    amount_billed: float = 0.0
    amount_allowed: float = 0.0

    def __post_init__(self):
        if self.claim_kind == MEDICAL:
            if self.rx_code is not None:
                raise ValueError("medical claim cannot carry an rx code")
            if len(self.dx_codes) > MAX_DX:
                raise ValueError(f"at most {MAX_DX} dx codes per claim")
        elif self.claim_kind == PHARMACY:
            if self.dx_codes or self.px_code is not None:
                raise ValueError("pharmacy claim cannot carry dx/px codes")
        else:
            raise ValueError(f"unknown claim kind {self.claim_kind!r}")
        for name in ("amount_paid", "amount_billed", "amount_allowed"):
            value = getattr(self, name)
            if not (value >= 0.0 and np.isfinite(value)):
                raise ValueError(f"{name} must be a nonnegative finite amount, got {value}")


class RejectedRow(NamedTuple):
    path: str
    line: int
    reason: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.reason}"


class RecordList(list):
    """List of :class:`ClaimRecord` that also carries the rejected rows."""

    def __init__(self, records=(), rejects=()):
        super().__init__(records)
        self.rejects = list(rejects)


def _parse_amount(text):
    value = float(text)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"invalid amount {text!r}")
    return value


def _opt(text):
    text = text.strip()
    return text or None


def _parse_row(kind, row):
    date = dt.date.fromisoformat(row["service_date"].strip())
    amounts = dict(
        amount_paid=_parse_amount(row["amount_paid"]),
        amount_billed=_parse_amount(row["amount_billed"]),
        amount_allowed=_parse_amount(row["amount_allowed"]),
    )
    common = dict(
        patient_id=row["patient_id"].strip(),
        claim_id=row["claim_id"].strip(),
        provider_id=row["provider_id"].strip(),
        service_date=date,
    )
    if not common["patient_id"]:
        raise ValueError("empty patient_id")
    if kind == MEDICAL:
        dx = tuple(c for c in (_opt(row[f"dx{i}"]) for i in range(1, MAX_DX + 1)) if c)
        return ClaimRecord(claim_kind=MEDICAL, dx_codes=dx, px_code=_opt(row["px_code"]),
                           **common, **amounts)
    return ClaimRecord(claim_kind=PHARMACY, rx_code=_opt(row["rx_code"]), **common, **amounts)


def read_claims_file(path, kind):
    """Parse one claims file; returns ``(records, rejects)``.

    Rows with unparseable dates or amounts are rejected, not fatal.
    """
    columns = MEDICAL_COLUMNS if kind == MEDICAL else PHARMACY_COLUMNS
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"claims file not found: {path}")
    records, rejects = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(columns):
            raise ClaimsFormatError(
                f"{path}: header does not match the {kind} schema; expected {','.join(columns)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(columns):
                rejects.append(RejectedRow(str(path), line, f"expected {len(columns)} fields, got {len(row)}"))
                continue
            try:
                records.append(_parse_row(kind, dict(zip(columns, row))))
            except ValueError as exc:
                rejects.append(RejectedRow(str(path), line, str(exc)))
    return records, rejects


def ingest_claims(medical_path, pharmacy_path, reject_report=None):
    """Read a medical and a pharmacy claims file into one :class:`RecordList`.

    Row order is preserved (medical rows first).  Rejected rows are logged,
    attached as ``.rejects`` and optionally written to ``reject_report`` as
    plain text.  More than 1% rejected rows is fatal.
    """
    med, med_rej = read_claims_file(medical_path, MEDICAL)
    rx, rx_rej = read_claims_file(pharmacy_path, PHARMACY)
    rejects = med_rej + rx_rej
    total = len(med) + len(rx) + len(rejects)
    for rej in rejects:
        logger.warning("rejected row %s", rej)
    if reject_report is not None:
        Path(reject_report).write_text("".join(f"{r}\n" for r in rejects))
    if total and len(rejects) > MAX_REJECT_FRACTION * total:
        raise ClaimsFormatError(
            f"{len(rejects)} of {total} rows rejected (limit {MAX_REJECT_FRACTION:.0%}); first: {rejects[0]}")
    return RecordList(med + rx, rejects)


def _fmt_amount(value):
    return repr(float(value))


def write_claims(records, medical_path, pharmacy_path):
    """Write records in the ingestible two-file format (inverse of :func:`ingest_claims`)."""
    with open(medical_path, "w", newline="") as mf, open(pharmacy_path, "w", newline="") as pf:
        med = csv.writer(mf, lineterminator="\n")
        phar = csv.writer(pf, lineterminator="\n")
        med.writerow(MEDICAL_COLUMNS)
        phar.writerow(PHARMACY_COLUMNS)
        for r in records:
            head = [r.patient_id, r.claim_id, r.provider_id, r.service_date.isoformat()]
            money = [_fmt_amount(r.amount_paid), _fmt_amount(r.amount_billed), _fmt_amount(r.amount_allowed)]
            if r.claim_kind == MEDICAL:
                dx = list(r.dx_codes) + [""] * (MAX_DX - len(r.dx_codes))
                med.writerow(head + dx + [r.px_code or ""] + money)
            else:
                phar.writerow(head + [r.rx_code or ""] + money)


@dataclass(frozen=True)
class ClaimEvent:
    """All claims of one patient in one time bucket (a day unless aggregated).

    Code multisets are kept as sorted tuples so that equal bags compare equal
    regardless of the order the claims arrived in.
    """

    day: dt.date
    dx_codes: tuple[str, ...] = ()
    px_codes: tuple[str, ...] = ()
    rx_codes: tuple[str, ...] = ()
    medical_cost: float = 0.0
    pharmacy_cost: float = 0.0
    provider_ids: tuple[str, ...] = ()
    n_medical_claims: int = 0
    n_pharmacy_claims: int = 0
    n_days: int = 1

    @property
    def n_claims(self):
        return self.n_medical_claims + self.n_pharmacy_claims

    @property
    def total_cost(self):
        return self.medical_cost + self.pharmacy_cost

    @property
    def codes(self):
        return self.dx_codes + self.px_codes + self.rx_codes

    def in_channel(self, channel):
        if channel in ("dx", "px"):
            return self.n_medical_claims > 0
        if channel == "rx":
            return self.n_pharmacy_claims > 0
        return True

    def channel_codes(self, channel):
        if channel == "all":
            return tuple(sorted(self.codes))
        return {"dx": self.dx_codes, "px": self.px_codes, "rx": self.rx_codes}[channel]


def merge_events(day, events):
    """Merge events into one, unioning code multisets and summing costs."""
    return ClaimEvent(
        day=day,
        dx_codes=tuple(sorted(c for e in events for c in e.dx_codes)),
        px_codes=tuple(sorted(c for e in events for c in e.px_codes)),
        rx_codes=tuple(sorted(c for e in events for c in e.rx_codes)),
        medical_cost=sum(e.medical_cost for e in events),
        pharmacy_cost=sum(e.pharmacy_cost for e in events),
        provider_ids=tuple(sorted({p for e in events for p in e.provider_ids})),
        n_medical_claims=sum(e.n_medical_claims for e in events),
        n_pharmacy_claims=sum(e.n_pharmacy_claims for e in events),
        n_days=sum(e.n_days for e in events),
    )


def events_from_records(records):
    """Group one patient's records into day-ordered :class:`ClaimEvent` objects."""
    by_day = defaultdict(list)
    for r in records:
        by_day[r.service_date].append(r)
    events = []
    for day in sorted(by_day):
        rows = by_day[day]
        med = [r for r in rows if r.claim_kind == MEDICAL]
        phar = [r for r in rows if r.claim_kind == PHARMACY]
        events.append(ClaimEvent(
            day=day,
            dx_codes=tuple(sorted(c for r in med for c in r.dx_codes)),
            px_codes=tuple(sorted(r.px_code for r in med if r.px_code)),
            rx_codes=tuple(sorted(r.rx_code for r in phar if r.rx_code)),
            medical_cost=float(sum(r.amount_paid for r in med)),
            pharmacy_cost=float(sum(r.amount_paid for r in phar)),
            provider_ids=tuple(sorted({r.provider_id for r in rows})),
            n_medical_claims=len(med),
            n_pharmacy_claims=len(phar),
        ))
    return events


def bucket_start(day, granularity):
    if granularity == "day":
        return day
    if granularity == "week":
        year, week, _ = day.isocalendar()
        return dt.date.fromisocalendar(year, week, 1)
    if granularity == "month":
        return day.replace(day=1)
    raise ValueError(f"unknown granularity {granularity!r}")


def unit_gap(earlier, later, granularity):
    """Distance between two bucket start days in the granularity's unit."""
    if granularity == "day":
        return (later - earlier).days
    if granularity == "week":
        return (later - earlier).days // 7
    return (later.year - earlier.year) * 12 + later.month - earlier.month


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    events: tuple[ClaimEvent, ...]
    target_cost: float = 0.0
    granularity: str = "day"
    n_observation_claims: int = 0
    observation_year: int | None = None

    def __post_init__(self):
        days = [e.day for e in self.events]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError(f"{self.patient_id}: events must be strictly increasing by day")
        if self.target_cost < 0:
            raise ValueError("target_cost must be nonnegative")

    def channel_events(self, channel):
        """Events that belong to ``channel`` (``dx``/``px`` share medical days)."""
        return [e for e in self.events if e.in_channel(channel)]

    def channel_gaps(self, channel):
        """Gap to the previous event of the same channel, in granularity units; 0 for the first."""
        evs = self.channel_events(channel)
        return [0] + [unit_gap(a.day, b.day, self.granularity) for a, b in zip(evs, evs[1:])]

    @property
    def n_medical_events(self):
        return len(self.channel_events("dx"))

    @property
    def n_pharmacy_events(self):
        return len(self.channel_events("rx"))

    @property
    def observation_cost(self):
        return sum(e.total_cost for e in self.events)


class ProfileList(list):
    """List of profiles plus the number of patients dropped by the claims filter."""

    def __init__(self, profiles=(), n_excluded=0):
        super().__init__(profiles)
        self.n_excluded = n_excluded


def build_profiles(records: Iterable[ClaimRecord], observation_year: int,
                   result_year: int | None = None, min_claims: int = 2) -> ProfileList:
    """Build one profile per patient with at least ``min_claims`` observation-year claims.

    The target is the sum of ``amount_paid`` (medical and pharmacy) over the
    result year, 0 when the patient has no result-year claims.
    """
    if result_year is None:
        result_year = observation_year + 1
    if result_year != observation_year + 1:
        raise ValueError("result_year must follow observation_year")
    obs = defaultdict(list)
    target = defaultdict(float)
    seen = []
    seen_set = set()
    for r in records:
        if r.patient_id not in seen_set:
            seen_set.add(r.patient_id)
            seen.append(r.patient_id)
        year = r.service_date.year
        if year == observation_year:
            obs[r.patient_id].append(r)
        elif year == result_year:
            target[r.patient_id] += r.amount_paid
    profiles, excluded = [], 0
    for pid in sorted(seen):
        rows = obs.get(pid, [])
        if len(rows) < min_claims:
            excluded += 1
            continue
        profiles.append(PatientProfile(
            patient_id=pid,
            events=tuple(events_from_records(rows)),
            target_cost=float(target.get(pid, 0.0)),
            n_observation_claims=len(rows),
            observation_year=observation_year,
        ))
    if excluded:
        logger.info("excluded %d patients with fewer than %d observation-year claims", excluded, min_claims)
    return ProfileList(profiles, excluded)


_ORDER = {g: i for i, g in enumerate(GRANULARITIES)}


def aggregate_events(profile: PatientProfile, granularity: str) -> PatientProfile:
    """Merge events falling in the same ISO week or calendar month.

    Day granularity returns the profile unchanged.  Aggregating to a finer
    granularity than the profile already has is an error.
    """
    if granularity not in _ORDER:
        raise ValueError(f"unknown granularity {granularity!r}")
    if _ORDER[granularity] < _ORDER[profile.granularity]:
        raise ValueError(f"cannot refine a {profile.granularity} profile to {granularity}")
    if granularity == profile.granularity:
        return profile
    buckets = defaultdict(list)
    for e in profile.events:
        buckets[bucket_start(e.day, granularity)].append(e)
    events = tuple(merge_events(key, buckets[key]) for key in sorted(buckets))
    return replace(profile, events=events, granularity=granularity)


@dataclass
class GranularityStats:
    providers: float
    codes: float
    claims: float
    events: float


@dataclass
class JourneyStats:
    """Per-patient journey statistics, averaged over buckets of each granularity."""

    patient_id: str
    by_granularity: dict[str, GranularityStats] = field(default_factory=dict)
    distinct_providers: int = 0
    distinct_codes: int = 0
    distinct_codes_by_channel: dict[str, int] = field(default_factory=dict)
    n_claims: int = 0
    n_events: int = 0


def patient_journey(profile: PatientProfile) -> JourneyStats:
    stats = JourneyStats(patient_id=profile.patient_id)
    for g in GRANULARITIES:
        if _ORDER[g] < _ORDER[profile.granularity]:
            continue
        agg = aggregate_events(profile, g)
        evs = agg.events
        n = len(evs)
        stats.by_granularity[g] = GranularityStats(
            providers=sum(len(e.provider_ids) for e in evs) / n if n else 0.0,
            codes=sum(len(set(e.codes)) for e in evs) / n if n else 0.0,
            claims=sum(e.n_claims for e in evs) / n if n else 0.0,
            events=sum(e.n_days for e in evs) / n if n else 0.0,
        )
    stats.distinct_providers = len({p for e in profile.events for p in e.provider_ids})
    stats.distinct_codes = len({c for e in profile.events for c in e.codes})
    stats.distinct_codes_by_channel = {
        ch: len({c for e in profile.events for c in e.channel_codes(ch)}) for ch in ("dx", "px", "rx")
    }
    stats.n_claims = sum(e.n_claims for e in profile.events)
    stats.n_events = sum(e.n_days for e in profile.events)
    return stats


def journey_stats(profiles):
    """Per-patient :class:`JourneyStats` and cohort averages.

    Returns ``(per_patient, averages)`` where ``averages[g]`` holds the mean
    over patients of each bucket-level statistic at granularity ``g``.
    """
    if not profiles:
        raise ValueError("journey_stats needs at least one profile")
    per_patient = [patient_journey(p) for p in profiles]
    averages = {}
    for g in GRANULARITIES:
        rows = [s.by_granularity[g] for s in per_patient if g in s.by_granularity]
        if not rows:
            continue
        averages[g] = GranularityStats(
            providers=float(np.mean([r.providers for r in rows])),
            codes=float(np.mean([r.codes for r in rows])),
            claims=float(np.mean([r.claims for r in rows])),
            events=float(np.mean([r.events for r in rows])),
        )
    return per_patient, averages
