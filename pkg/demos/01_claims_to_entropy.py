"""From raw claim rows to claim events, channels and entropy strata.

Run:  python3 demos/01_claims_to_entropy.py
"""

import datetime as dt
import tempfile
from pathlib import Path

from channelwise.claims import ClaimRecord, build_profiles, ingest_claims, journey_stats, write_claims
from channelwise.strata import ConditionMap, entropy_terms, event_entropy, profile_entropy, stratify
from channelwise.synth import SynthConfig, generate_cohort

# One patient, three claim days.  Two providers bill on 8 March; a pharmacy
# fills two prescriptions the same day.
day1, day2, day3 = dt.date(2016, 3, 1), dt.date(2016, 3, 8), dt.date(2016, 4, 2)


def med(claim, prov, day, dx, px, paid):
    return ClaimRecord("pt1", claim, prov, "medical", day, dx, px, None, paid, paid * 1.5, paid * 1.2)


def rx(claim, day, code, paid):
    return ClaimRecord("pt1", claim, "pharm1", "pharmacy", day, (), None, code, paid, paid, paid)


records = [
    med("c1", "clinic", day1, ("Dx1", "Dx2", "Dx8"), "Px4", 100.0),
    med("c1", "clinic", day1, ("Dx1", "Dx2", "Dx8"), "Px5", 40.0),
    med("c2", "clinic", day2, ("Dx8", "Dx10"), "Px6", 25.0),
    med("c4", "hospital", day2, ("Dx1", "Dx5"), "Px1", 300.0),
    rx("c5", day2, "Rx1", 12.5),
    rx("c5", day2, "Rx2", 30.0),
    med("c3", "clinic", day3, ("Dx2", "Dx8"), "Px1", 200.0),
    med("c9", "clinic", dt.date(2017, 2, 1), ("Dx1",), None, 500.0),   # next year: the target
]

with tempfile.TemporaryDirectory() as tmp:
    med_path, rx_path = Path(tmp) / "medical.csv", Path(tmp) / "pharmacy.csv"
    write_claims(records, med_path, rx_path)
    (profile,) = build_profiles(ingest_claims(med_path, rx_path), observation_year=2016)

print("Claims collapse into one event per day, split into channels:")
for e in profile.events:
    print(f"  {e.day}  dx={sorted(e.dx_codes)}  px={sorted(e.px_codes)}  rx={sorted(e.rx_codes)}  "
          f"medical ${e.medical_cost:.2f}  pharmacy ${e.pharmacy_cost:.2f}")
print(f"  next-year cost to predict: ${profile.target_cost:.2f}")

# The entropy of an event grows with both the number of codes and how evenly
# they spread over the three channels.
print("\nEvent entropy for a few code mixes (dx, px, rx):")
for counts in [(12, 0, 0), (10, 1, 1), (4, 4, 4), (2, 2, 2)]:
    probs, _, _ = entropy_terms(*counts)
    print(f"  {counts}:  P = {[round(float(p), 3) for p in probs]}  entropy = {event_entropy(*counts):.2f}")
print(f"pt1 profile entropy (mean over its events): {profile_entropy(profile):.2f}")

# On a synthetic cohort, entropy tracks need: sicker tiers have busier, more
# mixed claim days.  Quintiles of entropy are the strata used in evaluation.
cohort = generate_cohort(SynthConfig(n_patients=600, seed=1))
profiles = build_profiles(cohort.records, 2016)
strata = {a.patient_id: a for a in stratify(profiles, ConditionMap.demo())}
print("\nMean profile entropy by generated tier:")
for tier in range(1, 7):
    ids = [t.patient_id for t in cohort.labels if t.tier == tier]
    mean = sum(strata[i].profile_entropy for i in ids) / len(ids)
    print(f"  tier {tier}: {mean:6.2f}  ({len(ids)} patients)")

print("\nSeverity categories assigned from condition codes:")
counts = {}
for a in strata.values():
    counts[a.severity] = counts.get(a.severity, 0) + 1
for sev, n in sorted(counts.items(), key=lambda kv: -kv[1]):
    print(f"  {sev:28s} {n}")

_, averages = journey_stats(profiles)
print("\nAverage patient journey per time bucket:")
for g, st in averages.items():
    print(f"  per {g:5s}: {st.providers:5.2f} providers  {st.codes:6.2f} distinct codes  "
          f"{st.claims:5.2f} claims  {st.events:5.2f} claim days")
