import csv
import datetime as dt

import pytest

from channelwise.claims import MEDICAL_COLUMNS, PHARMACY_COLUMNS, build_profiles, ingest_claims

D1, D2, D3 = dt.date(2016, 3, 1), dt.date(2016, 3, 8), dt.date(2016, 4, 2)

# pt1's claim rows: (claim, provider, day, dx codes, px code, paid)
PT1_MEDICAL = [
    ("clm1", "prov1", D1, ("Dx1", "Dx2", "Dx8"), "Px4", 100.0),
    ("clm1", "prov1", D1, ("Dx1", "Dx2", "Dx8"), "Px5", 40.0),
    ("clm2", "prov1", D2, ("Dx8", "Dx10"), "Px6", 25.0),
    ("clm3", "prov1", D3, ("Dx2", "Dx8"), "Px1", 200.0),
    ("clm3", "prov1", D3, ("Dx2", "Dx8"), "Px3", 60.0),
    ("clm4", "prov2", D2, ("Dx1", "Dx5"), "Px1", 300.0),
    ("clm4", "prov2", D2, ("Dx11", "Dx5"), "Px2", 150.0),
]
PT1_PHARMACY = [
    ("clm5", "prov3", D2, "Rx1", 12.5),
    ("clm5", "prov3", D2, "Rx2", 30.0),
]


def write_medical(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEDICAL_COLUMNS)
        for pid, clm, prov, day, dx, px, paid in rows:
            dxs = list(dx) + [""] * (10 - len(dx))
            w.writerow([pid, clm, prov, day.isoformat()] + dxs + [px or "", paid, paid * 1.5, paid * 1.2])


def write_pharmacy(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHARMACY_COLUMNS)
        for pid, clm, prov, day, rx, paid in rows:
            w.writerow([pid, clm, prov, day.isoformat(), rx or "", paid, paid, paid])


@pytest.fixture
def sample_files(tmp_path):
    med = tmp_path / "medical.csv"
    phar = tmp_path / "pharmacy.csv"
    write_medical(med, [("pt1",) + r for r in PT1_MEDICAL]
                  + [("pt1", "clm9", "prov1", dt.date(2017, 2, 1), ("Dx1",), None, 500.0)])
    write_pharmacy(phar, [("pt1",) + r for r in PT1_PHARMACY])
    return med, phar


@pytest.fixture
def sample_profile(sample_files):
    records = ingest_claims(*sample_files)
    (profile,) = build_profiles(records, 2016)
    return profile


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(LINES):
            terminalreporter.write_line(LINES[number])
