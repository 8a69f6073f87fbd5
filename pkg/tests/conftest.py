import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from piperisk.panel import INVENTORY_COLUMNS, PipeSnapshot, build_panel
from piperisk.synth import GeneratorConfig, generate_panel

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def snapshot(pipe_id="P1", year=2004, **overrides) -> PipeSnapshot:
    """A valid snapshot with plain defaults; keyword overrides replace fields."""
    base = dict(
        pipe_id=pipe_id,
        snapshot_year=year,
        material="FD",
        diameter_mm=100.0,
        length_m=50.0,
        original_length_m=50.0,
        install_year=1980.0,
        num_connections=3.0,
        avg_connections_age=20.0,
        num_elements=2.0,
        avg_elements_age=15.0,
        city="BCN",
        network_type="distribution",
        sidewalk_length_m=10.0,
        ind_greenzone="N",
        greenzone_length_m=0.0,
        assimilable_to_transport="N",
        level_of_traffic="low",
        underground_gallery="N",
        pressure=40.0,
        maxvsmin_pressure=5.0,
        estres_pressure=1.0,
    )
    base.update(overrides)
    return PipeSnapshot(**base)


def inventory_rows(snapshots) -> list[list[str]]:
    """String cells in inventory column order, as a CSV reader would yield them."""
    out = []
    for s in snapshots:
        d = s.__dict__
        out.append(["" if (isinstance(d[c], float) and np.isnan(d[c])) else str(d[c]) for c in INVENTORY_COLUMNS])
    return out


@pytest.fixture(scope="session")
def tiny_panel():
    """Two pipes, 2004-2019, failures on P1 in 2006 and 2013."""
    snaps = [snapshot(p, y) for p in ("P1", "P2") for y in range(2004, 2020)]
    return build_panel(snaps, [("P1", 2006), ("P1", 2013)])


@pytest.fixture(scope="session")
def small_synth():
    """Small generated panel shared by the integration-style tests."""
    return generate_panel(GeneratorConfig(n_pipes=1500, seed=3))


@pytest.fixture(scope="session")
def iid_panel():
    """Pipes that fail independently with probability 1% each year."""
    rng = np.random.default_rng(11)
    n, years = 20_000, np.arange(2004, 2020)
    rows = pd.DataFrame(
        [snapshot(f"P{i:05d}", 2004).__dict__ for i in range(n)]
    )
    rows = pd.concat([rows.assign(snapshot_year=int(y)) for y in years], ignore_index=True)
    hit = rng.random((n, len(years))) < 0.01
    i, j = np.nonzero(hit)
    failures = pd.DataFrame({"pipe_id": [f"P{k:05d}" for k in i], "year": years[j]})
    return build_panel(rows, failures)


@pytest.fixture(scope="session")
def default_synth():
    """The default generator run: 20,000 pipes over 2004-2019."""
    return generate_panel(GeneratorConfig())


# criterion number -> (title, passed, seconds, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, float, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, secs, detail = ACCEPTANCE[n]
        line = f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title} ({secs:.1f} s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
