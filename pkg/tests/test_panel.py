import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import snapshot
from piperisk.errors import DuplicateKeyError, EmptyInputError, InfeasibleSplitError, WindowError
from piperisk.panel import FailureEvent, build_panel, label_failure_window, temporal_split


def test_build_two_pipes_two_years():
    snaps = [snapshot(p, y) for p in ("P1", "P2") for y in (2004, 2005)]
    panel = build_panel(snaps, [FailureEvent("P1", 2005)])
    assert len(panel.rows) == 4
    assert panel.year_range == (2004, 2005)
    assert list(panel.rows["pipe_id"]) == ["P1", "P1", "P2", "P2"]


def test_duplicate_key_names_pipe_and_year():
    snaps = [snapshot("P1", 2004), snapshot("P1", 2004, diameter_mm=80.0)]
    with pytest.raises(DuplicateKeyError, match="P1") as exc:
        build_panel(snaps, [])
    assert "2004" in str(exc.value)


def test_orphan_failure_reported():
    panel = build_panel([snapshot("P1", 2004)], [FailureEvent("P9", 2004)])
    assert panel.orphan_failures == ("P9",)


def test_empty_snapshots_rejected():
    with pytest.raises(EmptyInputError):
        build_panel([], [])


def test_rows_sorted_regardless_of_input_order():
    snaps = [snapshot("P2", 2005), snapshot("P1", 2005), snapshot("P2", 2004), snapshot("P1", 2004)]
    panel = build_panel(snaps, [])
    keys = list(zip(panel.rows["pipe_id"], panel.rows["snapshot_year"]))
    assert keys == sorted(keys)


def test_operations_attach_as_columns():
    ops = pd.DataFrame({"pipe_id": ["P1", "P1"], "year": [2004, 2004], "kind": ["pipe", "pipe"], "count": [2, 1]})
    panel = build_panel([snapshot("P1", 2004), snapshot("P1", 2005)], [], ops)
    assert panel.rows["pipe_ops_year"].tolist() == [3.0, 0.0]


def test_label_window_after_snapshot():
    snaps = [snapshot("P1", y) for y in range(2010, 2018)]
    panel = build_panel(snaps, [("P1", 2013)])
    assert label_failure_window(panel, 2012, 4).labels["P1"] == 1


def test_label_window_is_half_open():
    snaps = [snapshot("P1", y) for y in range(2010, 2018)]
    panel = build_panel(snaps, [("P1", 2012)])
    assert label_failure_window(panel, 2012, 1).labels["P1"] == 0
    assert label_failure_window(panel, 2011, 1).labels["P1"] == 1


def test_label_window_cannot_pass_panel_end(tiny_panel):
    with pytest.raises(WindowError):
        label_failure_window(tiny_panel, 2016, 4)
    with pytest.raises(WindowError):
        label_failure_window(tiny_panel, 2010, 0)


def test_positive_rate_matches_independent_one_percent(iid_panel):
    rates = [label_failure_window(iid_panel, y, 4).positive_rate for y in range(2004, 2016)]
    expected = 1 - 0.99**4
    assert abs(np.mean(rates) - expected) < 0.003


def test_positive_rate_matches_direct_count(small_synth):
    panel = small_synth.panel
    sl = label_failure_window(panel, 2010, 4)
    f = panel.failures
    hit = set(f.loc[(f["year"] > 2010) & (f["year"] <= 2014), "pipe_id"])
    direct = np.array([pid in hit for pid in sl.labels.index])
    assert np.array_equal(sl.labels.to_numpy() == 1, direct)


def test_split_reference_years(tiny_panel):
    train, test = temporal_split(tiny_panel, 2015, 4)
    assert train == tuple(range(2004, 2012))
    assert test.snapshot_year == 2015


def test_split_smallest_legal():
    panel = build_panel([snapshot("P1", y) for y in (2004, 2005, 2006)], [])
    train, _ = temporal_split(panel, 2005, 1, gap=1)
    assert train == (2004,)


def test_split_infeasible(tiny_panel):
    with pytest.raises(InfeasibleSplitError):
        temporal_split(tiny_panel, 2007, 4, gap=4)
    with pytest.raises(InfeasibleSplitError):
        temporal_split(tiny_panel, 2012, 4, gap=2)


@given(
    k=st.integers(1, 6),
    extra=st.integers(0, 4),
    test_year=st.integers(2004, 2019),
)
def test_split_leakage_invariant(tiny_panel, k, extra, test_year):
    gap = k + extra
    try:
        train, test = temporal_split(tiny_panel, test_year, k, gap)
    except (InfeasibleSplitError, WindowError):
        return
    assert max(train) + k <= test.snapshot_year
    assert test.snapshot_year + k <= 2019


@given(
    fail_years=st.lists(st.integers(2000, 2025), max_size=6),
    snap=st.integers(2004, 2015),
    k=st.integers(1, 4),
)
def test_label_definition(fail_years, snap, k):
    panel = build_panel([snapshot("P1", y) for y in range(2004, 2020)], [("P1", y) for y in fail_years])
    label = label_failure_window(panel, snap, k).labels["P1"]
    assert label == int(any(snap < y <= snap + k for y in fail_years))


@given(fail_years=st.lists(st.integers(2004, 2019), max_size=6), snap=st.integers(2004, 2019))
def test_failure_history_counts_past(fail_years, snap):
    panel = build_panel([snapshot("P1", y) for y in range(2004, 2020)], [("P1", y) for y in fail_years])
    hist = panel.failure_history(np.array(["P1"], dtype=object), [snap])[0]
    assert hist == sum(y <= snap for y in fail_years)


def test_failure_history_follows_lineage():
    snaps = [snapshot("A", y) for y in (2004, 2005)] + [
        snapshot("B", y, parent_id="A") for y in (2006, 2007)
    ]
    panel = build_panel(snaps, [("A", 2005), ("B", 2007)])
    hist = panel.failure_history(np.array(["B", "B"], dtype=object), [2006, 2007])
    assert hist.tolist() == [1, 2]


def test_snapshot_lookup(tiny_panel):
    s = tiny_panel.snapshot("P2", 2010)
    assert s.pipe_id == "P2" and s.snapshot_year == 2010
    with pytest.raises(KeyError):
        tiny_panel.snapshot("P3", 2010)
