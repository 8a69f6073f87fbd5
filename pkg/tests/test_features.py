import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import snapshot
from piperisk.errors import EmptyInputError, NonFiniteError
from piperisk.features import (
    CLASSIFIER_SPEC,
    SURVIVAL_LEAKAGE_FEATURES,
    SURVIVAL_SPEC,
    EncoderState,
    FeatureSpec,
    apply_encoder,
    derive_features,
    engineer_derived_features,
    fit_encoder,
)
from piperisk.panel import build_panel

ONE_NUMERIC = FeatureSpec(("x",), (), ())


def test_age_aspect_and_history():
    snaps = [snapshot("P1", y, install_year=1990.0) for y in range(2010, 2016)]
    panel = build_panel(snaps, [("P1", 2010), ("P1", 2014)])
    feats = derive_features(panel, panel.rows)
    by_year = feats.set_index("snapshot_year")
    assert by_year.loc[2015, "age"] == 25
    assert by_year.loc[2012, "aspect_ratio"] == 2.0
    assert by_year.loc[2012, "failure_history"] == 1
    assert by_year.loc[2014, "failure_history"] == 2


def test_ratios_and_operation_counts():
    snaps = [snapshot("P1", 2010, install_year=2010.0, length_m=40.0, original_length_m=80.0,
                      sidewalk_length_m=10.0, greenzone_length_m=20.0, avg_connections_age=7.0)]
    ops = pd.DataFrame({"pipe_id": ["P1"], "year": [2010], "kind": ["accessory"], "count": [4]})
    panel = build_panel(snaps, [], ops)
    row = derive_features(panel, panel.rows).iloc[0]
    assert row["long_ratio"] == 0.5
    assert row["sidewalk_length_ratio"] == 0.25
    assert row["greenzone_length_ratio"] == 0.5
    assert row["age_connections_ratio"] == 7.0  # age 0 is clamped to 1
    assert (row["pipe_operations"], row["accessory_operations"], row["other_operations"]) == (0, 4, 0)


def test_engineer_unknown_year(tiny_panel):
    with pytest.raises(EmptyInputError):
        engineer_derived_features(tiny_panel, 2030)


def test_engineer_independent_of_row_order(small_synth):
    panel = small_synth.panel
    rows = panel.rows_at(2010)
    a = derive_features(panel, rows)
    b = derive_features(panel, rows.sample(frac=1.0, random_state=1)).loc[a.index]
    pd.testing.assert_frame_equal(a, b)
    pd.testing.assert_frame_equal(a, engineer_derived_features(panel, 2010))


def test_population_moments():
    enc = fit_encoder(pd.DataFrame({"x": [1.0, 2.0, 3.0]}), ONE_NUMERIC)
    assert enc.means == (2.0,)
    assert enc.stds[0] == pytest.approx(np.sqrt(2 / 3), abs=1e-15)
    out = apply_encoder(pd.DataFrame({"x": [1.0, 2.0, 3.0]}), enc).values[:, 0]
    np.testing.assert_allclose(out, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_constant_column():
    enc = fit_encoder(pd.DataFrame({"x": [5.0, 5.0, 5.0]}), ONE_NUMERIC)
    assert enc.stds == (0.0,)
    assert enc.constant_columns == ("x",)
    assert np.all(apply_encoder(pd.DataFrame({"x": [5.0, 7.0]}), enc).values == 0.0)


def test_one_hot_first_seen_and_unseen():
    spec = FeatureSpec((), ("material",), ())
    enc = fit_encoder(pd.DataFrame({"material": ["FD", "FG", "FD"]}), spec)
    assert enc.categories["material"] == ("FD", "FG")
    fm = apply_encoder(pd.DataFrame({"material": ["FD", "AG"]}), enc)
    assert fm.column_names == ["material_FD", "material_FG"]
    assert fm.values.tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        fit_encoder(pd.DataFrame({"x": [1.0, np.nan]}), ONE_NUMERIC)
    with pytest.raises(EmptyInputError):
        fit_encoder(pd.DataFrame({"x": []}), ONE_NUMERIC)


def test_encoder_json_round_trip(small_synth):
    panel = small_synth.panel
    feats = derive_features(panel, panel.rows_at(2008))
    enc = fit_encoder(feats, CLASSIFIER_SPEC)
    again = EncoderState.from_json(enc.to_json())
    assert again == enc
    np.testing.assert_array_equal(apply_encoder(feats, again).values, apply_encoder(feats, enc).values)
    assert enc.fit_years == (2008,)


def test_classifier_and_survival_specs():
    assert "install_year" not in CLASSIFIER_SPEC.scaled_columns
    assert "age" in CLASSIFIER_SPEC.scaled_columns
    for name in SURVIVAL_LEAKAGE_FEATURES + ("age",):
        assert name not in SURVIVAL_SPEC.scaled_columns
    assert "install_year" in SURVIVAL_SPEC.scaled_columns


@given(
    arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)),
)
def test_self_standardization(block):
    cols = [f"c{j}" for j in range(block.shape[1])]
    frame = pd.DataFrame(block, columns=cols)
    enc = fit_encoder(frame, FeatureSpec(tuple(cols), (), ()))
    z = apply_encoder(frame, enc).values
    for j, s in enumerate(enc.stds):
        if s > 1e-6 * max(1.0, np.abs(block[:, j]).max()):
            assert abs(z[:, j].mean()) <= 1e-10
            assert abs(z[:, j].var() - 1.0) <= 1e-10
        elif s == 0.0:
            assert np.all(z[:, j] == 0.0)


@given(
    st.lists(st.sampled_from(["FD", "FG", "PE"]), min_size=1, max_size=20),
    st.lists(st.sampled_from(["FD", "FG", "PE", "AG", "OTHER"]), min_size=1, max_size=20),
)
def test_one_hot_row_sums(fit_cats, apply_cats):
    spec = FeatureSpec((), ("material",), ())
    enc = fit_encoder(pd.DataFrame({"material": fit_cats}), spec)
    fm = apply_encoder(pd.DataFrame({"material": apply_cats}), enc)
    expected = [1.0 if c in set(fit_cats) else 0.0 for c in apply_cats]
    assert fm.values.sum(axis=1).tolist() == expected
