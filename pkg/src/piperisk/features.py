"""Derived features, one-hot encoding and train-fitted standardization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import EmptyInputError, NonFiniteError, SchemaError
from .panel import OPERATION_COLUMNS, PanelDataset

DERIVED_FORMULAS = {
    "age": "snapshot_year - install_year",
    "failure_history": "failures of the pipe and its lineage ancestors at years <= snapshot_year",
    "aspect_ratio": "diameter_mm / length_m",
    "sidewalk_length_ratio": "sidewalk_length_m / length_m",
    "greenzone_length_ratio": "greenzone_length_m / length_m",
    "age_connections_ratio": "avg_connections_age / max(age, 1)",
    "long_ratio": "length_m / original_length_m",
    "pipe_operations": "pipe_ops_year",
    "accessory_operations": "accessory_ops_year",
    "other_operations": "other_ops_year",
}

_BASE_NUMERIC = (
    "diameter_mm",
    "length_m",
    "num_connections",
    "avg_connections_age",
    "num_elements",
    "avg_elements_age",
    "sidewalk_length_m",
    "greenzone_length_m",
    "pressure",
    "maxvsmin_pressure",
    "estres_pressure",
)

_BASE_CATEGORICAL = (
    "material",
    "city",
    "network_type",
    "ind_greenzone",
    "assimilable_to_transport",
    "level_of_traffic",
    "underground_gallery",
)

# removed from survival covariates: they encode the pipe age, which is the duration there
SURVIVAL_LEAKAGE_FEATURES = ("avg_connections_age", "age_connections_ratio", "avg_elements_age")


@dataclass(frozen=True)
class FeatureSpec:
    numeric_columns: tuple[str, ...]
    categorical_columns: tuple[str, ...]
    derived_columns: tuple[str, ...]

    def __post_init__(self):
        groups = [set(self.numeric_columns), set(self.categorical_columns), set(self.derived_columns)]
        if any(a & b for i, a in enumerate(groups) for b in groups[i + 1 :]):
            raise SchemaError("feature spec column groups must be disjoint")
        unknown = [c for c in self.derived_columns if c not in DERIVED_FORMULAS]
        if unknown:
            raise SchemaError(f"no formula for derived columns {unknown}")

    @property
    def scaled_columns(self) -> tuple[str, ...]:
        return self.numeric_columns + self.derived_columns

    def without(self, names) -> "FeatureSpec":
        names = set(names)
        return FeatureSpec(
            tuple(c for c in self.numeric_columns if c not in names),
            tuple(c for c in self.categorical_columns if c not in names),
            tuple(c for c in self.derived_columns if c not in names),
        )


# Install year is replaced by age for the classifiers.
CLASSIFIER_SPEC = FeatureSpec(_BASE_NUMERIC, _BASE_CATEGORICAL, tuple(DERIVED_FORMULAS))

SURVIVAL_SPEC = FeatureSpec(
    ("install_year",) + _BASE_NUMERIC, _BASE_CATEGORICAL, tuple(DERIVED_FORMULAS)
).without(SURVIVAL_LEAKAGE_FEATURES + ("age",))


def derive_features(panel: PanelDataset, rows: pd.DataFrame) -> pd.DataFrame:
    """Append the derived columns to ``rows`` (any mix of snapshot years)."""
    out = rows.copy()
    year = out["snapshot_year"].to_numpy(np.float64)
    length = out["length_m"].to_numpy(np.float64)
    age = year - out["install_year"].to_numpy(np.float64)
    out["age"] = age
    out["failure_history"] = panel.failure_history(
        out["pipe_id"].to_numpy(), out["snapshot_year"].to_numpy(np.int64)
    ).astype(np.float64)
    out["aspect_ratio"] = out["diameter_mm"].to_numpy(np.float64) / length
    out["sidewalk_length_ratio"] = out["sidewalk_length_m"].to_numpy(np.float64) / length
    out["greenzone_length_ratio"] = out["greenzone_length_m"].to_numpy(np.float64) / length
    out["age_connections_ratio"] = out["avg_connections_age"].to_numpy(np.float64) / np.maximum(age, 1.0)
    original = out["original_length_m"].to_numpy(np.float64)
    original = np.where(np.isnan(original), length, original)
    out["long_ratio"] = length / original
    for kind, name in (("pipe", "pipe_operations"), ("accessory", "accessory_operations"), ("other", "other_operations")):
        col = OPERATION_COLUMNS[kind]
        out[name] = out[col].to_numpy(np.float64) if col in out else 0.0
    return out


def engineer_derived_features(panel: PanelDataset, snapshot_year: int) -> pd.DataFrame:
    rows = panel.rows_at(snapshot_year)
    if rows.empty:
        raise EmptyInputError(f"no rows at snapshot year {snapshot_year}")
    return derive_features(panel, rows)


@dataclass(frozen=True)
class EncoderState:
    numeric_columns: tuple[str, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    categories: dict = field(default_factory=dict)  # column -> tuple of categories
    fit_years: tuple[int, ...] = ()
    n_rows: int = 0

    @property
    def constant_columns(self) -> tuple[str, ...]:
        return tuple(c for c, s in zip(self.numeric_columns, self.stds) if s == 0.0)

    @property
    def column_names(self) -> list[str]:
        names = list(self.numeric_columns)
        for col, cats in self.categories.items():
            names.extend(f"{col}_{c}" for c in cats)
        return names

    def to_dict(self) -> dict:
        return {
            "numeric": {
                c: {"mean": m, "std": s} for c, m, s in zip(self.numeric_columns, self.means, self.stds)
            },
            "categorical": {c: list(v) for c, v in self.categories.items()},
            "fit_years": list(self.fit_years),
            "n_rows": self.n_rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderState":
        numeric = d["numeric"]
        return cls(
            numeric_columns=tuple(numeric),
            means=tuple(float(v["mean"]) for v in numeric.values()),
            stds=tuple(float(v["std"]) for v in numeric.values()),
            categories={c: tuple(v) for c, v in d["categorical"].items()},
            fit_years=tuple(int(y) for y in d.get("fit_years", ())),
            n_rows=int(d.get("n_rows", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EncoderState":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FeatureMatrix:
    row_ids: np.ndarray
    column_names: list[str]
    values: np.ndarray
    snapshot_years: np.ndarray | None = None

    @property
    def shape(self):
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]


def _numeric_block(rows: pd.DataFrame, columns) -> np.ndarray:
    missing = [c for c in columns if c not in rows]
    if missing:
        raise SchemaError(f"rows are missing columns {missing}")
    block = rows.loc[:, list(columns)].to_numpy(np.float64)
    if not np.isfinite(block).all():
        bad = [c for j, c in enumerate(columns) if not np.isfinite(block[:, j]).all()]
        raise NonFiniteError(f"non-finite values in columns {bad}")
    return block


def fit_encoder(rows: pd.DataFrame, spec: FeatureSpec) -> EncoderState:
    """Population (1/n) moments per numeric column; categories in first-seen order."""
    if len(rows) == 0:
        raise EmptyInputError("cannot fit an encoder on zero rows")
    cols = spec.scaled_columns
    block = _numeric_block(rows, cols)
    means = block.mean(axis=0)
    stds = block.std(axis=0)
    missing = [c for c in spec.categorical_columns if c not in rows]
    if missing:
        raise SchemaError(f"rows are missing columns {missing}")
    cats = {c: tuple(pd.unique(rows[c].astype(str))) for c in spec.categorical_columns}
    years = tuple(int(y) for y in np.unique(rows["snapshot_year"])) if "snapshot_year" in rows else ()
    return EncoderState(
        numeric_columns=tuple(cols),
        means=tuple(float(m) for m in means),
        stds=tuple(float(s) for s in stds),
        categories=cats,
        fit_years=years,
        n_rows=len(rows),
    )


def apply_encoder(rows: pd.DataFrame, state: EncoderState) -> FeatureMatrix:
    block = _numeric_block(rows, state.numeric_columns)
    means = np.asarray(state.means)
    stds = np.asarray(state.stds)
    safe = np.where(stds > 0, stds, 1.0)
    scaled = np.where(stds > 0, (block - means) / safe, 0.0)
    parts = [scaled]
    for col, cats in state.categories.items():
        if col not in rows:
            raise SchemaError(f"rows are missing column {col!r}")
        codes = pd.Categorical(rows[col].astype(str), categories=list(cats)).codes
        onehot = np.zeros((len(rows), len(cats)))
        seen = codes >= 0
        onehot[np.flatnonzero(seen), codes[seen]] = 1.0
        parts.append(onehot)
    values = np.ascontiguousarray(np.hstack(parts))
    years = rows["snapshot_year"].to_numpy(np.int64) if "snapshot_year" in rows else None
    ids = rows["pipe_id"].to_numpy() if "pipe_id" in rows else np.arange(len(rows))
    return FeatureMatrix(row_ids=ids, column_names=state.column_names, values=values, snapshot_years=years)
