"""Panel data model: one row per (pipe, snapshot year) plus failure events.

Everything downstream (labels, features, survival records) is derived from a
:class:`PanelDataset`. Rows are kept columnar in a pandas frame sorted by
``(pipe_id, snapshot_year)``; failure lookups go through a sorted int64 key
array so that window counts are a pair of ``searchsorted`` calls.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKeyError,
    EmptyInputError,
    InfeasibleSplitError,
    SchemaError,
    WindowError,
)

INVENTORY_COLUMNS = (
    "pipe_id",
    "snapshot_year",
    "material",
    "diameter_mm",
    "length_m",
    "original_length_m",
    "install_year",
    "num_connections",
    "avg_connections_age",
    "num_elements",
    "avg_elements_age",
    "city",
    "network_type",
    "sidewalk_length_m",
    "ind_greenzone",
    "greenzone_length_m",
    "assimilable_to_transport",
    "level_of_traffic",
    "underground_gallery",
    "pressure",
    "maxvsmin_pressure",
    "estres_pressure",
    "parent_id",
)

CATEGORICAL_COLUMNS = (
    "material",
    "city",
    "network_type",
    "ind_greenzone",
    "assimilable_to_transport",
    "level_of_traffic",
    "underground_gallery",
)

NUMERIC_COLUMNS = tuple(
    c
    for c in INVENTORY_COLUMNS
    if c not in CATEGORICAL_COLUMNS and c not in ("pipe_id", "snapshot_year", "parent_id")
)

OPERATION_KINDS = ("pipe", "accessory", "other")
OPERATION_COLUMNS = {
    "pipe": "pipe_ops_year",
    "accessory": "accessory_ops_year",
    "other": "other_ops_year",
}

UNKNOWN = "UNKNOWN"

# keys are pipe_code * _YEAR_SPAN + year
_YEAR_SPAN = 10_000


@dataclass(frozen=True)
class PipeSnapshot:
    pipe_id: str
    snapshot_year: int
    material: str
    diameter_mm: float
    length_m: float
    original_length_m: float
    install_year: float  # NaN when unknown
    num_connections: float
    avg_connections_age: float
    num_elements: float
    avg_elements_age: float
    city: str
    network_type: str
    sidewalk_length_m: float
    ind_greenzone: str
    greenzone_length_m: float
    assimilable_to_transport: str
    level_of_traffic: str
    underground_gallery: str
    pressure: float
    maxvsmin_pressure: float
    estres_pressure: float
    parent_id: str = ""
    pipe_ops_year: float = 0.0
    accessory_ops_year: float = 0.0
    other_ops_year: float = 0.0


@dataclass(frozen=True)
class FailureEvent:
    pipe_id: str
    year: int


@dataclass(frozen=True)
class LabeledSlice:
    """Binary targets for every pipe present at ``snapshot_year``.

    ``labels`` is indexed by pipe id; a pipe is positive when it fails in the
    half-open window ``(snapshot_year, snapshot_year + horizon_k]``.
    """

    snapshot_year: int
    horizon_k: int
    labels: pd.Series

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0


@dataclass(frozen=True, eq=False)
class PanelDataset:
    rows: pd.DataFrame
    failures: pd.DataFrame
    operations: pd.DataFrame
    orphan_failures: tuple = ()
    orphan_operations: tuple = ()

    @property
    def year_range(self) -> tuple[int, int]:
        years = self.rows["snapshot_year"]
        return int(years.min()), int(years.max())

    @cached_property
    def years(self) -> np.ndarray:
        return np.unique(self.rows["snapshot_year"].to_numpy())

    @cached_property
    def pipe_index(self) -> pd.Index:
        ids = pd.concat([self.rows["pipe_id"], self.failures["pipe_id"]]).unique()
        return pd.Index(np.sort(ids.astype(object)))

    def pipe_codes(self, pipe_ids) -> np.ndarray:
        codes = self.pipe_index.get_indexer(pd.Index(pipe_ids))
        return codes.astype(np.int64)

    @cached_property
    def _failure_keys(self) -> np.ndarray:
        codes = self.pipe_codes(self.failures["pipe_id"])
        keys = codes * _YEAR_SPAN + self.failures["year"].to_numpy(np.int64)
        return np.sort(keys)

    def count_failures(self, pipe_ids, lo, hi) -> np.ndarray:
        """Own failures with ``lo < year <= hi`` for each pipe (vectorized)."""
        base = self.pipe_codes(pipe_ids) * _YEAR_SPAN
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        keys = self._failure_keys
        return np.searchsorted(keys, base + hi, side="right") - np.searchsorted(
            keys, base + lo, side="right"
        )

    @cached_property
    def _ancestors(self) -> dict:
        if "parent_id" not in self.rows:
            return {}
        parents = self.rows.loc[self.rows["parent_id"] != "", ["pipe_id", "parent_id"]]
        parent_of = dict(parents.drop_duplicates("pipe_id", keep="last").itertuples(index=False))
        chains = {}
        for pipe in parent_of:
            chain, seen, cur = [], {pipe}, parent_of.get(pipe)
            while cur and cur not in seen:
                chain.append(cur)
                seen.add(cur)
                cur = parent_of.get(cur)
            chains[pipe] = chain
        return chains

    def failure_history(self, pipe_ids, years) -> np.ndarray:
        """Failures at years <= ``years``, including those of lineage ancestors."""
        pipe_ids = np.asarray(pipe_ids, dtype=object)
        years = np.broadcast_to(np.asarray(years, dtype=np.int64), pipe_ids.shape)
        counts = self.count_failures(pipe_ids, np.full(len(pipe_ids), -1), years)
        chains = self._ancestors
        if chains:
            rows, ancestors = [], []
            for i, pid in enumerate(pipe_ids):
                for anc in chains.get(pid, ()):
                    rows.append(i)
                    ancestors.append(anc)
            if rows:
                rows = np.asarray(rows)
                extra = self.count_failures(
                    np.asarray(ancestors, dtype=object), np.full(len(rows), -1), years[rows]
                )
                np.add.at(counts, rows, extra)
        return counts

    def rows_at(self, year: int) -> pd.DataFrame:
        return self.rows[self.rows["snapshot_year"] == year]

    def snapshot(self, pipe_id: str, year: int) -> PipeSnapshot:
        hit = self.rows[(self.rows["pipe_id"] == pipe_id) & (self.rows["snapshot_year"] == year)]
        if hit.empty:
            raise KeyError((pipe_id, year))
        rec = hit.iloc[0]
        return PipeSnapshot(**{f.name: rec[f.name] for f in dataclasses.fields(PipeSnapshot)})


def _as_frame(items, columns: Sequence[str], record_type) -> pd.DataFrame:
    if isinstance(items, pd.DataFrame):
        return items.copy()
    items = list(items)
    if not items:
        return pd.DataFrame(columns=list(columns))
    if isinstance(items[0], record_type):
        return pd.DataFrame([dataclasses.asdict(x) for x in items])
    return pd.DataFrame(items, columns=list(columns))


def aggregate_operations(operations: pd.DataFrame) -> pd.DataFrame:
    """Sum counts per (pipe_id, year, kind)."""
    if operations is None or len(operations) == 0:
        return pd.DataFrame(
            {"pipe_id": pd.Series(dtype=object), "year": pd.Series(dtype=np.int64),
             "kind": pd.Series(dtype=object), "count": pd.Series(dtype=np.int64)}
        )
    agg = (
        operations.groupby(["pipe_id", "year", "kind"], sort=True, as_index=False)["count"]
        .sum()
        .reset_index(drop=True)
    )
    agg["year"] = agg["year"].astype(np.int64)
    agg["count"] = agg["count"].astype(np.int64)
    return agg


def build_panel(
    snapshots: pd.DataFrame | Iterable[PipeSnapshot],
    failure_events: pd.DataFrame | Iterable[FailureEvent],
    operations: pd.DataFrame | None = None,
) -> PanelDataset:
    """Assemble a sorted, indexed panel.

    ``operations`` is the long (pipe_id, year, kind, count) table; its counts
    are aggregated and attached to the rows as ``*_ops_year`` columns.
    Failures and operations whose pipe never appears in a snapshot are kept
    and listed in ``orphan_failures`` / ``orphan_operations``.
    """
    rows = _as_frame(snapshots, INVENTORY_COLUMNS, PipeSnapshot)
    if rows.empty:
        raise EmptyInputError("no snapshots supplied")
    missing = [c for c in INVENTORY_COLUMNS if c not in rows and c != "parent_id"]
    if missing:
        raise SchemaError(f"snapshot table missing columns: {missing}")
    if "parent_id" not in rows:
        rows["parent_id"] = ""
    rows["pipe_id"] = rows["pipe_id"].astype(str)
    rows["parent_id"] = rows["parent_id"].fillna("").astype(str)
    rows["snapshot_year"] = rows["snapshot_year"].astype(np.int64)

    dup = rows.duplicated(["pipe_id", "snapshot_year"], keep=False)
    if dup.any():
        pairs = sorted(set(map(tuple, rows.loc[dup, ["pipe_id", "snapshot_year"]].to_numpy().tolist())))
        raise DuplicateKeyError(pairs)

    years = rows["snapshot_year"]
    if years.min() < 1 or years.max() >= _YEAR_SPAN - 1:
        raise WindowError("snapshot years must lie in [1, 9998]")

    failures = _as_frame(failure_events, ("pipe_id", "year"), FailureEvent)
    failures = failures.loc[:, ["pipe_id", "year"]].copy()
    failures["pipe_id"] = failures["pipe_id"].astype(str)
    failures["year"] = failures["year"].astype(np.int64)
    failures = failures.sort_values(["pipe_id", "year"], kind="mergesort").reset_index(drop=True)

    ops = aggregate_operations(operations)
    ops["pipe_id"] = ops["pipe_id"].astype(str)
    for kind in OPERATION_KINDS:
        col = OPERATION_COLUMNS[kind]
        sub = ops.loc[ops["kind"] == kind, ["pipe_id", "year", "count"]].rename(
            columns={"year": "snapshot_year", "count": col}
        )
        rows = rows.drop(columns=[col], errors="ignore").merge(
            sub, on=["pipe_id", "snapshot_year"], how="left"
        )
        rows[col] = rows[col].fillna(0).astype(np.float64)

    rows = rows.sort_values(["pipe_id", "snapshot_year"], kind="mergesort").reset_index(drop=True)

    known = set(rows["pipe_id"])
    orphan_failures = tuple(sorted(set(failures["pipe_id"]) - known))
    orphan_ops = tuple(sorted(set(ops["pipe_id"]) - known))
    return PanelDataset(
        rows=rows,
        failures=failures,
        operations=ops,
        orphan_failures=orphan_failures,
        orphan_operations=orphan_ops,
    )


def _check_window(panel: PanelDataset, snapshot_year: int, k: int) -> None:
    if k < 1:
        raise WindowError(f"horizon k must be >= 1, got {k}")
    lo, hi = panel.year_range
    if snapshot_year < lo or snapshot_year + k > hi:
        raise WindowError(
            f"window ({snapshot_year}, {snapshot_year + k}] is outside the panel range {lo}-{hi}"
        )


def window_labels(panel: PanelDataset, rows: pd.DataFrame, k: int) -> np.ndarray:
    """Vectorized labels for arbitrary panel rows (each at its own snapshot year)."""
    years = rows["snapshot_year"].to_numpy(np.int64)
    if len(years):
        _check_window(panel, int(years.min()), k)
        _check_window(panel, int(years.max()), k)
    counts = panel.count_failures(rows["pipe_id"].to_numpy(), years, years + k)
    return (counts > 0).astype(np.int8)


def label_failure_window(panel: PanelDataset, snapshot_year: int, k: int) -> LabeledSlice:
    _check_window(panel, snapshot_year, k)
    at = panel.rows_at(snapshot_year)
    labels = pd.Series(
        window_labels(panel, at, k), index=pd.Index(at["pipe_id"].to_numpy(), name="pipe_id"),
        name="failure",
    )
    return LabeledSlice(snapshot_year=int(snapshot_year), horizon_k=int(k), labels=labels)


def temporal_split(
    panel: PanelDataset, test_snapshot_year: int, k: int, gap: int | None = None
) -> tuple[tuple[int, ...], LabeledSlice]:
    """Training years and the labelled test slice, separated by ``gap`` years.

    Training keeps every snapshot year ``<= test_snapshot_year - gap`` so no
    training label window reaches past the test snapshot.
    """
    gap = k if gap is None else gap
    if gap < k:
        raise InfeasibleSplitError(f"gap ({gap}) must be >= horizon k ({k})")
    test = label_failure_window(panel, test_snapshot_year, k)
    cutoff = test_snapshot_year - gap
    train_years = tuple(int(y) for y in panel.years if y <= cutoff)
    if not train_years:
        lo, _ = panel.year_range
        raise InfeasibleSplitError(
            f"no training years: test {test_snapshot_year} - gap {gap} = {cutoff} < panel start {lo}"
        )
    return train_years, test
