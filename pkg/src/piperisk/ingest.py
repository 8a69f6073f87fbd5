"""CSV ingestion: inventory snapshots, failure events and operation counts.

Interchange format is fixed: UTF-8, ',' delimiter, '.' decimals, mandatory
header row, empty cell = missing. Parsing is total: every input row is either
accepted or accounted for in the :class:`ValidationReport`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataValidationError, EmptyInputError, SchemaError
from .panel import (
    CATEGORICAL_COLUMNS,
    INVENTORY_COLUMNS,
    OPERATION_KINDS,
    UNKNOWN,
    PanelDataset,
    build_panel,
)

FAILURE_COLUMNS = ("pipe_id", "year")
OPERATION_FILE_COLUMNS = ("pipe_id", "year", "kind", "count")

# install_year and original_length_m may be empty; every other numeric is required
_OPTIONAL_NUMERIC = ("install_year", "original_length_m")
_INTEGER_COLUMNS = ("snapshot_year",)
_NONNEGATIVE = (
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
_POSITIVE = ("diameter_mm", "length_m", "original_length_m")


@dataclass
class RawTable:
    header: list[str]
    rows: pd.DataFrame  # string cells, one column per header name
    source_path: str = "<memory>"
    malformed: list[int] = field(default_factory=list)  # row indices with a wrong cell count

    @property
    def n_input_rows(self) -> int:
        return len(self.rows) + len(self.malformed)


@dataclass
class ValidationReport:
    input_rows: int = 0
    accepted_rows: int = 0
    dropped_rows: int = 0
    row_errors: list[tuple[int, str, str]] = field(default_factory=list)
    imputed_install_years: int = 0
    missing_rates: dict[str, float] = field(default_factory=dict)
    source: str = ""

    def reconciles(self) -> bool:
        return self.accepted_rows + self.dropped_rows == self.input_rows

    def summary(self) -> str:
        return (
            f"{self.source}: {self.input_rows} rows, {self.accepted_rows} accepted, "
            f"{self.dropped_rows} dropped, {len(self.row_errors)} cell errors, "
            f"{self.imputed_install_years} install years imputed"
        )


def read_raw_table(path) -> RawTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: file is empty") from None
        good, malformed = [], []
        for i, cells in enumerate(reader):
            if len(cells) == len(header):
                good.append(cells)
            elif cells:
                malformed.append(i)
    return raw_table_from_rows(header, good, str(path), malformed)


def raw_table_from_rows(header, rows, source_path="<memory>", malformed=None) -> RawTable:
    header = [h.strip() for h in header]
    frame = pd.DataFrame(rows, columns=header, dtype=object) if rows else pd.DataFrame(columns=header)
    return RawTable(header=header, rows=frame, source_path=source_path, malformed=list(malformed or []))


def _parse_numeric(cells: pd.Series) -> tuple[pd.Series, np.ndarray, np.ndarray]:
    """Returns (values, empty mask, unparseable mask)."""
    text = cells.astype(str).str.strip()
    empty = (text == "").to_numpy()
    values = pd.to_numeric(text.where(~empty, None), errors="coerce").astype(np.float64)
    bad = (~empty) & ~np.isfinite(values.to_numpy())
    return values, empty, bad


def parse_inventory(raw: RawTable) -> tuple[pd.DataFrame, ValidationReport]:
    """Parse inventory rows into a snapshot frame; invalid rows are dropped and reported."""
    report = ValidationReport(source=raw.source_path, input_rows=raw.n_input_rows)
    required = [c for c in INVENTORY_COLUMNS if c != "parent_id"]
    missing = [c for c in required if c not in raw.header]
    if missing:
        raise SchemaError(f"{raw.source_path}: missing required columns {missing}")
    if raw.n_input_rows == 0:
        raise EmptyInputError(f"{raw.source_path}: no data rows")

    for i in raw.malformed:
        report.row_errors.append((i, "*", "cell-count"))

    src = raw.rows
    n = len(src)
    # row positions in the original file, skipping malformed lines
    positions = np.arange(raw.n_input_rows)
    if raw.malformed:
        positions = np.setdiff1d(positions, np.asarray(raw.malformed))
    drop = np.zeros(n, dtype=bool)

    def flag(mask: np.ndarray, column: str, reason: str) -> None:
        for j in np.flatnonzero(mask):
            report.row_errors.append((int(positions[j]), column, reason))
        drop[mask] = True

    out = pd.DataFrame(index=range(n))
    out["pipe_id"] = src["pipe_id"].astype(str).str.strip().to_numpy()
    flag((out["pipe_id"] == "").to_numpy(), "pipe_id", "missing")

    for col in INVENTORY_COLUMNS:
        if col in ("pipe_id", "parent_id") or col in CATEGORICAL_COLUMNS:
            continue
        values, empty, bad = _parse_numeric(src[col])
        report.missing_rates[col] = float(empty.mean()) if n else 0.0
        flag(bad, col, "parse")
        if col not in _OPTIONAL_NUMERIC:
            flag(empty, col, "missing")
        out[col] = values.to_numpy()

    for col in CATEGORICAL_COLUMNS:
        text = src[col].astype(str).str.strip()
        report.missing_rates[col] = float((text == "").mean()) if n else 0.0
        out[col] = text.where(text != "", UNKNOWN).to_numpy()

    if "parent_id" in src:
        out["parent_id"] = src["parent_id"].astype(str).str.strip().to_numpy()
    else:
        out["parent_id"] = ""

    # defaults before invariant checks
    no_orig = np.isnan(out["original_length_m"].to_numpy())
    out.loc[no_orig, "original_length_m"] = out.loc[no_orig, "length_m"]

    year = out["snapshot_year"].to_numpy()
    with np.errstate(invalid="ignore"):
        flag(np.isfinite(year) & (year != np.round(year)), "snapshot_year", "invariant:not-integer")
        for col in _POSITIVE:
            v = out[col].to_numpy()
            flag(np.isfinite(v) & (v <= 0), col, "invariant:must-be-positive")
        for col in _NONNEGATIVE:
            v = out[col].to_numpy()
            flag(np.isfinite(v) & (v < 0), col, "invariant:must-be-nonnegative")
        length = out["length_m"].to_numpy()
        flag(out["sidewalk_length_m"].to_numpy() > length, "sidewalk_length_m", "invariant:exceeds-length")
        flag(out["greenzone_length_m"].to_numpy() > length, "greenzone_length_m", "invariant:exceeds-length")
        inst = out["install_year"].to_numpy()
        flag(np.isfinite(inst) & (inst > year), "install_year", "invariant:after-snapshot")

    accepted = out.loc[~drop].reset_index(drop=True)
    accepted["snapshot_year"] = accepted["snapshot_year"].astype(np.int64)
    report.accepted_rows = len(accepted)
    report.dropped_rows = int(drop.sum()) + len(raw.malformed)
    report.row_errors.sort()
    return accepted.loc[:, list(INVENTORY_COLUMNS)], report


def parse_events(
    raw_failures: RawTable, raw_operations: RawTable | None = None
) -> tuple[pd.DataFrame, pd.DataFrame, ValidationReport]:
    """Parse failure and operation tables.

    Returns ``(failures, operations, report)`` where ``operations`` is already
    aggregated per (pipe_id, year, kind). Rows with unknown kinds, negative or
    non-integer counts, or unparseable years are rejected individually.
    """
    report = ValidationReport(source=raw_failures.source_path)
    missing = [c for c in FAILURE_COLUMNS if c not in raw_failures.header]
    if missing:
        raise SchemaError(f"{raw_failures.source_path}: missing required columns {missing}")

    def parse_years(raw: RawTable, tag: str):
        ids = raw.rows["pipe_id"].astype(str).str.strip()
        years, empty, bad = _parse_numeric(raw.rows["year"])
        y = years.to_numpy()
        with np.errstate(invalid="ignore"):
            bad_year = bad | empty | (np.isfinite(y) & (y != np.round(y)))
        bad_id = (ids == "").to_numpy()
        for j in np.flatnonzero(bad_id):
            report.row_errors.append((int(j), f"{tag}:pipe_id", "missing"))
        for j in np.flatnonzero(bad_year):
            report.row_errors.append((int(j), f"{tag}:year", "parse"))
        return ids, y, bad_id | bad_year

    ids, years, bad = parse_years(raw_failures, "failures")
    failures = pd.DataFrame({"pipe_id": ids[~bad].to_numpy(), "year": years[~bad].astype(np.int64)})
    report.input_rows += raw_failures.n_input_rows
    report.accepted_rows += len(failures)
    report.dropped_rows += int(bad.sum()) + len(raw_failures.malformed)

    operations = pd.DataFrame(columns=list(OPERATION_FILE_COLUMNS))
    if raw_operations is not None:
        missing = [c for c in OPERATION_FILE_COLUMNS if c not in raw_operations.header]
        if missing:
            raise SchemaError(f"{raw_operations.source_path}: missing required columns {missing}")
        ids, years, bad = parse_years(raw_operations, "operations")
        kinds = raw_operations.rows["kind"].astype(str).str.strip().str.lower()
        bad_kind = ~kinds.isin(OPERATION_KINDS).to_numpy()
        counts, empty, unparsed = _parse_numeric(raw_operations.rows["count"])
        c = counts.to_numpy()
        with np.errstate(invalid="ignore"):
            bad_count = empty | unparsed | (np.isfinite(c) & ((c < 0) | (c != np.round(c))))
        for j in np.flatnonzero(bad_kind):
            report.row_errors.append((int(j), "operations:kind", "unknown-kind"))
        for j in np.flatnonzero(bad_count):
            report.row_errors.append((int(j), "operations:count", "parse"))
        bad = bad | bad_kind | bad_count
        operations = pd.DataFrame(
            {
                "pipe_id": ids[~bad].to_numpy(),
                "year": years[~bad].astype(np.int64),
                "kind": kinds[~bad].to_numpy(),
                "count": c[~bad].astype(np.int64),
            }
        )
        operations = (
            operations.groupby(["pipe_id", "year", "kind"], sort=True, as_index=False)["count"].sum()
        )
        report.source = f"{raw_failures.source_path} + {raw_operations.source_path}"
        report.input_rows += raw_operations.n_input_rows
        report.accepted_rows += int((~bad).sum())
        report.dropped_rows += int(bad.sum()) + len(raw_operations.malformed)
    return failures, operations, report


def impute_install_year(snapshots: pd.DataFrame) -> tuple[pd.DataFrame, ValidationReport]:
    """Fill missing install years with the (material, city) median, else the global median."""
    report = ValidationReport(source="impute_install_year", input_rows=len(snapshots))
    report.accepted_rows = len(snapshots)
    out = snapshots.copy()
    inst = out["install_year"].astype(np.float64)
    missing = inst.isna()
    if not missing.any():
        return out, report
    if missing.all():
        raise DataValidationError("every install_year is missing; nothing to impute from")
    known = out.loc[~missing]
    group_median = known.groupby(["material", "city"])["install_year"].median()
    global_median = float(np.median(known["install_year"].to_numpy()))
    keys = pd.MultiIndex.from_frame(out.loc[missing, ["material", "city"]])
    fill = group_median.reindex(keys).to_numpy()
    fill = np.where(np.isnan(fill), global_median, fill)
    inst.loc[missing] = fill
    out["install_year"] = inst
    report.imputed_install_years = int(missing.sum())
    return out, report


def _csv_ready(frame: pd.DataFrame) -> pd.DataFrame:
    out = frame.copy()
    for col in out.columns:
        s = out[col]
        if s.dtype.kind == "f":
            v = s.to_numpy()
            finite = np.isfinite(v)
            if finite.all() and np.all(v == np.round(v)) and np.all(np.abs(v) < 2**53):
                out[col] = v.astype(np.int64)
    return out


def write_csv(frame: pd.DataFrame, path, columns) -> None:
    _csv_ready(frame.loc[:, list(columns)]).to_csv(
        path, index=False, na_rep="", lineterminator="\n", encoding="utf-8"
    )


def write_panel(panel: PanelDataset, directory) -> dict[str, Path]:
    """Write inventory/failures/operations CSVs in the ingest schema."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "inventory": directory / "inventory.csv",
        "failures": directory / "failures.csv",
        "operations": directory / "operations.csv",
    }
    write_csv(panel.rows, paths["inventory"], INVENTORY_COLUMNS)
    write_csv(panel.failures, paths["failures"], FAILURE_COLUMNS)
    write_csv(panel.operations, paths["operations"], OPERATION_FILE_COLUMNS)
    return paths


def load_panel(inventory_path, failures_path, operations_path=None) -> tuple[PanelDataset, list[ValidationReport]]:
    """Read, validate, impute and assemble a panel from the three CSV files."""
    rows, inv_report = parse_inventory(read_raw_table(inventory_path))
    rows, imp_report = impute_install_year(rows)
    inv_report.imputed_install_years = imp_report.imputed_install_years
    raw_ops = read_raw_table(operations_path) if operations_path and Path(operations_path).exists() else None
    failures, ops, ev_report = parse_events(read_raw_table(failures_path), raw_ops)
    panel = build_panel(rows, failures, ops)
    return panel, [inv_report, ev_report]
