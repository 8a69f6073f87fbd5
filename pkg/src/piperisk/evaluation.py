"""Confusion-matrix scores, threshold sweeps and gap-aware temporal CV.

A row is predicted positive when its probability is strictly greater than
the threshold. Scores use these conventions when a denominator is zero:
MCC is 0 if any marginal sum is 0; precision, recall and F1 are 0 when
their own denominators are 0.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyInputError, InfeasibleSplitError, PipeRiskError, SchemaError, SingleClassError
from .panel import PanelDataset, temporal_split
from .pipeline import PipelineConfig, TrainedPipeline, fit_pipeline, score_year

METRICS = ("mcc", "precision", "recall", "accuracy", "f1")
DEFAULT_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ScoreSet:
    mcc: float
    precision: float
    recall: float
    accuracy: float
    f1: float
    auc: float = float("nan")
    threshold: float = float("nan")

    def as_row(self) -> dict:
        return {
            "threshold": self.threshold,
            "mcc": self.mcc,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "auc": self.auc,
        }


def _check_pair(probabilities, labels):
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise SchemaError(f"probabilities {p.shape} and labels {y.shape} differ in length")
    if p.size and (p.min() < 0 or p.max() > 1 or not np.isfinite(p).all()):
        raise SchemaError("probabilities must lie in [0, 1]")
    return p, y.astype(np.int64)


def confusion_at_threshold(probabilities, labels, threshold: float) -> ConfusionMatrix:
    p, y = _check_pair(probabilities, labels)
    pred = p > threshold
    pos = y == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    return ConfusionMatrix(tp=tp, tn=len(y) - tp - fp - fn, fp=fp, fn=fn)


def _ratio(num, den):
    return num / den if den else 0.0


def score_set(confusion: ConfusionMatrix, threshold: float = float("nan"), auc: float = float("nan")) -> ScoreSet:
    tp, tn, fp, fn = confusion.tp, confusion.tn, confusion.fp, confusion.fn
    total = confusion.total
    if total <= 0:
        raise EmptyInputError("score_set of an empty confusion matrix")
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)  # equals 2PR/(P+R), exact in integers
    margins = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(margins) if margins else 0.0
    return ScoreSet(
        mcc=float(mcc),
        precision=float(precision),
        recall=float(recall),
        accuracy=float((tp + tn) / total),
        f1=float(f1),
        auc=float(auc),
        threshold=float(threshold),
    )


def roc_auc(probabilities, labels) -> float:
    """Mann-Whitney statistic with ties counted one half (average ranks)."""
    p, y = _check_pair(probabilities, labels)
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("roc_auc needs both classes")
    ranks = pd.Series(p).rank(method="average").to_numpy()
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class ThresholdCurve:
    grid: np.ndarray
    scores: list[ScoreSet]

    def metric(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.scores])


def _check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ConfigError("threshold grid must be a non-empty vector")
    if g.min() < 0 or g.max() > 1 or (g.size > 1 and np.any(np.diff(g) <= 0)):
        raise ConfigError("threshold grid must be strictly ascending within [0, 1]")
    return g


def threshold_sweep(probabilities, labels, grid=DEFAULT_GRID) -> ThresholdCurve:
    p, y = _check_pair(probabilities, labels)
    g = _check_grid(grid)
    if p.size == 0:
        raise EmptyInputError("threshold sweep over zero rows")
    pos = np.sort(p[y == 1])
    neg = np.sort(p[y != 1])
    # rows with p > t: count minus those <= t
    tp = len(pos) - np.searchsorted(pos, g, side="right")
    fp = len(neg) - np.searchsorted(neg, g, side="right")
    fn = len(pos) - tp
    tn = len(neg) - fp
    auc = roc_auc(p, y) if len(pos) and len(neg) else float("nan")
    scores = [
        score_set(ConfusionMatrix(int(a), int(b), int(c), int(d)), threshold=float(t), auc=auc)
        for t, a, b, c, d in zip(g, tp, tn, fp, fn)
    ]
    return ThresholdCurve(grid=g, scores=scores)


@dataclass(frozen=True)
class CvScheme:
    horizon_k: int
    n_folds: int = 5
    gap: int | None = None
    validation_years: tuple[int, ...] = ()

    @property
    def effective_gap(self) -> int:
        return self.horizon_k if self.gap is None else self.gap

    def resolve(self, panel: PanelDataset) -> "CvScheme":
        """Fill in validation years: the last ``n_folds`` years whose window fits the panel."""
        if self.n_folds < 1:
            raise InfeasibleSplitError("n_folds must be >= 1")
        if self.effective_gap < self.horizon_k:
            raise InfeasibleSplitError(f"gap ({self.effective_gap}) must be >= horizon k ({self.horizon_k})")
        lo, hi = panel.year_range
        years = self.validation_years or tuple(hi - self.horizon_k - i for i in range(self.n_folds))
        years = tuple(sorted((int(v) for v in years), reverse=True))
        if len(years) != self.n_folds:
            raise InfeasibleSplitError(f"expected {self.n_folds} validation years, got {len(years)}")
        for v in years:
            if v + self.horizon_k > hi or v - self.effective_gap < lo:
                raise InfeasibleSplitError(
                    f"validation year {v} infeasible for k={self.horizon_k}, gap={self.effective_gap} on {lo}-{hi}"
                )
        return replace(self, validation_years=years)


@dataclass
class FoldResult:
    validation_year: int
    train_years: tuple[int, ...]
    encoder_fit_years: tuple[int, ...]
    n_train_rows: int
    n_synthetic: int
    smote_anchor_max: int
    n_validation_rows: int
    validation_positive_rate: float
    curve: ThresholdCurve

    def leakage_ok(self, k: int) -> bool:
        return (
            max(self.train_years) + k <= self.validation_year
            and set(self.encoder_fit_years) <= set(self.train_years)
            and self.smote_anchor_max < self.n_train_rows
        )


@dataclass
class CvReport:
    scheme: CvScheme
    model: str
    folds: list[FoldResult]
    grid: np.ndarray
    mean: dict = field(default_factory=dict)  # metric -> array over grid
    std: dict = field(default_factory=dict)
    auc_mean: float = float("nan")
    selected_threshold: float | None = None
    test_scores: ScoreSet | None = None

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def table(self) -> pd.DataFrame:
        cols = {"threshold": self.grid, "n_folds": np.full(len(self.grid), self.n_folds)}
        for m in METRICS:
            cols[f"{m}_mean"] = self.mean[m]
            cols[f"{m}_std"] = self.std[m]
        return pd.DataFrame(cols)


def _aggregate(folds: list[FoldResult], grid: np.ndarray) -> tuple[dict, dict]:
    mean, std = {}, {}
    for m in METRICS:
        stack = np.vstack([f.curve.metric(m) for f in folds])
        mean[m] = stack.mean(axis=0)
        std[m] = stack.std(axis=0)  # population deviation across folds
    return mean, std


def run_fold(panel, config: PipelineConfig, validation_year: int, gap: int, grid) -> FoldResult:
    train_years, _ = temporal_split(panel, validation_year, config.horizon_k, gap)
    trained = fit_pipeline(panel, train_years, config)
    scored = score_year(trained, panel, validation_year)
    return FoldResult(
        validation_year=int(validation_year),
        train_years=tuple(train_years),
        encoder_fit_years=trained.encoder.fit_years,
        n_train_rows=trained.n_train_rows,
        n_synthetic=trained.n_synthetic,
        smote_anchor_max=trained.smote_anchor_max,
        n_validation_rows=len(scored.labels),
        validation_positive_rate=float(scored.labels.mean()),
        curve=threshold_sweep(scored.probabilities, scored.labels, grid),
    )


def run_temporal_cv(
    panel: PanelDataset,
    config: PipelineConfig,
    scheme: CvScheme | None = None,
    grid=DEFAULT_GRID,
    threads: int = 1,
) -> CvReport:
    """One fold per validation year; folds may run concurrently, merged in fold order."""
    scheme = (scheme or CvScheme(config.horizon_k)).resolve(panel)
    if scheme.horizon_k != config.horizon_k:
        raise ConfigError(f"scheme horizon {scheme.horizon_k} != pipeline horizon {config.horizon_k}")
    g = _check_grid(grid)

    def task(year):
        try:
            return run_fold(panel, config, year, scheme.effective_gap, g)
        except PipeRiskError as exc:
            raise type(exc)(f"fold {year}: {exc}") from exc

    years = scheme.validation_years
    if threads > 1 and len(years) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(years))) as pool:
            folds = list(pool.map(task, years))
    else:
        folds = [task(y) for y in years]
    for f in folds:
        if not f.leakage_ok(scheme.horizon_k):
            raise InfeasibleSplitError(f"fold {f.validation_year} violates the train/validation separation")
    mean, std = _aggregate(folds, g)
    report = CvReport(
        scheme=scheme,
        model=config.model,
        folds=folds,
        grid=g,
        mean=mean,
        std=std,
        auc_mean=float(np.mean([f.curve.scores[0].auc for f in folds])),
    )
    report.selected_threshold = select_threshold(report)
    return report


def select_threshold(report: CvReport) -> float:
    """Grid point with the highest mean MCC; the lowest threshold wins ties."""
    if report is None or not report.folds:
        raise EmptyInputError("select_threshold needs a report with at least one fold")
    mcc = np.asarray(report.mean["mcc"])
    return float(report.grid[int(np.argmax(mcc))])  # argmax returns the first maximum


@dataclass
class FinalEvaluation:
    trained: TrainedPipeline
    test_year: int
    threshold: float
    scores: ScoreSet
    pipe_ids: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray
    matrix: np.ndarray


def evaluate_on_test(panel, config: PipelineConfig, test_year: int, threshold: float, gap=None) -> FinalEvaluation:
    """Fit on every year allowed before ``test_year`` and score the test slice."""
    train_years, _ = temporal_split(panel, test_year, config.horizon_k, gap)
    trained = fit_pipeline(panel, train_years, config)
    scored = score_year(trained, panel, test_year)
    cm = confusion_at_threshold(scored.probabilities, scored.labels, threshold)
    auc = roc_auc(scored.probabilities, scored.labels) if 0 < scored.labels.sum() < len(scored.labels) else float("nan")
    return FinalEvaluation(
        trained=trained,
        test_year=int(test_year),
        threshold=float(threshold),
        scores=score_set(cm, threshold=threshold, auc=auc),
        pipe_ids=scored.pipe_ids,
        probabilities=scored.probabilities,
        labels=scored.labels,
        matrix=scored.matrix,
    )


def tune(panel, config: PipelineConfig, grid: dict, scheme: CvScheme | None = None, threads: int = 1):
    """Exhaustive search over ``grid`` (field -> values) scored by best mean CV MCC.

    Keys name ``PipelineConfig`` fields or ``GbtParams`` fields. Returns the best
    config and a list of (overrides, best mean MCC, threshold) in grid order;
    the first configuration reaching the best score wins.
    """
    keys = sorted(grid)
    results = []
    best = None
    for combo in itertools.product(*(grid[k] for k in keys)):
        overrides = dict(zip(keys, combo))
        cfg = _with_overrides(config, overrides)
        report = run_temporal_cv(panel, cfg, scheme, threads=threads)
        score = float(np.max(report.mean["mcc"]))
        results.append((overrides, score, report.selected_threshold))
        if best is None or score > best[1]:
            best = (cfg, score)
    return best[0], results


def _with_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    gbt_fields = set(config.gbt.__dataclass_fields__)
    top = {k: v for k, v in overrides.items() if k not in gbt_fields}
    gbt = {k: v for k, v in overrides.items() if k in gbt_fields}
    unknown = set(top) - set(config.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown tuning keys {sorted(unknown)}")
    return replace(config, gbt=replace(config.gbt, **gbt), **top)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def write_threshold_sweep(report: CvReport, path) -> None:
    table = report.table()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.itertuples(index=False):
            w.writerow([_fmt(float(v)) if i != 1 else str(int(v)) for i, v in enumerate(row)])


SCORE_COLUMNS = ("threshold", "mcc", "precision", "recall", "accuracy", "f1", "auc")


def write_scores(scores: ScoreSet, path, extra: dict | None = None) -> None:
    row = scores.as_row()
    head = list(extra or {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head + list(SCORE_COLUMNS))
        w.writerow([_fmt(v) for v in (extra or {}).values()] + [_fmt(float(row[c])) for c in SCORE_COLUMNS])
