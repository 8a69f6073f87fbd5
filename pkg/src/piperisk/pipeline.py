"""Train-years-to-model pipeline shared by cross-validation and final training.

The steps are: collect panel rows of the training years, derive features,
label each row with its own failure window, fit the encoder on those rows,
oversample with SMOTE, fit the classifier. Nothing outside the training
years is read, and the returned :class:`TrainedPipeline` records enough
provenance to check that.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .balance import SmoteConfig, SmoteResult, smote
from .boosting import BoostedEnsemble, GbtParams, fit_gbt, predict_proba_gbt
from .errors import ConfigError, EmptyInputError
from .features import CLASSIFIER_SPEC, EncoderState, FeatureSpec, apply_encoder, derive_features, fit_encoder
from .logit import LogitModel, fit_logit_l1, predict_proba_logit
from .panel import PanelDataset, window_labels

MODEL_KINDS = ("logit", "gbt")


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "gbt"
    horizon_k: int = 4
    lambda_l1: float = 1e-3
    gbt: GbtParams = field(default_factory=GbtParams)
    smote: SmoteConfig = field(default_factory=SmoteConfig)
    use_smote: bool = True
    features: FeatureSpec = CLASSIFIER_SPEC

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.horizon_k < 1:
            raise ConfigError("horizon_k must be >= 1")
        if self.lambda_l1 < 0:
            raise ConfigError("lambda_l1 must be >= 0")


@dataclass
class TrainedPipeline:
    config: PipelineConfig
    encoder: EncoderState
    model: LogitModel | BoostedEnsemble
    train_years: tuple[int, ...]
    n_train_rows: int
    n_positive: int
    n_synthetic: int
    smote_anchor_max: int  # largest input row index used as anchor or neighbour (-1 if none)

    def predict_proba(self, matrix) -> np.ndarray:
        if isinstance(self.model, LogitModel):
            return predict_proba_logit(self.model, matrix)
        return predict_proba_gbt(self.model, matrix)


def training_rows(panel: PanelDataset, train_years) -> pd.DataFrame:
    years = set(int(y) for y in train_years)
    rows = panel.rows[panel.rows["snapshot_year"].isin(years)]
    if rows.empty:
        raise EmptyInputError(f"no panel rows in training years {sorted(years)}")
    return derive_features(panel, rows.reset_index(drop=True))


def fit_pipeline(panel: PanelDataset, train_years, config: PipelineConfig) -> TrainedPipeline:
    rows = training_rows(panel, train_years)
    labels = window_labels(panel, rows, config.horizon_k)
    encoder = fit_encoder(rows, config.features)
    fm = apply_encoder(rows, encoder)
    x, y = fm.values, labels
    n_syn, anchor_max = 0, -1
    cover_mask = None
    if config.use_smote:
        res: SmoteResult = smote(x, y, config.smote)
        x, y = res.matrix, res.labels
        n_syn = res.n_synthetic
        if n_syn:
            anchor_max = int(max(res.anchors.max(), res.neighbors.max()))
        cover_mask = ~res.is_synthetic
    if config.model == "logit":
        model = fit_logit_l1(x, y, lambda_l1=config.lambda_l1, column_names=fm.column_names)
    else:
        model = fit_gbt(x, y, config.gbt, seed=config.smote.seed, column_names=fm.column_names, cover_mask=cover_mask)
    return TrainedPipeline(
        config=config,
        encoder=encoder,
        model=model,
        train_years=tuple(sorted(int(v) for v in train_years)),
        n_train_rows=len(rows),
        n_positive=int(labels.sum()),
        n_synthetic=n_syn,
        smote_anchor_max=anchor_max,
    )


@dataclass
class ScoredSlice:
    snapshot_year: int
    pipe_ids: np.ndarray
    probabilities: np.ndarray
    labels: np.ndarray
    matrix: np.ndarray


def score_year(trained: TrainedPipeline, panel: PanelDataset, snapshot_year: int) -> ScoredSlice:
    """Probabilities and window labels for every pipe present at ``snapshot_year``."""
    rows = panel.rows_at(snapshot_year)
    if rows.empty:
        raise EmptyInputError(f"no rows at snapshot year {snapshot_year}")
    rows = derive_features(panel, rows.reset_index(drop=True))
    labels = window_labels(panel, rows, trained.config.horizon_k)
    fm = apply_encoder(rows, trained.encoder)
    return ScoredSlice(
        snapshot_year=int(snapshot_year),
        pipe_ids=rows["pipe_id"].to_numpy(),
        probabilities=trained.predict_proba(fm.values),
        labels=labels,
        matrix=fm.values,
    )
