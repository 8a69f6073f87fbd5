"""Elastic-net Cox regression and the survival metrics built on it.

The Cox fit minimizes ``-l(beta)/n + lam * (alpha*|beta|_1 + (1-alpha)/2*|beta|_2^2)``
where ``l`` is the partial log-likelihood with Breslow handling of tied
event times. Coordinates take proximal Newton steps on the local quadratic
model with backtracking, so the penalized objective never increases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numba import njit

from .errors import (
    ConfigError,
    DataValidationError,
    EmptyInputError,
    NonFiniteError,
    NotFittedError,
    PipeRiskError,
    SchemaError,
)
from .features import SURVIVAL_SPEC, EncoderState, FeatureSpec, apply_encoder, derive_features, fit_encoder
from .panel import UNKNOWN, PanelDataset

BRIER_GRID = tuple(float(t) for t in range(1, 101))
SCREEN_FLAG = 0.55


class NoEventsError(DataValidationError):
    """Cox fitting needs at least one observed event."""


class NoComparablePairsError(DataValidationError):
    """No (earlier event, later duration) pair exists."""


class ZeroCensoringWeightError(DataValidationError):
    """A Brier weight would divide by a zero censoring survival."""


@dataclass
class SurvivalRecords:
    pipe_ids: np.ndarray
    durations: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    column_names: list[str]
    materials: np.ndarray | None = None
    install_years: np.ndarray | None = None
    encoder: EncoderState | None = None
    skipped: tuple = ()  # pipe ids without a usable record

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.int8)
        self.covariates = np.asarray(self.covariates, dtype=np.float64)
        n = len(self.durations)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n or len(self.events) != n:
            raise SchemaError("durations, events and covariates are misaligned")
        if n and (self.durations <= 0).any():
            raise DataValidationError("durations must be positive")
        if not np.isin(self.events, (0, 1)).all():
            raise DataValidationError("events must be 0/1")

    def __len__(self) -> int:
        return len(self.durations)

    def subset(self, index) -> "SurvivalRecords":
        index = np.asarray(index)
        pick = lambda a: None if a is None else np.asarray(a)[index]
        return SurvivalRecords(
            pipe_ids=np.asarray(self.pipe_ids)[index],
            durations=self.durations[index],
            events=self.events[index],
            covariates=self.covariates[index],
            column_names=list(self.column_names),
            materials=pick(self.materials),
            install_years=pick(self.install_years),
            encoder=self.encoder,
        )

    def column(self, name: str) -> np.ndarray:
        return self.covariates[:, self.column_names.index(name)]


def build_survival_dataset(panel: PanelDataset, spec: FeatureSpec = SURVIVAL_SPEC) -> SurvivalRecords:
    """One record per pipe: the last snapshot before its first failure, or its final snapshot.

    Pipes whose first failure is not preceded by any snapshot (or whose age
    at the record would be zero) are skipped and listed in ``skipped``.
    """
    rows = panel.rows
    if rows.empty:
        raise EmptyInputError("panel has no rows")
    first_fail = panel.failures.groupby("pipe_id")["year"].min()
    fail_year = rows["pipe_id"].map(first_fail).to_numpy(np.float64)
    years = rows["snapshot_year"].to_numpy(np.float64)
    eligible = np.isnan(fail_year) | (years < fail_year)
    cand = rows.loc[eligible]
    # rows are sorted by (pipe_id, snapshot_year): the last eligible row per pipe
    last = cand.drop_duplicates("pipe_id", keep="last").reset_index(drop=True)
    all_ids = pd.unique(rows["pipe_id"])
    ff = last["pipe_id"].map(first_fail).to_numpy(np.float64)
    event = ~np.isnan(ff)
    install = last["install_year"].to_numpy(np.float64)
    end = np.where(event, ff, last["snapshot_year"].to_numpy(np.float64))
    duration = end - install
    usable = np.isfinite(duration) & (duration > 0)
    last = last.loc[usable].reset_index(drop=True)
    skipped = tuple(sorted(set(all_ids) - set(last["pipe_id"])))
    if last.empty:
        raise EmptyInputError("no pipe has a usable survival record")
    feats = derive_features(panel, last)
    encoder = fit_encoder(feats, spec)
    fm = apply_encoder(feats, encoder)
    return SurvivalRecords(
        pipe_ids=last["pipe_id"].to_numpy(),
        durations=duration[usable],
        events=event[usable].astype(np.int8),
        covariates=fm.values,
        column_names=fm.column_names,
        materials=last["material"].astype(str).to_numpy(),
        install_years=install[usable],
        encoder=encoder,
        skipped=skipped,
    )


# ---------------------------------------------------------------- Cox kernels


def _sorted_view(durations, events, x):
    """Ascending-duration order plus, per row, the first index of its tie group."""
    t = np.asarray(durations, dtype=np.float64)
    order = np.argsort(t, kind="stable")
    ts = t[order]
    gstart = np.searchsorted(ts, ts, side="left").astype(np.int64)
    return order, ts, np.asarray(events, dtype=np.float64)[order], np.asarray(x, dtype=np.float64)[order], gstart


@njit(cache=True)
def _pll(eta, d, gstart):
    """Partial log-likelihood for rows sorted by ascending duration."""
    n = eta.shape[0]
    m = eta.max() if n else 0.0
    rev = np.empty(n + 1)
    rev[n] = 0.0
    for i in range(n - 1, -1, -1):
        rev[i] = rev[i + 1] + np.exp(eta[i] - m)
    total = 0.0
    for i in range(n):
        if d[i] > 0:
            total += eta[i] - np.log(rev[gstart[i]]) - m
    return total


@njit(cache=True)
def _grad_hess(eta, d, gstart, col):
    n = eta.shape[0]
    m = eta.max()
    s0 = np.empty(n + 1)
    s1 = np.empty(n + 1)
    s2 = np.empty(n + 1)
    s0[n] = 0.0
    s1[n] = 0.0
    s2[n] = 0.0
    for i in range(n - 1, -1, -1):
        w = np.exp(eta[i] - m)
        s0[i] = s0[i + 1] + w
        s1[i] = s1[i + 1] + w * col[i]
        s2[i] = s2[i + 1] + w * col[i] * col[i]
    g = 0.0
    h = 0.0
    for i in range(n):
        if d[i] > 0:
            k = gstart[i]
            a = s1[k] / s0[k]
            g += col[i] - a
            h += s2[k] / s0[k] - a * a
    return g, h


@njit(cache=True)
def _penalty(b, lam, alpha):
    return lam * (alpha * abs(b) + 0.5 * (1.0 - alpha) * b * b)


@njit(cache=True, nogil=True)
def _cox_cd(x, d, gstart, beta, lam, alpha, max_epochs, tol, objective_path):
    n, p = x.shape
    eta = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(p):
            acc += x[i, j] * beta[j]
        eta[i] = acc
    trial = np.empty(n)
    loss = -_pll(eta, d, gstart) / n
    converged = False
    epochs = 0
    for epoch in range(max_epochs):
        epochs = epoch + 1
        max_change = 0.0
        for j in range(p):
            col = x[:, j]
            g, h = _grad_hess(eta, d, gstart, col)
            grad = -g / n
            hess = h / n
            if hess < 1e-12:
                hess = 1e-12
            z = hess * beta[j] - grad
            thr = lam * alpha
            if z > thr:
                target = (z - thr) / (hess + lam * (1.0 - alpha))
            elif z < -thr:
                target = (z + thr) / (hess + lam * (1.0 - alpha))
            else:
                target = 0.0
            delta = target - beta[j]
            if delta == 0.0:
                continue
            current = loss + _penalty(beta[j], lam, alpha)
            t = 1.0
            for _ in range(60):
                step = t * delta
                for i in range(n):
                    trial[i] = eta[i] + step * col[i]
                new_loss = -_pll(trial, d, gstart) / n
                if new_loss + _penalty(beta[j] + step, lam, alpha) <= current:
                    for i in range(n):
                        eta[i] = trial[i]
                    beta[j] += step
                    loss = new_loss
                    if abs(step) > max_change:
                        max_change = abs(step)
                    break
                t *= 0.5
        pen = 0.0
        for j in range(p):
            pen += _penalty(beta[j], lam, alpha)
        objective_path[epoch] = loss + pen
        if max_change < tol:
            converged = True
            break
    return converged, epochs


# ---------------------------------------------------------------- models


@dataclass
class CoxnetModel:
    beta: np.ndarray
    alpha: float
    lambda_: float
    column_names: list[str]
    converged: bool = False
    epochs_run: int = 0
    objective_path: list[float] = field(default_factory=list)

    def linear_predictor(self, covariates) -> np.ndarray:
        x = np.asarray(covariates, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != len(self.beta):
            raise SchemaError(f"expected {len(self.beta)} covariates, got {x.shape[-1]}")
        return x @ self.beta

    def to_dict(self) -> dict:
        return {
            "kind": "coxnet",
            "column_names": list(self.column_names),
            "beta": [float(b) for b in self.beta],
            "alpha": float(self.alpha),
            "lambda": float(self.lambda_),
            "converged": bool(self.converged),
            "epochs_run": int(self.epochs_run),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxnetModel":
        return cls(
            beta=np.asarray(d["beta"], dtype=np.float64),
            alpha=float(d["alpha"]),
            lambda_=float(d["lambda"]),
            column_names=list(d["column_names"]),
            converged=bool(d.get("converged", False)),
            epochs_run=int(d.get("epochs_run", 0)),
        )


def _check_survival_inputs(durations, events, covariates):
    t = np.asarray(durations, dtype=np.float64)
    d = np.asarray(events, dtype=np.float64)
    x = np.asarray(covariates, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if not (len(t) == len(d) == len(x)):
        raise SchemaError("durations, events and covariates are misaligned")
    if len(t) == 0:
        raise EmptyInputError("no survival records")
    if not (np.isfinite(t).all() and np.isfinite(x).all()):
        raise NonFiniteError("non-finite durations or covariates")
    return t, d, x


def partial_log_likelihood(durations, events, covariates, beta) -> float:
    """Breslow partial log-likelihood (not divided by n)."""
    t, d, x = _check_survival_inputs(durations, events, covariates)
    _, _, ds, xs, gstart = _sorted_view(t, d, x)
    return float(_pll(xs @ np.asarray(beta, dtype=np.float64), ds, gstart))


def partial_score(durations, events, covariates, beta) -> np.ndarray:
    """Gradient of :func:`partial_log_likelihood` with respect to ``beta``."""
    t, d, x = _check_survival_inputs(durations, events, covariates)
    _, _, ds, xs, gstart = _sorted_view(t, d, x)
    eta = xs @ np.asarray(beta, dtype=np.float64)
    return np.array([_grad_hess(eta, ds, gstart, np.ascontiguousarray(xs[:, j]))[0] for j in range(xs.shape[1])])


def coxnet_objective(model: CoxnetModel, records: SurvivalRecords) -> float:
    n = len(records)
    b = model.beta
    pen = model.lambda_ * (model.alpha * np.abs(b).sum() + 0.5 * (1 - model.alpha) * (b**2).sum())
    return -partial_log_likelihood(records.durations, records.events, records.covariates, b) / n + float(pen)


def fit_coxnet(
    records: SurvivalRecords,
    alpha: float = 0.5,
    lambda_: float = 1e-3,
    max_epochs: int = 1000,
    tolerance: float = 1e-7,
    warm_start=None,
) -> CoxnetModel:
    if not 0 <= alpha <= 1:
        raise ConfigError("alpha must lie in [0, 1]")
    if lambda_ < 0:
        raise ConfigError("lambda must be >= 0")
    t, d, x = _check_survival_inputs(records.durations, records.events, records.covariates)
    if d.sum() == 0:
        raise NoEventsError("no observed events")
    _, _, ds, xs, gstart = _sorted_view(t, d, x)
    beta = np.zeros(x.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    path = np.full(max_epochs, np.nan)
    converged, epochs = _cox_cd(
        np.asfortranarray(xs), ds, gstart, beta, float(lambda_), float(alpha), int(max_epochs), float(tolerance), path
    )
    return CoxnetModel(
        beta=beta,
        alpha=float(alpha),
        lambda_=float(lambda_),
        column_names=list(records.column_names),
        converged=bool(converged),
        epochs_run=int(epochs),
        objective_path=[float(v) for v in path[:epochs]],
    )


def lambda_max(records: SurvivalRecords, alpha: float) -> float:
    """Smallest penalty at which every coefficient is zero."""
    g = partial_score(records.durations, records.events, records.covariates, np.zeros(records.covariates.shape[1]))
    return float(np.abs(g).max() / len(records) / max(alpha, 1e-3))


def coxnet_path(train: SurvivalRecords, valid: SurvivalRecords, alpha: float = 0.5, n_lambda: int = 20, ratio: float = 1e-3):
    """Warm-started fits down a log-spaced penalty path; pick the best validation c-index.

    Returns ``(best_model, table)`` with table rows (lambda, c_index, n_nonzero).
    """
    top = lambda_max(train, alpha)
    lambdas = np.logspace(np.log10(top), np.log10(top * ratio), n_lambda)
    beta = None
    rows, best = [], None
    for lam in lambdas:
        model = fit_coxnet(train, alpha=alpha, lambda_=float(lam), warm_start=beta)
        beta = model.beta
        c = concordance_index(valid.durations, valid.events, model.linear_predictor(valid.covariates))
        rows.append((float(lam), c, int(np.count_nonzero(model.beta))))
        if best is None or c > best[1]:
            best = (model, c)
    return best[0], pd.DataFrame(rows, columns=["lambda", "c_index", "n_nonzero"])


@dataclass
class BaselineHazard:
    event_times: np.ndarray
    cumulative_hazard: np.ndarray

    def at(self, times) -> np.ndarray:
        """Right-continuous step value ``H0(t)`` (sum of jumps at event times <= t)."""
        idx = np.searchsorted(self.event_times, np.asarray(times, dtype=np.float64), side="right")
        padded = np.concatenate([[0.0], self.cumulative_hazard])
        return padded[idx]

    def to_dict(self) -> dict:
        return {"event_times": self.event_times.tolist(), "cumulative_hazard": self.cumulative_hazard.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineHazard":
        return cls(np.asarray(d["event_times"], dtype=np.float64), np.asarray(d["cumulative_hazard"], dtype=np.float64))


def breslow_baseline(records: SurvivalRecords, model: CoxnetModel) -> BaselineHazard:
    if model is None:
        raise NotFittedError("breslow_baseline needs a fitted model")
    t, d, x = _check_survival_inputs(records.durations, records.events, records.covariates)
    risk = np.exp(model.linear_predictor(x))
    times = np.unique(t[d > 0])
    if times.size == 0:
        return BaselineHazard(np.array([]), np.array([]))
    order = np.argsort(t, kind="stable")
    ts = t[order]
    rev = np.concatenate([np.cumsum(risk[order][::-1])[::-1], [0.0]])
    at_risk = rev[np.searchsorted(ts, times, side="left")]
    deaths = np.array([np.count_nonzero((t == s) & (d > 0)) for s in times], dtype=np.float64)
    return BaselineHazard(times, np.cumsum(deaths / at_risk))


@dataclass
class SurvivalCurves:
    times: np.ndarray
    survival: np.ndarray  # (subjects, times)


def predict_survival(model: CoxnetModel, baseline: BaselineHazard, covariates, time_grid=BRIER_GRID) -> SurvivalCurves:
    grid = np.asarray(time_grid, dtype=np.float64)
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ConfigError("time grid must be strictly ascending")
    rel = np.exp(model.linear_predictor(covariates))
    h0 = baseline.at(grid)
    return SurvivalCurves(times=grid, survival=np.exp(-np.outer(rel, h0)))


def survival_at(model: CoxnetModel, baseline: BaselineHazard, covariates, times) -> np.ndarray:
    """Per-subject ``S(t_i | z_i)`` at subject-specific times."""
    rel = np.exp(model.linear_predictor(covariates))
    return np.exp(-baseline.at(times) * rel)


# ---------------------------------------------------------------- metrics


@dataclass
class CensoringModel:
    times: np.ndarray  # distinct censoring times, ascending
    values: np.ndarray  # G right after each time

    def at(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        return np.concatenate([[1.0], self.values])[idx]

    def left_limit(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="left")
        return np.concatenate([[1.0], self.values])[idx]


def censoring_km(durations, events) -> CensoringModel:
    """Kaplan-Meier of the censoring distribution (censorings play the role of events)."""
    t = np.asarray(durations, dtype=np.float64)
    d = np.asarray(events)
    if t.size == 0:
        raise EmptyInputError("censoring_km of zero records")
    cens = np.unique(t[d == 0])
    ts = np.sort(t)
    at_risk = len(t) - np.searchsorted(ts, cens, side="left")
    counts = np.array([np.count_nonzero((t == c) & (d == 0)) for c in cens], dtype=np.float64)
    return CensoringModel(cens, np.cumprod(1.0 - counts / at_risk))


def weighted_brier(survival, durations, events, censoring: CensoringModel, time_grid=BRIER_GRID) -> float:
    """IPCW Brier score averaged over subjects and grid times.

    Event with ``T <= t``: ``S(t)^2 / G(T-)``; still at risk (``T > t``):
    ``(1 - S(t))^2 / G(t)``; censored with ``T <= t``: 0.
    """
    s = np.asarray(survival, dtype=np.float64)
    grid = np.asarray(time_grid, dtype=np.float64)
    t = np.asarray(durations, dtype=np.float64)
    d = np.asarray(events)
    if s.shape != (len(t), len(grid)):
        raise SchemaError(f"survival matrix {s.shape} != ({len(t)}, {len(grid)})")
    g_event = censoring.left_limit(t)
    g_grid = censoring.at(grid)
    total = 0.0
    for j, tj in enumerate(grid):
        died = (t <= tj) & (d == 1)
        alive = t > tj
        if died.any():
            bad = died & (g_event <= 0)
            if bad.any():
                raise ZeroCensoringWeightError(f"censoring survival is 0 just before t={t[bad][0]}")
            total += float(np.sum(s[died, j] ** 2 / g_event[died]))
        if alive.any():
            if g_grid[j] <= 0:
                raise ZeroCensoringWeightError(f"censoring survival is 0 at t={tj}")
            total += float(np.sum((1.0 - s[alive, j]) ** 2) / g_grid[j])
    return total / (len(t) * len(grid))


@njit(cache=True, nogil=True)
def _concordance(t, d, r):
    n = t.shape[0]
    num = 0.0
    den = 0.0
    for i in range(n):
        if d[i] == 0:
            continue
        for j in range(n):
            if t[i] < t[j]:
                den += 1.0
                if r[i] > r[j]:
                    num += 1.0
                elif r[i] == r[j]:
                    num += 0.5
    return num, den


def concordance_index(durations, events, risk_scores) -> float:
    """Harrell's c: among pairs with ``T_i < T_j`` and an event at ``T_i``, share with higher risk for i."""
    t = np.asarray(durations, dtype=np.float64)
    d = np.asarray(events, dtype=np.int64)
    r = np.asarray(risk_scores, dtype=np.float64)
    if not (len(t) == len(d) == len(r)):
        raise SchemaError("durations, events and risks are misaligned")
    num, den = _concordance(t, d, r)
    if den == 0:
        raise NoComparablePairsError("no comparable pairs")
    return float(num / den)


def single_feature_screen(
    records: SurvivalRecords,
    alpha: float = 0.5,
    lambda_: float = 1e-4,
    split_seed: int = 0,
    test_fraction: float = 0.3,
) -> list[tuple[str, float, bool]]:
    """Held-out c-index of one-covariate Cox fits, descending; ties keep column order."""
    p = records.covariates.shape[1]
    if p < 2:
        raise ConfigError("screen needs at least two covariates")
    n = len(records)
    perm = np.random.default_rng(split_seed).permutation(n)
    n_test = int(round(test_fraction * n))
    test, train = perm[:n_test], perm[n_test:]
    out = []
    for j, name in enumerate(records.column_names):
        sub = SurvivalRecords(
            pipe_ids=records.pipe_ids,
            durations=records.durations,
            events=records.events,
            covariates=records.covariates[:, [j]],
            column_names=[name],
        )
        try:
            model = fit_coxnet(sub.subset(train), alpha=alpha, lambda_=lambda_)
            c = concordance_index(
                records.durations[test], records.events[test], model.linear_predictor(sub.covariates[test])
            )
        except PipeRiskError as exc:
            raise type(exc)(f"feature {name}: {exc}") from exc
        out.append((name, c))
    order = sorted(range(p), key=lambda k: -out[k][1])
    return [(out[k][0], out[k][1], out[k][1] > SCREEN_FLAG) for k in order]


SUMMARY_COLUMNS = ("material", "min", "q1", "median", "q3", "max", "n")


def material_survival_summary(survival_values, materials) -> pd.DataFrame:
    """Quartiles of per-pipe survival by material, highest median first."""
    s = np.asarray(survival_values, dtype=np.float64)
    mats = pd.Series(materials, dtype=object).fillna(UNKNOWN).astype(str).replace("", UNKNOWN)
    if len(s) != len(mats):
        raise SchemaError("survival values and materials are misaligned")
    if len(s) == 0:
        raise EmptyInputError("no survival values to summarize")
    rows = []
    for mat in sorted(mats.unique()):
        v = s[(mats == mat).to_numpy()]
        q = np.percentile(v, [0, 25, 50, 75, 100])
        rows.append((mat, *map(float, q), len(v)))
    table = pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))
    return table.sort_values(["median", "material"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def horizon_survival(model, baseline, records: SurvivalRecords, end_year: int, years_ahead: int = 2):
    """Survival of in-service (censored) pipes at their age in ``end_year + years_ahead``.

    Returns ``(mask of censored records, survival values for them)``.
    """
    if records.install_years is None:
        raise SchemaError("records carry no install years")
    mask = records.events == 0
    age = (end_year + years_ahead) - records.install_years[mask]
    return mask, survival_at(model, baseline, records.covariates[mask], age)


def model_json(model: CoxnetModel, baseline: BaselineHazard | None = None, encoder: EncoderState | None = None) -> str:
    d = model.to_dict()
    if baseline is not None:
        d["baseline"] = baseline.to_dict()
    if encoder is not None:
        d["encoder"] = encoder.to_dict()
    return json.dumps(d, indent=2)
