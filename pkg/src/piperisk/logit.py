"""L1-regularized logistic regression by cyclic coordinate descent.

Minimizes ``mean(log(1 + exp(eta)) - y * eta) + lambda_l1 * sum(|beta|)``
with ``eta = intercept + X @ beta``; the intercept is not penalized. Each
coordinate takes a proximal Newton step (soft-thresholded) on the local
quadratic model, then backtracks until the objective does not increase, so
the objective is monotone across epochs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NonFiniteError, SchemaError, SingleClassError

LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 0, 9))
_PROB_EPS = 1e-15


@dataclass
class LogitModel:
    beta: np.ndarray
    intercept: float
    lambda_l1: float
    column_names: list[str]
    converged: bool = False
    epochs_run: int = 0
    objective_path: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": "logit",
            "column_names": list(self.column_names),
            "beta": [float(b) for b in self.beta],
            "intercept": float(self.intercept),
            "lambda_l1": float(self.lambda_l1),
            "converged": bool(self.converged),
            "epochs_run": int(self.epochs_run),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogitModel":
        return cls(
            beta=np.asarray(d["beta"], dtype=np.float64),
            intercept=float(d["intercept"]),
            lambda_l1=float(d["lambda_l1"]),
            column_names=list(d["column_names"]),
            converged=bool(d.get("converged", False)),
            epochs_run=int(d.get("epochs_run", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@njit(cache=True)
def _softplus_sigmoid(eta):
    e = np.exp(-abs(eta))
    sp = max(eta, 0.0) + np.log1p(e)
    p = 1.0 / (1.0 + e) if eta >= 0 else e / (1.0 + e)
    return sp, p


@njit(cache=True)
def _row_terms(eta, y, p_out, l_out):
    n = eta.shape[0]
    total = 0.0
    for i in range(n):
        sp, p = _softplus_sigmoid(eta[i])
        l_out[i] = sp - y[i] * eta[i]
        p_out[i] = p
        total += l_out[i]
    return total / n


@njit(cache=True)
def _coordinate(idx, val, y, p, eta, lrow, loss, coef, penalty, tp, tl, n, max_halvings):
    """One proximal Newton step on a single coordinate. Returns (new_coef, new_loss).

    Only rows where the column is nonzero (``idx``/``val``) are touched; the
    per-row losses ``lrow`` let the trial loss be updated incrementally.
    """
    m = idx.shape[0]
    g = 0.0
    h = 0.0
    for q in range(m):
        i = idx[q]
        v = val[q]
        g += (p[i] - y[i]) * v
        h += p[i] * (1.0 - p[i]) * v * v
    g /= n
    h /= n
    if h < 1e-12:
        h = 1e-12
    z = h * coef - g
    if z > penalty:
        target = (z - penalty) / h
    elif z < -penalty:
        target = (z + penalty) / h
    else:
        target = 0.0
    delta = target - coef
    if delta == 0.0:
        return coef, loss
    current = loss + penalty * abs(coef)
    t = 1.0
    for _ in range(max_halvings):
        step = t * delta
        trial = coef + step
        diff = 0.0
        for q in range(m):
            i = idx[q]
            e_i = eta[i] + step * val[q]
            sp, pi = _softplus_sigmoid(e_i)
            tl[q] = sp - y[i] * e_i
            tp[q] = pi
            diff += tl[q] - lrow[i]
        new_loss = loss + diff / n
        if new_loss + penalty * abs(trial) <= current:
            for q in range(m):
                i = idx[q]
                eta[i] += step * val[q]
                p[i] = tp[q]
                lrow[i] = tl[q]
            return trial, new_loss
        t *= 0.5
    return coef, loss


@njit(cache=True, nogil=True)
def _cd_fit(starts, idx, val, y, beta, b0, lam, max_epochs, tol, objective_path):
    n = y.shape[0]
    m = beta.shape[0]
    eta = np.full(n, b0)
    for j in range(m):
        for q in range(starts[j], starts[j + 1]):
            eta[idx[q]] += val[q] * beta[j]
    p = np.empty(n)
    lrow = np.empty(n)
    tp = np.empty(n)
    tl = np.empty(n)
    all_rows = np.arange(n).astype(np.int32)
    ones = np.ones(n)
    loss = _row_terms(eta, y, p, lrow)
    converged = False
    epochs = 0
    for epoch in range(max_epochs):
        epochs = epoch + 1
        max_change = 0.0
        new_b0, loss = _coordinate(all_rows, ones, y, p, eta, lrow, loss, b0, 0.0, tp, tl, n, 60)
        max_change = max(max_change, abs(new_b0 - b0))
        b0 = new_b0
        for j in range(m):
            old = beta[j]
            a = starts[j]
            b = starts[j + 1]
            beta[j], loss = _coordinate(idx[a:b], val[a:b], y, p, eta, lrow, loss, old, lam, tp, tl, n, 60)
            max_change = max(max_change, abs(beta[j] - old))
        pen = 0.0
        for j in range(m):
            pen += abs(beta[j])
        objective_path[epoch] = loss + lam * pen
        if max_change < tol:
            converged = True
            break
    return b0, converged, epochs


def _sparse_columns(x):
    """Column-wise nonzero rows and values (CSC layout)."""
    nz = x != 0
    counts = nz.sum(axis=0)
    starts = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    cols, rows = np.nonzero(nz.T)
    return starts, rows.astype(np.int32), x[rows, cols]


def _check_inputs(matrix, labels):
    x = np.asarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise SchemaError("matrix and labels are misaligned")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteError("non-finite values in logit inputs")
    if not np.isin(y, (0.0, 1.0)).all():
        raise SchemaError("labels must be 0/1")
    if y.min() == y.max():
        raise SingleClassError("logit needs both classes")
    return x, y


def fit_logit_l1(
    matrix,
    labels,
    lambda_l1: float = 1e-3,
    max_epochs: int = 1000,
    tolerance: float = 1e-6,
    column_names=None,
) -> LogitModel:
    if lambda_l1 < 0:
        raise ValueError("lambda_l1 must be >= 0")
    x, y = _check_inputs(matrix, labels)
    n, m = x.shape
    starts, idx, val = _sparse_columns(x)
    beta = np.zeros(m)
    ybar = y.mean()
    b0 = float(np.log(ybar / (1.0 - ybar)))
    path = np.full(max_epochs, np.nan)
    b0, converged, epochs = _cd_fit(starts, idx, val, y, beta, b0, float(lambda_l1), int(max_epochs), float(tolerance), path)
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(m)]
    return LogitModel(
        beta=beta,
        intercept=float(b0),
        lambda_l1=float(lambda_l1),
        column_names=names,
        converged=bool(converged),
        epochs_run=int(epochs),
        objective_path=[float(v) for v in path[:epochs]],
    )


def _sigmoid(eta):
    eta = np.asarray(eta, dtype=np.float64)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def predict_proba_logit(model: LogitModel, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.beta):
        raise SchemaError(f"expected {len(model.beta)} columns, got {x.shape[-1]}")
    return np.clip(_sigmoid(model.intercept + x @ model.beta), _PROB_EPS, 1.0 - _PROB_EPS)


def logit_loss(matrix, labels, intercept, beta) -> float:
    """Mean cross-entropy (unpenalized)."""
    eta = intercept + np.asarray(matrix) @ np.asarray(beta)
    return float(np.mean(np.logaddexp(0.0, eta) - np.asarray(labels) * eta))


def logit_gradient(matrix, labels, intercept, beta) -> tuple[float, np.ndarray]:
    x = np.asarray(matrix)
    r = _sigmoid(intercept + x @ np.asarray(beta)) - np.asarray(labels)
    return float(r.mean()), x.T @ r / len(r)


def logit_objective(model: LogitModel, matrix, labels) -> float:
    return logit_loss(matrix, labels, model.intercept, model.beta) + model.lambda_l1 * float(
        np.abs(model.beta).sum()
    )


def rank_coefficients(model: LogitModel) -> list[tuple[str, float]]:
    """(name, beta) pairs by descending |beta|; ties keep column order."""
    order = sorted(range(len(model.beta)), key=lambda j: -abs(model.beta[j]))
    return [(model.column_names[j], float(model.beta[j])) for j in order]
