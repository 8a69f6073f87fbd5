"""Newton-boosted regression trees with logistic loss, exact greedy splits.

Per round, rows carry gradient ``g = p - y`` and hessian ``h = p(1 - p)``.
Trees grow level by level; for every open node the split search scans each
feature in presorted order and evaluates a candidate between every pair of
adjacent distinct values (threshold at the midpoint, ``x <= threshold`` goes
left). Ties resolve to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, NonFiniteError, NotFittedError, SchemaError, SingleClassError


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    lambda_leaf: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.lambda_leaf < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ConfigError("lambda_leaf, gamma and min_child_weight must be >= 0")
        if self.n_trees < 0:
            raise ConfigError("n_trees must be >= 0")


GBT_GRID = {
    "max_depth": (3, 4, 6),
    "learning_rate": (0.05, 0.1, 0.3),
    "min_child_weight": (1.0, 5.0),
}


_TIE_TOL = 1e-12


@njit(cache=True)
def leaf_weight(g_sum, h_sum, lam):
    return -g_sum / (h_sum + lam)


@njit(cache=True)
def split_gain(gl, hl, gr, hr, lam, gamma):
    g = gl + gr
    h = hl + hr
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam)) - gamma


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf. Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(len(x), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            idx = np.flatnonzero(inner)
            go_left = x[idx, f[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_record(self, node: int = 0) -> dict:
        if self.is_leaf(node):
            return {"leaf": float(self.value[node]), "cover": float(self.cover[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "cover": float(self.cover[node]),
            "left": self.to_record(int(self.left[node])),
            "right": self.to_record(int(self.right[node])),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Tree":
        feats, thrs, lefts, rights, vals, covs = [], [], [], [], [], []

        def visit(rec):
            i = len(feats)
            feats.append(-1)
            thrs.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            vals.append(0.0)
            covs.append(float(rec.get("cover", 0.0)))
            if "leaf" in rec:
                vals[i] = float(rec["leaf"])
            else:
                feats[i] = int(rec["feature"])
                thrs[i] = float(rec["threshold"])
                lefts[i] = visit(rec["left"])
                rights[i] = visit(rec["right"])
            return i

        visit(record)
        return cls(
            np.asarray(feats, dtype=np.int64),
            np.asarray(thrs, dtype=np.float64),
            np.asarray(lefts, dtype=np.int64),
            np.asarray(rights, dtype=np.int64),
            np.asarray(vals, dtype=np.float64),
            np.asarray(covs, dtype=np.float64),
        )

    @classmethod
    def leaf(cls, weight: float, cover: float = 1.0) -> "Tree":
        return cls(
            np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
            np.array([float(weight)]), np.array([float(cover)]),
        )


@dataclass
class BoostedEnsemble:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    params: GbtParams
    column_names: list[str]
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.column_names)

    def margin(self, matrix) -> np.ndarray:
        x = _check_columns(self, matrix)
        out = np.full(len(x), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(x)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "gbt",
            "params": asdict(self.params),
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "column_names": list(self.column_names),
            "trees": [t.to_record() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedEnsemble":
        return cls(
            trees=[Tree.from_record(r) for r in d["trees"]],
            learning_rate=float(d["learning_rate"]),
            base_score=float(d["base_score"]),
            params=GbtParams(**d["params"]),
            column_names=list(d["column_names"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_columns(ensemble: BoostedEnsemble, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != ensemble.n_features:
        raise SchemaError(f"expected {ensemble.n_features} columns, got {x.shape[-1]}")
    return x


@njit(cache=True, nogil=True)
def _grow_tree(x, ord0, xs0, gh, cover_w, max_depth, lam, gamma, mcw, buf_o, buf_x, buf_g, buf_h, tmp_o, tmp_x, tmp_g, tmp_h, go_left):
    """Grow one tree.

    ``ord0[f]`` lists rows sorted by feature f and ``xs0[f]`` the matching
    values. Working copies (``buf_*``) keep every node's rows in a contiguous
    segment of each feature's sorted order; splitting a node stably
    partitions its segment, so order within each child is preserved.
    """
    n, n_feat = x.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    value = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)
    gsum = np.zeros(max_nodes)
    hsum = np.zeros(max_nodes)
    lo = np.zeros(max_nodes, dtype=np.int64)
    hi = np.zeros(max_nodes, dtype=np.int64)

    for f in range(n_feat):
        for k in range(n):
            r = ord0[f, k]
            buf_o[f, k] = r
            buf_x[f, k] = xs0[f, k]
            buf_g[f, k] = gh[r, 0]
            buf_h[f, k] = gh[r, 1]
    g_tot = 0.0
    h_tot = 0.0
    for r in range(n):
        g_tot += gh[r, 0]
        h_tot += gh[r, 1]
    gsum[0] = g_tot
    hsum[0] = h_tot
    lo[0] = 0
    hi[0] = n
    level = np.zeros(max_nodes, dtype=np.int64)
    n_level = 1
    n_nodes = 1

    for depth in range(max_depth):
        next_level = np.zeros(max_nodes, dtype=np.int64)
        n_next = 0
        for li in range(n_level):
            nd = level[li]
            a = lo[nd]
            b = hi[nd]
            G = gsum[nd]
            H = hsum[nd]
            best_gain = 0.0
            best_f = -1
            best_t = 0.0
            best_gl = 0.0
            best_hl = 0.0
            for f in range(n_feat):
                gl = 0.0
                hl = 0.0
                prev = buf_x[f, a]
                for k in range(a, b):
                    xv = buf_x[f, k]
                    if xv != prev:
                        hr = H - hl
                        if hl >= mcw and hr >= mcw:
                            gain = split_gain(gl, hl, G - gl, hr, lam, gamma)
                            # gains equal up to rounding count as ties, so the
                            # earlier (feature, threshold) keeps the split
                            if gain > best_gain + _TIE_TOL * max(1.0, abs(best_gain)):
                                best_gain = gain
                                best_f = f
                                t = 0.5 * (prev + xv)
                                if t >= xv:
                                    t = prev
                                best_t = t
                                best_gl = gl
                                best_hl = hl
                    gl += buf_g[f, k]
                    hl += buf_h[f, k]
                    prev = xv
            if best_f < 0:
                continue
            feature[nd] = best_f
            threshold[nd] = best_t
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            left[nd] = lc
            right[nd] = rc
            gsum[lc] = best_gl
            hsum[lc] = best_hl
            gsum[rc] = G - best_gl
            hsum[rc] = H - best_hl
            next_level[n_next] = lc
            next_level[n_next + 1] = rc
            n_next += 2
            if depth == max_depth - 1:
                continue  # children are leaves; no need to reorder rows
            n_left = 0
            for k in range(a, b):
                r = buf_o[0, k]
                goes = x[r, best_f] <= best_t
                go_left[r] = goes
                if goes:
                    n_left += 1
            for f in range(n_feat):
                nl = a
                nr = 0
                for k in range(a, b):
                    r = buf_o[f, k]
                    if go_left[r]:
                        buf_o[f, nl] = r
                        buf_x[f, nl] = buf_x[f, k]
                        buf_g[f, nl] = buf_g[f, k]
                        buf_h[f, nl] = buf_h[f, k]
                        nl += 1
                    else:
                        tmp_o[nr] = r
                        tmp_x[nr] = buf_x[f, k]
                        tmp_g[nr] = buf_g[f, k]
                        tmp_h[nr] = buf_h[f, k]
                        nr += 1
                for j in range(nr):
                    buf_o[f, nl + j] = tmp_o[j]
                    buf_x[f, nl + j] = tmp_x[j]
                    buf_g[f, nl + j] = tmp_g[j]
                    buf_h[f, nl + j] = tmp_h[j]
            lo[lc] = a
            hi[lc] = a + n_left
            lo[rc] = a + n_left
            hi[rc] = b
        if n_next == 0:
            break
        level = next_level
        n_level = n_next

    for nd in range(n_nodes):
        if feature[nd] < 0:
            value[nd] = leaf_weight(gsum[nd], hsum[nd], lam)
    leaf_of = np.empty(n, dtype=np.int64)
    for r in range(n):
        w = cover_w[r]
        nd = 0
        while True:
            cover[nd] += w
            f = feature[nd]
            if f < 0:
                break
            nd = left[nd] if x[r, f] <= threshold[nd] else right[nd]
        leaf_of[r] = nd
    return (
        feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
        right[:n_nodes].copy(), value[:n_nodes].copy(), cover[:n_nodes].copy(), leaf_of,
    )


def _log_loss(y, margin) -> float:
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def _sigmoid(m):
    return 0.5 * (1.0 + np.tanh(0.5 * m))


def fit_gbt(matrix, labels, params: GbtParams = GbtParams(), seed: int = 0, column_names=None, cover_mask=None) -> BoostedEnsemble:
    """Fit the boosted ensemble.

    ``cover_mask`` marks the rows whose counts define node cover (the
    attribution background); pass ``~is_synthetic`` to keep oversampled rows
    out of it. ``seed`` is accepted for interface stability: no sampling
    happens, so the fit is fully deterministic.
    """
    del seed
    x = np.ascontiguousarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or len(x) != len(y):
        raise SchemaError("matrix and labels are misaligned")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteError("non-finite values in boosting inputs")
    if y.min() == y.max():
        raise SingleClassError("boosting needs both classes")
    cover_w = np.ones(len(y)) if cover_mask is None else np.asarray(cover_mask, dtype=np.float64)
    if cover_w.sum() == 0:
        cover_w = np.ones(len(y))

    ybar = y.mean()
    base = float(np.log(ybar / (1.0 - ybar)))
    order = np.ascontiguousarray(np.argsort(x, axis=0, kind="stable").T.astype(np.int32))
    xs = np.ascontiguousarray(np.take_along_axis(x, order.T, axis=0).T)
    gh = np.empty((len(y), 2))
    n_rows, n_feat = x.shape
    buffers = (
        np.empty((n_feat, n_rows), dtype=np.int32), np.empty((n_feat, n_rows)),
        np.empty((n_feat, n_rows)), np.empty((n_feat, n_rows)),
        np.empty(n_rows, dtype=np.int32), np.empty(n_rows), np.empty(n_rows), np.empty(n_rows),
        np.zeros(n_rows, dtype=np.bool_),
    )
    margin = np.full(len(y), base)
    trees = []
    losses = [_log_loss(y, margin)]
    eta = params.learning_rate
    for _ in range(params.n_trees):
        p = _sigmoid(margin)
        gh[:, 0] = p - y
        gh[:, 1] = p * (1.0 - p)
        feat, thr, lft, rgt, val, cov, leaf_of = _grow_tree(
            x, order, xs, gh, cover_w, params.max_depth, params.lambda_leaf, params.gamma,
            params.min_child_weight, *buffers,
        )
        trees.append(Tree(feat, thr, lft, rgt, val, cov))
        margin = margin + eta * val[leaf_of]
        losses.append(_log_loss(y, margin))
    return BoostedEnsemble(
        trees=trees,
        learning_rate=eta,
        base_score=base,
        params=params,
        column_names=list(column_names) if column_names is not None else [f"x{j}" for j in range(x.shape[1])],
        train_loss=losses,
    )


def predict_proba_gbt(ensemble: BoostedEnsemble, matrix) -> np.ndarray:
    if ensemble is None:
        raise NotFittedError("ensemble is not fitted")
    return np.clip(_sigmoid(ensemble.margin(matrix)), 1e-15, 1.0 - 1e-15)
