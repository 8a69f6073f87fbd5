"""Exact TreeSHAP attribution for :class:`BoostedEnsemble` on the margin scale.

The value function is the path-conditional expectation: features outside the
coalition follow both branches weighted by node cover. Contributions are
accumulated leaf by leaf: the unique features on the root-to-leaf path form a
path whose subset weights are built with the usual extend step and read back
with the unwind sum, giving O(leaves * depth^2) work per tree and row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .boosting import BoostedEnsemble, Tree, _check_columns
from .errors import EmptyInputError, NotFittedError


@dataclass
class ShapAttribution:
    values: np.ndarray  # (rows, features)
    base_value: float
    column_names: list[str]

    def margins(self) -> np.ndarray:
        return self.base_value + self.values.sum(axis=1)


def expected_value(tree: Tree, node: int = 0) -> float:
    """Cover-weighted mean leaf value of the subtree under ``node``."""
    if tree.is_leaf(node):
        return float(tree.value[node])
    lft, rgt = int(tree.left[node]), int(tree.right[node])
    c = tree.cover[node]
    if c <= 0:
        return 0.0
    return (tree.cover[lft] * expected_value(tree, lft) + tree.cover[rgt] * expected_value(tree, rgt)) / c


def _pack(ensemble: BoostedEnsemble):
    depth = max(1, ensemble.params.max_depth)
    feats, thrs, covs = [], [], []
    leaf_value, leaf_depth, path_nodes, path_children, path_left = [], [], [], [], []
    offset = 0
    for tree in ensemble.trees:
        depth = max(depth, _tree_depth(tree))
    for tree in ensemble.trees:
        feats.append(tree.feature)
        thrs.append(tree.threshold)
        covs.append(tree.cover)

        def walk(node, nodes, kids, lefts):
            if tree.is_leaf(node):
                pad = depth - len(nodes)
                leaf_value.append(ensemble.learning_rate * tree.value[node])
                leaf_depth.append(len(nodes))
                path_nodes.append([offset + v for v in nodes] + [0] * pad)
                path_children.append([offset + v for v in kids] + [0] * pad)
                path_left.append(lefts + [False] * pad)
                return
            lft, rgt = int(tree.left[node]), int(tree.right[node])
            walk(lft, nodes + [node], kids + [lft], lefts + [True])
            walk(rgt, nodes + [node], kids + [rgt], lefts + [False])

        walk(0, [], [], [])
        offset += tree.n_nodes
    return (
        np.concatenate(feats).astype(np.int64),
        np.concatenate(thrs).astype(np.float64),
        np.concatenate(covs).astype(np.float64),
        np.asarray(leaf_value, dtype=np.float64),
        np.asarray(leaf_depth, dtype=np.int64),
        np.asarray(path_nodes, dtype=np.int64).reshape(len(leaf_value), depth),
        np.asarray(path_children, dtype=np.int64).reshape(len(leaf_value), depth),
        np.asarray(path_left, dtype=np.bool_).reshape(len(leaf_value), depth),
    )


def _tree_depth(tree: Tree, node: int = 0) -> int:
    if tree.is_leaf(node):
        return 0
    return 1 + max(_tree_depth(tree, int(tree.left[node])), _tree_depth(tree, int(tree.right[node])))


@njit(cache=True)
def _extend(pw, unique_depth, zero, one):
    pw[unique_depth] = 1.0 if unique_depth == 0 else 0.0
    for i in range(unique_depth - 1, -1, -1):
        pw[i + 1] += one * pw[i] * (i + 1) / (unique_depth + 1)
        pw[i] = zero * pw[i] * (unique_depth - i) / (unique_depth + 1)


@njit(cache=True)
def _unwound_sum(pw, unique_depth, zero, one):
    total = 0.0
    if one != 0.0:
        nxt = pw[unique_depth]
        for i in range(unique_depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[i] - tmp * zero * (unique_depth - i)
    else:
        for i in range(unique_depth - 1, -1, -1):
            total += pw[i] / (zero * (unique_depth - i))
    return total * (unique_depth + 1)


@njit(cache=True, nogil=True)
def _shap_kernel(x, feature, threshold, cover, leaf_value, leaf_depth, path_nodes, path_children, path_left, out):
    n_rows = x.shape[0]
    n_leaves = leaf_value.shape[0]
    max_depth = path_nodes.shape[1]
    uf = np.empty(max_depth, dtype=np.int64)
    uz = np.empty(max_depth)
    uo = np.empty(max_depth)
    pw = np.empty(max_depth + 1)
    zf = np.empty((n_leaves, max_depth))
    for l in range(n_leaves):
        for k in range(leaf_depth[l]):
            c = cover[path_nodes[l, k]]
            zf[l, k] = cover[path_children[l, k]] / c if c > 0 else 0.0
    for r in range(n_rows):
        for l in range(n_leaves):
            d = leaf_depth[l]
            if d == 0:
                continue
            m = 0
            for k in range(d):
                node = path_nodes[l, k]
                f = feature[node]
                goes_left = x[r, f] <= threshold[node]
                o = 1.0 if goes_left == path_left[l, k] else 0.0
                z = zf[l, k]
                found = -1
                for q in range(m):
                    if uf[q] == f:
                        found = q
                        break
                if found >= 0:
                    uz[found] *= z
                    uo[found] *= o
                else:
                    uf[m] = f
                    uz[m] = z
                    uo[m] = o
                    m += 1
            _extend(pw, 0, 1.0, 1.0)
            for q in range(m):
                _extend(pw, q + 1, uz[q], uo[q])
            v = leaf_value[l]
            for q in range(m):
                if uo[q] == uz[q]:
                    continue
                w = _unwound_sum(pw, m, uz[q], uo[q])
                out[r, uf[q]] += w * (uo[q] - uz[q]) * v


def tree_shap(ensemble: BoostedEnsemble, matrix) -> ShapAttribution:
    """Per-row, per-feature SHAP values; ``base_value + sum(phi) == margin``."""
    if ensemble is None or not isinstance(ensemble, BoostedEnsemble):
        raise NotFittedError("tree_shap needs a fitted BoostedEnsemble")
    x = _check_columns(ensemble, matrix)
    base = ensemble.base_score + ensemble.learning_rate * sum(expected_value(t) for t in ensemble.trees)
    phi = np.zeros((len(x), ensemble.n_features))
    if ensemble.trees and len(x):
        _shap_kernel(np.ascontiguousarray(x), *_pack(ensemble), phi)
    return ShapAttribution(values=phi, base_value=float(base), column_names=list(ensemble.column_names))


def shap_summary(attribution: ShapAttribution) -> list[tuple[str, float]]:
    """(feature, mean |phi|) by descending importance; ties keep column order."""
    if attribution.values.size == 0:
        raise EmptyInputError("empty attribution")
    importance = np.abs(attribution.values).mean(axis=0)
    order = sorted(range(len(importance)), key=lambda j: -importance[j])
    return [(attribution.column_names[j], float(importance[j])) for j in order]


def signed_effect(attribution: ShapAttribution, matrix) -> np.ndarray:
    """Correlation between each feature's value and its SHAP value (NaN if constant)."""
    x = np.asarray(matrix, dtype=np.float64)
    phi = attribution.values
    xc = x - x.mean(axis=0)
    pc = phi - phi.mean(axis=0)
    den = np.sqrt((xc**2).sum(axis=0) * (pc**2).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return (xc * pc).sum(axis=0) / den
