"""Slow reference implementations the fast code is checked against."""

import itertools
import math

import numpy as np

from piperisk.boosting import BoostedEnsemble, Tree
from piperisk.evaluation import ConfusionMatrix


def tally(probabilities, labels, threshold) -> ConfusionMatrix:
    tp = tn = fp = fn = 0
    for p, y in zip(probabilities, labels):
        pred = p > threshold
        if pred and y == 1:
            tp += 1
        elif pred:
            fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)


def pair_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def pair_concordance(durations, events, risks) -> float:
    num = den = 0.0
    n = len(durations)
    for i in range(n):
        for j in range(n):
            if events[i] == 1 and durations[i] < durations[j]:
                den += 1
                num += 1.0 if risks[i] > risks[j] else 0.5 if risks[i] == risks[j] else 0.0
    return num / den


def _conditional(tree: Tree, x, coalition, node=0) -> float:
    if tree.is_leaf(node):
        return float(tree.value[node])
    f = tree.feature[node]
    lft, rgt = int(tree.left[node]), int(tree.right[node])
    if f in coalition:
        return _conditional(tree, x, coalition, lft if x[f] <= tree.threshold[node] else rgt)
    c = tree.cover[node]
    if c <= 0:
        return 0.0
    return (tree.cover[lft] * _conditional(tree, x, coalition, lft) + tree.cover[rgt] * _conditional(tree, x, coalition, rgt)) / c


def brute_shapley(ensemble: BoostedEnsemble, x) -> np.ndarray:
    """Exact Shapley values by enumerating every feature subset."""
    m = ensemble.n_features
    phi = np.zeros(m)
    weights = [math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)]
    for tree in ensemble.trees:
        value = {}
        for size in range(m + 1):
            for subset in itertools.combinations(range(m), size):
                value[frozenset(subset)] = _conditional(tree, x, set(subset))
        for i in range(m):
            for subset, v in value.items():
                if i not in subset:
                    phi[i] += weights[len(subset)] * (value[subset | {i}] - v)
    return ensemble.learning_rate * phi


def best_split(x, g, h, lam, gamma, min_child_weight):
    """(gain, feature, threshold) by scanning every midpoint of every feature."""
    best = (0.0, -1, 0.0)
    G, H = g.sum(), h.sum()
    for f in range(x.shape[1]):
        values = np.unique(x[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            t = 0.5 * (lo + hi)
            if t >= hi:
                t = lo
            left = x[:, f] <= t
            gl, hl = g[left].sum(), h[left].sum()
            hr = H - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gr = G - gl
            gain = 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - G**2 / (H + lam)) - gamma
            if gain > best[0] + 1e-12 * max(1.0, abs(best[0])):
                best = (gain, f, t)
    return best
