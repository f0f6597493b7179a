"""Exact path-dependent Shapley attributions for boosted tree ensembles.

Each tree is explained with the polynomial-time path algorithm: walking the
tree once per instance while tracking, for every feature on the current
path, the fraction of cover that flows down when the feature is known
(``one``) or unknown (``zero``), together with the permutation weights of
all subset sizes. Attributions are in margin units and satisfy
``base_value + values.sum(1) == margin`` up to rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .gbdt import ForestModel, ModelError


@dataclass
class ShapMatrix:
    values: np.ndarray
    base_value: float
    feature_names: list

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        header = list(self.feature_names) + ["base_value"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in self.values:
                w.writerow([repr(float(v)) for v in row] + [repr(float(self.base_value))])


@numba.njit(cache=True)
def _extend(F, Z, O, W, ud, zero, one, feat):
    F[ud] = feat
    Z[ud] = zero
    O[ud] = one
    W[ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        W[i + 1] += one * W[i] * (i + 1) / (ud + 1)
        W[i] = zero * W[i] * (ud - i) / (ud + 1)


@numba.njit(cache=True)
def _unwind(F, Z, O, W, ud, idx):
    one = O[idx]
    zero = Z[idx]
    nxt = W[ud]
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            tmp = W[i]
            W[i] = nxt * (ud + 1) / ((i + 1) * one)
            nxt = tmp - W[i] * zero * (ud - i) / (ud + 1)
        else:
            W[i] = W[i] * (ud + 1) / (zero * (ud - i))
    for i in range(idx, ud):
        F[i] = F[i + 1]
        Z[i] = Z[i + 1]
        O[i] = O[i + 1]


@numba.njit(cache=True)
def _unwound_sum(Z, O, W, ud, idx):
    one = O[idx]
    zero = Z[idx]
    nxt = W[ud]
    total = 0.0
    for i in range(ud - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (ud + 1) / ((i + 1) * one)
            total += tmp
            nxt = W[i] - tmp * zero * (ud - i) / (ud + 1)
        else:
            total += W[i] / zero * (ud + 1) / (ud - i)
    return total


@numba.njit
def _recurse(node, base, feature, threshold, left, right, default_left, value, cover,
             x, phi, level, ud, PF, PZ, PO, PW, zero, one, feat):
    F = PF[level]
    Z = PZ[level]
    O = PO[level]
    W = PW[level]
    if level > 0:
        for i in range(ud):
            F[i] = PF[level - 1, i]
            Z[i] = PZ[level - 1, i]
            O[i] = PO[level - 1, i]
            W[i] = PW[level - 1, i]
    _extend(F, Z, O, W, ud, zero, one, feat)

    k = base + node
    split = feature[k]
    if split < 0:
        for i in range(1, ud + 1):
            w = _unwound_sum(Z, O, W, ud, i)
            phi[F[i]] += w * (O[i] - Z[i]) * value[k]
        return

    xv = x[split]
    if np.isnan(xv):
        go_left = default_left[k]
    else:
        go_left = xv <= threshold[k]
    hot = left[k] if go_left else right[k]
    cold = right[k] if go_left else left[k]

    in_zero = 1.0
    in_one = 1.0
    for i in range(1, ud + 1):
        if F[i] == split:
            in_zero = Z[i]
            in_one = O[i]
            _unwind(F, Z, O, W, ud, i)
            ud -= 1
            break

    c = cover[k]
    _recurse(hot, base, feature, threshold, left, right, default_left, value, cover,
             x, phi, level + 1, ud + 1, PF, PZ, PO, PW,
             in_zero * cover[base + hot] / c, in_one, split)
    _recurse(cold, base, feature, threshold, left, right, default_left, value, cover,
             x, phi, level + 1, ud + 1, PF, PZ, PO, PW,
             in_zero * cover[base + cold] / c, 0.0, split)


@numba.njit
def _shap_forest(X, offsets, feature, threshold, left, right, default_left, value, cover,
                 max_depth, out):
    n_trees = offsets.shape[0] - 1
    size = max_depth + 2
    PF = np.zeros((size, size), dtype=np.int64)
    PZ = np.zeros((size, size))
    PO = np.zeros((size, size))
    PW = np.zeros((size, size))
    for r in range(X.shape[0]):
        x = X[r]
        phi = out[r]
        for t in range(n_trees):
            if feature[offsets[t]] < 0:
                continue
            _recurse(0, offsets[t], feature, threshold, left, right, default_left, value,
                     cover, x, phi, 0, 0, PF, PZ, PO, PW, 1.0, 1.0, -1)


def tree_expectation(tree) -> float:
    """Cover-weighted mean leaf value of one tree."""
    exp = np.zeros(tree.n_nodes)
    for i in range(tree.n_nodes - 1, -1, -1):
        if tree.feature[i] < 0:
            exp[i] = tree.value[i]
        else:
            l, r = tree.left[i], tree.right[i]
            exp[i] = (tree.cover[l] * exp[l] + tree.cover[r] * exp[r]) / tree.cover[i]
    return float(exp[0])


def expected_value(model: ForestModel) -> float:
    return model.base_score + sum(tree_expectation(t) for t in model.trees)


def shap_values(model: ForestModel, X) -> ShapMatrix:
    """Attribute each row's margin to the input features.

    Raises
    ------
    ModelError
        If the column count does not match the model, or a tree carries a
        node with non-positive cover.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ModelError(f"expected {model.n_features} feature columns, got {X.shape}")
    for t in model.trees:
        if np.any(t.cover <= 0):
            raise ModelError("tree contains a zero-cover node")
    out = np.zeros(X.shape, dtype=np.float64)
    if model.trees:
        offsets, feature, threshold, left, right, default_left, value = model.packed()
        cover = np.concatenate([t.cover for t in model.trees]).astype(np.float64)
        max_depth = max(t.depth() for t in model.trees)
        _shap_forest(X, offsets, feature, threshold, left, right, default_left, value, cover,
                     max_depth, out)
    return ShapMatrix(out, expected_value(model), list(model.feature_names))


def mean_profile(shap: ShapMatrix) -> np.ndarray:
    if shap.values.size == 0 or shap.values.shape[0] == 0:
        raise ValueError("empty SHAP matrix")
    return shap.values.mean(axis=0)
