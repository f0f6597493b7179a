"""Second-order gradient boosted regression trees.

Split gain and leaf weights follow the usual Newton formulation::

    gain = 1/2 [G_L^2/(H_L+l2) + G_R^2/(H_R+l2) - (G_L+G_R)^2/(H_L+H_R+l2)] - gamma
    leaf = -eta * G / (H + l2)

A split is adopted only when ``gain > 0``. Split search is exact greedy over
sorted distinct feature values; thresholds sit halfway between neighbours and
rows with ``x <= threshold`` go left.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

from .data import CLASSIFICATION, REGRESSION, Dataset

SQUARED_ERROR = "squared-error"
LOGISTIC = "logistic"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    max_depth: int = 6
    gamma: float = 0.0
    eta: float = 0.1
    n_rounds: int = 100
    min_child_weight: float = 1.0
    subsample: float = 1.0
    colsample: float = 1.0
    l2_leaf: float = 1.0
    objective: str = SQUARED_ERROR
    seed: int = 0

    def __post_init__(self):
        if int(self.max_depth) != self.max_depth or self.max_depth < 0:
            raise ModelError("max_depth must be an integer >= 0")
        if not self.gamma >= 0:
            raise ModelError("gamma must be >= 0")
        if not 0 < self.eta <= 1:
            raise ModelError("eta must lie in (0, 1]")
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ModelError("n_rounds must be an integer >= 1")
        if not self.min_child_weight >= 0:
            raise ModelError("min_child_weight must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ModelError("subsample must lie in (0, 1]")
        if not 0 < self.colsample <= 1:
            raise ModelError("colsample must lie in (0, 1]")
        if not self.l2_leaf >= 0:
            raise ModelError("l2_leaf must be >= 0")
        if self.objective not in (SQUARED_ERROR, LOGISTIC):
            raise ModelError(f"unknown objective {self.objective!r}")

    def with_(self, **changes) -> "Hyperparameters":
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Tree:
    """Flat pre-order tree. ``feature == -1`` marks a leaf.

    ``value`` on a leaf is the (eta-scaled) output; on internal nodes it is
    the weight the node would carry as a leaf, kept for inspection only.
    ``cover`` is the hessian sum routed through the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def used_features(self):
        return set(int(f) for f in self.feature[self.feature >= 0])

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": self.default_left.astype(bool).tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["default_left"], dtype=np.bool_),
            np.asarray(d["value"], dtype=np.float64),
            np.asarray(d["cover"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value, cover):
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([True]), np.array([float(value)]), np.array([float(cover)]))


@dataclass
class ForestModel:
    trees: list
    base_score: float
    hyperparameters: Hyperparameters
    feature_names: list
    train_loss: list = field(default_factory=list)
    eval_loss: list = field(default_factory=list)
    best_iteration: int | None = None

    def __post_init__(self):
        self._packed = None

    @property
    def objective(self):
        return self.hyperparameters.objective

    @property
    def n_features(self):
        return len(self.feature_names)

    def packed(self):
        if self._packed is None:
            self._packed = _pack(self.trees)
        return self._packed

    def total_leaves(self):
        return sum(t.n_leaves for t in self.trees)

    def to_dict(self):
        return {
            "base_score": self.base_score,
            "objective": self.objective,
            "hyperparameters": self.hyperparameters.to_dict(),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        hp = Hyperparameters.from_dict(d["hyperparameters"])
        if d["objective"] != hp.objective:
            raise ModelError("objective does not match hyperparameters")
        return cls([Tree.from_dict(t) for t in d["trees"]], float(d["base_score"]), hp,
                   list(d["feature_names"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _pack(trees):
    sizes = [t.n_nodes for t in trees]
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    if not trees:
        empty_i = np.zeros(0, dtype=np.int64)
        empty_f = np.zeros(0, dtype=np.float64)
        return offsets, empty_i, empty_f, empty_i, empty_i, np.zeros(0, dtype=np.bool_), empty_f
    cat = np.concatenate
    return (offsets,
            cat([t.feature for t in trees]).astype(np.int64),
            cat([t.threshold for t in trees]).astype(np.float64),
            cat([t.left for t in trees]).astype(np.int64),
            cat([t.right for t in trees]).astype(np.int64),
            cat([t.default_left for t in trees]).astype(np.bool_),
            cat([t.value for t in trees]).astype(np.float64))


@numba.njit(cache=True)
def _predict_packed(X, offsets, feature, threshold, left, right, default_left, value, out):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                k = base + node
                x = X[i, feature[k]]
                if np.isnan(x):
                    go_left = default_left[k]
                else:
                    go_left = x <= threshold[k]
                node = left[k] if go_left else right[k]
            acc += value[base + node]
        out[i] += acc


@numba.njit(cache=True)
def _grow_tree(X, order, g, h, row_node, use_feature, max_depth, gamma,
               min_child_weight, l2, eta):
    n, d = X.shape
    n_in = 0
    G0 = 0.0
    H0 = 0.0
    for i in range(n):
        if row_node[i] == 0:
            n_in += 1
            G0 += g[i]
            H0 += h[i]
    cap = 2 * n_in + 1
    if max_depth < 30:
        full = (1 << (max_depth + 1)) - 1
        if full < cap:
            cap = full
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    lch = np.full(cap, -1, dtype=np.int64)
    rch = np.full(cap, -1, dtype=np.int64)
    dleft = np.ones(cap, dtype=np.bool_)
    G = np.zeros(cap)
    H = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    G[0] = G0
    H[0] = H0
    n_nodes = 1
    level_start = 0
    level_end = 1

    best_gain = np.empty(cap)
    best_feat = np.empty(cap, dtype=np.int64)
    best_thr = np.empty(cap)
    best_GL = np.empty(cap)
    best_HL = np.empty(cap)
    GL = np.empty(cap)
    HL = np.empty(cap)
    last = np.empty(cap)
    seen = np.empty(cap, dtype=np.bool_)

    while level_start < level_end:
        cur_depth = depth[level_start]
        if cur_depth >= max_depth:
            break
        for nd in range(level_start, level_end):
            best_gain[nd] = -np.inf
            best_feat[nd] = -1
        for f in range(d):
            if not use_feature[f]:
                continue
            for nd in range(level_start, level_end):
                GL[nd] = 0.0
                HL[nd] = 0.0
                seen[nd] = False
            for k in range(n):
                i = order[f, k]
                nd = row_node[i]
                if nd < level_start or nd >= level_end:
                    continue
                v = X[i, f]
                if seen[nd] and v > last[nd]:
                    gl = GL[nd]
                    hl = HL[nd]
                    gr = G[nd] - gl
                    hr = H[nd] - hl
                    if hl >= min_child_weight and hr >= min_child_weight:
                        gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2)
                                      - G[nd] * G[nd] / (H[nd] + l2))
                        if gain > best_gain[nd]:
                            best_gain[nd] = gain
                            best_feat[nd] = f
                            t = last[nd] + (v - last[nd]) * 0.5
                            if t >= v:
                                t = last[nd]
                            best_thr[nd] = t
                            best_GL[nd] = gl
                            best_HL[nd] = hl
                GL[nd] += g[i]
                HL[nd] += h[i]
                last[nd] = v
                seen[nd] = True
        new_start = n_nodes
        for nd in range(level_start, level_end):
            if best_feat[nd] < 0 or best_gain[nd] - gamma <= 0.0:
                continue
            feat[nd] = best_feat[nd]
            thr[nd] = best_thr[nd]
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            lch[nd] = lc
            rch[nd] = rc
            G[lc] = best_GL[nd]
            H[lc] = best_HL[nd]
            G[rc] = G[nd] - best_GL[nd]
            H[rc] = H[nd] - best_HL[nd]
            dleft[nd] = H[lc] >= H[rc]
            depth[lc] = cur_depth + 1
            depth[rc] = cur_depth + 1
        if n_nodes == new_start:
            break
        for i in range(n):
            nd = row_node[i]
            if nd < level_start or nd >= level_end or feat[nd] < 0:
                continue
            if X[i, feat[nd]] <= thr[nd]:
                row_node[i] = lch[nd]
            else:
                row_node[i] = rch[nd]
        level_start = new_start
        level_end = n_nodes

    value = np.empty(n_nodes)
    for nd in range(n_nodes):
        value[nd] = -eta * G[nd] / (H[nd] + l2)

    # renumber breadth-first ids into pre-order
    pre = np.empty(n_nodes, dtype=np.int64)
    stack = np.empty(n_nodes, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    pos = 0
    while sp > 0:
        sp -= 1
        nd = stack[sp]
        pre[nd] = pos
        pos += 1
        if feat[nd] >= 0:
            stack[sp] = rch[nd]
            stack[sp + 1] = lch[nd]
            sp += 2
    o_feat = np.empty(n_nodes, dtype=np.int64)
    o_thr = np.empty(n_nodes)
    o_l = np.empty(n_nodes, dtype=np.int64)
    o_r = np.empty(n_nodes, dtype=np.int64)
    o_dl = np.empty(n_nodes, dtype=np.bool_)
    o_val = np.empty(n_nodes)
    o_cov = np.empty(n_nodes)
    for nd in range(n_nodes):
        p = pre[nd]
        o_feat[p] = feat[nd]
        o_thr[p] = thr[nd]
        o_l[p] = pre[lch[nd]] if feat[nd] >= 0 else -1
        o_r[p] = pre[rch[nd]] if feat[nd] >= 0 else -1
        o_dl[p] = dleft[nd]
        o_val[p] = value[nd]
        o_cov[p] = H[nd]
    return o_feat, o_thr, o_l, o_r, o_dl, o_val, o_cov


def _sigmoid(m):
    return 1.0 / (1.0 + np.exp(-m))


def _gradients(objective, margin, y):
    if objective == SQUARED_ERROR:
        return margin - y, np.ones_like(y)
    p = _sigmoid(margin)
    return p - y, np.maximum(p * (1.0 - p), 1e-16)


def objective_loss(objective, margin, y):
    """Mean squared error, or mean logistic deviance on margins."""
    if objective == SQUARED_ERROR:
        return float(np.mean((y - margin) ** 2))
    # log(1 + exp(-m)) for y=1 and log(1 + exp(m)) for y=0, computed stably
    s = np.where(y > 0.5, -margin, margin)
    return float(np.mean(np.logaddexp(0.0, s)))


def _base_score(objective, y):
    mean = float(np.mean(y))
    if objective == SQUARED_ERROR:
        return mean
    p = min(max(mean, 1e-6), 1 - 1e-6)
    return math.log(p / (1 - p))


def _check_task(ds, hp):
    want = LOGISTIC if ds.task == CLASSIFICATION else SQUARED_ERROR
    if hp.objective != want:
        raise ModelError(f"objective {hp.objective!r} does not match task {ds.task!r}")


def fit(ds: Dataset, hp: Hyperparameters, eval_set: Dataset | None = None,
        early_stopping_rounds: int | None = None) -> ForestModel:
    """Boost ``hp.n_rounds`` trees on ``ds``.

    With ``eval_set`` the per-round validation loss is recorded; adding
    ``early_stopping_rounds`` stops once it has not improved for that many
    rounds and truncates the forest to the best round.
    """
    if hp.max_depth < 1:
        raise ModelError("max_depth must be >= 1 for training")
    if ds.n_rows < 1:
        raise ModelError("empty dataset")
    _check_task(ds, hp)
    X = ds.features
    y = ds.target
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable").T.copy()
    rng = np.random.default_rng(hp.seed)
    base = _base_score(hp.objective, y)
    margin = np.full(n, base)
    if eval_set is not None:
        Xe = eval_set.features
        if Xe.shape[1] != d:
            raise ModelError("eval_set feature count mismatch")
        ye = eval_set.target
        margin_e = np.full(len(ye), base)
    n_cols = max(1, int(round(hp.colsample * d)))
    trees = []
    train_loss = [objective_loss(hp.objective, margin, y)]
    eval_loss = [] if eval_set is None else [objective_loss(hp.objective, margin_e, ye)]
    best_round, best_val, stall = 0, math.inf, 0
    for r in range(hp.n_rounds):
        g, h = _gradients(hp.objective, margin, y)
        row_node = np.zeros(n, dtype=np.int64)
        if hp.subsample < 1.0:
            row_node[rng.random(n) >= hp.subsample] = -1
            if not np.any(row_node == 0):
                row_node[rng.integers(n)] = 0
        use_feature = np.ones(d, dtype=np.bool_)
        if n_cols < d:
            use_feature[:] = False
            use_feature[rng.choice(d, size=n_cols, replace=False)] = True
        arrays = _grow_tree(X, order, g, h, row_node, use_feature, int(hp.max_depth),
                            float(hp.gamma), float(hp.min_child_weight),
                            float(hp.l2_leaf), float(hp.eta))
        tree = Tree(*arrays)
        trees.append(tree)
        packed = _pack([tree])
        _predict_packed(X, *packed, margin)
        train_loss.append(objective_loss(hp.objective, margin, y))
        if eval_set is not None:
            _predict_packed(Xe, *packed, margin_e)
            val = objective_loss(hp.objective, margin_e, ye)
            eval_loss.append(val)
            if val < best_val:
                best_val, best_round, stall = val, r + 1, 0
            else:
                stall += 1
                if early_stopping_rounds is not None and stall >= early_stopping_rounds:
                    break
    model = ForestModel(trees, base, hp, ds.feature_names, train_loss, eval_loss)
    if eval_set is not None and early_stopping_rounds is not None:
        model.trees = trees[:best_round]
        model.best_iteration = best_round
    return model


def predict_margin(model: ForestModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ModelError(f"expected {model.n_features} feature columns, got {X.shape}")
    out = np.full(X.shape[0], model.base_score)
    _predict_packed(X, *model.packed(), out)
    return out


def predict(model: ForestModel, X) -> np.ndarray:
    """Raw sum for regression, sigmoid probability for the logistic objective."""
    m = predict_margin(model, X)
    if model.objective == LOGISTIC:
        return _sigmoid(m)
    return m


def regression_metrics(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ModelError("r2 undefined for a zero-variance target")
    ss_res = float(np.sum((y - yhat) ** 2))
    return {"rmse": math.sqrt(ss_res / len(y)), "r2": 1.0 - ss_res / ss_tot}


def evaluate(model: ForestModel, ds: Dataset) -> dict:
    """RMSE and r² for regression; accuracy in percent for classification."""
    _check_task(ds, model.hyperparameters)
    yhat = predict(model, ds.features)
    if ds.task == REGRESSION:
        return regression_metrics(ds.target, yhat)
    return {"accuracy": 100.0 * float(np.mean((yhat >= 0.5) == (ds.target > 0.5)))}
