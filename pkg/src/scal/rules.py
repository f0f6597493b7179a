"""One-vs-all decision rules describing explanation-space clusters.

For every cluster a bag of shallow classification trees is grown on
bootstrap samples of the binary task "row belongs to this cluster". Each
root-to-leaf path ending in a positive leaf becomes a candidate conjunction,
which is then scored on the full data and kept if precise and general
enough.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .clustering import NOISE

LE = "<="
GT = ">"
THRESHOLD_TOL = 1e-12


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class RuleConfig:
    n_trees: int = 20
    max_depth: int = 3
    precision_min: float = 0.8
    recall_min: float = 0.05
    seed: int = 0


@dataclass
class Rule:
    conjuncts: tuple
    target_cluster: int
    precision: float
    recall: float
    support: int

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def mask(self, X, feature_names):
        X = np.asarray(X, dtype=float)
        index = {name: i for i, name in enumerate(feature_names)}
        out = np.ones(len(X), dtype=bool)
        for name, op, thr in self.conjuncts:
            col = X[:, index[name]]
            out &= (col <= thr) if op == LE else (col > thr)
        return out

    def describe(self):
        body = " AND ".join(f"({name} {'≤' if op == LE else '>'} {thr:.6g})"
                            for name, op, thr in self.conjuncts)
        return (f"cluster {self.target_cluster}: {body} "
                f"[prec {self.precision:.2f}, rec {self.recall:.2f}, n={self.support}]")

    def to_dict(self):
        return {"conjuncts": [list(c) for c in self.conjuncts],
                "target_cluster": self.target_cluster, "precision": self.precision,
                "recall": self.recall, "support": self.support}


@dataclass
class RuleSet:
    rules: list
    mined_on: dict = field(default_factory=dict)

    def to_text(self):
        return "\n".join(r.describe() for r in self.rules) + ("\n" if self.rules else "")

    def to_json(self):
        return json.dumps({"mined_on": self.mined_on, "rules": [r.to_dict() for r in self.rules]},
                          indent=2)


def _tree_paths(tree: DecisionTreeClassifier):
    t = tree.tree_
    # column 1 of value is the positive class once both classes were seen
    pos_col = list(tree.classes_).index(1) if 1 in tree.classes_ else None
    paths = []

    def walk(node, conds):
        if t.children_left[node] < 0:
            if pos_col is None:
                return
            counts = t.value[node][0]
            if counts[pos_col] > counts.sum() - counts[pos_col]:
                paths.append(list(conds))
            return
        f, thr = int(t.feature[node]), float(t.threshold[node])
        walk(t.children_left[node], conds + [(f, LE, thr)])
        walk(t.children_right[node], conds + [(f, GT, thr)])

    walk(0, [])
    return paths


def _normalize(conds):
    """Keep the tightest bound per (feature, direction)."""
    tight = {}
    for f, op, thr in conds:
        key = (f, op)
        if key not in tight:
            tight[key] = thr
        elif op == LE:
            tight[key] = min(tight[key], thr)
        else:
            tight[key] = max(tight[key], thr)
    return tuple(sorted(((f, op, thr) for (f, op), thr in tight.items()),
                        key=lambda c: (c[0], c[1])))


def _same(a, b):
    return len(a) == len(b) and all(
        x[0] == y[0] and x[1] == y[1] and abs(x[2] - y[2]) <= THRESHOLD_TOL for x, y in zip(a, b))


def mine_rules(X, labels, feature_names=None, cfg: RuleConfig | None = None) -> RuleSet:
    """Mine precise conjunctive rules for each non-noise cluster.

    Rules are evaluated on ``X`` itself and sorted by F1, best first.
    """
    cfg = cfg or RuleConfig()
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise RuleError("empty feature matrix")
    if len(labels) != len(X):
        raise RuleError("labels length does not match rows of X")
    clusters = sorted(int(c) for c in np.unique(labels) if c != NOISE)
    if not clusters:
        raise RuleError("no non-noise clusters to describe")
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    n = len(X)
    rng = np.random.default_rng(cfg.seed)
    rules = []
    for c in clusters:
        y = (labels == c).astype(int)
        positives = int(y.sum())
        kept = []
        for _ in range(cfg.n_trees):
            idx = rng.integers(0, n, size=n)
            tree = DecisionTreeClassifier(max_depth=cfg.max_depth,
                                          random_state=int(rng.integers(2**31 - 1)))
            tree.fit(X[idx], y[idx])
            for path in _tree_paths(tree):
                conds = _normalize(path)
                if not conds or any(_same(conds, k) for k in kept):
                    continue
                kept.append(conds)
        seen = set()
        for conds in kept:
            named = tuple((names[f], op, thr) for f, op, thr in conds)
            rule = Rule(named, c, 0.0, 0.0, 0)
            covered = rule.mask(X, names)
            # bootstrap thresholds differ slightly; equal coverage means the same rule on X
            key = (tuple((f, op) for f, op, _ in conds), np.packbits(covered).tobytes())
            if key in seen:
                continue
            seen.add(key)
            support = int(covered.sum())
            tp = int(np.sum(covered & (y == 1)))
            rule.support = support
            rule.precision = tp / support if support else 0.0
            rule.recall = tp / positives if positives else 0.0
            if rule.precision >= cfg.precision_min and rule.recall >= cfg.recall_min:
                rules.append(rule)
    rules.sort(key=lambda r: (-r.f1, r.target_cluster, len(r.conjuncts), r.describe()))
    return RuleSet(rules, {"n": n, "d": X.shape[1], "clusters": len(clusters)})
