import numpy as np
import pytest

from scal.rules import GT, LE, RuleConfig, RuleError, mine_rules


def test_single_threshold_rule(rng):
    X = rng.uniform(0, 10, size=(400, 3))
    labels = (X[:, 0] > 5).astype(int)
    rules = mine_rules(X, labels, ["f", "g", "h"]).rules
    hits = [r for r in rules if r.target_cluster == 1 and len(r.conjuncts) == 1
            and r.conjuncts[0][:2] == ("f", GT)]
    assert hits
    r = hits[0]
    assert abs(r.conjuncts[0][2] - 5) < 0.2
    assert (r.precision, r.recall) == (1.0, 1.0)


def _best_single_split_precision(X, y):
    best = 0.0
    for j in range(X.shape[1]):
        for t in np.unique(X[:, j]):
            for mask in (X[:, j] <= t, X[:, j] > t):
                if mask.sum():
                    best = max(best, y[mask].mean())
    return best


def test_xor_needs_two_conjuncts():
    g = np.linspace(-1, 1, 20)
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    labels = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    for c in (0, 1):
        assert _best_single_split_precision(X, (labels == c).astype(float)) < 0.8
    rules = mine_rules(X, labels).rules
    assert rules
    assert all(len(r.conjuncts) >= 2 for r in rules)


def test_scores_are_measured_on_input(rng):
    X = rng.normal(size=(300, 2))
    labels = (X[:, 0] + 0.3 * rng.normal(size=300) > 0).astype(int)
    labels[:10] = -1
    cfg = RuleConfig(precision_min=0.7, recall_min=0.1)
    rs = mine_rules(X, labels, ["a", "b"], cfg)
    for r in rs.rules:
        covered = r.mask(X, ["a", "b"])
        positive = labels == r.target_cluster
        assert r.support == covered.sum()
        assert r.precision == pytest.approx((covered & positive).sum() / covered.sum())
        assert r.recall == pytest.approx((covered & positive).sum() / positive.sum())
        assert r.precision >= 0.7 and r.recall >= 0.1
    keys = [(r.target_cluster, tuple(r.conjuncts)) for r in rs.rules]
    assert len(keys) == len(set(keys))
    f1 = [r.f1 for r in rs.rules]
    assert f1 == sorted(f1, reverse=True)


def test_text_and_json(rng):
    X = rng.uniform(0, 10, size=(200, 1))
    rs = mine_rules(X, (X[:, 0] > 5).astype(int), ["f"])
    text = rs.to_text()
    assert text.startswith("cluster ")
    assert "prec" in text and ("≤" in text or ">" in text)
    assert '"rules"' in rs.to_json()
    ops = {c[1] for r in rs.rules for c in r.conjuncts}
    assert ops <= {LE, GT}


def test_errors():
    with pytest.raises(RuleError):
        mine_rules(np.zeros((3, 1)), np.array([-1, -1, -1]))
    with pytest.raises(RuleError):
        mine_rules(np.zeros((0, 1)), np.array([]))


def test_deterministic(rng):
    X = rng.normal(size=(150, 3))
    labels = (X[:, 1] > 0).astype(int)
    assert mine_rules(X, labels).to_json() == mine_rules(X, labels).to_json()
