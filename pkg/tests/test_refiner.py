import numpy as np
import pytest

from scal import refiner
from scal.clustering import ClusterAssignment, ClusterQuality
from scal.embedding import EmbeddingConfig
from scal.gbdt import Hyperparameters, ModelError
from scal.refiner import (ExplanationConfig, RefineError, ScalConfig, compare, data_error_flag,
                          explanation_space, refine)

from conftest import make_dataset
from trace_checks import check_trace

FAST = ExplanationConfig(embedding=EmbeddingConfig(n_epochs=30))


@pytest.fixture
def small(rng):
    X = rng.uniform(-1, 1, size=(150, 3))
    y = np.where(X[:, 0] > 0, 2 * X[:, 1], -X[:, 1]) + rng.normal(scale=0.1, size=150)
    return make_dataset(X, y)


def scripted(monkeypatch, qualities):
    """Replace the explanation space with a fixed sequence of quality records."""
    seq = iter(qualities)

    def fake(model, X, cfg=None):
        q = next(seq)
        labels = np.zeros(len(X), dtype=np.int64)
        return refiner.ExplanationSpace(None, None, ClusterAssignment(labels, "fake"), q,
                                        {"shap": 0.0, "embedding": 0.0, "clustering": 0.0})
    monkeypatch.setattr(refiner, "explanation_space", fake)


def Q(s, noise=False, m=2):
    return ClusterQuality(m, s, noise)


def test_depth_one_gives_empty_trace(small):
    hp = Hyperparameters(max_depth=1, n_rounds=5)
    result = refine(small, hp, ScalConfig(), FAST)
    assert result.trace == []
    assert result.model is result.baseline_model
    assert result.hyperparameters == hp


def test_loss_arithmetic_noise_bonus(monkeypatch, small):
    # best lacks noise: eps = 0.005 + 0.01 = 0.015 >= 1e-3, accepted
    scripted(monkeypatch, [Q(0.5), Q(0.505), Q(0.4), Q(0.4), Q(0.4)])
    result = refine(small, Hyperparameters(max_depth=3, n_rounds=3), ScalConfig(), FAST)
    first = result.trace[0]
    assert first.delta_s == pytest.approx(0.005)
    assert first.noise_bonus == 0.01
    assert first.loss == pytest.approx(0.015)
    assert first.accepted


def test_scripted_trajectory(monkeypatch, small):
    hp = Hyperparameters(max_depth=4, gamma=0.0, n_rounds=3)
    # baseline has noise, so no bonus until a noise-free space is accepted
    scripted(monkeypatch, [Q(0.5, True), Q(0.6, True), Q(0.7, True), Q(0.7, True),
                           Q(0.69, True), Q(0.2, True)])
    cfg = ScalConfig()
    result = refine(small, hp, cfg, FAST)
    got = [(s.max_depth, s.gamma, s.accepted, s.patience) for s in result.trace]
    assert got == [(3, 0.0, True, 0), (3, 0.001, True, 0), (3, 0.01, False, 1),
                   (2, 0.0, False, 2), (1, 0.0, False, 3)]
    assert (result.hyperparameters.max_depth, result.hyperparameters.gamma) == (3, 0.001)
    check_trace(result, hp, cfg)


def test_undefined_silhouette_scores_minus_one(monkeypatch, small):
    scripted(monkeypatch, [Q(None, m=1), Q(-0.5)] + [Q(None, m=1)] * 3)
    result = refine(small, Hyperparameters(max_depth=4, n_rounds=3),
                    ScalConfig(noise_rule="off"), FAST)
    assert result.trace[0].delta_s == pytest.approx(0.5) and result.trace[0].accepted
    assert result.trace[1].silhouette is None


def test_iteration_cap(monkeypatch, small):
    scripted(monkeypatch, [Q(0.0)] + [Q(0.1 * k) for k in range(1, 20)])
    cfg = ScalConfig(max_total_iterations=4)
    result = refine(small, Hyperparameters(max_depth=5, n_rounds=3), cfg, FAST)
    assert len(result.trace) == 4 and all(s.accepted for s in result.trace)


def test_real_run_satisfies_invariants(small):
    hp = Hyperparameters(max_depth=4, n_rounds=20)
    cfg = ScalConfig()
    result = refine(small, hp, cfg, FAST)
    check_trace(result, hp, cfg)
    for s in result.trace:
        assert all(v >= 0 for v in s.timings.values())


def test_observer_called(small):
    seen = []
    result = refine(small, Hyperparameters(max_depth=3, n_rounds=5), ScalConfig(), FAST,
                    observer=lambda step, model: seen.append(step))
    assert seen[0] is None and seen[1:] == result.trace


def test_compare_fields_and_degenerate(monkeypatch, small):
    test = make_dataset(small.features[:50] + 0.1, small.target[:50])
    scripted(monkeypatch, [Q(0.9, True)] + [Q(0.1, True)] * 10)
    record = compare(small, test, Hyperparameters(max_depth=3, n_rounds=5), ScalConfig(), FAST)
    for model in ("aht", "scal"):
        assert set(record[model]["train"]) >= {"noise_present", "silhouette", "rmse", "r2"}
        assert record[model]["test"]["silhouette"] is None
        assert record[model]["test"]["noise_present"] is None
    assert record["aht"] == record["scal"]


def test_constant_target_is_single_cluster(rng):
    ds = make_dataset(rng.normal(size=(60, 3)), np.full(60, 4.0))
    result = refine(ds, Hyperparameters(max_depth=3, n_rounds=5), ScalConfig(), FAST)
    assert result.baseline_quality.num_clusters == 1
    assert data_error_flag(result)


def test_normal_data_not_flagged(small):
    result = refine(small, Hyperparameters(max_depth=4, n_rounds=20), ScalConfig(), FAST)
    assert result.baseline_quality.num_clusters > 1
    assert not data_error_flag(result)


def test_sample_size_reuses_rows(small):
    cfg = ExplanationConfig(embedding=EmbeddingConfig(n_epochs=30), sample_size=80)
    from scal.gbdt import fit
    space = explanation_space(fit(small, Hyperparameters(max_depth=3, n_rounds=5)),
                              small.features, cfg)
    assert len(space.rows) == 80 and space.shap.values.shape == (80, 3)


def test_config_validation():
    with pytest.raises(RefineError):
        ScalConfig(patience=0)
    with pytest.raises(RefineError):
        ScalConfig(gamma_factor=1.0)
    with pytest.raises(RefineError):
        ScalConfig(noise_rule="sometimes")
    with pytest.raises(ModelError):
        refine(make_dataset([[0.0]], [1.0]), Hyperparameters(max_depth=0))
