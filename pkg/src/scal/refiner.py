"""Explanation-space driven adaptation of tree depth and split penalty.

Starting from tuned hyperparameters, candidates are refitted with one level
less depth; a candidate replaces the current best model when

    loss = (S_candidate - S_best) + noise_term >= accept_threshold

where S is the silhouette score of the clustered SHAP embedding of the
training set. After an acceptance the split penalty escalates
(0 -> gamma_seed -> x gamma_factor ...); after a rejection depth drops by
one more, gamma returns to its tuned value and patience grows. The loop ends
when patience is exhausted, depth would fall below 1, or the iteration cap
is hit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import clustering
from .clustering import ClusterAssignment, ClusterQuality
from .data import CLASSIFICATION, Dataset, TargetScaler
from .embedding import Embedding2D, EmbeddingConfig, embed_2d
from .gbdt import ForestModel, Hyperparameters, ModelError, evaluate, fit, predict
from .treeshap import ShapMatrix, shap_values

logger = logging.getLogger(__name__)

# noise-term rules: who must (not) show a noise cluster for the bonus to apply
BEST_LACKS_NOISE = "best_lacks_noise"
CANDIDATE_HAS_NOISE = "candidate_has_noise"
NO_NOISE_TERM = "off"
NOISE_RULES = (BEST_LACKS_NOISE, CANDIDATE_HAS_NOISE, NO_NOISE_TERM)

UNDEFINED_SILHOUETTE = -1.0


class RefineError(ValueError):
    pass


@dataclass(frozen=True)
class ExplanationConfig:
    """How the explanation space is built and clustered.

    ``clustering`` is ``dbscan`` (``eps=None`` picks eps from the k-distance
    knee) or ``kmeans``/``agglomerative`` with k chosen by silhouette over
    ``k_range``. ``sample_size`` caps the number of training rows explained;
    the same seeded subset is reused for every candidate.
    """

    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    clustering: str = clustering.DBSCAN
    min_pts: int = 5
    eps: float | None = None
    k_range: tuple = tuple(range(2, 11))
    sample_size: int | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class ExplanationSpace:
    shap: ShapMatrix
    embedding: Embedding2D
    assignment: ClusterAssignment
    quality: ClusterQuality
    timings: dict
    rows: np.ndarray | None = None  # explained row indices when subsampled


def _rows_for(n, cfg: ExplanationConfig):
    if cfg.sample_size is None or cfg.sample_size >= n:
        return None
    rng = np.random.default_rng(cfg.embedding.seed)
    return np.sort(rng.choice(n, size=cfg.sample_size, replace=False))


def explanation_space(model: ForestModel, X, cfg: ExplanationConfig | None = None) -> ExplanationSpace:
    """SHAP -> 2D embedding -> clustering -> quality record for rows ``X``."""
    cfg = cfg or ExplanationConfig()
    X = np.asarray(X, dtype=np.float64)
    rows = _rows_for(len(X), cfg)
    if rows is not None:
        X = X[rows]
    timings = {}
    t0 = time.perf_counter()
    shap = shap_values(model, X)
    timings["shap"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    values = shap.values
    degenerate = len(values) > 0 and not np.any(values - values[0])
    if degenerate:
        # every row explained identically: one point in explanation space
        emb = Embedding2D(np.zeros((len(values), 2)), cfg.embedding.method,
                          cfg.embedding.to_dict(), cfg.embedding.seed)
    else:
        emb = embed_2d(shap, cfg.embedding)
    timings["embedding"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pts = emb.points
    if degenerate:
        assignment = ClusterAssignment(np.zeros(len(pts), dtype=np.int64), cfg.clustering,
                                       {"degenerate": True})
    elif cfg.clustering == clustering.DBSCAN:
        eps = cfg.eps if cfg.eps is not None else clustering.auto_eps(pts, cfg.min_pts)
        assignment = clustering.dbscan(pts, eps, cfg.min_pts)
    else:
        ks = [k for k in cfg.k_range if 2 <= k <= len(pts) - 1]
        k = clustering.select_k(pts, ks, method=cfg.clustering, seed=cfg.embedding.seed)
        assignment = clustering.cluster_k(pts, k, cfg.clustering, seed=cfg.embedding.seed)
    quality = clustering.quality(assignment, pts)
    timings["clustering"] = time.perf_counter() - t0
    return ExplanationSpace(shap, emb, assignment, quality, timings, rows)


@dataclass(frozen=True)
class ScalConfig:
    patience: int = 3
    noise_bonus: float = 0.01
    accept_threshold: float = 1e-3
    gamma_seed: float = 0.001
    gamma_factor: float = 10.0
    max_total_iterations: int = 50
    noise_rule: str = BEST_LACKS_NOISE
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise RefineError("patience must be >= 1")
        if self.noise_bonus < 0:
            raise RefineError("noise_bonus must be >= 0")
        if not self.accept_threshold > 0:
            raise RefineError("accept_threshold must be > 0")
        if not self.gamma_factor > 1:
            raise RefineError("gamma_factor must be > 1")
        if self.max_total_iterations < 0:
            raise RefineError("max_total_iterations must be >= 0")
        if self.noise_rule not in NOISE_RULES:
            raise RefineError(f"noise_rule must be one of {NOISE_RULES}")

    def to_dict(self):
        return asdict(self)


@dataclass
class ScalTraceStep:
    iteration: int
    max_depth: int
    gamma: float
    silhouette: float | None
    delta_s: float
    noise_bonus: float
    loss: float
    accepted: bool
    patience: int
    num_clusters: int
    noise_present: bool
    timings: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d.pop("timings")
        return d


@dataclass
class ScalResult:
    model: ForestModel
    hyperparameters: Hyperparameters
    trace: list
    baseline_model: ForestModel
    baseline_quality: ClusterQuality
    final_quality: ClusterQuality
    baseline_space: ExplanationSpace
    final_space: ExplanationSpace
    baseline_timings: dict = field(default_factory=dict)

    @property
    def n_accepted(self):
        return sum(s.accepted for s in self.trace)


def _score(q: ClusterQuality):
    return UNDEFINED_SILHOUETTE if q.silhouette is None else q.silhouette


def _noise_term(cfg: ScalConfig, best: ClusterQuality, candidate: ClusterQuality):
    if cfg.noise_rule == BEST_LACKS_NOISE:
        return cfg.noise_bonus if not best.noise_present else 0.0
    if cfg.noise_rule == CANDIDATE_HAS_NOISE:
        return cfg.noise_bonus if candidate.noise_present else 0.0
    return 0.0


def refine(ds: Dataset, hp: Hyperparameters, cfg: ScalConfig | None = None,
           explanation: ExplanationConfig | None = None, observer=None) -> ScalResult:
    """Adapt ``max_depth`` and ``gamma`` of ``hp`` on the training set ``ds``.

    ``observer``, if given, is called as ``observer(step, best_model)`` after
    every adaptation step (and once with ``step=None`` for the baseline).
    A candidate with fewer than two clusters has an undefined silhouette and
    is scored as -1; its trace entry records ``silhouette=None``.
    """
    cfg = cfg or ScalConfig()
    explanation = explanation or ExplanationConfig()
    if hp.max_depth < 1:
        raise ModelError("max_depth must be >= 1")

    t_base = time.perf_counter()
    model = fit(ds, hp)
    fit_time = time.perf_counter() - t_base
    space = explanation_space(model, ds.features, explanation)
    baseline_timings = {"fit": fit_time, **space.timings, "total": time.perf_counter() - t_base}
    baseline_model, baseline_space = model, space
    best_s = _score(space.quality)
    if observer is not None:
        observer(None, model)

    adaptive = hp.with_(max_depth=hp.max_depth - 1)
    trace = []
    patience = 0
    iteration = 0
    while patience < cfg.patience and iteration < cfg.max_total_iterations:
        if adaptive.max_depth < 1:
            break
        iteration += 1
        t_step = time.perf_counter()
        t0 = t_step
        candidate = fit(ds, adaptive)
        fit_time = time.perf_counter() - t0
        cand_space = explanation_space(candidate, ds.features, explanation)
        s_new = _score(cand_space.quality)

        t0 = time.perf_counter()
        delta = s_new - best_s
        bonus = _noise_term(cfg, space.quality, cand_space.quality)
        loss = delta + bonus
        accepted = loss >= cfg.accept_threshold
        tried = adaptive
        if accepted:
            model, space, best_s = candidate, cand_space, s_new
            if adaptive.gamma == 0:
                adaptive = adaptive.with_(gamma=cfg.gamma_seed)
            else:
                adaptive = adaptive.with_(gamma=adaptive.gamma * cfg.gamma_factor)
            patience = 0
        else:
            adaptive = adaptive.with_(max_depth=adaptive.max_depth - 1, gamma=hp.gamma)
            patience += 1
        adapt_time = time.perf_counter() - t0

        step = ScalTraceStep(
            iteration=iteration, max_depth=int(tried.max_depth), gamma=float(tried.gamma),
            silhouette=cand_space.quality.silhouette, delta_s=float(delta),
            noise_bonus=float(bonus), loss=float(loss), accepted=bool(accepted),
            patience=patience, num_clusters=cand_space.quality.num_clusters,
            noise_present=cand_space.quality.noise_present,
            timings={"fit": fit_time, **cand_space.timings, "adapt": adapt_time,
                     "step_total": time.perf_counter() - t_step},
        )
        trace.append(step)
        logger.info("step %d depth=%d gamma=%g S'=%s loss=%.5f %s", iteration, tried.max_depth,
                    tried.gamma, step.silhouette, loss, "accept" if accepted else "reject")
        if observer is not None:
            observer(step, model)

    return ScalResult(model, model.hyperparameters, trace, baseline_model,
                      baseline_space.quality, space.quality, baseline_space, space,
                      baseline_timings)


def _metrics(model, ds, scaler: TargetScaler | None):
    m = evaluate(model, ds)
    if scaler is not None and ds.task != CLASSIFICATION:
        yhat = scaler.inverse(predict(model, ds.features))
        y = scaler.inverse(ds.target)
        m["rmse_original"] = float(np.sqrt(np.mean((y - yhat) ** 2)))
    return m


def _model_block(model, quality, train, test, scaler):
    return {
        "hyperparameters": model.hyperparameters.to_dict(),
        "train": {"noise_present": quality.noise_present, "silhouette": quality.silhouette,
                  "num_clusters": quality.num_clusters, **_metrics(model, train, scaler)},
        "test": {"noise_present": None, "silhouette": None, **_metrics(model, test, scaler)},
    }


def compare(train: Dataset, test: Dataset, hp: Hyperparameters, cfg: ScalConfig | None = None,
            explanation: ExplanationConfig | None = None, scaler: TargetScaler | None = None,
            result: ScalResult | None = None) -> dict:
    """Baseline-vs-adapted record shaped like the AHT/SCAL comparison table.

    Silhouette and noise flag are reported for the training split only.
    """
    if result is None:
        result = refine(train, hp, cfg, explanation)
    return {
        "task": train.task,
        "aht": _model_block(result.baseline_model, result.baseline_quality, train, test, scaler),
        "scal": _model_block(result.model, result.final_quality, train, test, scaler),
        "trace": [s.to_dict() for s in result.trace],
    }


def data_error_flag(result: ScalResult) -> bool:
    """True when every explanation space seen, baseline included, has exactly one cluster."""
    if result.baseline_quality.num_clusters != 1:
        return False
    return all(step.num_clusters == 1 for step in result.trace)
