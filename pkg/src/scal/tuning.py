"""Staged grid search used as the automated-tuning baseline."""

from __future__ import annotations

import logging
import math

import numpy as np

from .data import CLASSIFICATION, Dataset
from .gbdt import LOGISTIC, SQUARED_ERROR, Hyperparameters, fit

logger = logging.getLogger(__name__)

MIN_ROWS = 50

DEPTH_GRID = tuple(range(3, 11))
MIN_CHILD_WEIGHT_GRID = (1.0, 5.0, 10.0)
GAMMA_GRID = (0.0, 0.1, 1.0)
SAMPLE_GRID = (0.8, 1.0)
ETA_GRID = (0.05, 0.1, 0.3)

SEARCH_ROUNDS = 100
MAX_ROUNDS = 1000
PATIENCE = 20


class TuningError(ValueError):
    pass


def chronological_split(ds: Dataset, valid_fraction=0.2):
    """Last ``valid_fraction`` of rows (in time order) become validation."""
    n = ds.n_rows
    order = np.argsort(ds.timestamps, kind="stable")
    cut = n - max(1, int(round(valid_fraction * n)))
    train_mask = np.zeros(n, dtype=bool)
    train_mask[order[:cut]] = True
    return ds.subset(train_mask), ds.subset(~train_mask)


def _key(loss, hp):
    # ties favour shallower, then less regularized-by-gamma candidates
    return (loss, hp.max_depth, hp.gamma)


def _val_loss(model):
    return min(model.eval_loss)


def tune(ds: Dataset, seed=0, search_rounds=SEARCH_ROUNDS, max_rounds=MAX_ROUNDS,
         patience=PATIENCE, depth_grid=DEPTH_GRID) -> Hyperparameters:
    """Pick hyperparameters by staged search on a chronological 80/20 split.

    Stages run in order and each fixes the winner of the previous one:
    depth x min_child_weight, then gamma, then subsample x colsample, then
    eta with the round count set by early stopping. Candidates in the first
    three stages are scored by their best validation loss within
    ``search_rounds`` boosting rounds.
    """
    if ds.n_rows < MIN_ROWS:
        raise TuningError(f"tuning needs at least {MIN_ROWS} rows, got {ds.n_rows}")
    objective = LOGISTIC if ds.task == CLASSIFICATION else SQUARED_ERROR
    train, valid = chronological_split(ds)
    base = Hyperparameters(objective=objective, seed=seed, n_rounds=search_rounds, eta=0.1)

    def score(hp):
        model = fit(train, hp, eval_set=valid)
        return _val_loss(model)

    def best_of(candidates):
        scored = [(_key(score(hp), hp), i, hp) for i, hp in enumerate(candidates)]
        scored.sort(key=lambda t: (t[0], t[1]))
        return scored[0][2], scored[0][0][0]

    stage1 = [base.with_(max_depth=d, min_child_weight=w)
              for d in depth_grid for w in MIN_CHILD_WEIGHT_GRID]
    best, loss = best_of(stage1)
    logger.info("stage 1: depth=%d mcw=%g loss=%.6g", best.max_depth, best.min_child_weight, loss)

    best, loss = best_of([best.with_(gamma=g) for g in GAMMA_GRID])
    logger.info("stage 2: gamma=%g loss=%.6g", best.gamma, loss)

    best, loss = best_of([best.with_(subsample=s, colsample=c)
                          for s in SAMPLE_GRID for c in SAMPLE_GRID])
    logger.info("stage 3: subsample=%g colsample=%g loss=%.6g", best.subsample, best.colsample, loss)

    results = []
    for i, eta in enumerate(ETA_GRID):
        hp = best.with_(eta=eta, n_rounds=max_rounds)
        model = fit(train, hp, eval_set=valid, early_stopping_rounds=patience)
        rounds = max(1, model.best_iteration or 1)
        results.append(((_key(_val_loss(model), hp), i), hp.with_(n_rounds=rounds)))
    results.sort(key=lambda t: t[0])
    best = results[0][1]
    logger.info("stage 4: eta=%g rounds=%d", best.eta, best.n_rounds)
    if not math.isfinite(results[0][0][0][0]):
        raise TuningError("non-finite validation loss")
    return best
