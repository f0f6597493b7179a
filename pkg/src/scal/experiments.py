"""Experiment commands behind the CLI.

Every ``cmd_*`` function takes an :class:`ExperimentConfig`, writes its
report files under ``cfg.out_dir`` and returns the in-memory report. Apart
from the timing command, outputs depend only on the config and seed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import re
import time

import numpy as np
import pandas as pd

from . import clustering, data
from .config import ExperimentConfig
from .data import CLASSIFICATION, REGRESSION, Dataset, RawSeries
from .embedding import EmbeddingError, pca_project
from .gbdt import LOGISTIC, SQUARED_ERROR, evaluate, fit
from .refiner import ScalResult, compare, data_error_flag, refine
from .synth import write_dataset
from .treeshap import mean_profile, shap_values
from .tuning import tune

logger = logging.getLogger(__name__)

TIMING_ROWS = (
    "Tuning hyperparameters",
    "Training the model",
    "SHAP values calculation",
    "Dimension reduction",
    "Clustering",
    "Adapting hyperparameters",
)
TIMING_TOTALS = (
    "Running time in the initialization step",
    "Running time in each adaption step",
)
ABLATION_BACKENDS = (clustering.DBSCAN, clustering.KMEANS, clustering.AGGLOMERATIVE)
HOUSEHOLD_TRAIN_YEARS = 3


class ExperimentError(ValueError):
    pass


@dataclasses.dataclass
class EntityData:
    entity: str
    train: Dataset
    test: Dataset
    scaler: data.TargetScaler | None = None


@dataclasses.dataclass
class BuildingProfileTable:
    entities: list
    profiles: np.ndarray
    feature_names: list

    def __post_init__(self):
        self.profiles = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        if len(self.entities) != len(self.profiles):
            raise ExperimentError("one profile row per entity required")

    def to_csv(self, path):
        frame = pd.DataFrame(self.profiles, columns=self.feature_names)
        frame.insert(0, "entity", self.entities)
        frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


# ---------------------------------------------------------------- loading


def _drop_missing_target(raw: RawSeries) -> RawSeries:
    keep = np.isfinite(raw.values)
    return RawSeries(raw.timestamps[keep], raw.values[keep], raw.static_attributes,
                     {k: v[keep] for k, v in raw.exogenous.items()}, raw.entity)


def _prepare(raw: RawSeries, task) -> RawSeries:
    # class labels are never interpolated
    if task == CLASSIFICATION:
        raw = _drop_missing_target(raw)
    return data.preprocess(raw)


def _categories(raws):
    levels = {}
    for raw in raws:
        for name, value in raw.static_attributes.items():
            if isinstance(value, str):
                levels.setdefault(name, set()).add(value)
    return {name: sorted(v) for name, v in levels.items()}


def _finish(entity, train, test, cfg: ExperimentConfig) -> EntityData:
    if cfg.task == REGRESSION and cfg.standardize:
        if np.std(train.target) > 0:
            train, test, scaler = data.standardize_target(train, test)
            return EntityData(entity, train, test, scaler)
        logger.warning("entity %s: constant train target, left unscaled", entity)
    return EntityData(entity, train, test, None)


def _featurize_pair(entity, train_raw, test_raw, cats, cfg):
    tr = data.featurize(_prepare(train_raw, cfg.task), cats, cfg.task)
    te = data.featurize(_prepare(test_raw, cfg.task), cats, cfg.task)
    return _finish(entity, tr, te, cfg)


def load_entity_data(cfg: ExperimentConfig) -> list:
    """Featurized train/test pairs, one per entity, in a stable order."""
    out = []
    if cfg.source == "synthetic":
        from .synth import generate
        for i in range(cfg.synth_entities):
            spec = dataclasses.replace(cfg.synth, seed=cfg.synth.seed + i)
            train_raw, test_raw = generate(spec)
            out.append(_featurize_pair(train_raw.entity, train_raw, test_raw, {}, cfg))
    elif cfg.source == "household_power":
        raw = _prepare(data.load_household_power(cfg.path), cfg.task)
        ds = data.featurize(raw, task=cfg.task)
        boundary = cfg.boundary or (pd.Timestamp(ds.timestamps[0])
                                    + pd.DateOffset(years=HOUSEHOLD_TRAIN_YEARS))
        train, test = data.time_split(ds, boundary)
        out.append(_finish("household", train, test, cfg))
    elif cfg.path is not None:
        raws = data.load_entities(cfg.path, cfg.schema)
        cats = _categories(raws.values())
        for entity, raw in raws.items():
            ds = data.featurize(_prepare(raw, cfg.task), cats, cfg.task)
            train, test = data.time_split(ds, cfg.boundary)
            out.append(_finish(entity, train, test, cfg))
    else:
        train_raws = data.load_entities(cfg.train_path, cfg.schema)
        test_raws = data.load_entities(cfg.test_path, cfg.schema)
        if list(train_raws) != list(test_raws):
            raise ExperimentError("train and test files list different entities")
        cats = _categories(list(train_raws.values()) + list(test_raws.values()))
        for entity in train_raws:
            out.append(_featurize_pair(entity, train_raws[entity], test_raws[entity], cats, cfg))
    if not out:
        raise ExperimentError("no entities found")
    return out


def hyperparameters_for(train: Dataset, cfg: ExperimentConfig):
    """Fixed ``model.*`` hyperparameters if configured, otherwise tuned ones."""
    fixed = cfg.fixed_hyperparameters()
    if fixed is None:
        return tune(train, seed=cfg.seed)
    objective = LOGISTIC if train.task == CLASSIFICATION else SQUARED_ERROR
    if "objective" not in cfg.model_overrides:
        fixed = fixed.with_(objective=objective)
    return fixed


# ---------------------------------------------------------------- writers


def _safe(name):
    return re.sub(r"[^A-Za-z0-9._-]", "_", str(name))


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.5f}"
    return str(v)


def _write_embedding(path, space):
    pts = space.embedding.points
    rows = [(f"{x:.10g}", f"{y:.10g}", int(lab))
            for (x, y), lab in zip(pts, space.assignment.labels)]
    _write_rows(path, ("x", "y", "label"), rows)


def _table(path, fmt, header, rows):
    if fmt == "json":
        _write_json(path + ".json", [dict(zip(header, r)) for r in rows])
    else:
        _write_rows(path + ".csv", header, rows)


# ---------------------------------------------------------------- compare


def comparison_rows(entity, record):
    """Table rows (entity, split, AHT..., SCAL...) for one comparison record."""
    classification = record["task"] == CLASSIFICATION
    rows = []
    for split in ("train", "test"):
        row = [entity, split]
        for model in ("aht", "scal"):
            block = record[model][split]
            silhouette = block["silhouette"]
            if split == "train" and silhouette is None:
                silhouette = "undefined"
            row += [_fmt(block["noise_present"]), _fmt(silhouette)]
            if classification:
                row.append(_fmt(block["accuracy"]))
            else:
                row += [_fmt(block["rmse"]), _fmt(block["r2"])]
        rows.append(row)
    return rows


def comparison_header(task):
    cols = ["entity", "split"]
    for model in ("AHT", "SCAL"):
        cols += [f"{model}_noise", f"{model}_SS"]
        cols += [f"{model}_Acc%"] if task == CLASSIFICATION else [f"{model}_RMSE", f"{model}_r2"]
    return cols


def cmd_compare(cfg: ExperimentConfig) -> dict:
    """AHT-vs-SCAL comparison per entity.

    Writes ``comparison.json``, ``comparison.csv``, ``trace_<entity>.jsonl``
    and ``embeddings/<entity>_{aht,scal}.csv`` (x, y, cluster label).
    """
    os.makedirs(os.path.join(cfg.out_dir, "embeddings"), exist_ok=True)
    report = {"seed": cfg.seed, "task": cfg.task, "entities": {}}
    rows = []
    for ent in load_entity_data(cfg):
        hp = hyperparameters_for(ent.train, cfg)
        result = refine(ent.train, hp, cfg.scal, cfg.explanation)
        record = compare(ent.train, ent.test, hp, cfg.scal, cfg.explanation, ent.scaler, result)
        record["entity"] = ent.entity
        record["tuned"] = hp.to_dict()
        report["entities"][ent.entity] = record
        rows += comparison_rows(ent.entity, record)
        name = _safe(ent.entity)
        _write_embedding(os.path.join(cfg.out_dir, "embeddings", f"{name}_aht.csv"),
                         result.baseline_space)
        _write_embedding(os.path.join(cfg.out_dir, "embeddings", f"{name}_scal.csv"),
                         result.final_space)
        with open(os.path.join(cfg.out_dir, f"trace_{name}.jsonl"), "w", encoding="utf-8",
                  newline="\n") as fh:
            for step in record["trace"]:
                fh.write(json.dumps(step) + "\n")
    _write_json(os.path.join(cfg.out_dir, "comparison.json"), report)
    _write_rows(os.path.join(cfg.out_dir, "comparison.csv"), comparison_header(cfg.task), rows)
    return report


# ---------------------------------------------------------------- grouping


def group_profiles(table: BuildingProfileTable, k_range=tuple(range(2, 11)), seed=0,
                   spread_tol=1e-12):
    """Group entities by mean SHAP profile.

    Returns ``(groups, coords)``: integer group ids in first-appearance order
    and 2D principal-axis coordinates of each profile.
    """
    P = table.profiles
    n = len(P)
    if n < 2:
        raise ExperimentError("grouping needs at least 2 entities")
    scale = max(1.0, float(np.abs(P).max()))
    if np.abs(P - P[0]).max() <= spread_tol * scale:
        return np.zeros(n, dtype=np.int64), np.zeros((n, 2))
    try:
        coords = pca_project(P)
    except EmbeddingError:
        return np.zeros(n, dtype=np.int64), np.zeros((n, 2))
    ks = [k for k in k_range if 2 <= k <= n - 1]
    if not ks:
        return np.arange(n, dtype=np.int64), coords
    k = clustering.select_k(coords, ks, method=clustering.KMEANS, seed=seed)
    groups = clustering.kmeans(coords, k, seed=seed).labels
    return np.asarray(groups, dtype=np.int64), coords


def profile_table(cfg: ExperimentConfig, entities=None) -> BuildingProfileTable:
    entities = entities if entities is not None else load_entity_data(cfg)
    names, profiles, features = [], [], None
    for ent in entities:
        hp = hyperparameters_for(ent.train, cfg)
        model = fit(ent.train, hp)
        shap = shap_values(model, ent.train.features)
        if features is not None and list(shap.feature_names) != features:
            raise ExperimentError(f"entity {ent.entity}: feature schema differs from the others")
        features = list(shap.feature_names)
        names.append(ent.entity)
        profiles.append(mean_profile(shap))
    return BuildingProfileTable(names, np.vstack(profiles), features)


def cmd_group_entities(cfg: ExperimentConfig, fmt="csv", table=None) -> dict:
    """Cluster entities by their mean SHAP profile; writes ``groups`` and ``profiles.csv``."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    table = table if table is not None else profile_table(cfg)
    if len(table.entities) < 2:
        raise ExperimentError("grouping needs at least 2 entities")
    groups, coords = group_profiles(table, cfg.explanation.k_range, cfg.seed)
    table.to_csv(os.path.join(cfg.out_dir, "profiles.csv"))
    rows = [(e, int(g), f"{x:.10g}", f"{y:.10g}")
            for e, g, (x, y) in zip(table.entities, groups, coords)]
    _table(os.path.join(cfg.out_dir, "groups"), fmt, ("entity", "group", "x", "y"), rows)
    return {"entities": list(table.entities), "groups": [int(g) for g in groups],
            "n_groups": int(len(np.unique(groups)))}


# ---------------------------------------------------------------- data error


def cmd_detect_data_error(cfg: ExperimentConfig) -> dict:
    """Flag entities whose explanation space stays a single cluster under refinement."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    report = {}
    for ent in load_entity_data(cfg):
        if ent.train.n_rows == 0:
            raise ExperimentError(f"entity {ent.entity}: empty explanation space")
        hp = hyperparameters_for(ent.train, cfg)
        result = refine(ent.train, hp, cfg.scal, cfg.explanation)
        report[ent.entity] = {
            "data_error": data_error_flag(result),
            "baseline": result.baseline_quality.to_dict(),
            "trace": [s.to_dict() for s in result.trace],
        }
    _write_json(os.path.join(cfg.out_dir, "diagnosis.json"), report)
    return report


# ---------------------------------------------------------------- ablation


def ablation_trajectories(ent: EntityData, hp, cfg: ExperimentConfig):
    """Per-backend list of step records; step 0 is the tuned baseline."""
    if ent.train.task != REGRESSION:
        raise ExperimentError("ablation reports test r2 and needs a regression task")
    out = {}
    for backend in ABLATION_BACKENDS:
        records = []

        def observe(step, best, records=records):
            r2 = evaluate(best, ent.test)["r2"]
            if step is None:
                records.append({"step": 0, "test_r2": r2})
            else:
                records.append({"step": step.iteration, "test_r2": r2,
                                "noise_present": step.noise_present,
                                "num_clusters": step.num_clusters, "accepted": step.accepted})

        expl = dataclasses.replace(cfg.explanation, clustering=backend)
        result = refine(ent.train, hp, cfg.scal, expl, observer=observe)
        records[0]["noise_present"] = result.baseline_quality.noise_present
        records[0]["num_clusters"] = result.baseline_quality.num_clusters
        out[backend] = records
    return out


def pick_backend(trajectories):
    """Highest final test r2, ties broken by fewer adaptation steps, then name order."""
    def key(item):
        name, recs = item
        return (-recs[-1]["test_r2"], len(recs) - 1, ABLATION_BACKENDS.index(name))
    return min(trajectories.items(), key=key)[0]


def cmd_ablation(cfg: ExperimentConfig, fmt="csv") -> dict:
    """Run refinement with each clustering backend and record test r2 per step."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    rows, report = [], {}
    with open(os.path.join(cfg.out_dir, "ablation_steps.jsonl"), "w", encoding="utf-8",
              newline="\n") as fh:
        for ent in load_entity_data(cfg):
            hp = hyperparameters_for(ent.train, cfg)
            traj = ablation_trajectories(ent, hp, cfg)
            for backend, recs in traj.items():
                for r in recs:
                    rows.append((ent.entity, backend, r["step"], f"{r['test_r2']:.6f}"))
                    fh.write(json.dumps({"entity": ent.entity, "backend": backend, **r}) + "\n")
            report[ent.entity] = {
                "best_backend": pick_backend(traj),
                "final_test_r2": {b: recs[-1]["test_r2"] for b, recs in traj.items()},
                "steps": {b: len(recs) - 1 for b, recs in traj.items()},
            }
    _table(os.path.join(cfg.out_dir, "ablation"), fmt, ("entity", "backend", "step", "test_r2"),
           rows)
    _write_json(os.path.join(cfg.out_dir, "ablation_summary.json"), report)
    return report


# ---------------------------------------------------------------- timing


def timing_table(tuning_time, result: ScalResult):
    """Average seconds per step plus initialization and per-adaptation totals.

    Per-step rows average over the adaptation steps, or over the baseline run
    when refinement stopped immediately.
    """
    keys = ("fit", "shap", "embedding", "clustering", "adapt")
    runs = [s.timings for s in result.trace] or [dict(result.baseline_timings, adapt=0.0)]
    avg = {k: float(np.mean([r.get(k, 0.0) for r in runs])) for k in keys}
    steps = [float(tuning_time)] + [avg[k] for k in keys]
    base = result.baseline_timings
    init = float(tuning_time) + base["total"]
    if result.trace:
        per_step = float(np.mean([s.timings["step_total"] for s in result.trace]))
    else:
        per_step = sum(avg[k] for k in keys)
    return list(zip(TIMING_ROWS + TIMING_TOTALS, steps + [init, per_step]))


def cmd_timing(cfg: ExperimentConfig, fmt="csv") -> dict:
    """Wall-clock time of each stage, averaged over entities."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    tables = []
    for ent in load_entity_data(cfg):
        t0 = time.perf_counter()
        hp = hyperparameters_for(ent.train, cfg)
        tuning_time = time.perf_counter() - t0 if cfg.fixed_hyperparameters() is None else 0.0
        result = refine(ent.train, hp, cfg.scal, cfg.explanation)
        tables.append(timing_table(tuning_time, result))
    labels = [label for label, _ in tables[0]]
    mean = [float(np.mean([t[i][1] for t in tables])) for i in range(len(labels))]
    rows = [(label, f"{v:.6f}") for label, v in zip(labels, mean)]
    _table(os.path.join(cfg.out_dir, "timing"), fmt, ("step", "seconds"), rows)
    return dict(zip(labels, mean))


# ---------------------------------------------------------------- synth


def cmd_synth(cfg: ExperimentConfig) -> dict:
    """Write ``train.csv`` / ``test.csv`` from the synthetic shift spec."""
    train_path, test_path = write_dataset(cfg.synth, cfg.out_dir)
    _write_json(os.path.join(cfg.out_dir, "spec.json"), cfg.synth.to_dict())
    return {"train": train_path, "test": test_path}


# ---------------------------------------------------------------- single steps


def cmd_train(cfg: ExperimentConfig) -> dict:
    """Fit one model per entity and save it as ``model_<entity>.json``."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = {}
    for ent in load_entity_data(cfg):
        hp = hyperparameters_for(ent.train, cfg)
        model = fit(ent.train, hp)
        path = os.path.join(cfg.out_dir, f"model_{_safe(ent.entity)}.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(model.to_json())
        out[ent.entity] = {"model": path, "train": evaluate(model, ent.train),
                           "test": evaluate(model, ent.test)}
    _write_json(os.path.join(cfg.out_dir, "train_metrics.json"), out)
    return out


def cmd_explain(cfg: ExperimentConfig, model_path) -> dict:
    """SHAP matrix of the training rows for a saved model (first entity)."""
    from .gbdt import ForestModel
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(model_path, encoding="utf-8") as fh:
        model = ForestModel.from_json(fh.read())
    ent = load_entity_data(cfg)[0]
    shap = shap_values(model, ent.train.features)
    path = os.path.join(cfg.out_dir, "shap.csv")
    shap.to_csv(path)
    return {"shap": path, "rows": int(shap.values.shape[0])}


def _read_matrix(path, drop=("base_value", "label")):
    frame = pd.read_csv(path)
    keep = [c for c in frame.columns if c not in drop]
    return frame[keep].to_numpy(dtype=float)


def cmd_embed(cfg: ExperimentConfig, shap_path) -> dict:
    """2D embedding of a SHAP CSV; writes ``embedding.csv``."""
    from .embedding import embed_2d
    os.makedirs(cfg.out_dir, exist_ok=True)
    emb = embed_2d(_read_matrix(shap_path), cfg.explanation.embedding)
    path = os.path.join(cfg.out_dir, "embedding.csv")
    _write_rows(path, ("x", "y"), [(f"{x:.10g}", f"{y:.10g}") for x, y in emb.points])
    return {"embedding": path, "rows": len(emb)}


def cmd_cluster(cfg: ExperimentConfig, embedding_path) -> dict:
    """Cluster an embedding CSV; writes labelled points and ``quality.json``."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    pts = _read_matrix(embedding_path)
    expl = cfg.explanation
    if expl.clustering == clustering.DBSCAN:
        eps = expl.eps if expl.eps is not None else clustering.auto_eps(pts, expl.min_pts)
        assignment = clustering.dbscan(pts, eps, expl.min_pts)
    else:
        ks = [k for k in expl.k_range if 2 <= k <= len(pts) - 1]
        k = clustering.select_k(pts, ks, method=expl.clustering, seed=cfg.seed)
        assignment = clustering.cluster_k(pts, k, expl.clustering, seed=cfg.seed)
    q = clustering.quality(assignment, pts)
    _write_rows(os.path.join(cfg.out_dir, "clusters.csv"), ("x", "y", "label"),
                [(f"{x:.10g}", f"{y:.10g}", int(lab)) for (x, y), lab in zip(pts, assignment.labels)])
    report = {"algorithm": assignment.algorithm, "params": assignment.params, **q.to_dict()}
    _write_json(os.path.join(cfg.out_dir, "quality.json"), report)
    return report


def cmd_rules(cfg: ExperimentConfig) -> dict:
    """Describe the SCAL explanation-space clusters of the first entity with rules."""
    from .rules import mine_rules
    os.makedirs(cfg.out_dir, exist_ok=True)
    ent = load_entity_data(cfg)[0]
    hp = hyperparameters_for(ent.train, cfg)
    space = refine(ent.train, hp, cfg.scal, cfg.explanation).final_space
    X = ent.train.features if space.rows is None else ent.train.features[space.rows]
    ruleset = mine_rules(X, space.assignment.labels, ent.train.feature_names, cfg.rules)
    with open(os.path.join(cfg.out_dir, "rules.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ruleset.to_text())
    with open(os.path.join(cfg.out_dir, "rules.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ruleset.to_json() + "\n")
    return {"n_rules": len(ruleset.rules)}
