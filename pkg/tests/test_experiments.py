import csv
import json
import os

import numpy as np
import pandas as pd
import pytest

from scal import experiments
from scal.cli import main
from scal.config import load
from scal.experiments import BuildingProfileTable, ExperimentError, group_profiles

FAST = ["synth.n_train=300", "synth.n_test=200", "model.max_depth=4", "model.n_rounds=20",
        "embedding.n_epochs=40"]


def fast_cfg(tmp_path, *extra, name="out"):
    return load(None, FAST + list(extra), out_dir=str(tmp_path / name))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_compare_regression_table(tmp_path):
    cfg = fast_cfg(tmp_path)
    report = experiments.cmd_compare(cfg)
    rows = read_csv(os.path.join(cfg.out_dir, "comparison.csv"))
    assert rows[0] == ["entity", "split", "AHT_noise", "AHT_SS", "AHT_RMSE", "AHT_r2",
                       "SCAL_noise", "SCAL_SS", "SCAL_RMSE", "SCAL_r2"]
    train, test = rows[1], rows[2]
    assert train[1] == "train" and train[2] in ("yes", "no") and train[3] != "-"
    assert test[1] == "test" and test[2:4] == ["-", "-"] and test[6:8] == ["-", "-"]
    entity = next(iter(report["entities"]))
    emb = read_csv(os.path.join(cfg.out_dir, "embeddings", f"{entity}_scal.csv"))
    assert emb[0] == ["x", "y", "label"] and len(emb) == 301
    trace = open(os.path.join(cfg.out_dir, f"trace_{entity}.jsonl")).read().splitlines()
    assert len(trace) == len(report["entities"][entity]["trace"])


def test_compare_is_byte_deterministic(tmp_path):
    a = fast_cfg(tmp_path, name="a")
    b = fast_cfg(tmp_path, name="b")
    experiments.cmd_compare(a)
    experiments.cmd_compare(b)
    for root, _, files in os.walk(a.out_dir):
        for f in files:
            pa = os.path.join(root, f)
            pb = os.path.join(b.out_dir, os.path.relpath(pa, a.out_dir))
            assert open(pa, "rb").read() == open(pb, "rb").read(), f


def _binary_csvs(tmp_path):
    from scal.synth import SyntheticShiftSpec, generate, write_csv
    train, test = generate(SyntheticShiftSpec(n_train=300, n_test=200))
    cut = np.median(train.values)
    paths = []
    for name, part in (("train", train), ("test", test)):
        part.values = (part.values > cut).astype(float)
        path = str(tmp_path / f"{name}.csv")
        write_csv(part, path)
        paths.append(path)
    return paths


def test_compare_classification_accuracy_columns(tmp_path):
    train, test = _binary_csvs(tmp_path)
    cfg = load(None, FAST + ["data.source=csv", f"data.train={train}", f"data.test={test}",
                             "data.exogenous=temperature,sensor_0", "task=binary-classification"],
               out_dir=str(tmp_path / "cls"))
    experiments.cmd_compare(cfg)
    rows = read_csv(os.path.join(cfg.out_dir, "comparison.csv"))
    assert rows[0] == ["entity", "split", "AHT_noise", "AHT_SS", "AHT_Acc%",
                       "SCAL_noise", "SCAL_SS", "SCAL_Acc%"]
    assert 0 <= float(rows[2][4]) <= 100


def test_group_profiles_archetypes(rng):
    arche = rng.normal(size=(3, 6)) * 5
    profiles = np.vstack([a + rng.normal(scale=0.05, size=(5, 6)) for a in arche])
    names = [f"b{i}" for i in range(15)]
    groups, coords = group_profiles(BuildingProfileTable(names, profiles, list("abcdef")))
    assert coords.shape == (15, 2)
    assert len(set(groups)) == 3
    for k in range(3):
        assert len(set(groups[5 * k:5 * k + 5])) == 1


def test_group_profiles_identical_and_errors():
    table = BuildingProfileTable(["a", "b", "c"], np.ones((3, 4)), list("wxyz"))
    groups, _ = group_profiles(table)
    np.testing.assert_array_equal(groups, 0)
    with pytest.raises(ExperimentError):
        group_profiles(BuildingProfileTable(["a"], np.ones((1, 4)), list("wxyz")))


def test_group_command_end_to_end(tmp_path):
    cfg = fast_cfg(tmp_path, "synth.entities=3")
    report = experiments.cmd_group_entities(cfg)
    assert len(report["groups"]) == 3
    rows = read_csv(os.path.join(cfg.out_dir, "groups.csv"))
    assert rows[0] == ["entity", "group", "x", "y"] and len(rows) == 4
    with pytest.raises(ExperimentError):
        experiments.cmd_group_entities(fast_cfg(tmp_path, name="single"))


def _constant_target_csvs(tmp_path):
    from scal.synth import SyntheticShiftSpec, generate, write_csv
    paths = []
    for name, part in zip(("train", "test"), generate(SyntheticShiftSpec(n_train=300, n_test=200))):
        part.values = np.full(len(part), 3.0)
        path = str(tmp_path / f"const_{name}.csv")
        write_csv(part, path)
        paths.append(path)
    return paths


def test_detect_data_error(tmp_path):
    train, test = _constant_target_csvs(tmp_path)
    cfg = load(None, FAST + ["data.source=csv", f"data.train={train}", f"data.test={test}",
                             "data.exogenous=temperature,sensor_0"], out_dir=str(tmp_path / "d"))
    report = experiments.cmd_detect_data_error(cfg)
    assert all(r["data_error"] for r in report.values())
    normal = experiments.cmd_detect_data_error(fast_cfg(tmp_path, name="n"))
    assert not any(r["data_error"] for r in normal.values())
    assert os.path.exists(os.path.join(cfg.out_dir, "diagnosis.json"))


def test_ablation(tmp_path):
    cfg = fast_cfg(tmp_path, "scal.max_total_iterations=6")
    report = experiments.cmd_ablation(cfg)
    rows = read_csv(os.path.join(cfg.out_dir, "ablation.csv"))
    assert rows[0] == ["entity", "backend", "step", "test_r2"]
    assert {r[1] for r in rows[1:]} == {"dbscan", "kmeans", "agglomerative"}
    steps = [json.loads(line) for line in open(os.path.join(cfg.out_dir, "ablation_steps.jsonl"))]
    assert not any(s["noise_present"] for s in steps if s["backend"] == "kmeans")
    summary = next(iter(report.values()))
    assert summary["best_backend"] in ("dbscan", "kmeans", "agglomerative")
    assert all(n <= 6 for n in summary["steps"].values())


def test_pick_backend_tie_break():
    traj = {"dbscan": [{"test_r2": 0.5}, {"test_r2": 0.7}],
            "kmeans": [{"test_r2": 0.7}],
            "agglomerative": [{"test_r2": 0.6}]}
    assert experiments.pick_backend(traj) == "kmeans"


def test_timing_table(tmp_path):
    cfg = fast_cfg(tmp_path)
    table = experiments.cmd_timing(cfg)
    assert list(table) == list(experiments.TIMING_ROWS + experiments.TIMING_TOTALS)
    assert all(v >= 0 for v in table.values())
    parts = sum(table[k] for k in experiments.TIMING_ROWS[1:])
    total = table[experiments.TIMING_TOTALS[1]]
    assert abs(total - parts) <= 0.05 * total + 0.05
    rows = read_csv(os.path.join(cfg.out_dir, "timing.csv"))
    assert rows[0] == ["step", "seconds"] and len(rows) == 9


def test_cli_pipeline(tmp_path, capsys):
    out = str(tmp_path / "cli")
    common = ["--out-dir", out] + sum((["--set", s] for s in FAST), [])
    assert main(["train"] + common) == 0
    model = [f for f in os.listdir(out) if f.startswith("model_")][0]
    assert main(["explain", "--model", os.path.join(out, model)] + common) == 0
    assert main(["embed", "--shap", os.path.join(out, "shap.csv")] + common) == 0
    assert main(["cluster", "--embedding", os.path.join(out, "embedding.csv")] + common) == 0
    quality = json.load(open(os.path.join(out, "quality.json")))
    assert set(quality) >= {"M", "silhouette", "noise_present"}
    assert main(["rules"] + common) == 0
    assert os.path.exists(os.path.join(out, "rules.txt"))
    assert main(["group", "--format", "json", "--set", "synth.entities=2"] + common) == 0
    assert json.load(open(os.path.join(out, "groups.json")))[0].keys() == {"entity", "group", "x", "y"}


def test_cli_errors(tmp_path, capsys):
    assert main(["compare", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["synth", "--set", "synth.n_train=5", "--out-dir", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code != 0


def test_cli_synth_seed_before_or_after_verb(tmp_path):
    assert main(["--seed", "5", "synth", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(["synth", "--seed", "5", "--out-dir", str(tmp_path / "b")]) == 0
    a = pd.read_csv(tmp_path / "a" / "train.csv")
    b = pd.read_csv(tmp_path / "b" / "train.csv")
    pd.testing.assert_frame_equal(a, b)
