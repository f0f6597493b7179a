import pytest

from scal.config import ConfigError, load, parse_lines


def test_parse_and_apply(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# demo\n"
        "seed = 7\n"
        "synth.multiplier = 1.2   # trailing comment\n"
        "scal.patience = 2\n"
        "scal.noise_rule = off\n"
        "embedding.n_neighbors = 10\n"
        "clustering.algorithm = kmeans\n"
        "clustering.k_range = 2, 3, 4\n"
        "clustering.eps = 0.5\n"
        "model.max_depth = 3\n"
        "data.exogenous = temp, wind\n"
        "output.dir = somewhere\n"
    )
    cfg = load(str(path))
    assert cfg.seed == 7 and cfg.synth.seed == 7 and cfg.explanation.embedding.seed == 7
    assert cfg.synth.multiplier == 1.2
    assert cfg.scal.patience == 2 and cfg.scal.noise_rule == "off"
    assert cfg.explanation.embedding.n_neighbors == 10
    assert cfg.explanation.clustering == "kmeans"
    assert cfg.explanation.k_range == (2, 3, 4)
    assert cfg.explanation.eps == 0.5
    assert cfg.fixed_hyperparameters().max_depth == 3
    assert cfg.schema["exogenous"] == ["temp", "wind"]
    assert cfg.out_dir == "somewhere"


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 1\noutput.dir = a\n")
    cfg = load(str(path), ["scal.patience=5"], seed=4, out_dir="b")
    assert (cfg.seed, cfg.scal.seed, cfg.out_dir, cfg.scal.patience) == (4, 4, "b", 5)


@pytest.mark.parametrize("lines", [["nonsense"], ["scal.nope = 1"], ["model.depth = 3"],
                                   ["clustering.algorithm = spectral"], ["data.source = s3"],
                                   ["data.source = csv"], ["scal.patience = 0"],
                                   ["synth.multiplier = -2"]])
def test_bad_configs(lines):
    with pytest.raises((ConfigError, ValueError)):
        load(None, lines)


def test_missing_paths(tmp_path):
    with pytest.raises(ConfigError):
        load(str(tmp_path / "none.cfg"))
    with pytest.raises(ConfigError):
        load(None, ["data.source = csv", f"data.train = {tmp_path}/x.csv",
                    f"data.test = {tmp_path}/y.csv"])


def test_parse_lines_skips_comments():
    assert parse_lines(["", "# c", "a.b = c = d"]) == [("a.b", "c = d")]
