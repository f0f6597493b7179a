import numpy as np
import pytest

from scal.synth import SynthError, SyntheticShiftSpec, generate, write_dataset


def _means(spec):
    train, test = generate(spec)
    return train.values, test.values


@pytest.mark.parametrize("seed", range(3))
def test_no_shift_control(seed):
    tr, te = _means(SyntheticShiftSpec(seed=seed, multiplier=1.0, pattern_change=0.0))
    se = np.sqrt(tr.var() / len(tr) + te.var() / len(te))
    assert abs(te.mean() - tr.mean()) < 2 * se


@pytest.mark.parametrize("seed", range(3))
def test_multiplier_moves_mean(seed):
    tr, te = _means(SyntheticShiftSpec(seed=seed, multiplier=1.5))
    assert te.mean() / tr.mean() == pytest.approx(1.5, rel=0.05)


def test_variance_multiplier():
    _, base = _means(SyntheticShiftSpec(seed=1, noise=0.0))
    _, wide = _means(SyntheticShiftSpec(seed=1, noise=0.0, variance_multiplier=2.0))
    assert wide.std() > 1.5 * base.std()


def test_byte_identical(tmp_path):
    spec = SyntheticShiftSpec(seed=9)
    a = write_dataset(spec, tmp_path / "a")
    b = write_dataset(spec, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()


def test_shapes_and_time_order():
    spec = SyntheticShiftSpec(n_train=300, n_test=200, n_features=2)
    train, test = generate(spec)
    assert (len(train), len(test)) == (300, 200)
    assert set(train.exogenous) == {"temperature", "sensor_0", "sensor_1"}
    assert train.timestamps[-1] < test.timestamps[0]


@pytest.mark.parametrize("bad", [{"multiplier": 0.0}, {"variance_multiplier": -1.0},
                                 {"n_train": 100}, {"n_test": 199}])
def test_invalid_spec(bad):
    with pytest.raises(SynthError):
        SyntheticShiftSpec(**bad)
