"""Synthetic hourly consumption with a train/test distribution shift.

The base load follows a daily and weekly occupancy profile plus a heating
response to outside temperature. The training window additionally carries a
schedule quirk, an interaction between hour, weekday and temperature, that
is absent after the shift. At test time the load level is multiplied,
deviations from the mean are rescaled, and the quirk is replaced by
``pattern_change`` times a broadened daytime profile.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .data import RawSeries


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticShiftSpec:
    n_train: int = 1200
    n_test: int = 600
    n_features: int = 3
    daily_amplitude: float = 2.0
    weekly_amplitude: float = 0.2
    temperature_effect: float = 0.05
    quirk_amplitude: float = 0.5
    multiplier: float = 1.4
    variance_multiplier: float = 1.0
    pattern_change: float = 0.2
    noise: float = 0.25
    level: float = 1.0
    base_load: float = 0.1
    start: str = "2019-01-01"
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 200 or self.n_test < 200:
            raise SynthError("n_train and n_test must be >= 200")
        if not (self.multiplier > 0 and self.variance_multiplier > 0):
            raise SynthError("multipliers must be > 0")
        if self.n_features < 0:
            raise SynthError("n_features must be >= 0")
        if self.base_load < 0:
            raise SynthError("base_load must be >= 0")
        if self.noise < 0:
            raise SynthError("noise must be >= 0")

    def to_dict(self):
        return asdict(self)


def _daily(hour, width=1.0):
    # occupancy bump centred at 13:00
    return np.exp(-0.5 * ((hour - 13.0) / (3.5 * width)) ** 2)


def generate(spec: SyntheticShiftSpec):
    """Return ``(train, test)`` RawSeries, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_test
    ts = pd.date_range(spec.start, periods=n, freq="h")
    hour = ts.hour.to_numpy().astype(float)
    dow = ts.dayofweek.to_numpy()
    weekend = (dow >= 5).astype(float)

    ar = np.zeros(n)
    shocks = rng.normal(scale=1.0, size=n)
    for i in range(1, n):
        ar[i] = 0.7 * ar[i - 1] + shocks[i]
    temperature = 8.0 + 4.0 * np.sin(2 * np.pi * (hour - 9.0) / 24.0) + 1.5 * ar
    heating = np.maximum(16.0 - temperature, 0.0)

    occupancy = spec.daily_amplitude * _daily(hour) * (1.0 - 0.7 * weekend)
    weekly = spec.weekly_amplitude * (1.0 - weekend)
    base = spec.level * (spec.base_load + occupancy + weekly + spec.temperature_effect * heating)

    exogenous = {"temperature": temperature}
    extra = rng.normal(size=(n, spec.n_features))
    for j in range(spec.n_features):
        exogenous[f"sensor_{j}"] = extra[:, j]

    schedule = ((hour >= 6) & (hour <= 9) & (dow == 1) & (temperature < 8.0)).astype(float)
    if spec.n_features:
        schedule = schedule + 0.5 * np.sin(hour * dow) * (extra[:, 0] > 0.5)
    quirk = spec.quirk_amplitude * spec.level * schedule
    noise = rng.normal(scale=spec.noise * spec.level, size=n)

    is_test = np.arange(n) >= spec.n_train
    y = base + noise
    # the quirk reshapes the training profile without moving its level
    y[~is_test] += quirk[~is_test] - quirk[~is_test].mean()

    shifted = base[is_test] * spec.multiplier
    centre = shifted.mean()
    shifted = centre + (shifted - centre) * spec.variance_multiplier
    broad = spec.level * spec.multiplier * (_daily(hour[is_test], 1.6) - _daily(hour[is_test]))
    shifted = shifted + spec.pattern_change * (broad - broad.mean())
    y[is_test] = shifted + noise[is_test] * spec.multiplier

    def part(mask):
        return RawSeries(ts.to_numpy()[mask], y[mask], {},
                         {k: v[mask] for k, v in exogenous.items()}, entity=f"synthetic-{spec.seed}")

    return part(~is_test), part(is_test)


def write_csv(series: RawSeries, path):
    frame = pd.DataFrame({"timestamp": pd.DatetimeIndex(series.timestamps).strftime("%Y-%m-%dT%H:%M:%S")})
    frame["consumption"] = [repr(float(v)) for v in series.values]
    for name, col in series.exogenous.items():
        frame[name] = [repr(float(v)) for v in col]
    frame.to_csv(path, index=False, lineterminator="\n")


def schema_for(series: RawSeries):
    return {"timestamp": "timestamp", "target": "consumption",
            "exogenous": list(series.exogenous)}


def write_dataset(spec: SyntheticShiftSpec, out_dir):
    """Write ``train.csv`` and ``test.csv`` under ``out_dir``; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    train, test = generate(spec)
    paths = (os.path.join(out_dir, "train.csv"), os.path.join(out_dir, "test.csv"))
    write_csv(train, paths[0])
    write_csv(test, paths[1])
    return paths
