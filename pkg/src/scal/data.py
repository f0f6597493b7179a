"""Ingestion, repair and featurization of hourly consumption series."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

REGRESSION = "regression"
CLASSIFICATION = "binary-classification"

CALENDAR_FEATURES = ("hour", "dow", "month", "is_weekend")


class DataError(ValueError):
    pass


@dataclass
class RawSeries:
    """One entity's time series before featurization.

    ``values`` and every array in ``exogenous`` are aligned with
    ``timestamps``; missing entries are NaN.
    """

    timestamps: np.ndarray
    values: np.ndarray
    static_attributes: dict = field(default_factory=dict)
    exogenous: dict = field(default_factory=dict)
    entity: str | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[ns]")
        self.values = np.asarray(self.values, dtype=float)
        self.exogenous = {k: np.asarray(v, dtype=float) for k, v in self.exogenous.items()}
        n = len(self.timestamps)
        if len(self.values) != n:
            raise DataError("values length does not match timestamps")
        for name, col in self.exogenous.items():
            if len(col) != n:
                raise DataError(f"exogenous column {name!r} length does not match timestamps")
        if n > 1 and not np.all(np.diff(self.timestamps.astype(np.int64)) > 0):
            raise DataError("non-increasing timestamps")

    def __len__(self):
        return len(self.timestamps)


@dataclass
class Dataset:
    features: np.ndarray
    target: np.ndarray
    timestamps: np.ndarray
    feature_names: list
    task: str = REGRESSION

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[ns]")
        self.feature_names = list(self.feature_names)
        if self.features.ndim != 2:
            raise DataError("features must be a 2D matrix")
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise DataError("dataset needs at least one row and one feature")
        if len(self.target) != n or len(self.timestamps) != n:
            raise DataError("target/timestamps length does not match features")
        if len(self.feature_names) != d:
            raise DataError("feature_names length does not match feature count")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.target))):
            raise DataError("dataset contains missing or non-finite values")
        if self.task == CLASSIFICATION and not np.all(np.isin(self.target, (0.0, 1.0))):
            raise DataError("binary-classification target must be 0/1")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise DataError(f"unknown task {self.task!r}")

    @property
    def n_rows(self):
        return self.features.shape[0]

    def subset(self, mask):
        return Dataset(self.features[mask], self.target[mask], self.timestamps[mask],
                       self.feature_names, self.task)


@dataclass(frozen=True)
class TargetScaler:
    mean: float
    std: float

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def inverse(self, y):
        return np.asarray(y, dtype=float) * self.std + self.mean


def _numeric(col: pd.Series) -> np.ndarray:
    return pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)


def _series_from_frame(df, schema, entity=None):
    ts_col = schema["timestamp"]
    ts = pd.to_datetime(df[ts_col], errors="raise").to_numpy(dtype="datetime64[ns]")
    values = _numeric(df[schema["target"]])
    exogenous = {}
    for name in schema.get("exogenous", ()):
        if name not in df.columns:
            raise DataError(f"missing exogenous column {name!r}")
        exogenous[name] = _numeric(df[name])
    static = {}
    for name in schema.get("static", ()):
        if name not in df.columns:
            raise DataError(f"missing static column {name!r}")
        first = df[name].dropna()
        if first.empty:
            continue
        value = first.iloc[0]
        try:
            static[name] = float(value)
        except (TypeError, ValueError):
            static[name] = str(value)
    return RawSeries(ts, values, static, exogenous, entity=entity)


def _read_frame(path, schema):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=["", "NaN"])
    if "timestamp" not in schema or schema["timestamp"] not in df.columns:
        raise DataError("no timestamp column")
    if "target" not in schema or schema["target"] not in df.columns:
        raise DataError("no target column")
    if len(df) == 0:
        raise DataError("zero rows")
    return df


def load_csv(path, schema) -> RawSeries:
    """Read a single-entity CSV.

    ``schema`` maps roles to column names: ``timestamp`` and ``target`` are
    required, ``exogenous`` and ``static`` are optional lists of columns.
    Cells that fail numeric parsing become NaN.
    """
    df = _read_frame(path, schema)
    return _series_from_frame(df, schema)


def load_entities(path, schema) -> dict:
    """Read a multi-entity CSV keyed by the ``entity`` schema role.

    Returns a dict entity id -> RawSeries, in first-appearance order.
    """
    df = _read_frame(path, schema)
    if "entity" not in schema:
        return {"0": _series_from_frame(df, schema, entity="0")}
    col = schema["entity"]
    out = {}
    for key in pd.unique(df[col]):
        part = df[df[col] == key].reset_index(drop=True)
        out[str(key)] = _series_from_frame(part, schema, entity=str(key))
    return out


def _fill_linear(t, v):
    ok = np.isfinite(v)
    if ok.all():
        return v.copy()
    # np.interp clamps to the end values, which is the boundary nearest-value rule
    return np.interp(t, t[ok], v[ok])


def preprocess(raw: RawSeries) -> RawSeries:
    """Mark negative consumption as missing, then fill gaps linearly in time."""
    values = raw.values.copy()
    values[values < 0] = np.nan
    if not np.isfinite(values).any():
        raise DataError("no valid (non-missing, non-negative) values")
    t = raw.timestamps.astype(np.int64).astype(float)
    values = _fill_linear(t, values)
    exogenous = {}
    for name, col in raw.exogenous.items():
        if not np.isfinite(col).any():
            raise DataError(f"exogenous column {name!r} has no valid values")
        exogenous[name] = _fill_linear(t, col)
    return replace(raw, values=values, exogenous=exogenous)


def calendar_features(timestamps) -> np.ndarray:
    idx = pd.DatetimeIndex(np.asarray(timestamps, dtype="datetime64[ns]"))
    dow = idx.dayofweek.to_numpy()
    return np.column_stack([
        idx.hour.to_numpy(),
        dow,
        idx.month.to_numpy(),
        (dow >= 5).astype(int),
    ]).astype(float)


def featurize(raw: RawSeries, categories=None, task=REGRESSION) -> Dataset:
    """Build the feature matrix: calendar, exogenous, then static attributes.

    Parameters
    ----------
    raw : RawSeries
        Preprocessed series.
    categories : dict, optional
        Known levels for each string-valued static attribute, e.g.
        ``{"purpose": ["Office", "University"]}``. Unlisted attributes are
        encoded against their own single level.
    task : str
        ``"regression"`` or ``"binary-classification"``.
    """
    categories = categories or {}
    n = len(raw)
    blocks = [calendar_features(raw.timestamps)]
    names = list(CALENDAR_FEATURES)
    for name, col in raw.exogenous.items():
        blocks.append(col.reshape(-1, 1))
        names.append(name)
    for name, value in raw.static_attributes.items():
        if isinstance(value, str):
            levels = list(categories.get(name, [value]))
            if value not in levels:
                raise DataError(f"category {value!r} not among levels for {name!r}")
            onehot = np.zeros((n, len(levels)))
            onehot[:, levels.index(value)] = 1.0
            blocks.append(onehot)
            names.extend(f"{name}={lvl}" for lvl in levels)
        else:
            blocks.append(np.full((n, 1), float(value)))
            names.append(name)
    X = np.hstack(blocks)
    return Dataset(X, raw.values, raw.timestamps, names, task)


def time_split(ds: Dataset, boundary):
    """Rows strictly before ``boundary`` train, the rest test."""
    boundary = np.datetime64(pd.Timestamp(boundary).to_datetime64(), "ns")
    before = ds.timestamps < boundary
    if not before.any():
        raise DataError("empty train")
    if before.all():
        raise DataError("empty test")
    return ds.subset(before), ds.subset(~before)


def standardize_target(train: Dataset, test: Dataset):
    if train.task != REGRESSION:
        raise DataError("target standardization applies to regression only")
    mean = float(np.mean(train.target))
    std = float(np.std(train.target))
    if std == 0.0:
        raise DataError("zero train target std")
    scaler = TargetScaler(mean, std)
    return (replace(train, target=scaler.transform(train.target)),
            replace(test, target=scaler.transform(test.target)),
            scaler)


def load_household_power(path) -> RawSeries:
    """Read the public minute-level household power file and average to hours.

    The file is ';'-separated with ``Date`` (d/m/Y), ``Time`` and
    ``Global_active_power``; '?' marks missing readings. Voltage and
    reactive power are kept as exogenous inputs.
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    df = pd.read_csv(path, sep=";", na_values=["?", ""], low_memory=False)
    ts = pd.to_datetime(df["Date"] + " " + df["Time"], format="%d/%m/%Y %H:%M:%S")
    cols = ["Global_active_power", "Global_reactive_power", "Voltage"]
    frame = df[cols].apply(pd.to_numeric, errors="coerce")
    frame.index = ts
    hourly = frame.resample("1h").mean()
    return RawSeries(
        hourly.index.to_numpy(dtype="datetime64[ns]"),
        hourly["Global_active_power"].to_numpy(),
        {},
        {"reactive_power": hourly["Global_reactive_power"].to_numpy(),
         "voltage": hourly["Voltage"].to_numpy()},
        entity="household",
    )
