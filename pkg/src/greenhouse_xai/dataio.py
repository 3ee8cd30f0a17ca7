"""CSV ingestion, preprocessing, windowing, scaling, and data synthesis.

Tables are immutable-by-convention numpy matrices with a missing-value
mask. Timestamps are epoch seconds (float64); ISO-8601 inputs are parsed
to the same representation. All stochastic paths take an explicit seed.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed input data or schema."""


@dataclass
class TimeSeriesTable:
    """Fixed-period multivariate series with a missing mask."""

    timestamps: np.ndarray          # (N,) epoch seconds, strictly increasing
    feature_names: list[str]
    values: np.ndarray              # (N, F) float64
    missing_mask: np.ndarray        # (N, F) bool, True = missing

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        n, f = self.values.shape
        if len(self.feature_names) != f:
            raise DataError(
                f"{len(self.feature_names)} names for {f} value columns"
            )
        if self.timestamps.shape != (n,):
            raise DataError("timestamps length does not match values")
        if self.missing_mask.shape != self.values.shape:
            raise DataError("missing mask shape does not match values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.feature_names.index(name)]

    def select(self, names: list[str]) -> "TimeSeriesTable":
        idx = [self.feature_names.index(n) for n in names]
        return TimeSeriesTable(self.timestamps, list(names),
                               self.values[:, idx], self.missing_mask[:, idx])


@dataclass
class WindowedDataset:
    """Rolling-window samples; label m belongs to the window's final row."""

    samples: np.ndarray             # (M, w, F)
    labels: np.ndarray              # (M,) ints in [0, K)
    window: int
    feature_names: list[str]
    end_times: np.ndarray | None = None   # (M,) timestamp of each final row

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass
class ScalingParams:
    """Per-feature standardization fitted on the training split only."""

    feature_names: list[str]        # retained features
    mean: np.ndarray
    std: np.ndarray
    dropped: list[str] = field(default_factory=list)

    def transform(self, ds: WindowedDataset) -> WindowedDataset:
        idx = [ds.feature_names.index(n) for n in self.feature_names]
        scaled = (ds.samples[:, :, idx] - self.mean) / self.std
        return WindowedDataset(scaled, ds.labels.copy(), ds.window,
                               list(self.feature_names),
                               None if ds.end_times is None else ds.end_times.copy())

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump({"feature_names": self.feature_names,
                       "mean": self.mean.tolist(),
                       "std": self.std.tolist(),
                       "dropped": self.dropped}, fh, indent=2)
            fh.write("\n")

    @staticmethod
    def from_json(path) -> "ScalingParams":
        with open(path) as fh:
            raw = json.load(fh)
        return ScalingParams(list(raw["feature_names"]),
                             np.asarray(raw["mean"], dtype=float),
                             np.asarray(raw["std"], dtype=float),
                             list(raw.get("dropped", [])))


# -- schema and CSV -------------------------------------------------------


def load_schema(path) -> dict:
    with open(path) as fh:
        schema = json.load(fh)
    for key in ("timestamp", "sensors", "actuators"):
        if key not in schema:
            raise DataError(f"schema missing key '{key}'")
    return schema


def save_schema(path, timestamp: str, sensors: list[str], actuators: list[str]):
    with open(path, "w") as fh:
        json.dump({"timestamp": timestamp, "sensors": list(sensors),
                   "actuators": list(actuators)}, fh, indent=2)
        fh.write("\n")


def _parse_timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        iso = text.replace("Z", "+00:00")
        dt = datetime.fromisoformat(iso)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.timestamp()
    except ValueError:
        raise DataError(f"unparseable timestamp {text!r}")


def _validate_timestamps(ts: np.ndarray):
    diffs = np.diff(ts)
    bad = np.where(diffs <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"timestamps not strictly increasing: row {i + 1} "
            f"({ts[i + 1]}) follows {ts[i]}"
        )
    if diffs.size:
        med = float(np.median(diffs))
        if np.abs(diffs - med).max() > 0.01 * med:
            worst = int(np.abs(diffs - med).argmax())
            raise DataError(
                f"non-uniform sampling: step at row {worst + 1} is "
                f"{diffs[worst]} s vs typical {med} s (>1% off)"
            )


def load_csv(path, schema: dict) -> tuple[TimeSeriesTable, TimeSeriesTable]:
    """Read one CSV into aligned sensor and actuator tables.

    Unparseable or empty value cells become masked-missing; a bad
    timestamp or a missing column is an error.
    """
    ts_col = schema["timestamp"]
    sensor_cols = list(schema["sensors"])
    actuator_cols = list(schema["actuators"])

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no rows")
        missing = [c for c in [ts_col] + sensor_cols + actuator_cols
                   if c not in header]
        if missing:
            raise DataError(f"missing column(s): {', '.join(missing)}")
        col_index = {name: header.index(name) for name in header}
        rows = [r for r in reader if r]
    if not rows:
        raise DataError("no rows")

    n = len(rows)
    ts = np.empty(n)
    all_cols = sensor_cols + actuator_cols
    vals = np.zeros((n, len(all_cols)))
    mask = np.zeros((n, len(all_cols)), dtype=bool)
    for i, row in enumerate(rows):
        ts[i] = _parse_timestamp(row[col_index[ts_col]])
        for j, name in enumerate(all_cols):
            cell = row[col_index[name]].strip()
            if cell == "":
                mask[i, j] = True
                continue
            try:
                vals[i, j] = float(cell)
            except ValueError:
                mask[i, j] = True
    _validate_timestamps(ts)

    ns = len(sensor_cols)
    sensors = TimeSeriesTable(ts, sensor_cols, vals[:, :ns], mask[:, :ns])
    actuators = TimeSeriesTable(ts.copy(), actuator_cols,
                                vals[:, ns:], mask[:, ns:])
    return sensors, actuators


def write_csv(path, sensors: TimeSeriesTable, actuators: TimeSeriesTable,
              timestamp_name: str = "timestamp"):
    """Write aligned tables back to one CSV. Floats use repr so a reload
    is bit-exact; masked cells become empty."""
    if not np.array_equal(sensors.timestamps, actuators.timestamps):
        raise DataError("sensor and actuator tables are not aligned")
    header = [timestamp_name] + sensors.feature_names + actuators.feature_names
    vals = np.hstack([sensors.values, actuators.values])
    mask = np.hstack([sensors.missing_mask, actuators.missing_mask])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(sensors.n_rows):
            row = [repr(float(sensors.timestamps[i]))]
            row += ["" if mask[i, j] else repr(float(vals[i, j]))
                    for j in range(vals.shape[1])]
            writer.writerow(row)


# -- preprocessing ---------------------------------------------------------


def preprocess(table: TimeSeriesTable, drop_all_missing_columns: bool = True
               ) -> TimeSeriesTable:
    """Forward-then-backward fill per column; drop (and log) columns that
    are entirely missing."""
    all_missing = table.missing_mask.all(axis=0)
    if all_missing.any():
        names = [n for n, m in zip(table.feature_names, all_missing) if m]
        if not drop_all_missing_columns:
            raise DataError(f"column(s) entirely missing: {', '.join(names)}")
        log.warning("dropping entirely-missing column(s): %s", ", ".join(names))
    keep = ~all_missing
    names = [n for n, k in zip(table.feature_names, keep) if k]
    vals = table.values[:, keep].copy()
    mask = table.missing_mask[:, keep]

    n = vals.shape[0]
    idx = np.arange(n)[:, None]
    # forward fill: latest valid row index at or before each row
    fwd = np.where(~mask, idx, -1)
    np.maximum.accumulate(fwd, axis=0, out=fwd)
    # backward fill for leading gaps
    bwd = np.where(~mask, idx, n)
    bwd = np.minimum.accumulate(bwd[::-1], axis=0)[::-1]
    src = np.where(fwd >= 0, fwd, bwd)
    cols = np.broadcast_to(np.arange(vals.shape[1]), vals.shape)
    filled = vals[src, cols]
    return TimeSeriesTable(table.timestamps.copy(), names, filled,
                           np.zeros_like(filled, dtype=bool))


def generate_rolling_window(table: TimeSeriesTable, labels, w: int
                            ) -> WindowedDataset:
    """Slide a length-w window over the table; sample m covers rows
    [m, m+w) and takes the label of its final row."""
    labels = np.asarray(labels, dtype=np.int64)
    n = table.n_rows
    if not 1 <= w <= n:
        raise DataError(f"window {w} not in [1, {n}]")
    if labels.shape != (n,):
        raise DataError(f"need {n} labels, got {labels.shape}")
    if table.missing_mask.any():
        raise DataError("windowing requires a preprocessed (gap-free) table")
    m = n - w + 1
    samples = np.lib.stride_tricks.sliding_window_view(
        table.values, w, axis=0).transpose(0, 2, 1).copy()
    return WindowedDataset(samples, labels[w - 1:].copy(), w,
                           list(table.feature_names),
                           table.timestamps[w - 1:].copy())


def scale_data(train: WindowedDataset, *others: WindowedDataset
               ) -> tuple[list[WindowedDataset], ScalingParams]:
    """Standardize every dataset with the training split's per-feature
    mean/std (population convention). Zero-variance features are dropped
    with a warning, never silently."""
    if train.n_samples == 0:
        raise DataError("empty training split")
    mean = train.samples.mean(axis=(0, 1))
    std = train.samples.std(axis=(0, 1))
    keep = std > 0
    dropped = [n for n, k in zip(train.feature_names, keep) if not k]
    if dropped:
        log.warning("dropping zero-variance feature(s): %s", ", ".join(dropped))
    names = [n for n, k in zip(train.feature_names, keep) if k]
    if not names:
        raise DataError("all features have zero variance")
    params = ScalingParams(names, mean[keep], std[keep], dropped)
    return [params.transform(d) for d in (train, *others)], params


def split_data(dataset: WindowedDataset, ratio: float
               ) -> tuple[WindowedDataset, WindowedDataset]:
    """Temporal split: first ceil(ratio*M) windows train, rest test."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"ratio must be in (0,1), got {ratio}")
    m = dataset.n_samples
    if m == 0:
        raise DataError("empty dataset")
    n_train = math.ceil(ratio * m)
    if n_train == 0 or n_train == m:
        raise DataError(f"ratio {ratio} leaves an empty split for M={m}")

    def take(sl):
        return WindowedDataset(
            dataset.samples[sl].copy(), dataset.labels[sl].copy(),
            dataset.window, list(dataset.feature_names),
            None if dataset.end_times is None else dataset.end_times[sl].copy())

    return take(slice(None, n_train)), take(slice(n_train, None))


def write_labels_csv(path, labels: np.ndarray):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def load_labels_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("no rows")
        rows = [int(r[1]) for r in reader if r]
    if not rows:
        raise DataError("no rows")
    return np.asarray(rows, dtype=np.int64)


# -- synthetic data --------------------------------------------------------


@dataclass
class SynthConfig:
    n_steps: int = 5000
    n_features: int = 10
    n_classes: int = 4
    seed: int = 0
    noise_sigma: float = 0.18
    window: int = 12
    n_actuators: int = 8
    period_s: float = 300.0
    start_time: float = 0.0

    def validate(self):
        if self.n_steps < 10 * self.n_features:
            raise DataError(
                f"n_steps={self.n_steps} < 10*n_features={10 * self.n_features}"
            )
        if self.n_classes < 2 or self.n_features < 3:
            raise DataError("need >=2 classes and >=3 features")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")


@dataclass
class SynthData:
    sensors: TimeSeriesTable
    actuators: TimeSeriesTable
    labels: np.ndarray
    causal_features: list[str]      # ground truth for XAI validation
    causal_indices: np.ndarray
    class_counts: np.ndarray        # histogram from the generating rule
    rule_accuracy: float            # generating rule applied to noisy obs
    thresholds: np.ndarray
    lag: int


def synth_dataset(config: SynthConfig) -> SynthData:
    """Seeded smooth sensor processes with a deterministic piecewise label
    rule over three designated causal features at lags {0, w/2}.

    The clean signal drives the labels; observations add AR(1) noise, so
    the rule re-applied to the noisy observations gives an accuracy
    ceiling proxy (== 1.0 when noise_sigma == 0). Actuator columns are
    class-indicator activations under per-actuator affine maps, which
    makes the clustering and simulation stages runnable end to end.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, f, k = config.n_steps, config.n_features, config.n_classes

    periods = rng.uniform(60.0, 480.0, size=f)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=f)
    t = np.arange(n)[:, None]
    base = np.sin(2.0 * np.pi * t / periods + phases)

    rho = 0.8
    innov = rng.normal(0.0, 1.0, size=(n, f)) * config.noise_sigma
    ar = np.zeros((n, f))
    for i in range(1, n):
        ar[i] = rho * ar[i - 1] + innov[i]
    values = base + ar

    causal = np.sort(rng.choice(f, size=3, replace=False))
    lag = config.window // 2

    def rule_score(x):
        c0, c1, c2 = causal
        lagged = np.empty(n)
        lagged[:lag] = x[0, c1]
        lagged[lag:] = x[:n - lag, c1]
        return x[:, c0] + lagged - x[:, c2]

    score = rule_score(base)
    qs = np.quantile(score, np.arange(1, k) / k)
    labels = np.digitize(score, qs)
    noisy_labels = np.digitize(rule_score(values), qs)
    rule_acc = float(np.mean(noisy_labels == labels))
    counts = np.bincount(labels, minlength=k)

    sensor_names = [f"sens_{i:02d}" for i in range(f)]
    timestamps = config.start_time + config.period_s * np.arange(n)
    sensors = TimeSeriesTable(timestamps, sensor_names, values,
                              np.zeros_like(values, dtype=bool))

    n_act = config.n_actuators
    groups = np.arange(n_act) % k
    act = (labels[:, None] == groups[None, :]).astype(float)
    act += rng.normal(0.0, 0.05, size=act.shape)
    scale = rng.uniform(0.5, 2.0, size=n_act)
    offset = rng.uniform(-1.0, 1.0, size=n_act)
    act = act * scale + offset
    act_names = [f"act_{i:02d}" for i in range(n_act)]
    actuators = TimeSeriesTable(timestamps.copy(), act_names, act,
                                np.zeros_like(act, dtype=bool))

    return SynthData(sensors, actuators, labels,
                     [sensor_names[i] for i in causal], causal,
                     counts, rule_acc, qs, lag)
