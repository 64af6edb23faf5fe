"""Records, CSV ingestion and synthetic quality-tiered stream generation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import clone

TIERS = ("low", "medium", "high")
MISSING_TOKENS = {"", "na", "nan", "null", "none", "n/a", "-"}


@dataclass(frozen=True, slots=True)
class Record:
    record_id: int
    features: tuple
    true_value: float
    timestamp: Optional[str] = None


@dataclass(frozen=True)
class StreamSpec:
    stream_id: str
    quality_tier: str = "medium"
    noise_sigma: float = 0.0
    corruption_rate: float = 0.0
    lag: int = 0

    def __post_init__(self):
        if self.quality_tier not in TIERS:
            raise ValueError(f"unknown quality tier {self.quality_tier!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")
        if self.lag < 0:
            raise ValueError("lag must be nonnegative")


@dataclass(frozen=True)
class MarketTypeSpec:
    n_low: int = 0
    n_medium: int = 0
    n_high: int = 0

    def __post_init__(self):
        if min(self.n_low, self.n_medium, self.n_high) < 0 or self.total == 0:
            raise ValueError("market type needs nonnegative tier counts and at least one agent")

    @property
    def total(self) -> int:
        return self.n_low + self.n_medium + self.n_high


@dataclass(frozen=True)
class TargetShape:
    """Seasonal target: two sinusoids, a linear trend and Gaussian noise."""

    amplitude: float = 2.0
    period: float = 52.0
    amplitude2: float = 0.5
    period2: float = 13.0
    trend: float = 0.001
    noise_sigma: float = 0.05

    def clean(self, t: np.ndarray) -> np.ndarray:
        return (self.amplitude * np.sin(2 * np.pi * t / self.period)
                + self.amplitude2 * np.sin(2 * np.pi * t / self.period2)
                + self.trend * t)


def _parse_cell(text: str) -> float:
    if text.strip().lower() in MISSING_TOKENS:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


def load_csv(path, target_column: str, feature_columns: Optional[Sequence[str]] = None,
             timestamp_column: Optional[str] = None) -> list:
    """Read records from a UTF-8 CSV with a header row.

    Unparseable feature cells become NaN (missing). A missing or unparseable
    target is an error naming the file line. ``feature_columns`` defaults to
    every column other than the target and timestamp.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if target_column not in header:
            raise ValueError(f"{path}: target column {target_column!r} not in header")
        if feature_columns is None:
            feature_columns = [c for c in header if c not in (target_column, timestamp_column)]
        unknown = [c for c in feature_columns if c not in header]
        if unknown:
            raise ValueError(f"{path}: feature columns not in header: {unknown}")
        records = []
        for i, row in enumerate(reader):
            line = i + 2
            y = _parse_cell(row[target_column] or "")
            if math.isnan(y):
                raise ValueError(f"{path}: line {line}: missing or invalid target {row[target_column]!r}")
            features = tuple(_parse_cell(row[c] or "") for c in feature_columns)
            ts = row.get(timestamp_column) if timestamp_column else None
            records.append(Record(i, features, y, ts))
    return records


def synth_generate(n_records: int, streams: Sequence[StreamSpec], seed: int,
                   target: TargetShape = TargetShape()) -> list:
    """Generate a seasonal target and one noisy, possibly lagged and corrupted feature per stream.

    Stream ``i`` reads ``y(t - lag_i) + N(0, sigma_i)``; with probability
    ``corruption_rate_i`` the reading is replaced by a uniform draw over the
    range of the target. The result depends only on the arguments.
    """
    if n_records < 1:
        raise ValueError("n_records must be at least 1")
    rng = np.random.default_rng(seed)
    max_lag = max((s.lag for s in streams), default=0)
    t = np.arange(-max_lag, n_records, dtype=float)
    y = target.clean(t) + rng.normal(0.0, target.noise_sigma, size=t.size)
    lo, hi = float(y.min()), float(y.max())
    cols = []
    for s in streams:
        start = max_lag - s.lag
        x = y[start:start + n_records].copy()
        noise = rng.normal(0.0, 1.0, size=n_records)
        corrupt = rng.random(n_records) < s.corruption_rate
        outliers = rng.uniform(lo, hi, size=n_records)
        x += s.noise_sigma * noise
        x[corrupt] = outliers[corrupt]
        cols.append(x)
    X = np.column_stack(cols) if cols else np.empty((n_records, 0))
    truth = y[max_lag:]
    return [Record(i, tuple(X[i].tolist()), float(truth[i])) for i in range(n_records)]


def records_to_arrays(records: Sequence[Record]) -> tuple:
    X = np.array([r.features for r in records], dtype=float)
    y = np.array([r.true_value for r in records], dtype=float)
    return X, y


def three_means_1d(values: Sequence[float], n_iter: int = 100) -> np.ndarray:
    """Cluster 1-D values into 3 groups; centers start at min, median and max.

    Returns labels 0, 1, 2 ordered by center (0 = smallest).
    """
    v = np.asarray(values, dtype=float)
    centers = np.array([v.min(), float(np.median(v)), v.max()])
    labels = np.zeros(v.size, dtype=int)
    for _ in range(n_iter):
        labels = np.argmin(np.abs(v[:, None] - centers[None, :]), axis=1)
        new = np.array([v[labels == k].mean() if np.any(labels == k) else centers[k]
                        for k in range(3)])
        if np.array_equal(new, centers):
            break
        centers = new
    rank = np.argsort(np.argsort(centers, kind="stable"), kind="stable")
    return rank[labels]


def stream_maes(records: Sequence[Record], reference_learner) -> np.ndarray:
    """Prequential MAE of a fresh copy of ``reference_learner`` on each stream alone."""
    X, y = records_to_arrays(records)
    maes = []
    for j in range(X.shape[1]):
        model = clone(reference_learner)
        pred = model.prequential(X[:, j:j + 1], y)
        maes.append(float(np.mean(np.abs(pred - y))))
    return np.array(maes)


def classify_streams(records: Sequence[Record], streams: Sequence[StreamSpec],
                     reference_learner) -> dict:
    """Label each stream high/medium/low by clustering reference-learner MAEs."""
    if len(records) < 30:
        raise ValueError("need at least 30 records to classify streams")
    maes = stream_maes(records, reference_learner)
    return tier_labels([s.stream_id for s in streams], maes)


def tier_labels(stream_ids: Sequence[str], maes: Sequence[float]) -> dict:
    if len(np.unique(maes)) < 3:
        return {sid: "medium" for sid in stream_ids}
    names = ("high", "medium", "low")
    return {sid: names[k] for sid, k in zip(stream_ids, three_means_1d(maes))}


# shipped presets

@dataclass(frozen=True)
class Preset:
    name: str
    n_records: int
    target: TargetShape
    streams: tuple
    description: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def market_type(self) -> MarketTypeSpec:
        counts = {t: sum(1 for s in self.streams if s.quality_tier == t) for t in TIERS}
        return MarketTypeSpec(counts["low"], counts["medium"], counts["high"])

    def tier_map(self) -> dict:
        return {s.stream_id: s.quality_tier for s in self.streams}

    def generate(self, seed: int, n_records: Optional[int] = None) -> list:
        return synth_generate(n_records or self.n_records, self.streams, seed, self.target)


PRESET_NAMES = ("type1", "type2", "type3", "type4")


def preset_from_dict(d: dict) -> Preset:
    streams = []
    for tier in TIERS:
        spec = d.get("tiers", {}).get(tier)
        if not spec:
            continue
        lagged = dict(spec.get("lagged", {}))
        n_lagged = int(lagged.pop("count", 0))
        for i in range(int(spec["count"])):
            params = dict(noise_sigma=spec.get("noise_sigma", 0.0),
                          corruption_rate=spec.get("corruption_rate", 0.0),
                          lag=spec.get("lag", 0))
            if i < n_lagged:
                params.update(lagged)
            streams.append(StreamSpec(f"{tier}_{i:02d}", tier, **params))
    return Preset(
        name=d["name"],
        n_records=int(d.get("n_records", 500)),
        target=TargetShape(**d.get("target", {})),
        streams=tuple(streams),
        description=d.get("description", ""),
    )


def load_preset(name_or_path) -> Preset:
    """Load a shipped preset by name (``type1`` .. ``type4``) or a preset JSON file."""
    if str(name_or_path) in PRESET_NAMES:
        text = resources.files("acpm.presets").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text(encoding="utf-8")
    return preset_from_dict(json.loads(text))
