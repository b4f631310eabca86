"""Physiological data model and crisp stress characterization.

Holds the eight-parameter sleep sample type, the five-level stress scale,
the per-parameter characterization table, validation, crisp table-lookup
classification, synthetic dataset generation and CSV round-tripping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, Sequence

import numpy as np

FEATURE_NAMES = (
    "hours_slept",
    "snoring",
    "respiration",
    "heart_rate",
    "blood_oxygen",
    "eye_movement",
    "limb_movement",
    "body_temp",
)

CSV_FIELDS = (
    "hours_slept",
    "snoring_db",
    "respiration_bpm",
    "heart_bpm",
    "blood_oxygen_pct",
    "eye_movement",
    "limb_movement",
    "body_temp_f",
    "stress_level",
)

CSV_HEADER = ",".join(CSV_FIELDS)


class StressState(IntEnum):
    """Ordinal five-level stress scale, low to high."""

    LOW_NORMAL = 0
    MEDIUM_LOW = 1
    MEDIUM = 2
    MEDIUM_HIGH = 3
    HIGH = 4

    @property
    def label(self) -> str:
        return _STATE_LABELS[self]


_STATE_LABELS = {
    StressState.LOW_NORMAL: "Low/Normal",
    StressState.MEDIUM_LOW: "Medium Low",
    StressState.MEDIUM: "Medium",
    StressState.MEDIUM_HIGH: "Medium High",
    StressState.HIGH: "High",
}


@dataclass(frozen=True)
class SleepSample:
    """One observation of the eight monitored physiological parameters.

    Units: hours, decibels, breaths/minute, beats/minute, percent,
    eye-movement rate, limb-movement rate (dimensionless rates), degrees
    Fahrenheit.
    """

    hours_slept: float
    snoring: float
    respiration: float
    heart_rate: float
    blood_oxygen: float
    eye_movement: float
    limb_movement: float
    body_temp: float

    def as_tuple(self) -> tuple[float, ...]:
        return (
            self.hours_slept,
            self.snoring,
            self.respiration,
            self.heart_rate,
            self.blood_oxygen,
            self.eye_movement,
            self.limb_movement,
            self.body_temp,
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    @staticmethod
    def from_values(values: Sequence[float]) -> "SleepSample":
        if len(values) != 8:
            raise ValueError(f"expected 8 feature values, got {len(values)}")
        return SleepSample(*(float(v) for v in values))


@dataclass(frozen=True)
class FeatureRanges:
    """Per-level half-open value intervals [lo, hi) for one parameter.

    ``intervals[level]`` is the value band assigned to that stress level.
    The five bands tile a contiguous span of the value axis; the extreme
    band's written-open end is closed off with a documented cap so the
    synthetic generator stays on physiologic values.
    """

    name: str
    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.intervals) != 5:
            raise ValueError(f"{self.name}: need 5 intervals, got {len(self.intervals)}")
        for lo, hi in self.intervals:
            if not lo < hi:
                raise ValueError(f"{self.name}: empty interval [{lo}, {hi})")
        ordered = sorted(self.intervals, key=lambda iv: iv[0])
        for (_, hi), (lo, _) in zip(ordered, ordered[1:]):
            if hi != lo:
                raise ValueError(f"{self.name}: intervals not contiguous at {hi}/{lo}")
        los = [iv[0] for iv in self.intervals]
        if los != sorted(los) and los != sorted(los, reverse=True):
            raise ValueError(f"{self.name}: levels not monotone along the value axis")

    @property
    def ascending(self) -> bool:
        """True when higher values mean higher stress."""
        return self.intervals[0][0] < self.intervals[4][0]

    @property
    def span(self) -> tuple[float, float]:
        los = [iv[0] for iv in self.intervals]
        his = [iv[1] for iv in self.intervals]
        return min(los), max(his)

    def level_of(self, value: float) -> int:
        """Stress level whose band contains ``value``.

        Values past either end of the tiled span clamp to the extreme
        level on that side (0 on the low-stress side, 4 on the high).
        """
        for level, (lo, hi) in enumerate(self.intervals):
            if lo <= value < hi:
                return level
        below = value < self.span[0]
        if self.ascending:
            return 0 if below else 4
        return 4 if below else 0


@dataclass(frozen=True)
class RangeTable:
    """Characterization table: one FeatureRanges per physiological parameter."""

    features: tuple[FeatureRanges, ...]

    def __post_init__(self) -> None:
        if len(self.features) != 8:
            raise ValueError("table must cover exactly the 8 parameters")
        names = tuple(f.name for f in self.features)
        if names != FEATURE_NAMES:
            raise ValueError(f"feature order must be {FEATURE_NAMES}, got {names}")

    def feature(self, key: int | str) -> FeatureRanges:
        if isinstance(key, str):
            return self.features[FEATURE_NAMES.index(key)]
        return self.features[key]


def default_table() -> RangeTable:
    """Characterization of the five stress levels over the 8 parameters.

    Descending-written source rows are normalized to ascending [lo, hi)
    intervals. The written-open extreme rows are capped at 120 dB snoring,
    40 bpm respiration, 120 bpm heart rate, 70% blood-oxygen floor,
    eye rate 140, limb rate 30 and an 85 F temperature floor; the
    impossible negative-hours row becomes [0, 0.5).
    """
    return RangeTable(
        features=(
            FeatureRanges("hours_slept", ((7, 9), (5, 7), (2, 5), (0.5, 2), (0, 0.5))),
            FeatureRanges("snoring", ((40, 50), (50, 60), (60, 80), (80, 90), (90, 120))),
            FeatureRanges("respiration", ((16, 18), (18, 20), (20, 22), (22, 25), (25, 40))),
            FeatureRanges("heart_rate", ((50, 55), (55, 60), (60, 65), (65, 75), (75, 120))),
            FeatureRanges("blood_oxygen", ((95, 97), (92, 95), (90, 92), (88, 90), (70, 88))),
            FeatureRanges("eye_movement", ((60, 80), (80, 85), (85, 95), (95, 100), (100, 140))),
            FeatureRanges("limb_movement", ((4, 8), (8, 10), (10, 12), (12, 17), (17, 30))),
            FeatureRanges("body_temp", ((96, 99), (94, 96), (92, 94), (90, 92), (85, 90))),
        )
    )


DEFAULT_TABLE = default_table()


@dataclass(frozen=True)
class Violation:
    field: str
    reason: str

    def __str__(self) -> str:
        return f"{self.field}: {self.reason}"


def validate_sample(sample: SleepSample) -> list[Violation]:
    """Return field violations; an empty list means the sample is valid."""
    violations: list[Violation] = []
    for name, value in zip(FEATURE_NAMES, sample.as_tuple()):
        if not math.isfinite(value):
            violations.append(Violation(name, "must be a finite number"))
    if math.isfinite(sample.blood_oxygen) and not 0 < sample.blood_oxygen <= 100:
        violations.append(Violation("blood_oxygen", "must be in (0, 100]"))
    if math.isfinite(sample.hours_slept) and not 0 <= sample.hours_slept <= 24:
        violations.append(Violation("hours_slept", "must be in [0, 24]"))
    return violations


def parameter_level(param: int | str, value: float, table: RangeTable = DEFAULT_TABLE) -> int:
    """Stress level 0..4 of a single parameter reading."""
    if not math.isfinite(value):
        raise ValueError(f"{param}: value must be finite")
    return table.feature(param).level_of(value)


def parameter_levels(sample: SleepSample, table: RangeTable = DEFAULT_TABLE) -> list[int]:
    return [
        table.features[i].level_of(v) for i, v in enumerate(sample.as_tuple())
    ]


def classify_crisp(sample: SleepSample, table: RangeTable = DEFAULT_TABLE) -> StressState:
    """Median of the 8 per-parameter levels, ties resolved toward higher stress.

    With 8 levels the upper median (5th of the sorted values) is exactly
    the safety-first tie-break: equal middles agree with it and distinct
    middles resolve to the higher level.
    """
    levels = sorted(parameter_levels(sample, table))
    return StressState(levels[len(levels) // 2])


@dataclass(frozen=True)
class LabeledDataset:
    """Rows of (sample, label) with a train/test partition point.

    The first ``n_train`` rows form the training split, the rest the
    test split.
    """

    rows: tuple[tuple[SleepSample, StressState], ...]
    n_train: int

    def __post_init__(self) -> None:
        if not 0 <= self.n_train <= len(self.rows):
            raise ValueError("n_train out of range")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def train_rows(self) -> tuple[tuple[SleepSample, StressState], ...]:
        return self.rows[: self.n_train]

    @property
    def test_rows(self) -> tuple[tuple[SleepSample, StressState], ...]:
        return self.rows[self.n_train :]


def rows_to_arrays(
    rows: Iterable[tuple[SleepSample, StressState]]
) -> tuple[np.ndarray, np.ndarray]:
    """Stack rows into a feature matrix and an integer label vector."""
    rows = list(rows)
    if not rows:
        return np.zeros((0, 8)), np.zeros((0,), dtype=int)
    x = np.stack([s.as_array() for s, _ in rows])
    y = np.array([int(label) for _, label in rows], dtype=int)
    return x, y


DEFAULT_TRAIN_FRACTION = 13 / 15


def synth_dataset(
    n_per_class: int,
    seed: int,
    table: RangeTable = DEFAULT_TABLE,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
) -> LabeledDataset:
    """Generate a balanced synthetic dataset from the characterization table.

    Each class draws every feature uniformly inside that class's interval,
    so every generated row re-classifies to its own label. Deterministic
    under ``seed``; the default sizing (3000 per class) gives the
    15,000-row corpus split 13,000 / 2,000.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    rows: list[tuple[SleepSample, StressState]] = []
    for state in StressState:
        bounds = [f.intervals[state] for f in table.features]
        lows = np.array([b[0] for b in bounds])
        highs = np.array([b[1] for b in bounds])
        draws = rng.uniform(lows, highs, size=(n_per_class, 8))
        for row in draws:
            rows.append((SleepSample.from_values(row), state))
    order = rng.permutation(len(rows))
    shuffled = tuple(rows[i] for i in order)
    n_train = round(len(shuffled) * train_fraction)
    return LabeledDataset(rows=shuffled, n_train=n_train)


class CsvFormatError(ValueError):
    """Malformed dataset CSV; carries the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def write_csv(dataset: LabeledDataset, path: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for sample, label in dataset.rows:
            values = [repr(float(v)) for v in sample.as_tuple()]
            fh.write(",".join(values + [str(int(label))]) + "\n")


def load_csv(
    path: str, train_fraction: float = DEFAULT_TRAIN_FRACTION
) -> LabeledDataset:
    """Load a dataset CSV written by :func:`write_csv`.

    Raises :class:`CsvFormatError` naming the line for any arity,
    number-format or label violation.
    """
    rows: list[tuple[SleepSample, StressState]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(1, "empty file") from None
        if header != list(CSV_FIELDS):
            raise CsvFormatError(1, f"header must be exactly '{CSV_HEADER}'")
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != 9:
                raise CsvFormatError(lineno, f"expected 9 columns, got {len(record)}")
            try:
                features = [float(v) for v in record[:8]]
            except ValueError as exc:
                raise CsvFormatError(lineno, f"bad number: {exc}") from None
            try:
                label = StressState(int(record[8]))
            except ValueError:
                raise CsvFormatError(
                    lineno, f"unknown stress_level {record[8]!r} (expected 0-4)"
                ) from None
            rows.append((SleepSample.from_values(features), label))
    n_train = round(len(rows) * train_fraction)
    return LabeledDataset(rows=tuple(rows), n_train=n_train)


Classifier = Callable[[SleepSample], StressState]
