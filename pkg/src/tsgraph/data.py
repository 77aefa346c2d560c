"""CSV ingestion, normalization, windowing, splits, and the synthetic
bivariate generator used for ground-truth dependency evaluation."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractViolation, IngestionError
from .seeding import named_rng

__all__ = [
    "TimeSeriesFrame",
    "Scaler",
    "WindowSample",
    "SyntheticConfig",
    "load_csv",
    "write_csv",
    "fit_scaler",
    "make_windows",
    "windows_in_range",
    "chronological_split",
    "rule_next_values",
    "generate_bivariate",
    "LABEL_NAMES",
]

LABEL_NAMES = {0: "warmup", 1: "rule1", 2: "rule2"}

WARMUP_ROWS = 7  # deepest lag (6) plus the current point


@dataclass(frozen=True)
class TimeSeriesFrame:
    """A named D-variate series of length T, columns in a fixed order."""

    names: list[str]
    values: np.ndarray  # (T, D) float64
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 2:
            raise ContractViolation(f"values must be 2-D, got shape {values.shape}")
        if len(self.names) != values.shape[1]:
            raise ContractViolation(
                f"{len(self.names)} names for {values.shape[1]} columns"
            )
        if len(set(self.names)) != len(self.names):
            raise ContractViolation(f"duplicate series names in {self.names}")
        if not np.isfinite(values).all():
            raise ContractViolation("frame contains non-finite values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def load_csv(path) -> TimeSeriesFrame:
    """Read a header+numeric-body CSV into a frame.

    Columns are reordered lexicographically by name so the series order is
    reproducible regardless of file layout. Malformed input raises
    IngestionError naming the offending row/column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: file is empty")
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise IngestionError(f"{path}: duplicate column names in {header}")
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            parsed = []
            for col, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}:{line_no}: column {header[col]!r} has "
                        f"non-numeric value {cell!r}"
                    )
            rows.append(parsed)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    order = np.argsort(header, kind="stable")
    return TimeSeriesFrame(
        names=[header[i] for i in order], values=values[:, order]
    )


def write_csv(frame: TimeSeriesFrame, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(frame.names)
        for row in frame.values:
            writer.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class Scaler:
    """Per-series min-max normalization fitted on the training range only.

    Constant training series get a `max = min + 1` sentinel and are flagged
    so downstream consumers can tell the scale is arbitrary.
    """

    minimums: np.ndarray
    maximums: np.ndarray
    constant_flags: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.minimums) / (self.maximums - self.minimums)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * (self.maximums - self.minimums) + self.minimums

    def apply_frame(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        return TimeSeriesFrame(
            names=list(frame.names),
            values=self.apply(frame.values),
            timestamps=frame.timestamps,
        )

    def to_dict(self) -> dict:
        return {
            "minimums": self.minimums.tolist(),
            "maximums": self.maximums.tolist(),
            "constant_flags": self.constant_flags.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(
            minimums=np.asarray(data["minimums"], dtype=np.float64),
            maximums=np.asarray(data["maximums"], dtype=np.float64),
            constant_flags=np.asarray(data["constant_flags"], dtype=bool),
        )


def fit_scaler(frame: TimeSeriesFrame, train_range: tuple[int, int]) -> Scaler:
    start, stop = train_range
    if stop <= start:
        raise ContractViolation(f"empty training range ({start}, {stop})")
    block = frame.values[start:stop]
    minimums = block.min(axis=0)
    maximums = block.max(axis=0)
    constant = maximums <= minimums
    if constant.any():
        names = [frame.names[i] for i in np.flatnonzero(constant)]
        warnings.warn(
            f"constant training series {names}: using unit-range sentinel",
            RuntimeWarning,
            stacklevel=2,
        )
        maximums = np.where(constant, minimums + 1.0, maximums)
    return Scaler(minimums=minimums, maximums=maximums, constant_flags=constant)


@dataclass(frozen=True)
class WindowSample:
    """An (m, D) input block plus the next row as target."""

    inputs: np.ndarray
    target: np.ndarray
    target_index: int  # row index of the target within the source frame


def make_windows(frame: TimeSeriesFrame, m: int) -> list[WindowSample]:
    """All T-m sliding windows; sample k covers rows k..k+m-1, target k+m."""
    return windows_in_range(frame, m, 0, frame.length)


def windows_in_range(
    frame: TimeSeriesFrame, m: int, start: int, stop: int
) -> list[WindowSample]:
    """Sliding windows whose inputs and target all lie inside [start, stop)."""
    if m < 1:
        raise ContractViolation("window length must be at least 1")
    if stop - start < m + 1:
        raise ContractViolation(
            f"range of {stop - start} rows is too short for windows of "
            f"length {m} plus a target"
        )
    samples = []
    for k in range(start, stop - m):
        samples.append(
            WindowSample(
                inputs=frame.values[k : k + m],
                target=frame.values[k + m],
                target_index=k + m,
            )
        )
    return samples


def stack_windows(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pack samples into (inputs (N,m,D), targets (N,D), target indices)."""
    inputs = np.stack([s.inputs for s in samples])
    targets = np.stack([s.target for s in samples])
    indices = np.asarray([s.target_index for s in samples], dtype=np.int64)
    return inputs, targets, indices


def chronological_split(
    length: int, ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Row ranges for train/dev/test in time order."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractViolation(f"split ratios must sum to 1, got {ratios}")
    n_train = int(round(length * ratios[0]))
    n_dev = int(round(length * ratios[1]))
    return (0, n_train), (n_train, n_train + n_dev), (n_train + n_dev, length)


# ---------------------------------------------------------------------------
# synthetic bivariate generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Controls for the two-rule bivariate generator.

    `regen_probability` is the per-step, per-series chance that the next
    value is re-generated: blended `regen_blend` of the way toward a fresh
    Uniform[0,1] draw before being written. Re-generated points keep the
    series volatile and both rules alive, and they make stale cross-series
    copies of a value diverge from the original, so each series' own lags
    stay the uniquely reliable predictors. At probability 0 the recursion
    is fully deterministic and quickly degenerates into cycles.
    """

    length: int = 10000
    seed: int = 0
    regen_probability: float = 0.5
    regen_blend: float = 0.15

    def __post_init__(self):
        if self.length <= 10:
            raise ContractViolation("length must exceed the deepest lag structure (10)")
        if not 0.0 <= self.regen_probability <= 1.0:
            raise ContractViolation("regen_probability must lie in [0, 1]")
        if not 0.0 < self.regen_blend <= 1.0:
            raise ContractViolation("regen_blend must lie in (0, 1]")


def rule_next_values(a: np.ndarray, b: np.ndarray, t: int) -> tuple[float, float, int]:
    """The deterministic transition: next (A, B) values and the rule id.

    Below-threshold current A means both series auto-regress from their
    own lags; otherwise the series feed each other.
    """
    if t < 6:
        raise ContractViolation("transition needs 6 lags of history")
    if a[t] < 0.5:
        return float(a[t - 4]), float(0.5 * (b[t - 3] + b[t - 6])), 1
    return float(0.5 * (a[t - 6] + b[t - 3])), float(a[t - 3]), 2


def generate_bivariate(config: SyntheticConfig) -> tuple[TimeSeriesFrame, np.ndarray]:
    """Generate the labeled two-rule series (names SeriesA, SeriesB).

    Rows 0..6 are a uniform-random warm-up (label 0). Every later row is
    produced by whichever rule the current SeriesA value selects and is
    labeled 1 or 2 accordingly; labels always agree with the stored
    condition values. Re-generation (probability `regen_probability` per
    step and series, independent coins) nudges each next value
    `regen_blend` of the way toward a fresh uniform draw before it is
    written, keeping windows volatile and rule selection alternating.
    """
    rng = named_rng(config.seed, "synthetic")
    n = config.length
    a = np.empty(n)
    b = np.empty(n)
    labels = np.zeros(n, dtype=np.int64)
    a[:WARMUP_ROWS] = rng.uniform(size=WARMUP_ROWS)
    b[:WARMUP_ROWS] = rng.uniform(size=WARMUP_ROWS)

    def blend(value: float) -> float:
        if config.regen_probability and rng.random() < config.regen_probability:
            return (1.0 - config.regen_blend) * value + config.regen_blend * rng.random()
        return value

    for t in range(WARMUP_ROWS - 1, n - 1):
        a_next, b_next, rule = rule_next_values(a, b, t)
        a[t + 1] = blend(a_next)
        b[t + 1] = blend(b_next)
        labels[t + 1] = rule

    frame = TimeSeriesFrame(names=["SeriesA", "SeriesB"], values=np.column_stack([a, b]))
    return frame, labels


def write_labels(labels: np.ndarray, path) -> None:
    """Sidecar label file: row index, rule id name."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "rule"])
        for i, label in enumerate(labels):
            writer.writerow([i, LABEL_NAMES[int(label)]])


def load_labels(path) -> np.ndarray:
    reverse = {name: code for code, name in LABEL_NAMES.items()}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["row", "rule"]:
            raise IngestionError(f"{path}: unexpected label header {header}")
        entries = [(int(row[0]), reverse[row[1]]) for row in reader if row]
    labels = np.zeros(max(i for i, _ in entries) + 1, dtype=np.int64)
    for i, code in entries:
        labels[i] = code
    return labels
