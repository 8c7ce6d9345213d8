"""CSV ingestion, train-statistics z-scoring, chronological splits, windowing.

The CSV schema: UTF-8, comma separated, one header row, an optional first
column named ``date`` holding timestamp labels, every other column one
numeric series. Rows are in increasing temporal order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSeries,
    EmptyFile,
    NonNumericCell,
    ParseError,
    RaggedRows,
    TooShort,
)


@dataclass(frozen=True)
class RawSeriesTable:
    """A T x N block of raw series values straight from a CSV file."""

    names: tuple[str, ...]
    timestamps: tuple[str, ...] | None
    values: np.ndarray

    def __post_init__(self):
        t, n = self.values.shape
        if t < 2:
            raise ValueError(f"need at least 2 rows, got {t}")
        if n < 1:
            raise ValueError("need at least one series")
        if len(self.names) != n:
            raise ValueError(f"{len(self.names)} names for {n} series")
        if self.timestamps is not None and len(self.timestamps) != t:
            raise ValueError(f"{len(self.timestamps)} timestamps for {t} rows")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain NaN or infinite entries")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]


def _check_timestamp_order(stamps: list[str]):
    """If every label parses as an ISO timestamp, demand strict increase."""
    parsed = []
    for s in stamps:
        try:
            parsed.append(datetime.fromisoformat(s))
        except ValueError:
            return  # opaque labels: row order is taken as temporal order
    for i in range(1, len(parsed)):
        if parsed[i] <= parsed[i - 1]:
            raise ParseError(
                f"timestamps not strictly increasing at data row {i + 1} ({stamps[i]!r})",
                row=i + 2,
                column=1,
            )


def load_csv(path) -> RawSeriesTable:
    """Read a series table from ``path``.

    Errors cite file locations with 1-based row numbers counting the header
    as row 1 and 1-based column numbers.
    """
    p = Path(path)
    with open(p, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or all(not any(c.strip() for c in r) for r in rows):
        raise EmptyFile(f"{p}: file is empty")
    header = [c.strip() for c in rows[0]]
    if len(rows) < 2:
        raise EmptyFile(f"{p}: no data rows after the header")
    has_date = bool(header) and header[0].lower() == "date"
    names = tuple(header[1:] if has_date else header)
    if not names:
        raise ParseError(f"{p}: header declares no series columns", row=1)

    stamps: list[str] = []
    data: list[list[float]] = []
    first_col = 1 if has_date else 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise RaggedRows(
                f"{p}: row {lineno} has {len(row)} cells, header has {len(header)}",
                row=lineno,
            )
        if has_date:
            stamps.append(row[0].strip())
        parsed_row = []
        for j in range(first_col, len(row)):
            cell = row[j].strip()
            try:
                value = float(cell)
            except ValueError:
                raise NonNumericCell(
                    f"{p}: row {lineno}, column {j + 1} ({header[j]!r}): "
                    f"cannot parse {cell!r} as a number",
                    row=lineno,
                    column=j + 1,
                ) from None
            if not math.isfinite(value):
                raise NonNumericCell(
                    f"{p}: row {lineno}, column {j + 1} ({header[j]!r}): non-finite value {cell!r}",
                    row=lineno,
                    column=j + 1,
                )
            parsed_row.append(value)
        data.append(parsed_row)

    if has_date:
        _check_timestamp_order(stamps)
    values = np.asarray(data, dtype=np.float64)
    return RawSeriesTable(
        names=names,
        timestamps=tuple(stamps) if has_date else None,
        values=values,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test fractions; must sum to one."""

    train_fraction: float
    val_fraction: float
    test_fraction: float

    def __post_init__(self):
        for f in (self.train_fraction, self.val_fraction, self.test_fraction):
            if not f > 0.0:
                raise ValueError(f"split fractions must be positive, got {f}")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")

    @classmethod
    def from_string(cls, text: str) -> "SplitSpec":
        """Parse ratios like ``"6:2:2"`` or ``"0.7:0.1:0.2"``."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected three colon-separated ratios, got {text!r}")
        nums = [float(x) for x in parts]
        total = sum(nums)
        if total <= 0:
            raise ValueError(f"ratios must be positive, got {text!r}")
        return cls(nums[0] / total, nums[1] / total, nums[2] / total)


DEFAULT_SPLIT = SplitSpec(0.7, 0.1, 0.2)


@dataclass(frozen=True)
class Segment:
    """A contiguous view [start, end) into the full value matrix."""

    values: np.ndarray
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end <= self.values.shape[0]:
            raise ValueError(f"bad segment bounds [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    @property
    def data(self) -> np.ndarray:
        return self.values[self.start : self.end]


@dataclass(frozen=True)
class NormalizedDataset:
    """Per-series z-scored values plus the train statistics that produced them.

    Normalization always uses training-segment means and population standard
    deviations, applied to the whole series, so validation and test values
    live on the training scale.
    """

    values: np.ndarray
    train_means: np.ndarray
    train_stds: np.ndarray
    boundaries: tuple[int, int]
    names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if np.any(self.train_stds <= 0):
            raise ValueError("train_stds must all be positive")
        train_end, val_end = self.boundaries
        t = self.values.shape[0]
        if not 1 <= train_end < val_end < t or t - val_end < 1:
            raise ValueError(f"bad boundaries {self.boundaries} for {t} rows")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        """Map z-scored values back to the raw scale."""
        return values * self.train_stds + self.train_means


def zscore_fit_transform(table: RawSeriesTable, split: SplitSpec) -> NormalizedDataset:
    """Z-score every series with statistics fitted on the train segment only.

    Boundaries come from flooring the fractions: train_end = floor(T * train),
    val_end = floor(T * (train + val)); all remaining rows are test.
    """
    t = table.n_rows
    # The 1e-9 nudge keeps exact ratios like 7:1:2 of 10 rows from flooring
    # one row short through float round-off.
    train_end = int(math.floor(t * split.train_fraction + 1e-9))
    val_end = int(math.floor(t * (split.train_fraction + split.val_fraction) + 1e-9))
    if train_end < 1 or val_end - train_end < 1 or t - val_end < 1:
        raise TooShort(
            f"split {split.train_fraction:.3f}:{split.val_fraction:.3f}:{split.test_fraction:.3f} "
            f"of {t} rows leaves an empty segment"
        )
    train = table.values[:train_end]
    means = train.mean(axis=0)
    stds = train.std(axis=0)  # population std, fixed convention
    for i in np.nonzero(stds <= 1e-8)[0]:
        raise DegenerateSeries(int(i), table.names[i] if i < len(table.names) else None)
    values = (table.values - means) / stds
    return NormalizedDataset(
        values=values,
        train_means=means,
        train_stds=stds,
        boundaries=(train_end, val_end),
        names=tuple(table.names),
    )


def split_chronological(dataset: NormalizedDataset) -> tuple[Segment, Segment, Segment]:
    """Train, validation and test segments covering [0, T) in order."""
    train_end, val_end = dataset.boundaries
    t = dataset.n_rows
    return (
        Segment(dataset.values, 0, train_end),
        Segment(dataset.values, train_end, val_end),
        Segment(dataset.values, val_end, t),
    )


def kfold_oos_splits(segment: Segment, k: int) -> list[tuple[Segment, Segment]]:
    """Sequential out-of-sample folds over ``segment``.

    The segment is cut into k+1 equal contiguous blocks (remainder rows go
    to the last block); fold j trains on blocks 1..j and validates on block
    j+1, so validation data always follows its training data.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    length = len(segment)
    block = length // (k + 1)
    if block < 1:
        raise TooShort(f"segment of {length} rows cannot form {k + 1} non-empty blocks")
    folds = []
    for j in range(1, k + 1):
        train = Segment(segment.values, segment.start, segment.start + j * block)
        val_end = segment.start + (j + 1) * block if j < k else segment.end
        val = Segment(segment.values, segment.start + j * block, val_end)
        folds.append((train, val))
    return folds


@dataclass(frozen=True)
class WindowBatch:
    """Sliding forecast windows over a segment.

    Each window is identified by its forecast origin t: input rows
    [t - lookback, t), target rows [t, t + horizon). Arrays are materialized
    lazily via :meth:`gather` so large sweeps never hold every window at once.
    """

    values: np.ndarray
    origins: np.ndarray
    lookback: int
    horizon: int

    def __len__(self) -> int:
        return int(self.origins.shape[0])

    @property
    def n_series(self) -> int:
        return self.values.shape[1]

    @property
    def origin_indices(self) -> np.ndarray:
        return self.origins

    def gather(self, idx=None) -> tuple[np.ndarray, np.ndarray]:
        """Materialize (inputs, targets) for the selected window indices."""
        origins = self.origins if idx is None else self.origins[idx]
        in_rows = origins[:, None] + np.arange(-self.lookback, 0)[None, :]
        tgt_rows = origins[:, None] + np.arange(self.horizon)[None, :]
        return self.values[in_rows], self.values[tgt_rows]

    @property
    def inputs(self) -> np.ndarray:
        return self.gather()[0]

    @property
    def targets(self) -> np.ndarray:
        return self.gather()[1]


def make_windows(segment: Segment, lookback: int, horizon: int, allow_context: bool = False) -> WindowBatch:
    """All valid forecast windows whose targets lie inside ``segment``.

    Without context the inputs must also fit inside the segment. With
    context, inputs may reach back into rows before the segment (never
    before row 0), so every segment row from the first can be a target;
    targets never leave the segment either way.
    """
    if lookback < 1 or horizon < 1:
        raise ValueError("lookback and horizon must be >= 1")
    if allow_context:
        first = max(segment.start, lookback)
    else:
        first = segment.start + lookback
    last = segment.end - horizon
    if last < first:
        raise TooShort(
            f"segment of {len(segment)} rows too short for lookback={lookback}, "
            f"horizon={horizon} (allow_context={allow_context})"
        )
    origins = np.arange(first, last + 1, dtype=np.int64)
    return WindowBatch(values=segment.values, origins=origins, lookback=lookback, horizon=horizon)
