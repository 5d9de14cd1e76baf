"""Interval flow storage, daily profiles and two-interval interpolation.

Counts are kept as float arrays with ``NaN`` marking a missing interval,
so a detector drop-out is never confused with a genuine zero flow.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, TextIO

import numpy as np

from .errors import (DuplicateObservation, InsufficientData, IntervalOutOfRange, MalformedRow,
                     MissingData, PreconditionViolated)

FLOW_HEADER = ["station_id", "date", "interval_index", "count"]
PROFILE_HEADER = ["station_id", "day_of_week", "interval_index", "mean"]


@dataclass(frozen=True)
class TimeGrid:
    interval: float = 180.0
    intervals_per_day: int = 480

    def __post_init__(self):
        if self.intervals_per_day < 1 or not math.isclose(self.interval * self.intervals_per_day, 86400.0):
            raise ValueError("interval * intervals_per_day must equal 86400 s")

    @classmethod
    def from_interval(cls, interval: float) -> "TimeGrid":
        n = round(86400.0 / interval)
        return cls(float(interval), n)


class TimePoint(NamedTuple):
    """An interval on a given calendar day; ``index`` may overflow the day."""

    day: date
    index: int

    def normalized(self, n: int) -> "TimePoint":
        q, i = divmod(self.index, n)
        return TimePoint(self.day + timedelta(days=q), i)

    def shift(self, k: int, n: int) -> "TimePoint":
        return TimePoint(self.day, self.index + k).normalized(n)


@dataclass(frozen=True)
class FlowSeries:
    station: str
    day: date
    counts: np.ndarray = field(repr=False)


def format_count(value: float) -> str:
    if math.isnan(value):
        return ""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


class FlowStore:
    """Per-(station, day) interval counts sharing one :class:`TimeGrid`."""

    def __init__(self, series: Mapping[tuple[str, date], np.ndarray] | None = None,
                 grid: TimeGrid | None = None):
        self.grid = grid or TimeGrid()
        self._series: dict[tuple[str, date], np.ndarray] = {}
        for key, arr in (series or {}).items():
            arr = np.array(arr, dtype=float)
            if arr.shape != (self.grid.intervals_per_day,):
                raise ValueError(f"series {key} has shape {arr.shape}")
            arr.flags.writeable = False
            self._series[key] = arr

    def __len__(self) -> int:
        return len(self._series)

    def __contains__(self, key) -> bool:
        return key in self._series

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowStore) or other.grid != self.grid:
            return NotImplemented
        if self._series.keys() != other._series.keys():
            return False
        return all(np.array_equal(a, other._series[k], equal_nan=True)
                   for k, a in self._series.items())

    def keys(self):
        return self._series.keys()

    def items(self):
        return self._series.items()

    def stations(self) -> list[str]:
        return sorted({s for s, _ in self._series})

    def dates(self) -> list[date]:
        return sorted({d for _, d in self._series})

    def series(self, station: str, day: date) -> np.ndarray | None:
        return self._series.get((station, day))

    def flow_series(self, station: str, day: date) -> FlowSeries:
        arr = self._series.get((station, day))
        if arr is None:
            raise MissingData(f"no series for {station} on {day}")
        return FlowSeries(station, day, arr)

    def value(self, station: str, day: date, index: int) -> float:
        """Count at ``index`` of ``day``; indices outside the day read the adjacent date."""
        tp = TimePoint(day, index).normalized(self.grid.intervals_per_day)
        arr = self._series.get((station, tp.day))
        return math.nan if arr is None else float(arr[tp.index])

    def timeline(self, station: str, start: date, n_days: int) -> np.ndarray:
        """Counts of ``n_days`` consecutive days laid end to end, NaN where absent."""
        n = self.grid.intervals_per_day
        out = np.full(n_days * n, np.nan)
        for k in range(n_days):
            arr = self._series.get((station, start + timedelta(days=k)))
            if arr is not None:
                out[k * n:(k + 1) * n] = arr
        return out

    def replace(self, updates: Mapping[tuple[str, date], np.ndarray]) -> "FlowStore":
        merged = dict(self._series)
        merged.update(updates)
        return FlowStore(merged, self.grid)

    def subset(self, days: Iterable[date]) -> "FlowStore":
        keep = set(days)
        return FlowStore({k: v for k, v in self._series.items() if k[1] in keep}, self.grid)


def _open_text(source) -> tuple[TextIO, bool]:
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8"), True
    return source, False


def ingest_flows(source, grid: TimeGrid | None = None) -> FlowStore:
    """Read the flow CSV format into a :class:`FlowStore`.

    ``source`` is a path or an open text stream. Empty ``count`` cells
    and intervals with no row at all become missing.
    """
    grid = grid or TimeGrid()
    n = grid.intervals_per_day
    fh, owned = _open_text(source)
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return FlowStore({}, grid)
        if [h.strip() for h in header] != FLOW_HEADER:
            raise MalformedRow(f"bad header {header!r}, expected {','.join(FLOW_HEADER)}")
        series: dict[tuple[str, date], np.ndarray] = {}
        seen: set[tuple[str, date, int]] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(f"line {lineno}: expected 4 fields, got {len(row)}")
            station, day_s, idx_s, count_s = (c.strip() for c in row)
            if not station:
                raise MalformedRow(f"line {lineno}: empty station id")
            try:
                day = date.fromisoformat(day_s)
                idx = int(idx_s)
                count = float(count_s) if count_s else math.nan
            except ValueError as exc:
                raise MalformedRow(f"line {lineno}: {exc}") from None
            if not 0 <= idx < n:
                raise IntervalOutOfRange(f"line {lineno}: interval {idx} outside [0, {n})")
            if count < 0 or math.isinf(count):
                raise MalformedRow(f"line {lineno}: invalid count {count_s!r}")
            key = (station, day, idx)
            if key in seen:
                raise DuplicateObservation(f"line {lineno}: {station} {day} {idx} repeated")
            seen.add(key)
            arr = series.get((station, day))
            if arr is None:
                arr = series[(station, day)] = np.full(n, np.nan)
            arr[idx] = count
    finally:
        if owned:
            fh.close()
    return FlowStore(series, grid)


def write_flows(store: FlowStore, target) -> None:
    """Write every series, sorted by station then date, in the flow CSV format."""
    fh, owned = (open(target, "w", newline="", encoding="utf-8"), True) \
        if isinstance(target, (str, Path)) else (target, False)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_HEADER)
        for station, day in sorted(store.keys()):
            arr = store.series(station, day)
            iso = day.isoformat()
            for i, v in enumerate(arr):
                w.writerow([station, iso, i, format_count(v)])
    finally:
        if owned:
            fh.close()


def flows_to_text(store: FlowStore) -> str:
    buf = io.StringIO()
    write_flows(store, buf)
    return buf.getvalue()


@dataclass(frozen=True)
class DailyProfile:
    """Mean count per (day of week, interval); row 0 is Monday."""

    station: str
    means: np.ndarray = field(repr=False)

    def value(self, day: date, index: int) -> float:
        n = self.means.shape[1]
        tp = TimePoint(day, index).normalized(n)
        return float(self.means[tp.day.weekday(), tp.index])

    def curve(self, weekday: int) -> np.ndarray:
        return self.means[weekday]


def compute_daily_profile(store: FlowStore, station: str, training_days: Iterable[date],
                          holidays: Iterable[date] = ()) -> DailyProfile:
    """Average each interval slot over the training days sharing a weekday.

    Raises:
        InsufficientData: some weekday has no training day with data.
    """
    n = store.grid.intervals_per_day
    skip = set(holidays)
    buckets: list[list[np.ndarray]] = [[] for _ in range(7)]
    for day in sorted(set(training_days)):
        if day in skip:
            continue
        arr = store.series(station, day)
        if arr is not None:
            buckets[day.weekday()].append(arr)
    means = np.full((7, n), np.nan)
    for wd, arrs in enumerate(buckets):
        if not arrs:
            raise InsufficientData(f"{station}: no training data for weekday {wd}")
        stack = np.vstack(arrs)
        counts = np.sum(~np.isnan(stack), axis=0)
        sums = np.nansum(stack, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            means[wd] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    means.flags.writeable = False
    return DailyProfile(station, means)


def compute_profiles(store: FlowStore, training_days: Iterable[date],
                     stations: Iterable[str] | None = None,
                     holidays: Iterable[date] = ()) -> dict[str, DailyProfile]:
    training_days = list(training_days)
    stations = store.stations() if stations is None else stations
    return {s: compute_daily_profile(store, s, training_days, holidays) for s in stations}


def write_profiles(profiles: Mapping[str, DailyProfile], target) -> None:
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for station in sorted(profiles):
            means = profiles[station].means
            for wd in range(7):
                for i, v in enumerate(means[wd]):
                    w.writerow([station, wd, i, "" if math.isnan(v) else repr(float(v))])


def read_profiles(source, grid: TimeGrid | None = None) -> dict[str, DailyProfile]:
    grid = grid or TimeGrid()
    n = grid.intervals_per_day
    tables: dict[str, np.ndarray] = {}
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PROFILE_HEADER:
            raise MalformedRow(f"bad profile header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                station, wd, idx, mean = row[0].strip(), int(row[1]), int(row[2]), row[3].strip()
                value = float(mean) if mean else math.nan
            except (ValueError, IndexError) as exc:
                raise MalformedRow(f"line {lineno}: {exc}") from None
            if not (0 <= wd < 7 and 0 <= idx < n):
                raise IntervalOutOfRange(f"line {lineno}: slot ({wd}, {idx}) out of range")
            tables.setdefault(station, np.full((7, n), np.nan))[wd, idx] = value
    return {s: DailyProfile(s, m) for s, m in tables.items()}


def blend(first: float, second: float, t1: float, t2: float, d: float) -> float:
    """Vehicles seen in a window made of the last ``t1`` s of one interval
    and the first ``t2`` s of the next, assuming uniform arrivals.
    """
    if t1 < 0 or t2 < 0 or not math.isclose(t1 + t2, d, rel_tol=1e-9, abs_tol=0.0):
        raise PreconditionViolated(f"t1={t1}, t2={t2} must be non-negative and sum to d={d}")
    # a zero weight must not let a NaN neighbour leak in
    if t2 == 0:
        return first
    if t1 == 0:
        return second
    return (t1 * first + t2 * second) / d


def interpolate_flow(store: FlowStore, station: str, day: date, index: int,
                     t1: float, t2: float) -> float:
    """Time-weighted flow across interval ``index`` and the one after it."""
    first = store.value(station, day, index)
    second = store.value(station, day, index + 1)
    d = store.grid.interval
    value = blend(first, second, t1, t2, d)
    if math.isnan(value):
        raise MissingData(f"{station}: missing count near {day} interval {index}")
    return value
