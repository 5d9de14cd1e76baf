"""Outlier detection and imputation against the daily profile.

An interval is an outlier when its deviation from the profile is large
compared with the moving average of recent absolute deviations. Flagged
and missing intervals are replaced by a blend of the nearest clean
neighbours and the profile value.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping

import numpy as np

from .errors import GridMismatch, MalformedRow, MissingProfile
from .flowdata import DailyProfile, FlowSeries, FlowStore

CLEAN, OUTLIER, MISSING = 0, 1, 2
FLAG_NAMES = {CLEAN: "clean", OUTLIER: "outlier", MISSING: "missing"}
MASK_HEADER = ["station_id", "date", "interval_index", "flag"]


@dataclass(frozen=True)
class CleaningConfig:
    """Detector and imputer parameters.

    Attributes:
        window_w: trailing window (intervals) for the deviation moving average,
            also the search radius for clean neighbours when imputing.
        threshold_k: multiplier on the deviation scale above which a value is flagged.
        alpha: weight of the neighbour estimate against the profile when imputing.
        floor_fraction: minimum deviation scale as a fraction of the profile value.
        min_scale: absolute minimum deviation scale, in vehicles.
        poisson_floor: never let the scale drop below ``sqrt(profile)``, the
            spread of a Poisson count with that mean. Stops the trailing
            window from under-estimating noise while flow is ramping up.
    """

    window_w: int = 20
    threshold_k: float = 4.0
    alpha: float = 0.5
    floor_fraction: float = 0.05
    min_scale: float = 1.0
    poisson_floor: bool = True

    def __post_init__(self):
        if int(self.window_w) != self.window_w or self.window_w < 1:
            raise ValueError("window_w must be an integer >= 1")
        if not self.threshold_k > 0:
            raise ValueError("threshold_k must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.floor_fraction < 0 or self.min_scale < 0:
            raise ValueError("scale floors must be non-negative")


@dataclass(frozen=True)
class OutlierMask:
    station: str
    day: date
    flags: np.ndarray = field(repr=False)

    @property
    def flagged(self) -> np.ndarray:
        """Indices that are not clean."""
        return np.flatnonzero(self.flags != CLEAN)

    def count(self, flag: int) -> int:
        return int(np.sum(self.flags == flag))


def _expected(series: FlowSeries, profile: DailyProfile) -> np.ndarray:
    expected = profile.curve(series.day.weekday())
    if expected.shape != series.counts.shape:
        raise GridMismatch(f"profile has {expected.shape[0]} slots, series {series.counts.shape[0]}")
    return expected


def detect_outliers(series: FlowSeries, profile: DailyProfile,
                    cfg: CleaningConfig = CleaningConfig()) -> OutlierMask:
    counts = np.asarray(series.counts, dtype=float)
    expected = _expected(series, profile)
    dev = np.abs(counts - expected)
    flags = np.zeros(counts.shape[0], dtype=np.int8)

    usable = dev[~np.isnan(dev)]
    # stands in for history the trailing window has not seen yet
    seed = float(np.median(usable)) if usable.size else 0.0
    history: deque[float] = deque(maxlen=cfg.window_w)
    for i, x in enumerate(counts):
        if math.isnan(x):
            flags[i] = MISSING
            continue
        if math.isnan(expected[i]):
            continue
        scale = (sum(history) + seed * (cfg.window_w - len(history))) / cfg.window_w
        scale = max(scale, cfg.floor_fraction * expected[i], cfg.min_scale)
        if cfg.poisson_floor:
            scale = max(scale, math.sqrt(max(expected[i], 0.0)))
        if dev[i] > cfg.threshold_k * scale:
            flags[i] = OUTLIER
        else:
            history.append(float(dev[i]))
    return OutlierMask(series.station, series.day, flags)


def _neighbour_mean(counts: np.ndarray, clean: np.ndarray, i: int, radius: int) -> float:
    found = []
    for step in (-1, 1):
        j = i + step
        while 0 <= j < counts.shape[0] and abs(j - i) <= radius:
            if clean[j]:
                found.append(counts[j])
                break
            j += step
    return sum(found) / len(found) if found else math.nan


def impute(series: FlowSeries, mask: OutlierMask, profile: DailyProfile,
           cfg: CleaningConfig = CleaningConfig()) -> FlowSeries:
    """Replace every non-clean interval; clean intervals are returned untouched."""
    counts = np.asarray(series.counts, dtype=float)
    if mask.flags.shape != counts.shape:
        raise GridMismatch("mask and series lengths differ")
    expected = _expected(series, profile)
    clean = mask.flags == CLEAN
    out = counts.copy()
    a = cfg.alpha
    for i in np.flatnonzero(~clean):
        near = _neighbour_mean(counts, clean, int(i), cfg.window_w)
        hist = expected[i]
        if math.isnan(near):
            value = hist
        elif math.isnan(hist) or a == 1.0:
            value = near
        elif a == 0.0:
            value = hist
        else:
            value = a * near + (1.0 - a) * hist
        out[i] = max(value, 0.0) if not math.isnan(value) else math.nan
    return FlowSeries(series.station, series.day, out)


def clean_store(store: FlowStore, profiles: Mapping[str, DailyProfile],
                cfg: CleaningConfig = CleaningConfig(),
                days: Iterable[date] | None = None) -> tuple[FlowStore, list[OutlierMask]]:
    """Detect and impute on every (station, day) series of ``store``.

    Only ``days`` are touched when given. Returns the cleaned store and
    the masks, sorted by station then day.
    """
    wanted = None if days is None else set(days)
    updates = {}
    masks = []
    for station, day in sorted(store.keys()):
        if wanted is not None and day not in wanted:
            continue
        if station not in profiles:
            raise MissingProfile(f"no profile for {station}")
        series = store.flow_series(station, day)
        mask = detect_outliers(series, profiles[station], cfg)
        masks.append(mask)
        if mask.flagged.size:
            updates[(station, day)] = impute(series, mask, profiles[station], cfg).counts
    return store.replace(updates), masks


def write_masks(masks: Iterable[OutlierMask], target) -> None:
    """Write the non-clean intervals of each mask as ``station_id,date,interval_index,flag``."""
    with open(target, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MASK_HEADER)
        for m in sorted(masks, key=lambda m: (m.station, m.day)):
            iso = m.day.isoformat()
            for i in m.flagged:
                w.writerow([m.station, iso, int(i), FLAG_NAMES[int(m.flags[i])]])


def read_masks(source, intervals_per_day: int = 480) -> dict[tuple[str, date], OutlierMask]:
    codes = {v: k for k, v in FLAG_NAMES.items()}
    flags: dict[tuple[str, date], np.ndarray] = {}
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MASK_HEADER:
            raise MalformedRow(f"bad mask header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                station, day, idx, flag = row[0], date.fromisoformat(row[1]), int(row[2]), codes[row[3]]
            except (ValueError, IndexError, KeyError) as exc:
                raise MalformedRow(f"line {lineno}: {exc}") from None
            arr = flags.setdefault((station, day), np.zeros(intervals_per_day, dtype=np.int8))
            arr[idx] = flag
    return {k: OutlierMask(k[0], k[1], v) for k, v in flags.items()}
