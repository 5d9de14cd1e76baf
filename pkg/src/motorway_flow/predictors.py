"""Daily-profile, backtracking and interpolation forecasters.

Each forecaster has two entry points: a per-request function returning a
:class:`Forecast` with every additive term, and :func:`forecast_series`,
which evaluates the same arithmetic over whole arrays of target times for
the evaluation harness. Both add terms in the same order, so they agree
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import Infeasible, MissingData, MissingProfile
from .flowdata import DailyProfile, FlowStore, TimePoint, blend
from .graph import (MotorwayGraph, RampAlignment, StationKind, find_optimal_upstream,
                    traverse_collect)


class Method(str, Enum):
    DPP = "DPP"
    BKTR = "BKTR"
    INTR = "INTR"

    @classmethod
    def parse(cls, text: str) -> "Method":
        return cls(text.strip().upper())


@dataclass(frozen=True)
class PredictionRequest:
    target: str
    time: TimePoint
    r: int
    p: int

    def __post_init__(self):
        if self.r < 1 or self.p < 1:
            raise ValueError("r and p must be >= 1")


@dataclass(frozen=True)
class Component:
    station: str
    contribution: float
    source: str  # "observed", "historical" or "interpolated"


@dataclass(frozen=True)
class Forecast:
    value: float
    method: Method
    origin: str | None
    components: tuple[Component, ...]
    raw: float


def _profile(profiles: Mapping[str, DailyProfile], station: str) -> DailyProfile:
    try:
        return profiles[station]
    except KeyError:
        raise MissingProfile(f"no daily profile for {station}") from None


def _historical(profiles, station: str, t: TimePoint, offset: int) -> float:
    value = _profile(profiles, station).value(t.day, t.index + offset)
    if math.isnan(value):
        raise MissingData(f"{station}: profile undefined at offset {offset}")
    return value


def _observed(store: FlowStore, station: str, t: TimePoint, offset: int) -> float:
    value = store.value(station, t.day, t.index + offset)
    if math.isnan(value):
        raise MissingData(f"{station}: no observation at {t.day} interval {t.index + offset}")
    return value


def _term(store, profiles, station, t, offset) -> tuple[float, str]:
    if offset < 0:
        return _observed(store, station, t, offset), "observed"
    return _historical(profiles, station, t, offset), "historical"


def predict_dpp(profile: DailyProfile, v: str, t: TimePoint, p: int) -> Forecast:
    """Profile value for the weekday and slot of ``t + p``."""
    if profile is None:
        raise MissingProfile(f"no daily profile for {v}")
    value = profile.value(t.day, t.index + p)
    if math.isnan(value):
        raise MissingData(f"{v}: profile undefined at target slot")
    return Forecast(value, Method.DPP, None, (Component(v, value, "historical"),), value)


def _check_target(g: MotorwayGraph, v: str):
    if g.kind(v) is not StationKind.MAINLINE:
        raise ValueError(f"target {v!r} is not a mainline station")


def predict_bktr(g: MotorwayGraph, store: FlowStore, profiles: Mapping[str, DailyProfile],
                 req: PredictionRequest) -> Forecast:
    """Upstream flow ``r`` intervals ago plus aligned entries minus aligned exits.

    Ramps whose aligned interval is not yet observed use the profile.
    """
    _check_target(g, req.target)
    t = req.time.normalized(store.grid.intervals_per_day)
    u = find_optimal_upstream(g, req.target, req.r, req.p)
    trav = traverse_collect(g, u, req.target, req.r)
    comps = [Component(u, _observed(store, u, t, -req.r), "observed")]
    for sign, ramps in ((1.0, trav.entries), (-1.0, trav.exits)):
        for ramp in ramps:
            value, source = _term(store, profiles, ramp.station, t, ramp.offset)
            comps.append(Component(ramp.station, sign * value, source))
    raw = sum(c.contribution for c in comps)
    return Forecast(max(raw, 0.0), Method.BKTR, u, tuple(comps), raw)


def interpolation_window(distance: float, g: MotorwayGraph, r: int) -> tuple[int, float, float]:
    """First interval (relative to now) and ``(t1, t2)`` weights for a ramp.

    A vehicle leaving u at the start of interval t-r reaches the ramp
    ``distance / speed`` seconds later; the interval-long window it spans
    takes the last ``t1`` s of one interval and the first ``t2`` s of the next.
    """
    d = g.interval
    tau = distance / g.speed
    k = math.floor(tau / d)
    t2 = tau - k * d
    if t2 < 1e-9 * d:
        t2 = 0.0
    elif d - t2 < 1e-9 * d:
        k, t2 = k + 1, 0.0
    return k - r, d - t2, t2


def predict_intr(g: MotorwayGraph, store: FlowStore, profiles: Mapping[str, DailyProfile],
                 req: PredictionRequest) -> Forecast:
    """Backtracking with every ramp term replaced by a two-interval blend."""
    _check_target(g, req.target)
    t = req.time.normalized(store.grid.intervals_per_day)
    u = find_optimal_upstream(g, req.target, req.r, req.p)
    trav = traverse_collect(g, u, req.target, req.r)
    comps = [Component(u, _observed(store, u, t, -req.r), "observed")]
    for sign, ramps in ((1.0, trav.entries), (-1.0, trav.exits)):
        for ramp in ramps:
            i, t1, t2 = interpolation_window(ramp.distance, g, req.r)
            first, _ = _term(store, profiles, ramp.station, t, i)
            second = _term(store, profiles, ramp.station, t, i + 1)[0] if t2 > 0 else 0.0
            comps.append(Component(ramp.station, sign * blend(first, second, t1, t2, g.interval),
                                   "interpolated"))
    raw = sum(c.contribution for c in comps)
    return Forecast(max(raw, 0.0), Method.INTR, u, tuple(comps), raw)


def predict(method: Method | str, g: MotorwayGraph, store: FlowStore,
            profiles: Mapping[str, DailyProfile], req: PredictionRequest) -> Forecast:
    method = Method.parse(method) if isinstance(method, str) else method
    if method is Method.DPP:
        return predict_dpp(profiles.get(req.target), req.target, req.time, req.p)
    if method is Method.BKTR:
        return predict_bktr(g, store, profiles, req)
    return predict_intr(g, store, profiles, req)


def feasible_targets(g: MotorwayGraph, r: int, p: int) -> set[str]:
    out = set()
    for v in g.mainline:
        try:
            find_optimal_upstream(g, v, r, p)
        except Infeasible:
            continue
        out.add(v)
    return out


class FlowTimeline:
    """Observed counts and profile values on one contiguous interval axis.

    Index 0 is interval 0 of ``start``. Everything is materialised up
    front so concurrent readers never mutate shared state.
    """

    def __init__(self, store: FlowStore, profiles: Mapping[str, DailyProfile],
                 start: date | None = None, n_days: int | None = None):
        dates = store.dates()
        self.start = start if start is not None else (dates[0] if dates else date(1970, 1, 5))
        if n_days is None:
            n_days = (dates[-1] - self.start).days + 1 if dates else 0
        self.n_days = n_days
        self.per_day = store.grid.intervals_per_day
        self.size = n_days * self.per_day
        self._obs = {s: store.timeline(s, self.start, n_days) for s in store.stations()}
        weekdays = [(self.start + timedelta(days=k)).weekday() for k in range(n_days)]
        self._hist = {s: (np.concatenate([prof.means[w] for w in weekdays]) if weekdays
                          else np.empty(0))
                      for s, prof in profiles.items()}

    def index_of(self, t: TimePoint) -> int:
        return (t.day - self.start).days * self.per_day + t.index

    def time_of(self, idx: int) -> TimePoint:
        return TimePoint(self.start, int(idx)).normalized(self.per_day)

    def day_indices(self, days) -> np.ndarray:
        """Interval indices of every slot of ``days`` that fall inside the timeline."""
        parts = []
        for day in sorted(set(days)):
            k = (day - self.start).days
            if 0 <= k < self.n_days:
                parts.append(np.arange(k * self.per_day, (k + 1) * self.per_day))
        return np.concatenate(parts) if parts else np.empty(0, dtype=int)

    @staticmethod
    def _take(arr: np.ndarray | None, idx: np.ndarray) -> np.ndarray:
        out = np.full(idx.shape, np.nan)
        if arr is None:
            return out
        ok = (idx >= 0) & (idx < arr.shape[0])
        out[ok] = arr[idx[ok]]
        return out

    def observed(self, station: str, idx: np.ndarray) -> np.ndarray:
        return self._take(self._obs.get(station), idx)

    def historical(self, station: str, idx: np.ndarray) -> np.ndarray:
        if station not in self._hist:
            raise MissingProfile(f"no daily profile for {station}")
        return self._take(self._hist[station], idx)

    def term(self, station: str, now: np.ndarray, offset: int) -> np.ndarray:
        if offset < 0:
            return self.observed(station, now + offset)
        return self.historical(station, now + offset)


def _ramp_terms(timeline: FlowTimeline, g: MotorwayGraph, ramp: RampAlignment, now: np.ndarray,
                r: int, method: Method) -> np.ndarray:
    if method is Method.BKTR:
        return timeline.term(ramp.station, now, ramp.offset)
    i, t1, t2 = interpolation_window(ramp.distance, g, r)
    first = timeline.term(ramp.station, now, i)
    if t2 == 0:
        return first
    second = timeline.term(ramp.station, now, i + 1)
    if t1 == 0:
        return second
    return (t1 * first + t2 * second) / g.interval


def forecast_series(g: MotorwayGraph, timeline: FlowTimeline, method: Method, v: str,
                    r: int, p: int, targets: np.ndarray) -> np.ndarray:
    """Forecasts for every target interval index; NaN where an input is missing.

    Raises:
        Infeasible: for the graph methods when ``v`` has no upstream origin.
    """
    targets = np.asarray(targets, dtype=int)
    if method is Method.DPP:
        return timeline.historical(v, targets)
    now = targets - p
    u = find_optimal_upstream(g, v, r, p)
    trav = traverse_collect(g, u, v, r)
    raw = timeline.observed(u, now - r)
    for ramp in trav.entries:
        raw = raw + _ramp_terms(timeline, g, ramp, now, r, method)
    for ramp in trav.exits:
        raw = raw + -_ramp_terms(timeline, g, ramp, now, r, method)
    return np.maximum(raw, 0.0)
