"""Forecast metrics and the train/test evaluation sweep."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (ConstantActual, EmptyInput, EmptyTestRange, Infeasible, InvalidPlan,
                     LengthMismatch, MissingData, NoFeasibleStations)
from .flowdata import DailyProfile, FlowStore
from .graph import MotorwayGraph
from .predictors import FlowTimeline, Method, feasible_targets, forecast_series

HORIZONS = range(1, 6)
BOXPLOT_HEADER = ["method", "station", "r", "p", "q1", "median", "q3", "lo_whisker", "hi_whisker", "mean"]


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if pred.shape != actual.shape:
        raise LengthMismatch(f"{pred.size} predictions for {actual.size} observations")
    if pred.size == 0:
        raise EmptyInput("no points to score")
    if np.isnan(pred).any() or np.isnan(actual).any():
        raise MissingData("metric inputs contain NaN")
    return pred, actual


def rmse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def r_squared(pred, actual) -> float:
    """Coefficient of determination, ``1 - SS_res / SS_tot``."""
    pred, actual = _pair(pred, actual)
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantActual("actual values are constant")
    return 1.0 - float(np.sum((pred - actual) ** 2)) / ss_tot


def smape(pred, actual) -> float:
    """Symmetric MAPE in percent with denominator ``|pred| + |actual|``.

    Terms where both values are zero count as zero error, so the result
    always lies in [0, 100].
    """
    pred, actual = _pair(pred, actual)
    num = np.abs(pred - actual)
    den = np.abs(pred) + np.abs(actual)
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(100.0 * np.mean(ratio))


@dataclass(frozen=True)
class Accumulator:
    """Mergeable sufficient statistics for pooled RMSE, R^2 and SMAPE."""

    n: int = 0
    sse: float = 0.0
    ratio_sum: float = 0.0
    mean_actual: float = 0.0
    m2_actual: float = 0.0

    @classmethod
    def of(cls, pred: np.ndarray, actual: np.ndarray) -> "Accumulator":
        num = np.abs(pred - actual)
        den = np.abs(pred) + np.abs(actual)
        ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        mean = float(actual.mean())
        return cls(int(pred.size), float(np.sum((pred - actual) ** 2)), float(ratio.sum()),
                   mean, float(np.sum((actual - mean) ** 2)))

    def merge(self, other: "Accumulator") -> "Accumulator":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean_actual - self.mean_actual
        mean = self.mean_actual + delta * other.n / n
        m2 = self.m2_actual + other.m2_actual + delta * delta * self.n * other.n / n
        return Accumulator(n, self.sse + other.sse, self.ratio_sum + other.ratio_sum, mean, m2)

    def metrics(self) -> dict:
        if self.n == 0:
            raise EmptyInput("no points accumulated")
        return {
            "rmse": math.sqrt(self.sse / self.n),
            "r2": None if self.m2_actual == 0 else 1.0 - self.sse / self.m2_actual,
            "smape": 100.0 * self.ratio_sum / self.n,
            "n": self.n,
        }


@dataclass(frozen=True)
class BoxStats:
    q1: float
    median: float
    q3: float
    lo_whisker: float
    hi_whisker: float
    mean: float

    @classmethod
    def of(cls, values: np.ndarray) -> "BoxStats":
        q1, med, q3 = (float(x) for x in np.percentile(values, [25, 50, 75]))
        iqr = q3 - q1
        inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
        return cls(q1, med, q3, float(inside.min()), float(inside.max()), float(values.mean()))


@dataclass(frozen=True)
class CellResult:
    method: Method
    station: str
    r: int
    p: int
    rmse: float
    r2: float | None
    smape: float
    n: int
    skipped: int
    acc: Accumulator = field(repr=False)
    box: BoxStats = field(repr=False)


@dataclass(frozen=True)
class EvaluationPlan:
    """Which days, stations, methods and horizons to score.

    ``stations`` of ``None`` means every mainline station.
    """

    train: tuple[date, ...]
    test: tuple[date, ...]
    stations: tuple[str, ...] | None = None
    methods: tuple[Method, ...] = (Method.DPP, Method.BKTR, Method.INTR)
    r_values: tuple[int, ...] = (1,)
    p_values: tuple[int, ...] = (1,)

    def validate(self) -> None:
        if set(self.train) & set(self.test):
            raise InvalidPlan("train and test days overlap")
        if not self.test:
            raise EmptyTestRange("test range is empty")
        if not self.methods:
            raise InvalidPlan("no methods selected")
        for h in (*self.r_values, *self.p_values):
            if h not in HORIZONS:
                raise InvalidPlan(f"horizon {h} outside 1..5")
        if not self.r_values or not self.p_values:
            raise InvalidPlan("empty horizon list")


@dataclass
class MetricsReport:
    cells: dict[tuple[Method, str, int, int], CellResult]
    skipped: dict[tuple[Method, int, int], int]
    infeasible: dict[tuple[int, int], tuple[str, ...]]

    def cell(self, method: Method, station: str, r: int, p: int) -> CellResult | None:
        return self.cells.get((method, station, r, p))

    def stations(self, method: Method, r: int, p: int) -> list[str]:
        return sorted(s for (m, s, rr, pp) in self.cells if m is method and rr == r and pp == p)

    def pooled(self, method: Method, r: int, p: int, stations: Iterable[str] | None = None) -> Accumulator:
        names = self.stations(method, r, p) if stations is None else sorted(stations)
        acc = Accumulator()
        for s in names:
            cell = self.cells.get((method, s, r, p))
            if cell is not None:
                acc = acc.merge(cell.acc)
        return acc

    def aggregate(self, method: Method, r: int, p: int, stations: Iterable[str] | None = None) -> dict:
        """Metrics over all residuals of the cell pooled across stations."""
        return self.pooled(method, r, p, stations).metrics()

    def to_dict(self) -> dict:
        out: dict = {}
        agg: dict = {}
        coverage: dict = {}
        for (method, station, r, p), cell in sorted(self.cells.items(), key=lambda kv: (kv[0][0].value, *kv[0][1:])):
            out.setdefault(method.value, {}).setdefault(station, {})[f"{r},{p}"] = {
                "rmse": cell.rmse, "r2": cell.r2, "smape": cell.smape, "n": cell.n}
        combos = sorted({(m.value, r, p) for (m, _, r, p) in self.cells})
        for mv, r, p in combos:
            agg.setdefault(mv, {})[f"{r},{p}"] = self.aggregate(Method(mv), r, p)
        for (method, r, p), n_skip in sorted(self.skipped.items(), key=lambda kv: (kv[0][0].value, kv[0][1], kv[0][2])):
            pred = self.pooled(method, r, p).n
            coverage.setdefault(method.value, {})[f"{r},{p}"] = {"scored": pred, "skipped": n_skip}
        out["aggregate"] = agg
        out["coverage"] = coverage
        out["infeasible"] = {f"{r},{p}": list(s) for (r, p), s in sorted(self.infeasible.items())}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    def write_boxplot(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BOXPLOT_HEADER)
            for (method, station, r, p), c in sorted(self.cells.items(), key=lambda kv: (kv[0][0].value, *kv[0][1:])):
                b = c.box
                w.writerow([method.value, station, r, p] +
                           [repr(x) for x in (b.q1, b.median, b.q3, b.lo_whisker, b.hi_whisker, b.mean)])


def _score(method, station, r, p, pred, actual) -> tuple[CellResult | None, int]:
    ok = ~(np.isnan(pred) | np.isnan(actual))
    skipped = int(ok.size - ok.sum())
    if not ok.any():
        return None, skipped
    pred, actual = pred[ok], actual[ok]
    try:
        r2 = r_squared(pred, actual)
    except ConstantActual:
        r2 = None
    cell = CellResult(method, station, r, p, rmse(pred, actual), r2, smape(pred, actual),
                      int(pred.size), skipped, Accumulator.of(pred, actual),
                      BoxStats.of(np.abs(pred - actual)))
    return cell, skipped


def run_evaluation(g: MotorwayGraph, store: FlowStore, profiles: Mapping[str, DailyProfile],
                   plan: EvaluationPlan, jobs: int = 1) -> MetricsReport:
    """Score every (method, feasible station, r, p) cell on the test days.

    Test timestamps are forecast targets: each interval of a test day is
    predicted from data available ``p`` intervals earlier. Every method is
    scored on the same stations, those where the graph methods are
    feasible for the given ``(r, p)``.
    """
    plan.validate()
    dates = store.dates()
    test_days = sorted(d for d in set(plan.test) if d in set(dates))
    if not test_days:
        raise EmptyTestRange("no flow data on the test days")
    timeline = FlowTimeline(store, profiles)
    targets = timeline.day_indices(test_days)
    wanted = list(plan.stations) if plan.stations is not None else list(g.mainline)
    for s in wanted:
        if not g.is_mainline(s):
            raise InvalidPlan(f"{s!r} is not a mainline station")

    combos = [(r, p) for r in sorted(set(plan.r_values)) for p in sorted(set(plan.p_values))]
    feasible = {(r, p): feasible_targets(g, r, p) for r, p in combos}
    infeasible = {rp: tuple(sorted(s for s in wanted if s not in f)) for rp, f in feasible.items()}
    if not any(set(wanted) & f for f in feasible.values()):
        raise NoFeasibleStations("no requested station is feasible for any (r, p)")

    methods = sorted(set(plan.methods), key=lambda m: list(Method).index(m))

    def station_cells(station):
        results = []
        actual = timeline.observed(station, targets)
        for r, p in combos:
            if station not in feasible[(r, p)]:
                continue
            for method in methods:
                try:
                    pred = forecast_series(g, timeline, method, station, r, p, targets)
                except Infeasible:
                    continue
                results.append(((method, station, r, p), *_score(method, station, r, p, pred, actual)))
        return results

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(station_cells, wanted))
    else:
        batches = [station_cells(s) for s in wanted]

    cells = {}
    skipped = {(m, r, p): 0 for m in methods for r, p in combos}
    for batch in batches:
        for key, cell, n_skip in batch:
            skipped[(key[0], key[2], key[3])] += n_skip
            if cell is not None:
                cells[key] = cell
    return MetricsReport(cells, skipped, infeasible)


def parse_horizons(text: str) -> tuple[int, ...]:
    """``"3"``, ``"1..5"`` or ``"1,2,4"`` to a tuple of horizons in 1..5."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = tuple(range(int(lo), int(hi) + 1))
    else:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    if not values or any(v not in HORIZONS for v in values):
        raise ValueError(f"horizons {text!r} must lie in 1..5")
    return values


def parse_dates(text: str) -> tuple[date, ...]:
    """ISO dates: ``"2017-10-01..2017-10-31"`` (inclusive) or comma-separated."""
    from datetime import timedelta

    out: list[date] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = (date.fromisoformat(x.strip()) for x in part.split("..", 1))
            if hi < lo:
                raise ValueError(f"empty date range {part!r}")
            out.extend(lo + timedelta(days=k) for k in range((hi - lo).days + 1))
        else:
            out.append(date.fromisoformat(part))
    return tuple(sorted(set(out)))


def common_stations(report: MetricsReport, method: Method, cells: Sequence[tuple[int, int]]) -> list[str]:
    """Stations that have a scored cell for every ``(r, p)`` in ``cells``."""
    sets = [set(report.stations(method, r, p)) for r, p in cells]
    return sorted(set.intersection(*sets)) if sets else []
