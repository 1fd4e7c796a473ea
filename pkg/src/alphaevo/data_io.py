"""Panel ingestion, chronological splits, and seeded synthetic panels.

Input files use a long (tidy) layout, one row per (date, ticker):

    date,ticker,open,high,low,close,volume,vwap
    2020-01-02,S000,10.1,10.4,10.0,10.2,51000.0,10.15

The loader pivots to a Panel with sorted date and ticker axes; pairs
absent from the file become missing cells. Prices are expected to be
forward-adjusted upstream; the loader validates but never adjusts.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from . import alpha_dsl, eval_engine
from .alpha_dsl import MAX_WINDOW
from .eval_engine import Panel

__all__ = [
    "DataError",
    "SplitSpec",
    "PlantedSignal",
    "EXPECTED_HEADER",
    "DEFAULT_SPLIT_CONTEXT",
    "load_panel",
    "save_panel",
    "split",
    "synthetic_panel",
]

EXPECTED_HEADER = ("date", "ticker", "open", "high", "low", "close", "volume", "vwap")

# Leading context carried into each split so rolling warm-up and forward
# returns are computable right at the boundary: the evaluation horizon
# plus the largest admissible rolling window, clipped to available history.
DEFAULT_SPLIT_CONTEXT = MAX_WINDOW + 5


class DataError(ValueError):
    """Malformed input data; message carries the offending line when known."""


@dataclass(frozen=True)
class SplitSpec:
    """Closed-open date intervals for train / validation / test."""

    train: tuple[str, str]
    validation: tuple[str, str]
    test: tuple[str, str]

    def __post_init__(self):
        for name, (start, end) in self.items():
            _check_iso(start, f"{name} start")
            _check_iso(end, f"{name} end")
            if start >= end:
                raise DataError(f"{name} range [{start}, {end}) is empty")
        ordered = [self.train, self.validation, self.test]
        for (_, prev_end), (next_start, _) in zip(ordered, ordered[1:]):
            if prev_end > next_start:
                raise DataError("split ranges must be chronological and non-overlapping")

    def items(self):
        return (("train", self.train), ("validation", self.validation), ("test", self.test))


def _check_iso(text: str, what: str) -> None:
    try:
        date.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"{what} is not an ISO date: {text!r}") from exc


def load_panel(path: str) -> Panel:
    """Load a long-format CSV into a Panel; reject malformed content."""
    cells: dict[tuple[str, str], list[float]] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(header) != EXPECTED_HEADER:
            raise DataError(
                f"{path}: malformed header {header!r}, want {','.join(EXPECTED_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(EXPECTED_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(EXPECTED_HEADER)} fields")
            day, ticker = row[0], row[1]
            _check_iso(day, f"{path}:{lineno}: date")
            if not ticker:
                raise DataError(f"{path}:{lineno}: empty ticker")
            key = (day, ticker)
            if key in cells:
                raise DataError(f"{path}:{lineno}: duplicate (date, ticker) {key}")
            values: list[float] = []
            for name, cell in zip(EXPECTED_HEADER[2:], row[2:]):
                if cell == "":
                    values.append(math.nan)
                    continue
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: unparsable {name} value {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataError(f"{path}:{lineno}: non-finite {name} value")
                if name == "volume":
                    if value < 0:
                        raise DataError(f"{path}:{lineno}: negative volume")
                elif value <= 0:
                    raise DataError(f"{path}:{lineno}: non-positive {name} price")
                values.append(value)
            cells[key] = values
    if not cells:
        raise DataError(f"{path}: no data rows")
    dates = tuple(sorted({k[0] for k in cells}))
    tickers = tuple(sorted({k[1] for k in cells}))
    date_index = {d: j for j, d in enumerate(dates)}
    ticker_index = {s: i for i, s in enumerate(tickers)}
    features = {
        name: np.full((len(tickers), len(dates)), np.nan)
        for name in EXPECTED_HEADER[2:]
    }
    for (day, ticker), values in cells.items():
        i, j = ticker_index[ticker], date_index[day]
        for name, value in zip(EXPECTED_HEADER[2:], values):
            features[name][i, j] = value
    return Panel(tickers=tickers, dates=dates, features=features)


def save_panel(panel: Panel, path: str) -> None:
    """Write the long-format fixture file; all-missing pairs are omitted."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(EXPECTED_HEADER)
        matrices = [panel.feature(name) for name in EXPECTED_HEADER[2:]]
        for j, day in enumerate(panel.dates):
            for i, ticker in enumerate(panel.tickers):
                values = [float(m[i, j]) for m in matrices]
                if all(math.isnan(v) for v in values):
                    continue
                writer.writerow(
                    [day, ticker] + ["" if math.isnan(v) else repr(v) for v in values]
                )


def split(
    panel: Panel, spec: SplitSpec, *, context_days: int = DEFAULT_SPLIT_CONTEXT
) -> tuple[Panel, Panel, Panel]:
    """Partition the date axis into train / validation / test panels.

    Each split keeps up to ``context_days`` extra leading dates (marked as
    warmup) so rolling windows are fully formed at the range start; metric
    days never overlap across splits.
    """
    out: list[Panel] = []
    for name, (start, end) in spec.items():
        lo = bisect.bisect_left(panel.dates, start)
        hi = bisect.bisect_left(panel.dates, end)
        if lo == hi:
            raise DataError(f"{name} range [{start}, {end}) selects no dates")
        ctx = max(0, lo - context_days)
        out.append(panel.restrict(ctx, hi, warmup=lo - ctx))
    return out[0], out[1], out[2]


@dataclass(frozen=True)
class PlantedSignal:
    """Construct prices so forward returns track a target expression.

    Each day's cross-sectional z-score of the expression, plus optional
    noise, becomes the realized forward return over ``horizon`` days, so
    the expression's own IC on the panel approaches 1 as noise goes to 0.
    """

    expression: str
    strength: float = 0.01
    noise: float = 0.0
    horizon: int = 5


def _weekday_calendar(start: str, count: int) -> tuple[str, ...]:
    day = date.fromisoformat(start)
    out: list[str] = []
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += timedelta(days=1)
    return tuple(out)


def synthetic_panel(
    seed: int,
    n: int,
    t: int,
    signal: PlantedSignal | None = None,
    *,
    start: str = "2020-01-02",
    missing_rate: float = 0.0,
) -> Panel:
    """Seeded random OHLCV+vwap panel, optionally with a planted signal.

    Prices follow a geometric random walk; volumes are log-normal; open,
    high, low and vwap are derived from close so that
    high >= max(open, close) >= min(open, close) >= low on every cell.
    """
    if n < 2 or t < 10:
        raise ValueError("need n >= 2 stocks and t >= 10 dates")
    rng = np.random.default_rng(seed)
    tickers = tuple(f"S{i:03d}" for i in range(n))
    dates = _weekday_calendar(start, t)

    base = rng.uniform(10.0, 100.0, size=n)
    steps = np.exp(rng.normal(0.0, 0.02, size=(n, t)))
    close = base[:, None] * np.cumprod(steps, axis=1)
    volume = np.exp(rng.normal(11.0, 0.5, size=(n, t)))

    gap = rng.normal(0.0, 0.003, size=(n, t))
    hi_pad = np.abs(rng.normal(0.0, 0.004, size=(n, t)))
    lo_pad = np.abs(rng.normal(0.0, 0.004, size=(n, t)))
    vwap_mix = rng.uniform(0.0, 1.0, size=(n, t))

    def derived(close_m: np.ndarray) -> dict[str, np.ndarray]:
        open_m = close_m * np.clip(1.0 + gap, 0.5, 1.5)
        high = np.maximum(open_m, close_m) * (1.0 + hi_pad)
        low = np.minimum(open_m, close_m) * np.clip(1.0 - lo_pad, 0.5, 1.0)
        vwap = low + (high - low) * vwap_mix
        return {
            "open": open_m, "high": high, "low": low,
            "close": close_m, "volume": volume, "vwap": vwap,
        }

    if signal is not None:
        expr = alpha_dsl.parse(signal.expression)
        h = signal.horizon
        if h < 1 or h >= t - 2:
            raise ValueError("planted horizon incompatible with panel length")
        eps = rng.normal(0.0, 1.0, size=(n, t))
        drift = np.exp(rng.normal(0.0, 0.01, size=(n, t)))
        for u in range(h + 1, t):
            day = u - h
            probe = Panel(tickers=tickers, dates=dates, features=derived(close))
            x = eval_engine.evaluate(expr, probe)[:, day]
            present = np.isfinite(x)
            if present.sum() >= 2 and np.std(x[present]) > 1e-12:
                z = np.zeros(n)
                z[present] = (x[present] - x[present].mean()) / x[present].std()
                move = signal.strength * (z + signal.noise * eps[:, u])
                close[:, u] = close[:, u - h] * np.clip(1.0 + move, 0.5, 2.0)
            else:
                close[:, u] = close[:, u - 1] * drift[:, u]

    features = derived(close)
    if missing_rate > 0.0:
        for name in features:
            holes = rng.random(size=(n, t)) < missing_rate
            matrix = features[name].copy()
            matrix[holes] = np.nan
            features[name] = matrix
    return Panel(tickers=tickers, dates=dates, features=features)
