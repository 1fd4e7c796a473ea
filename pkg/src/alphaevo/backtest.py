"""Daily top-k/drop-m portfolio simulation for mined alpha scores.

Execution convention: stocks are ranked on day t's scores and the
resulting equal-weight portfolio earns close-to-close returns over
t -> t+1, so nothing trades on information it does not yet have. On the
first tradable day the portfolio takes the top k scored stocks outright;
afterwards each rebalance swaps the m worst-ranked holdings for the m
best-ranked outsiders, but only where the outsider actually ranks higher,
so a settled portfolio stays put. Score ties rank lexicographically by
ticker, which makes every curve reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .eval_engine import Panel

__all__ = [
    "BacktestConfig",
    "PortfolioState",
    "EquityCurve",
    "rebalance",
    "run_backtest",
    "benchmark_curve",
]


@dataclass(frozen=True)
class BacktestConfig:
    top_k: int = 50
    drop_m: int = 5
    cost_rate: float = 0.0

    def __post_init__(self):
        if not 1 <= self.drop_m <= self.top_k:
            raise ValueError("need 1 <= drop_m <= top_k")
        if self.cost_rate < 0:
            raise ValueError("cost_rate must be >= 0")


@dataclass(frozen=True)
class PortfolioState:
    """Equal-weight holdings; empty before the first tradable day."""

    holdings: tuple[str, ...] = ()

    @property
    def weights(self) -> dict[str, float]:
        if not self.holdings:
            return {}
        w = 1.0 / len(self.holdings)
        return {ticker: w for ticker in self.holdings}


@dataclass(frozen=True)
class EquityCurve:
    dates: tuple[str, ...]
    values: tuple[float, ...]  # cumulative return, starts at 0
    turnover: tuple[float, ...]

    @property
    def terminal_value(self) -> float:
        return self.values[-1] if self.values else 0.0


def _ranked(tickers, day_scores: dict[str, float]) -> list[str]:
    """Best-first by (score desc, ticker asc); missing scores rank worst."""
    return sorted(
        tickers,
        key=lambda t: (-day_scores.get(t, -math.inf), t),
    )


def rebalance(
    state: PortfolioState, day_scores: dict[str, float], config: BacktestConfig
) -> PortfolioState:
    """Next holdings given today's valid scores.

    With no current holdings, take the top_k best-scored outright (fewer
    on degraded days). Otherwise swap up to drop_m worst holdings for
    strictly better-ranked outsiders and top back up to top_k if slots
    are free.
    """
    if not state.holdings:
        picked = _ranked(day_scores, day_scores)[: config.top_k]
        return PortfolioState(holdings=tuple(sorted(picked)))
    held = list(state.holdings)
    outsiders = _ranked([t for t in day_scores if t not in state.holdings], day_scores)
    worst_first = list(reversed(_ranked(held, day_scores)))
    swaps = 0
    for holding in worst_first:
        if swaps >= config.drop_m or not outsiders:
            break
        challenger = outsiders[0]
        holding_score = day_scores.get(holding, -math.inf)
        if day_scores[challenger] > holding_score:
            held.remove(holding)
            held.append(outsiders.pop(0))
            swaps += 1
        else:
            break
    while len(held) < config.top_k and outsiders:
        held.append(outsiders.pop(0))
    return PortfolioState(holdings=tuple(sorted(held)))


def _one_sided_turnover(old: dict[str, float], new: dict[str, float]) -> float:
    keys = set(old) | set(new)
    return 0.5 * sum(abs(new.get(k, 0.0) - old.get(k, 0.0)) for k in keys)


def run_backtest(scores: np.ndarray, panel: Panel, config: BacktestConfig) -> EquityCurve:
    """Simulate the strategy over the panel's metric dates.

    ``scores`` must share the panel's axes. Holdings that lose their close
    price are force-exited at the last available close (a zero-return leg).
    Costs are turnover times the configured rate, charged on the leg that
    follows each rebalance.
    """
    close = panel.feature("close")
    if scores.shape != close.shape:
        raise ValueError("scores must share the panel's shape")
    start = panel.warmup
    dates = panel.dates[start:]
    if not dates:
        return EquityCurve(dates=(), values=(), turnover=())
    values = [0.0]
    turnover_series: list[float] = []
    state = PortfolioState()
    compounded = 1.0
    ticker_index = {ticker: i for i, ticker in enumerate(panel.tickers)}

    for k, t in enumerate(range(start, panel.n_dates)):
        # Force-exit holdings that no longer have a price.
        priced = tuple(
            h for h in state.holdings if math.isfinite(close[ticker_index[h], t])
        )
        state = PortfolioState(holdings=priced)
        day_scores = {
            ticker: float(scores[i, t])
            for ticker, i in ticker_index.items()
            if math.isfinite(scores[i, t]) and math.isfinite(close[i, t])
        }
        old_weights = state.weights
        if day_scores:
            state = rebalance(state, day_scores, config)
        turnover = _one_sided_turnover(old_weights, state.weights)
        turnover_series.append(turnover)
        if t + 1 >= panel.n_dates:
            break
        day_return = 0.0
        for ticker, weight in state.weights.items():
            i = ticker_index[ticker]
            if math.isfinite(close[i, t]) and math.isfinite(close[i, t + 1]):
                day_return += weight * (close[i, t + 1] / close[i, t] - 1.0)
        day_return -= turnover * config.cost_rate
        compounded *= 1.0 + day_return
        values.append(compounded - 1.0)

    while len(turnover_series) < len(dates):
        turnover_series.append(0.0)
    return EquityCurve(
        dates=tuple(dates), values=tuple(values), turnover=tuple(turnover_series)
    )


def benchmark_curve(panel: Panel) -> EquityCurve:
    """Equal-weight daily-rebalanced curve over all panel stocks."""
    close = panel.feature("close")
    start = panel.warmup
    dates = panel.dates[start:]
    if not dates:
        return EquityCurve(dates=(), values=(), turnover=())
    values = [0.0]
    compounded = 1.0
    for t in range(start, panel.n_dates - 1):
        both = np.isfinite(close[:, t]) & np.isfinite(close[:, t + 1])
        if both.any():
            day_return = float(
                np.mean(close[both, t + 1] / close[both, t] - 1.0)
            )
        else:
            day_return = 0.0
        compounded *= 1.0 + day_return
        values.append(compounded - 1.0)
    turnover = tuple(0.0 for _ in dates)
    return EquityCurve(dates=tuple(dates), values=tuple(values), turnover=turnover)
