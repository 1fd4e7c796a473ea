"""Expression evaluation over stock panels and IC/RankIC fitness.

A panel is an immutable stocks x dates grid of the six raw features, with
NaN marking missing cells. Evaluation walks the expression AST with
vectorized numpy kernels under totalized semantics: missing inputs and
non-finite intermediates become missing outputs instead of raising, so
any expression the parser accepts can be scored.

Rolling operators use trailing windows ending at the current day and
require the full window to be present, so every emitted value is computed
from complete history and nothing ever looks at future columns. Fitness
is the average per-day cross-sectional Pearson correlation (IC) between
scores and forward returns; RankIC is the same computation on within-day
ranks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .alpha_dsl import (
    FEATURES,
    AlphaExpr,
    BinaryOp,
    ConstLeaf,
    CrossSectionalOp,
    FeatureLeaf,
    RollingOp,
    UnaryOp,
    unparse,
)

__all__ = [
    "Panel",
    "FitnessReport",
    "evaluate",
    "forward_returns",
    "daily_pearson",
    "ic",
    "rank_ic",
    "fitness",
]

_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Panel:
    """Aligned per-feature matrices of shape n_stocks x n_dates.

    ``warmup`` marks leading date columns carried only as rolling-window
    context; metric computations skip them.
    """

    tickers: tuple[str, ...]
    dates: tuple[str, ...]
    features: dict[str, np.ndarray]
    warmup: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "dates", tuple(self.dates))
        shape = (len(self.tickers), len(self.dates))
        if set(self.features) != set(FEATURES):
            missing = sorted(set(FEATURES) - set(self.features))
            extra = sorted(set(self.features) - set(FEATURES))
            raise ValueError(f"feature set mismatch: missing {missing}, extra {extra}")
        frozen: dict[str, np.ndarray] = {}
        for name, matrix in self.features.items():
            arr = np.array(matrix, dtype=np.float64, copy=True)
            if arr.shape != shape:
                raise ValueError(f"feature '{name}' has shape {arr.shape}, want {shape}")
            present = np.isfinite(arr)
            if name == "volume":
                if np.any(arr[present] < 0):
                    raise ValueError("negative volume")
            elif np.any(arr[present] <= 0):
                raise ValueError(f"non-positive price in feature '{name}'")
            arr.flags.writeable = False
            frozen[name] = arr
        object.__setattr__(self, "features", frozen)
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if not 0 <= self.warmup <= len(self.dates):
            raise ValueError("warmup outside [0, n_dates]")

    @property
    def n(self) -> int:
        return len(self.tickers)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    def feature(self, name: str) -> np.ndarray:
        return self.features[name]

    def restrict(self, start: int, stop: int, warmup: int = 0) -> "Panel":
        """New panel over date columns ``[start, stop)`` with the given warmup."""
        if not 0 <= start <= stop <= self.n_dates:
            raise ValueError(f"column range [{start}, {stop}) outside panel")
        return Panel(
            tickers=self.tickers,
            dates=self.dates[start:stop],
            features={k: v[:, start:stop] for k, v in self.features.items()},
            warmup=warmup,
        )


@dataclass(frozen=True)
class FitnessReport:
    """IC/RankIC of one expression on one panel; None metrics mean no valid day."""

    ic: float | None
    rank_ic: float | None
    valid_day_count: int
    mean_cross_sectional_coverage: float
    expression_text: str

    def to_dict(self) -> dict:
        return {
            "ic": self.ic,
            "rank_ic": self.rank_ic,
            "valid_day_count": self.valid_day_count,
            "mean_cross_sectional_coverage": self.mean_cross_sectional_coverage,
            "expression_text": self.expression_text,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "FitnessReport":
        return cls(**record)


def _clean(out: np.ndarray) -> np.ndarray:
    out[~np.isfinite(out)] = np.nan
    return out


# Sliding-window reductions are batched over row blocks so the
# (rows, T-w+1, w) intermediate stays within a fixed memory budget.
_BLOCK_ELEMENTS = 4_000_000


def _row_blocks(n: int, t: int, window: int):
    per_row = max(1, (t - window + 1) * window)
    rows = max(1, _BLOCK_ELEMENTS // per_row)
    for start in range(0, n, rows):
        yield start, min(n, start + rows)


def _apply_rolling(x: np.ndarray, window: int, block_fn) -> np.ndarray:
    """Trailing-window reduction; columns without a full window are missing."""
    n, t = x.shape
    out = np.full((n, t), np.nan)
    if window > t:
        return out
    for lo, hi in _row_blocks(n, t, window):
        windows = sliding_window_view(x[lo:hi], window, axis=1)
        out[lo:hi, window - 1 :] = block_fn(windows)
    return out


def _ts_rank_block(windows: np.ndarray) -> np.ndarray:
    w = windows.shape[-1]
    if w == 1:
        return np.where(np.isfinite(windows[..., 0]), 0.5, np.nan)
    ranks = rankdata(windows, method="average", axis=-1)
    out = (ranks[..., -1] - 1.0) / (w - 1.0)
    out[np.isnan(windows).any(axis=-1)] = np.nan
    return out


def _rolling_pair(x: np.ndarray, y: np.ndarray, window: int, kind: str) -> np.ndarray:
    n, t = x.shape
    out = np.full((n, t), np.nan)
    if window > t or window < 2:
        return out
    with np.errstate(all="ignore"):
        for lo, hi in _row_blocks(n, t, window):
            wx = sliding_window_view(x[lo:hi], window, axis=1)
            wy = sliding_window_view(y[lo:hi], window, axis=1)
            dx = wx - wx.mean(axis=-1, keepdims=True)
            dy = wy - wy.mean(axis=-1, keepdims=True)
            num = (dx * dy).sum(axis=-1)
            if kind == "cov":
                out[lo:hi, window - 1 :] = num / (window - 1)
            else:
                den = np.sqrt((dx * dx).sum(axis=-1) * (dy * dy).sum(axis=-1))
                out[lo:hi, window - 1 :] = np.clip(num / den, -1.0, 1.0)
    return out


def _shift(x: np.ndarray, lag: int) -> np.ndarray:
    out = np.full_like(x, np.nan)
    if lag < x.shape[1]:
        out[:, lag:] = x[:, : x.shape[1] - lag]
    return out


def _masked_ranks(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Within-column average ranks of masked-in entries; others NaN.

    Missing cells rank behind every present value via a +inf sentinel, so
    present entries keep exactly the ranks they would get on the masked
    subset alone.
    """
    sentinel = np.where(mask, x, np.inf)
    ranks = rankdata(sentinel, method="average", axis=0).astype(np.float64)
    ranks[~mask] = np.nan
    return ranks


def _cs_rank(x: np.ndarray) -> np.ndarray:
    mask = np.isfinite(x)
    counts = mask.sum(axis=0)
    ranks = _masked_ranks(x, mask)
    with np.errstate(all="ignore"):
        out = (ranks - 1.0) / (counts - 1.0)
    out[:, counts == 1] = np.where(mask[:, counts == 1], 0.5, np.nan)
    return out


def _ts_std_block(windows: np.ndarray) -> np.ndarray:
    if windows.shape[-1] <= 1:
        return np.full(windows.shape[:-1], np.nan)
    return windows.std(axis=-1, ddof=1)


_ROLLING_REDUCERS = {
    "ts_mean": lambda w: w.mean(axis=-1),
    "ts_std": _ts_std_block,
    "ts_sum": lambda w: w.sum(axis=-1),
    "ts_min": lambda w: w.min(axis=-1),
    "ts_max": lambda w: w.max(axis=-1),
    "ts_rank": _ts_rank_block,
}


def _eval_node(expr: AlphaExpr, panel: Panel) -> np.ndarray:
    if isinstance(expr, FeatureLeaf):
        return panel.feature(expr.feature).copy()
    if isinstance(expr, ConstLeaf):
        return np.full((panel.n, panel.n_dates), float(expr.value))
    with np.errstate(all="ignore"):
        if isinstance(expr, UnaryOp):
            x = _eval_node(expr.child, panel)
            if expr.op == "neg":
                return _clean(-x)
            if expr.op == "abs":
                return _clean(np.abs(x))
            if expr.op == "sign":
                return _clean(np.sign(x))
            if expr.op == "inv":
                return _clean(np.where(np.abs(x) < _EPS, np.nan, 1.0 / x))
            if expr.op == "log1p_signed":
                return _clean(np.sign(x) * np.log1p(np.abs(x)))
        if isinstance(expr, BinaryOp):
            x = _eval_node(expr.left, panel)
            y = _eval_node(expr.right, panel)
            if expr.op == "add":
                return _clean(x + y)
            if expr.op == "sub":
                return _clean(x - y)
            if expr.op == "mul":
                return _clean(x * y)
            if expr.op == "div_safe":
                return _clean(np.where(np.abs(y) < _EPS, np.nan, x / y))
            if expr.op == "max":
                return _clean(np.maximum(x, y))
            if expr.op == "min":
                return _clean(np.minimum(x, y))
            if expr.op == "pow_signed":
                return _clean(np.sign(x) * np.power(np.abs(x), y))
        if isinstance(expr, RollingOp):
            x = _eval_node(expr.child, panel)
            if expr.op == "ts_delay":
                return _clean(_shift(x, expr.window))
            if expr.op == "ts_delta":
                return _clean(x - _shift(x, expr.window))
            if expr.op in _ROLLING_REDUCERS:
                return _clean(_apply_rolling(x, expr.window, _ROLLING_REDUCERS[expr.op]))
            y = _eval_node(expr.child2, panel)
            kind = "cov" if expr.op == "ts_cov" else "corr"
            return _clean(_rolling_pair(x, y, expr.window, kind))
        if isinstance(expr, CrossSectionalOp):
            return _clean(_cs_rank(_eval_node(expr.child, panel)))
    raise ValueError(f"unknown operator '{getattr(expr, 'op', expr)!r}'")


def evaluate(expr: AlphaExpr, panel: Panel) -> np.ndarray:
    """Score matrix of the expression on the panel (NaN = missing)."""
    return _eval_node(expr, panel)


def forward_returns(panel: Panel, horizon: int = 5) -> np.ndarray:
    """Simple close-to-close returns over the next ``horizon`` days.

    The last ``horizon`` columns are entirely missing; so is any cell
    where either close is missing.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    close = panel.feature("close")
    n, t = close.shape
    out = np.full((n, t), np.nan)
    if horizon < t:
        with np.errstate(all="ignore"):
            out[:, : t - horizon] = close[:, horizon:] / close[:, : t - horizon] - 1.0
    return _clean(out)


def daily_pearson(scores: np.ndarray, returns: np.ndarray) -> np.ndarray:
    """Per-day cross-sectional Pearson correlation; NaN marks invalid days.

    A day is valid iff at least two stocks have both values present and
    both cross-sections have nonzero variance. Invalid days are skipped by
    the averaging metrics, never zero-filled.
    """
    if scores.shape != returns.shape:
        raise ValueError("score and return matrices must share shape")
    mask = np.isfinite(scores) & np.isfinite(returns)
    counts = mask.sum(axis=0)
    z = np.where(mask, scores, 0.0)
    f = np.where(mask, returns, 0.0)
    with np.errstate(all="ignore"):
        mz = z.sum(axis=0) / counts
        mf = f.sum(axis=0) / counts
        dz = np.where(mask, scores - mz, 0.0)
        df = np.where(mask, returns - mf, 0.0)
        num = (dz * df).sum(axis=0)
        var_z = (dz * dz).sum(axis=0)
        var_f = (df * df).sum(axis=0)
        corr = np.clip(num / np.sqrt(var_z * var_f), -1.0, 1.0)
    corr[(counts < 2) | ~(var_z > 0) | ~(var_f > 0)] = np.nan
    return corr


def _per_day_ranks(scores: np.ndarray, returns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Within-day average ranks over stocks where both values are present."""
    mask = np.isfinite(scores) & np.isfinite(returns)
    return _masked_ranks(scores, mask), _masked_ranks(returns, mask)


def ic(scores: np.ndarray, returns: np.ndarray) -> float | None:
    """Average per-day Pearson correlation; None when no day is valid."""
    daily = daily_pearson(scores, returns)
    valid = np.isfinite(daily)
    if not valid.any():
        return None
    return float(daily[valid].mean())


def rank_ic(scores: np.ndarray, returns: np.ndarray) -> float | None:
    """IC computed on within-day ranks (Spearman); None when no day is valid."""
    rz, rf = _per_day_ranks(scores, returns)
    return ic(rz, rf)


def fitness(expr: AlphaExpr, panel: Panel, horizon: int = 5) -> FitnessReport:
    """Score the expression end to end on one panel.

    Warm-up context columns are excluded from the metric days; the IC
    field is the selection key for the search loops.
    """
    scores = evaluate(expr, panel)
    returns = forward_returns(panel, horizon)
    s = panel.warmup
    z, f = scores[:, s:], returns[:, s:]
    daily = daily_pearson(z, f)
    valid = np.isfinite(daily)
    count = int(valid.sum())
    ic_value = float(daily[valid].mean()) if count else None
    rank_value = rank_ic(z, f) if count else None
    n = panel.n
    coverage = float(np.isfinite(z).sum(axis=0).mean() / n) if z.size else 0.0
    return FitnessReport(
        ic=ic_value,
        rank_ic=rank_value,
        valid_day_count=count,
        mean_cross_sectional_coverage=coverage,
        expression_text=unparse(expr),
    )
