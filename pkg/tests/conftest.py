from __future__ import annotations

import numpy as np
import pytest

from alphaevo.eval_engine import Panel
from alphaevo.thought_tree import ThoughtNode, ThoughtTree


def panel_from_close(close, tickers=None, dates=None, volume=None) -> Panel:
    """Build a fully valid panel whose other features derive from close."""
    close = np.asarray(close, dtype=np.float64)
    n, t = close.shape
    tickers = tickers or tuple(f"S{i:03d}" for i in range(n))
    dates = dates or tuple(f"2020-01-{d + 1:02d}" for d in range(t))
    if volume is None:
        volume = np.ones_like(close)
    with np.errstate(all="ignore"):
        features = {
            "open": close.copy(),
            "high": close * 1.01,
            "low": close * 0.99,
            "close": close.copy(),
            "volume": np.asarray(volume, dtype=np.float64),
            "vwap": close.copy(),
        }
    return Panel(tickers=tuple(tickers), dates=tuple(dates), features=features)


def example_thought_tree() -> ThoughtTree:
    """Seven-node volume-weighted close-to-open return idea (depth 3)."""
    return ThoughtTree(
        ThoughtNode(
            "Volume Weighted Close-to-Open Return",
            (
                ThoughtNode(
                    "Calculate Close-to-Open Return",
                    (ThoughtNode("Use Close price"), ThoughtNode("Use Open price")),
                ),
                ThoughtNode(
                    "Weight by Volume",
                    (ThoughtNode("Use Volume"), ThoughtNode("Multiplied by Return")),
                ),
            ),
        )
    )


@pytest.fixture
def vwco_tree() -> ThoughtTree:
    return example_thought_tree()


@pytest.fixture
def tiny_panel() -> Panel:
    return panel_from_close([[10.0, 11.0, 12.0]], tickers=("A",))
