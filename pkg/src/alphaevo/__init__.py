"""Evolutionary alpha mining with tree-structured thoughts.

Candidate alphas are represented as hierarchical natural-language thought
trees, varied by LLM-backed semantic operators, grounded into a typed
expression DSL, and scored by cross-sectional IC/RankIC against forward
returns on OHLCV stock panels. A symbol-level GP baseline searches the
same DSL, and a top-k/drop-m daily backtest turns mined scores into
equity curves.
"""

__version__ = "0.1.0"
