from __future__ import annotations

import math
import random

import numpy as np
import pytest

from alphaevo import alpha_dsl, data_io, eval_engine
from alphaevo.alpha_dsl import parse, random_expr
from alphaevo.eval_engine import (
    Panel,
    daily_pearson,
    evaluate,
    fitness,
    forward_returns,
    ic,
    rank_ic,
)

from conftest import panel_from_close
from oracles import naive_ic, naive_rank_ic


def test_panel_invariants():
    with pytest.raises(ValueError):
        panel_from_close([[10.0, -1.0, 12.0]])
    with pytest.raises(ValueError):
        panel_from_close([[10.0, 11.0, 12.0]], volume=[[-5.0, 1.0, 1.0]])
    with pytest.raises(ValueError):
        Panel(("A",), ("2020-01-02", "2020-01-01"), panel_from_close([[1.0, 2.0]]).features)


def test_panel_arrays_are_frozen(tiny_panel):
    with pytest.raises(ValueError):
        tiny_panel.feature("close")[0, 0] = 1.0


def test_evaluate_identity(tiny_panel):
    z = evaluate(parse("close"), tiny_panel)
    assert np.array_equal(z, tiny_panel.feature("close"))


def test_evaluate_delay(tiny_panel):
    z = evaluate(parse("ts_delay(close, 1)"), tiny_panel)
    assert np.array_equal(z, [[np.nan, 10.0, 11.0]], equal_nan=True)


def test_evaluate_rolling_mean(tiny_panel):
    z = evaluate(parse("ts_mean(close, 2)"), tiny_panel)
    assert np.allclose(z, [[np.nan, 10.5, 11.5]], equal_nan=True)


def test_evaluate_delta_and_sum(tiny_panel):
    assert np.allclose(
        evaluate(parse("ts_delta(close, 2)"), tiny_panel),
        [[np.nan, np.nan, 2.0]],
        equal_nan=True,
    )
    assert np.allclose(
        evaluate(parse("ts_sum(close, 3)"), tiny_panel),
        [[np.nan, np.nan, 33.0]],
        equal_nan=True,
    )


def test_missing_propagates_through_window():
    close = np.array([[10.0, np.nan, 12.0, 13.0, 14.0]])
    panel = panel_from_close(close)
    z = evaluate(parse("ts_mean(close, 2)"), panel)
    assert np.array_equal(
        z, [[np.nan, np.nan, np.nan, 12.5, 13.5]], equal_nan=True
    )


def test_div_safe_and_inv():
    panel = panel_from_close([[1.0, 2.0, 4.0]])
    z = evaluate(parse("close / (close - close)"), panel)
    assert np.all(np.isnan(z))
    z = evaluate(parse("inv(close)"), panel)
    assert np.allclose(z, [[1.0, 0.5, 0.25]])


def test_pow_signed_overflow_becomes_missing():
    panel = panel_from_close([[100.0, 100.0, 100.0]])
    z = evaluate(parse("pow_signed(close, close * 2.0)"), panel)  # 100 ** 200
    assert np.all(np.isnan(z))
    z = evaluate(parse("pow_signed(close, 2.0)"), panel)
    assert np.allclose(z, 10_000.0)


def test_cs_rank_maps_to_unit_interval():
    close = np.array([[1.0], [3.0], [2.0], [np.nan]])
    panel = panel_from_close(close, dates=("2020-01-02",))
    z = evaluate(parse("cs_rank(close)"), panel)
    assert np.allclose(z[:3, 0], [0.0, 1.0, 0.5])
    assert math.isnan(z[3, 0])


def test_cs_rank_single_entry_is_midpoint():
    close = np.array([[1.0], [np.nan]])
    panel = panel_from_close(close, dates=("2020-01-02",))
    z = evaluate(parse("cs_rank(close)"), panel)
    assert z[0, 0] == 0.5


def test_ts_rank_within_window():
    panel = panel_from_close([[10.0, 12.0, 11.0, 13.0]])
    z = evaluate(parse("ts_rank(close, 3)"), panel)
    # windows: [10,12,11] -> rank of 11 is 2 -> 0.5; [12,11,13] -> rank 3 -> 1.0
    assert np.allclose(z, [[np.nan, np.nan, 0.5, 1.0]], equal_nan=True)


def test_ts_corr_matches_perfect_relation():
    close = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
    panel = panel_from_close(close)
    z = evaluate(parse("ts_corr(close, close + close, 3)"), panel)
    assert np.allclose(z[0, 2:], [1.0, 1.0, 1.0])


def test_forward_returns_basic():
    close = np.array([[100.0, 101.0, 102.0, 103.0, 104.0, 110.0]])
    panel = panel_from_close(close)
    f = forward_returns(panel, horizon=5)
    assert np.isclose(f[0, 0], 0.10)
    assert np.all(np.isnan(f[0, 1:]))


def test_forward_returns_constant_close_is_zero():
    panel = panel_from_close(np.full((2, 8), 50.0))
    f = forward_returns(panel, horizon=5)
    assert np.allclose(f[:, :3], 0.0)
    assert np.all(np.isnan(f[:, 3:]))


def test_ic_self_correlation():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(6, 9))
    assert ic(z, z) == pytest.approx(1.0)
    assert ic(z, -z) == pytest.approx(-1.0)


def test_ic_two_day_toy_case():
    z = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    f = np.array([[2.0, 3.0], [4.0, 2.0], [6.0, 1.0]])
    assert ic(z, f) == pytest.approx(0.0)
    assert rank_ic(z, f) == pytest.approx(0.0)


def test_all_tied_day_excluded():
    z = np.array([[1.0, 5.0], [1.0, 6.0], [1.0, 7.0]])
    f = np.array([[1.0, 5.0], [2.0, 6.0], [3.0, 7.0]])
    daily = daily_pearson(z, f)
    assert math.isnan(daily[0]) and daily[1] == pytest.approx(1.0)
    assert ic(z, f) == pytest.approx(1.0)


def test_ic_none_when_no_valid_day():
    z = np.full((3, 4), np.nan)
    f = np.full((3, 4), 0.5)
    assert ic(z, f) is None
    assert rank_ic(z, f) is None


def test_rank_ic_monotone_invariance_vs_oracle():
    rng = np.random.default_rng(42)
    z = rng.normal(size=(5, 10))
    f = rng.normal(size=(5, 10))
    base = rank_ic(z, f)
    transformed = rank_ic(np.exp(z), f)
    assert transformed == pytest.approx(base, abs=1e-12)
    oracle, _ = naive_rank_ic(z.tolist(), f.tolist())
    assert base == pytest.approx(oracle, abs=1e-9)
    assert ic(np.exp(z), f) != pytest.approx(ic(z, f), abs=1e-6)


def test_metrics_match_oracle_with_missing_data():
    panel = data_io.synthetic_panel(7, 20, 60, missing_rate=0.15)
    rng = np.random.default_rng(3)
    z = rng.normal(size=(20, 60))
    z[rng.random(size=z.shape) < 0.2] = np.nan
    f = forward_returns(panel, 5)
    expected_ic, expected_days = naive_ic(z.tolist(), f.tolist())
    expected_rank, _ = naive_rank_ic(z.tolist(), f.tolist())
    assert ic(z, f) == pytest.approx(expected_ic, abs=1e-9)
    assert rank_ic(z, f) == pytest.approx(expected_rank, abs=1e-9)
    assert int(np.isfinite(daily_pearson(z, f)).sum()) == expected_days


def test_affine_invariance():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(8, 12))
    f = rng.normal(size=(8, 12))
    base = ic(z, f)
    assert ic(3.5 * z + 2.0, 0.25 * f - 1.0) == pytest.approx(base, abs=1e-9)


def test_causality_perturbing_future_columns():
    rng = random.Random(8)
    panel = data_io.synthetic_panel(21, 8, 30)
    expr = parse("ts_mean(cs_rank((close - open) / open), 5)")
    z = evaluate(expr, panel)
    cut = 17
    features = {k: v.copy() for k, v in panel.features.items()}
    for name in features:
        features[name][:, cut + 1 :] *= 1.7
    perturbed = Panel(panel.tickers, panel.dates, features)
    z2 = evaluate(expr, perturbed)
    assert np.array_equal(z[:, : cut + 1], z2[:, : cut + 1], equal_nan=True)
    del rng


def test_fitness_composition():
    panel = data_io.synthetic_panel(15, 10, 50)
    expr = parse("(close - open) / open * volume")
    report = fitness(expr, panel)
    z = evaluate(expr, panel)
    f = forward_returns(panel, 5)
    assert report.ic == ic(z, f)
    assert report.rank_ic == rank_ic(z, f)
    assert report.expression_text == alpha_dsl.unparse(expr)
    assert 0.0 <= report.mean_cross_sectional_coverage <= 1.0


def test_fitness_missing_metrics_on_all_missing_scores():
    panel = panel_from_close(np.full((3, 20), 10.0))
    report = fitness(parse("close / (close - close)"), panel)
    assert report.ic is None and report.rank_ic is None
    assert report.valid_day_count == 0


def test_fitness_deterministic():
    panel = data_io.synthetic_panel(1, 6, 40)
    a = fitness(parse("ts_std(close, 5)"), panel)
    b = fitness(parse("ts_std(close, 5)"), panel)
    assert a == b


def test_fitness_respects_warmup():
    panel = data_io.synthetic_panel(2, 6, 40)
    sliced = panel.restrict(0, 40, warmup=10)
    full = fitness(parse("close"), panel)
    trimmed = fitness(parse("close"), sliced)
    assert trimmed.valid_day_count < full.valid_day_count


def test_planted_signal_reaches_unit_ic():
    panel = data_io.synthetic_panel(
        9, 10, 80, data_io.PlantedSignal("ts_delta(close, 1)", noise=0.0)
    )
    report = fitness(parse("ts_delta(close, 1)"), panel)
    assert report.ic == pytest.approx(1.0, abs=1e-9)


def test_random_expressions_never_raise():
    rng = random.Random(31)
    panel = data_io.synthetic_panel(30, 6, 35)
    for _ in range(300):
        expr = random_expr(rng, 7)
        z = evaluate(expr, panel)
        assert z.shape == (6, 35)
