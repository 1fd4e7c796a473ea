from __future__ import annotations

import random

import pytest

from alphaevo import data_io
from alphaevo.alpha_dsl import (
    ConstLeaf,
    FeatureLeaf,
    RollingOp,
    parse,
    random_expr,
    unparse,
    validate_expr,
)
from alphaevo.gp_baseline import GpConfig, gp_crossover, gp_mutation, run_gp
from alphaevo.runlog import RunLog


def _panels():
    panel = data_io.synthetic_panel(31, 10, 120)
    spec = data_io.SplitSpec(
        train=("2020-01-02", "2020-04-15"),
        validation=("2020-04-15", "2020-05-20"),
        test=("2020-05-20", "2020-06-18"),
    )
    return data_io.split(panel, spec, context_days=10)


def test_config_validation():
    with pytest.raises(ValueError):
        GpConfig(crossover_prob=1.5)
    with pytest.raises(ValueError):
        GpConfig(population_size=50, evaluation_budget=10)
    with pytest.raises(ValueError):
        GpConfig(elitism=50, population_size=50)


def test_crossover_of_leaves_returns_a_leaf():
    rng = random.Random(0)
    child = gp_crossover(FeatureLeaf("close"), FeatureLeaf("open"), rng)
    assert child in (FeatureLeaf("close"), FeatureLeaf("open"))


def test_crossover_deterministic_for_seed():
    e1 = parse("ts_mean(close, 5) + cs_rank(volume)")
    e2 = parse("(high - low) / close")
    a = gp_crossover(e1, e2, random.Random(42))
    b = gp_crossover(e1, e2, random.Random(42))
    assert a == b


def test_crossover_validity_bulk():
    rng = random.Random(1)
    parents = [random_expr(rng, 6) for _ in range(200)]
    for i in range(10_000):
        e1 = parents[i % len(parents)]
        e2 = parents[(i * 7 + 3) % len(parents)]
        child = gp_crossover(e1, e2, rng)
        assert validate_expr(child) == []


def test_mutation_leaf_at_depth_one():
    rng = random.Random(3)
    child = gp_mutation(FeatureLeaf("close"), rng, max_depth=1)
    assert validate_expr(child) == []


def test_mutation_deterministic_and_valid_bulk():
    rng = random.Random(5)
    parents = [random_expr(rng, 6) for _ in range(200)]
    for i in range(10_000):
        child = gp_mutation(parents[i % len(parents)], rng, max_depth=6)
        assert validate_expr(child) == []
    a = gp_mutation(parents[0], random.Random(9), max_depth=6)
    b = gp_mutation(parents[0], random.Random(9), max_depth=6)
    assert a == b


def test_mutation_constant_jitter_stays_bounded():
    rng = random.Random(11)
    expr = ConstLeaf(80.0)
    for _ in range(200):
        child = gp_mutation(expr, rng, max_depth=2)
        for _, node in [(None, child)]:
            if isinstance(node, ConstLeaf):
                assert abs(node.value) <= 100.0


def test_mutation_window_nudge_clamped():
    rng = random.Random(13)
    expr = RollingOp("ts_mean", 1, FeatureLeaf("close"))
    for _ in range(300):
        child = gp_mutation(expr, rng, max_depth=3)
        assert validate_expr(child) == []


def test_budget_equal_to_population_returns_initial_best():
    train, valid, _ = _panels()
    config = GpConfig(population_size=12, evaluation_budget=12, seed=3)
    result = run_gp(config, train, valid)
    assert result.generations == 0
    assert result.evaluations <= 12
    assert result.best is not None


def test_run_gp_fixed_seed_identical():
    train, valid, _ = _panels()
    config = GpConfig(population_size=10, evaluation_budget=60, seed=21)
    a = run_gp(config, train, valid)
    b = run_gp(config, train, valid)
    assert unparse(a.best.expression) == unparse(b.best.expression)
    assert a.evaluations == b.evaluations
    assert a.convergence == b.convergence


def test_run_gp_budget_enforced_and_monotone(tmp_path):
    train, valid, _ = _panels()
    config = GpConfig(population_size=10, evaluation_budget=50, seed=2)
    log = RunLog(str(tmp_path / "gp.jsonl"))
    result = run_gp(config, train, valid, log)
    log.close()
    assert result.evaluations <= 50
    best_series = [
        r["best_ic"] for r in log.records if r["kind"] == "generation" and r["best_ic"] is not None
    ]
    assert best_series == sorted(best_series)
    evals = [r["evaluations"] for r in log.records if r["kind"] == "convergence"]
    assert evals == list(range(1, result.evaluations + 1))


def test_run_gp_shares_log_format_with_evolution(tmp_path):
    train, valid, _ = _panels()
    log = RunLog(str(tmp_path / "gp.jsonl"))
    run_gp(GpConfig(population_size=8, evaluation_budget=24, seed=1), train, valid, log)
    log.close()
    kinds = {r["kind"] for r in log.records}
    assert {"meta", "evaluation", "convergence", "generation", "run_end"} <= kinds
