"""Symbol-level genetic programming over the alpha DSL.

The LLM-free comparator: classic subtree crossover and mutation with
tournament selection and elitism, driven entirely by a seeded generator,
sharing the budgeted evaluator and log format of the thought-evolution
engine so one plotting path covers both searches.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .alpha_dsl import (
    AlphaExpr,
    ConstLeaf,
    CONST_BOUND,
    MAX_WINDOW,
    MIN_WINDOW,
    RollingOp,
    complexity,
    random_expr,
    replace_at,
    subexpressions,
    unparse,
    validate_expr,
)
from .eval_engine import FitnessReport, Panel
from .evolution import BudgetedEvaluator
from .runlog import RunLog

__all__ = ["GpConfig", "GpIndividual", "GpResult", "gp_crossover", "gp_mutation", "run_gp"]

_VARIATION_RETRIES = 5
_WINDOW_NUDGES = (-5, -2, -1, 1, 2, 5)


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 50
    evaluation_budget: int = 1000
    crossover_prob: float = 0.7
    mutation_prob: float = 0.25
    reproduction_prob: float = 0.05
    tournament_size: int = 3
    elitism: int = 1
    max_depth: int = 6
    seed: int = 0
    horizon: int = 5
    max_stalled_generations: int = 50

    def __post_init__(self):
        probs = (self.crossover_prob, self.mutation_prob, self.reproduction_prob)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("operator probabilities must lie in [0, 1]")
        if sum(probs) <= 0:
            raise ValueError("at least one operator probability must be positive")
        if self.evaluation_budget < self.population_size:
            raise ValueError("evaluation_budget must be >= population_size")
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be in [0, population_size)")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "evaluation_budget": self.evaluation_budget,
            "crossover_prob": self.crossover_prob,
            "mutation_prob": self.mutation_prob,
            "reproduction_prob": self.reproduction_prob,
            "tournament_size": self.tournament_size,
            "elitism": self.elitism,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "horizon": self.horizon,
            "max_stalled_generations": self.max_stalled_generations,
        }


@dataclass
class GpIndividual:
    expression: AlphaExpr
    train: FitnessReport | None = None
    validation: FitnessReport | None = None

    @property
    def fitness(self) -> float | None:
        return None if self.train is None else self.train.ic

    @property
    def validation_ic(self) -> float | None:
        return None if self.validation is None else self.validation.ic


def gp_crossover(e1: AlphaExpr, e2: AlphaExpr, rng: random.Random) -> AlphaExpr:
    """Replace a uniform-random subtree of e1 with one from e2.

    Children that break the depth/size caps are retried a few times;
    after that the first parent passes through unchanged.
    """
    targets = subexpressions(e1)
    donors = subexpressions(e2)
    for _ in range(_VARIATION_RETRIES):
        path, _ = rng.choice(targets)
        _, donor = rng.choice(donors)
        child = replace_at(e1, path, donor)
        if not validate_expr(child):
            return child
    return e1


def gp_mutation(e: AlphaExpr, rng: random.Random, max_depth: int) -> AlphaExpr:
    """Point-mutate one node: jitter constants, nudge windows, or splice
    a fresh random subtree of compatible depth."""
    nodes = subexpressions(e)
    for _ in range(_VARIATION_RETRIES):
        path, node = rng.choice(nodes)
        if isinstance(node, ConstLeaf):
            value = node.value * rng.uniform(0.5, 2.0)
            value = max(-CONST_BOUND, min(CONST_BOUND, value))
            child = replace_at(e, path, ConstLeaf(round(value, 6)))
        elif isinstance(node, RollingOp) and rng.random() < 0.5:
            window = node.window + rng.choice(_WINDOW_NUDGES)
            window = max(MIN_WINDOW, min(MAX_WINDOW, window))
            child = replace_at(
                e, path, RollingOp(node.op, window, node.child, node.child2)
            )
        else:
            budget = max(1, max_depth - len(path))
            child = replace_at(e, path, _random_subtree(rng, budget))
        if not validate_expr(child):
            return child
    return e


def _random_subtree(rng: random.Random, budget: int) -> AlphaExpr:
    return random_expr(rng, max(1, min(budget, 4)))


def _rank_key(individual: GpIndividual):
    ic_value = individual.fitness
    return (
        -(ic_value if ic_value is not None else float("-inf")),
        complexity(individual.expression),
        unparse(individual.expression),
    )


def _tournament(population: list[GpIndividual], rng: random.Random, k: int) -> GpIndividual:
    k = min(k, len(population))
    picks = [population[i] for i in rng.sample(range(len(population)), k)]
    return min(picks, key=_rank_key)


@dataclass
class GpResult:
    best: GpIndividual | None
    population: list[GpIndividual]
    evaluations: int = 0
    generations: int = 0
    convergence: list[tuple[int, float | None]] = field(default_factory=list)


def _best_by_validation(archive: list[GpIndividual]) -> GpIndividual | None:
    with_valid = [ind for ind in archive if ind.validation_ic is not None]
    if with_valid:
        return min(
            with_valid,
            key=lambda ind: (
                -ind.validation_ic,
                complexity(ind.expression),
                unparse(ind.expression),
            ),
        )
    with_train = [ind for ind in archive if ind.fitness is not None]
    return min(with_train, key=_rank_key) if with_train else None


def run_gp(
    config: GpConfig,
    train_panel: Panel,
    validation_panel: Panel | None = None,
    log: RunLog | None = None,
) -> GpResult:
    """Tournament-selection GP with elitism under the evaluation budget.

    Fully deterministic for a fixed seed. With budget equal to the
    population size this returns the best of the initial random
    population.
    """
    rng = random.Random(config.seed)
    evaluator = BudgetedEvaluator(
        train_panel,
        validation_panel if validation_panel is not None else train_panel,
        config.horizon,
        config.evaluation_budget,
        log,
    )
    if log is not None:
        log.append("meta", engine="gp", config=config.to_dict())

    def admit(expr: AlphaExpr) -> GpIndividual | None:
        pair = evaluator.evaluate(expr)
        if pair is None:
            return None
        individual = GpIndividual(expression=expr)
        individual.train, individual.validation = pair
        return individual

    population: list[GpIndividual] = []
    archive: list[GpIndividual] = []
    for _ in range(config.population_size):
        individual = admit(random_expr(rng, config.max_depth))
        if individual is not None:
            population.append(individual)
            archive.append(individual)

    generation = 0
    stalled = 0
    while evaluator.remaining > 0 and population:
        generation += 1
        consumed_before = evaluator.consumed
        elites = sorted(population, key=_rank_key)[: config.elitism]
        children: list[AlphaExpr] = []
        weights = (config.crossover_prob, config.mutation_prob, config.reproduction_prob)
        while len(children) < config.population_size - len(elites):
            choice = rng.choices(("crossover", "mutation", "reproduction"), weights)[0]
            if choice == "crossover":
                a = _tournament(population, rng, config.tournament_size)
                b = _tournament(population, rng, config.tournament_size)
                children.append(gp_crossover(a.expression, b.expression, rng))
            elif choice == "mutation":
                parent = _tournament(population, rng, config.tournament_size)
                children.append(gp_mutation(parent.expression, rng, config.max_depth))
            else:
                parent = _tournament(population, rng, config.tournament_size)
                children.append(parent.expression)
        offspring: list[GpIndividual] = []
        for expr in children:
            individual = admit(expr)
            if individual is None:
                continue
            offspring.append(individual)
            archive.append(individual)
        population = elites + offspring
        consumed = evaluator.consumed - consumed_before
        fitnesses = [ind.fitness for ind in population if ind.fitness is not None]
        if log is not None:
            log.append(
                "generation",
                engine="gp",
                generation=generation,
                attempted={"gp_variation": len(children)},
                accepted={"gp_variation": len(offspring)},
                evaluations=consumed,
                best_ic=max(fitnesses) if fitnesses else None,
                mean_ic=sum(fitnesses) / len(fitnesses) if fitnesses else None,
                survivor_ids=[unparse(ind.expression) for ind in population],
            )
        if consumed == 0:
            stalled += 1
            if stalled >= config.max_stalled_generations:
                if log is not None:
                    log.append("stalled_stop", generation=generation, stalled_generations=stalled)
                break
        else:
            stalled = 0

    best = _best_by_validation(archive)
    result = GpResult(
        best=best,
        population=population,
        evaluations=evaluator.consumed,
        generations=generation,
        convergence=list(evaluator.series),
    )
    if log is not None:
        log.append(
            "run_end",
            engine="gp",
            evaluations=evaluator.consumed,
            generations=generation,
            best_expression=unparse(best.expression) if best else None,
            best_validation_ic=best.validation_ic if best else None,
            best_train_ic=best.fitness if best else None,
            best_thought_id=None,
        )
    return result
