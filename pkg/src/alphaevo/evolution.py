"""The thought-evolution search loop.

Each generation takes the N-member population through three semantic
operators (or the flat ablation operator), asks the backend to ground
every accepted child into a DSL expression, evaluates the offspring
against the training panel under a strict unique-expression budget, and
keeps the best of parents plus offspring. Search fitness is training IC;
the reported best-of-run is chosen by validation IC over everything that
was ever evaluated, and test IC is only computed after the run by the
caller.

Determinism contract: with the scripted backend and a fixed seed, two
runs write byte-identical logs. Worker calls buffer their records and
flush in slot order, parent selection happens in the serialized phase,
and evaluation order is the slot order.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import operators as ops
from .alpha_dsl import AlphaExpr, complexity, unparse
from .eval_engine import FitnessReport, Panel, fitness
from .llm_backend import AuthenticationError, PromptLibrary
from .llm_backend.backends import Backend
from .runlog import BufferedSink, RunLog
from .thought_tree import ThoughtTree

__all__ = [
    "EvolutionConfig",
    "Individual",
    "GenerationRecord",
    "BudgetedEvaluator",
    "RunResult",
    "select",
    "initialize",
    "step",
    "run",
]

OPERATOR_SETS = {
    "semantic": ops.SEMANTIC_OPERATORS,
    "flat": ops.FLAT_OPERATORS,
}


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 10
    evaluation_budget: int = 200
    operators: tuple[str, ...] = ops.SEMANTIC_OPERATORS
    selection_pool: str = "union"  # "union" | "offspring_only"
    parent_selection: str = "uniform"  # "uniform" | "fitness_proportional"
    seed: int = 0
    horizon: int = 5
    max_workers: int = 4
    max_stalled_generations: int = 25

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.evaluation_budget < self.population_size:
            raise ValueError("evaluation_budget must be >= population_size")
        if not self.operators:
            raise ValueError("operator set must be non-empty")
        unknown = set(self.operators) - set(ops.OPERATOR_FUNCS)
        if unknown:
            raise ValueError(f"unknown operators {sorted(unknown)}")
        if self.selection_pool not in ("union", "offspring_only"):
            raise ValueError(f"unknown selection_pool {self.selection_pool!r}")
        if self.parent_selection not in ("uniform", "fitness_proportional"):
            raise ValueError(f"unknown parent_selection {self.parent_selection!r}")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "evaluation_budget": self.evaluation_budget,
            "operators": list(self.operators),
            "selection_pool": self.selection_pool,
            "parent_selection": self.parent_selection,
            "seed": self.seed,
            "horizon": self.horizon,
            "max_workers": self.max_workers,
            "max_stalled_generations": self.max_stalled_generations,
        }


@dataclass
class Individual:
    thought: ThoughtTree
    expression: AlphaExpr | None = None
    train: FitnessReport | None = None
    validation: FitnessReport | None = None
    generation_born: int = 0

    @property
    def expression_text(self) -> str | None:
        return None if self.expression is None else unparse(self.expression)

    @property
    def fitness(self) -> float | None:
        """Selection key: training IC. None means never selectable."""
        return None if self.train is None else self.train.ic

    @property
    def validation_ic(self) -> float | None:
        return None if self.validation is None else self.validation.ic


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    attempted: dict[str, int]
    accepted: dict[str, int]
    evaluations: int
    best_ic: float | None
    mean_ic: float | None
    survivor_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "attempted": dict(self.attempted),
            "accepted": dict(self.accepted),
            "evaluations": self.evaluations,
            "best_ic": self.best_ic,
            "mean_ic": self.mean_ic,
            "survivor_ids": list(self.survivor_ids),
        }


class BudgetedEvaluator:
    """Fitness evaluation behind a cache and a hard unique-expression budget.

    One budget tick buys the train and validation reports of one canonical
    expression text; cache hits are free and return the original report
    objects. The GP engine shares this class so both searches account
    identically.
    """

    def __init__(
        self,
        train_panel: Panel,
        validation_panel: Panel,
        horizon: int,
        budget: int,
        log: RunLog | None = None,
    ):
        self.train_panel = train_panel
        self.validation_panel = validation_panel
        self.horizon = horizon
        self.budget = budget
        self.log = log
        self.cache: dict[str, tuple[FitnessReport, FitnessReport]] = {}
        self.consumed = 0
        self.best_validation_ic: float | None = None
        self.series: list[tuple[int, float | None]] = []

    @property
    def remaining(self) -> int:
        return self.budget - self.consumed

    def evaluate(self, expr: AlphaExpr) -> tuple[FitnessReport, FitnessReport] | None:
        """Reports for one expression, or None once the budget is exhausted."""
        text = unparse(expr)
        cached = self.cache.get(text)
        if cached is not None:
            self._log_evaluation(text, cached, cache_hit=True)
            return cached
        if self.consumed >= self.budget:
            return None
        train_report = fitness(expr, self.train_panel, self.horizon)
        validation_report = fitness(expr, self.validation_panel, self.horizon)
        self.consumed += 1
        pair = (train_report, validation_report)
        self.cache[text] = pair
        v = validation_report.ic
        if v is not None and (self.best_validation_ic is None or v > self.best_validation_ic):
            self.best_validation_ic = v
        self._log_evaluation(text, pair, cache_hit=False)
        self.series.append((self.consumed, self.best_validation_ic))
        if self.log is not None:
            self.log.append(
                "convergence",
                evaluations=self.consumed,
                best_validation_ic=self.best_validation_ic,
            )
        return pair

    def _log_evaluation(
        self, text: str, pair: tuple[FitnessReport, FitnessReport], cache_hit: bool
    ) -> None:
        if self.log is None:
            return
        self.log.append(
            "evaluation",
            expression=text,
            cache_hit=cache_hit,
            evaluations_consumed=self.consumed,
            train=pair[0].to_dict(),
            validation=pair[1].to_dict(),
        )


def _selection_key(individual: Individual):
    expr_complexity = (
        complexity(individual.expression) if individual.expression is not None else 0
    )
    return (
        -individual.fitness,
        expr_complexity,
        individual.generation_born,
        individual.expression_text or "",
    )


def select(pool: list[Individual], n: int) -> list[Individual]:
    """The n fittest individuals by training IC.

    Ties break toward lower expression complexity, then earlier
    generation, then lexicographic expression text. Individuals without
    fitness are never selected; a pool smaller than n returns whole.
    """
    scored = [ind for ind in pool if ind.fitness is not None]
    return sorted(scored, key=_selection_key)[:n]


def _run_jobs(jobs, max_workers: int) -> list:
    if max_workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [future.result() for future in futures]


@dataclass
class _SlotResult:
    slot: int
    operator: str
    parent_ids: tuple[str, ...]
    sink: BufferedSink
    outcome: ops.OperatorOutcome | None = None
    individual: Individual | None = None
    error: str | None = None
    grounding_error: str | None = None
    fatal: Exception | None = None


def _log_slot(log: RunLog | None, result: _SlotResult, generation: int) -> None:
    if log is None:
        return
    result.sink.flush_to(log.append_record)
    outcome = result.outcome
    log.append(
        "operator_outcome",
        generation=generation,
        slot=result.slot,
        operator=result.operator,
        parents=list(result.parent_ids),
        ok=outcome is not None,
        child_id=outcome.child.id if outcome else None,
        attempts=outcome.attempts if outcome else None,
        anomaly=outcome.anomaly if outcome else None,
        error=result.error,
        expression=(
            result.individual.expression_text if result.individual is not None else None
        ),
        grounding_error=result.grounding_error,
    )


def _raise_if_fatal(results: list[_SlotResult], log: RunLog | None) -> None:
    for result in results:
        if result.fatal is not None:
            if log is not None:
                result.sink.flush_to(log.append_record)
                log.append("abort", error=str(result.fatal))
            raise result.fatal


def initialize(
    config: EvolutionConfig,
    backend: Backend,
    prompts: PromptLibrary,
    evaluator: BudgetedEvaluator,
    log: RunLog | None = None,
) -> list[Individual]:
    """Step 1: prompt for N starting thoughts, ground and evaluate them.

    Slots that fail generation or grounding after retries are left
    unfilled, so the starting population may be smaller than N.
    """
    jobs = []
    for slot in range(config.population_size):
        def job(slot=slot) -> _SlotResult:
            sink = BufferedSink()
            result = _SlotResult(slot=slot, operator="initialization", parent_ids=(), sink=sink)
            try:
                outcome = ops.generate_initial(
                    backend, prompts,
                    slot=slot, population_size=config.population_size, sink=sink,
                )
                result.outcome = outcome
                expr = ops.ground(outcome.child, backend, prompts, sink=sink)
            except AuthenticationError as exc:
                result.fatal = exc
                return result
            except ops.OperatorFailure as exc:
                if result.outcome is None:
                    result.error = str(exc)
                else:
                    result.grounding_error = str(exc)
                return result
            result.individual = Individual(
                thought=outcome.child, expression=expr, generation_born=0
            )
            return result

        jobs.append(job)
    results = _run_jobs(jobs, config.max_workers)
    _raise_if_fatal(results, log)
    population: list[Individual] = []
    for result in results:
        _log_slot(log, result, generation=0)
        if result.individual is None:
            continue
        pair = evaluator.evaluate(result.individual.expression)
        if pair is None:
            continue
        result.individual.train, result.individual.validation = pair
        population.append(result.individual)
    return population


def _plan_parents(
    operator: str,
    slot: int,
    population: list[Individual],
    config: EvolutionConfig,
    rng: random.Random,
) -> tuple[ThoughtTree, ...]:
    if operator != "crossover":
        return (population[slot % len(population)].thought,)
    if len(population) < 2:
        only = population[0].thought
        return (only, only)
    if config.parent_selection == "fitness_proportional":
        weights = []
        floor = min(ind.fitness or 0.0 for ind in population)
        for ind in population:
            weights.append((ind.fitness or 0.0) - floor + 1e-6)
        first = rng.choices(range(len(population)), weights=weights, k=1)[0]
        for _ in range(20):
            second = rng.choices(range(len(population)), weights=weights, k=1)[0]
            if second != first:
                break
        else:
            second = (first + 1) % len(population)
    else:
        first, second = rng.sample(range(len(population)), 2)
    return (population[first].thought, population[second].thought)


def step(
    population: list[Individual],
    config: EvolutionConfig,
    backend: Backend,
    prompts: PromptLibrary,
    evaluator: BudgetedEvaluator,
    rng: random.Random,
    generation: int,
    log: RunLog | None = None,
    archive: list[Individual] | None = None,
) -> tuple[list[Individual], GenerationRecord]:
    """One generation: N offspring per configured operator, then selection."""
    if not population:
        raise ValueError("population must be non-empty")
    consumed_before = evaluator.consumed
    plan: list[tuple[str, tuple[ThoughtTree, ...]]] = []
    for operator in config.operators:
        for slot in range(config.population_size):
            plan.append((operator, _plan_parents(operator, slot, population, config, rng)))

    jobs = []
    for slot, (operator, parents) in enumerate(plan):
        def job(slot=slot, operator=operator, parents=parents) -> _SlotResult:
            sink = BufferedSink()
            result = _SlotResult(
                slot=slot, operator=operator,
                parent_ids=tuple(t.id for t in parents), sink=sink,
            )
            try:
                if operator == "crossover":
                    outcome = ops.crossover(
                        parents[0], parents[1], backend, prompts,
                        generation=generation, slot=slot, sink=sink,
                    )
                else:
                    outcome = ops.OPERATOR_FUNCS[operator](
                        parents[0], backend, prompts,
                        generation=generation, slot=slot, sink=sink,
                    )
                result.outcome = outcome
                expr = ops.ground(outcome.child, backend, prompts, sink=sink)
            except AuthenticationError as exc:
                result.fatal = exc
                return result
            except ops.OperatorFailure as exc:
                if result.outcome is None:
                    result.error = str(exc)
                else:
                    result.grounding_error = str(exc)
                return result
            result.individual = Individual(
                thought=outcome.child, expression=expr, generation_born=generation
            )
            return result

        jobs.append(job)

    results = _run_jobs(jobs, config.max_workers)
    _raise_if_fatal(results, log)

    attempted: dict[str, int] = {op: 0 for op in config.operators}
    accepted: dict[str, int] = {op: 0 for op in config.operators}
    offspring: list[Individual] = []
    for result in results:
        _log_slot(log, result, generation)
        attempted[result.operator] += 1
        if result.outcome is not None:
            accepted[result.operator] += 1
        if result.individual is None:
            continue
        pair = evaluator.evaluate(result.individual.expression)
        if pair is None:
            continue  # budget exhausted; unevaluated offspring are never selectable
        result.individual.train, result.individual.validation = pair
        offspring.append(result.individual)
        if archive is not None:
            archive.append(result.individual)

    if config.selection_pool == "union":
        pool = population + offspring
    else:
        pool = offspring or population
    survivors = select(pool, config.population_size)
    if not survivors:
        survivors = list(population)

    fitnesses = [ind.fitness for ind in survivors if ind.fitness is not None]
    record = GenerationRecord(
        generation=generation,
        attempted=attempted,
        accepted=accepted,
        evaluations=evaluator.consumed - consumed_before,
        best_ic=max(fitnesses) if fitnesses else None,
        mean_ic=sum(fitnesses) / len(fitnesses) if fitnesses else None,
        survivor_ids=tuple(ind.thought.id for ind in survivors),
    )
    if log is not None:
        log.append("generation", engine="evolution", **record.to_dict())
    return survivors, record


@dataclass
class RunResult:
    best: Individual | None
    population: list[Individual]
    archive: list[Individual] = field(default_factory=list)
    evaluations: int = 0
    generations: int = 0
    convergence: list[tuple[int, float | None]] = field(default_factory=list)


def _best_of_run(archive: list[Individual]) -> Individual | None:
    """Best-of-run by validation IC; falls back to training IC if the
    validation split never produced a valid day."""
    with_valid = [ind for ind in archive if ind.validation_ic is not None]
    if with_valid:
        return sorted(
            with_valid,
            key=lambda ind: (
                -ind.validation_ic,
                complexity(ind.expression),
                ind.generation_born,
                ind.expression_text or "",
            ),
        )[0]
    with_train = [ind for ind in archive if ind.fitness is not None]
    if with_train:
        return sorted(with_train, key=_selection_key)[0]
    return None


def run(
    config: EvolutionConfig,
    train_panel: Panel,
    validation_panel: Panel,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    log: RunLog | None = None,
) -> RunResult:
    """Full search: initialize, evolve until the budget is exhausted."""
    prompts = prompts or PromptLibrary()
    rng = random.Random(config.seed)
    evaluator = BudgetedEvaluator(
        train_panel, validation_panel, config.horizon, config.evaluation_budget, log
    )
    if log is not None:
        log.append("meta", engine="evolution", config=config.to_dict())
    population = initialize(config, backend, prompts, evaluator, log)
    archive = list(population)
    generation = 0
    stalled = 0
    while evaluator.remaining > 0 and population:
        generation += 1
        population, record = step(
            population, config, backend, prompts, evaluator, rng, generation, log,
            archive=archive,
        )
        if record.evaluations == 0:
            stalled += 1
            if stalled >= config.max_stalled_generations:
                if log is not None:
                    log.append(
                        "stalled_stop",
                        generation=generation,
                        stalled_generations=stalled,
                    )
                break
        else:
            stalled = 0
    best = _best_of_run(archive)
    result = RunResult(
        best=best,
        population=population,
        archive=archive,
        evaluations=evaluator.consumed,
        generations=generation,
        convergence=list(evaluator.series),
    )
    if log is not None:
        log.append(
            "run_end",
            engine="evolution",
            evaluations=evaluator.consumed,
            generations=generation,
            best_expression=best.expression_text if best else None,
            best_validation_ic=best.validation_ic if best else None,
            best_train_ic=best.fitness if best else None,
            best_thought_id=best.thought.id if best else None,
        )
    return result
