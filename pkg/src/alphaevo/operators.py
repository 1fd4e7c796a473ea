"""Variation operators over thought trees, realized as prompt contracts.

The model does the semantic work: it picks which reasoning subtrees to
exchange, replace, or drop. The harness only validates what comes back,
enforces that a child differs from its parents, and regenerates with a
corrective suffix when extraction fails. Children equal to a parent are
rejected so a lazy model cannot collapse the population; a pruning child
larger than its parent is accepted but flagged as an anomaly, since
redundancy is the model's judgment call, not ours.

The flat variation operator is the ablation counterpart: one generic
improvement prompt with no subtree-level instructions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .alpha_dsl import AlphaExpr
from .llm_backend import (
    AuthenticationError,
    BackendError,
    ChatExchange,
    ExtractionError,
    GENERATIVE_TEMPERATURE,
    GROUNDING_TEMPERATURE,
    PromptLibrary,
    extract_expression,
    extract_tree,
)
from .llm_backend.backends import Backend, Sink
from .thought_tree import Lineage, ThoughtTree, stats, canonical_serialize

__all__ = [
    "OperatorOutcome",
    "OperatorFailure",
    "SEMANTIC_OPERATORS",
    "FLAT_OPERATORS",
    "MAX_GENERATION_ATTEMPTS",
    "crossover",
    "mutation",
    "pruning",
    "flat_variation",
    "generate_initial",
    "ground",
]

SEMANTIC_OPERATORS = ("crossover", "mutation", "pruning")
FLAT_OPERATORS = ("flat_variation",)

# Regenerations per offspring slot before the slot is skipped.
MAX_GENERATION_ATTEMPTS = 3

_CORRECTIVE_SUFFIX = (
    "\n\nYour previous reply was rejected: {error}. "
    "Reply again and follow the required format exactly."
)


@dataclass(frozen=True)
class OperatorOutcome:
    child: ThoughtTree
    operator: str
    parent_ids: tuple[str, ...]
    attempts: int
    anomaly: str | None = None


class OperatorFailure(Exception):
    """The slot produced no acceptable child within the attempt budget."""

    def __init__(self, operator: str, parent_ids: tuple[str, ...], attempts: int, last_error: str):
        super().__init__(
            f"{operator} failed after {attempts} attempts: {last_error}"
        )
        self.operator = operator
        self.parent_ids = parent_ids
        self.attempts = attempts
        self.last_error = last_error


def _generate_child(
    kind: str,
    parents: tuple[ThoughtTree, ...],
    backend: Backend,
    prompts: PromptLibrary,
    values: dict,
    generation: int,
    sink: Sink | None,
) -> OperatorOutcome:
    parent_ids = tuple(t.id for t in parents)
    system_text, user_text = prompts.render(kind, **values)
    last_error = "no attempts made"
    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        prompt = user_text
        if attempt > 1:
            prompt = user_text + _CORRECTIVE_SUFFIX.format(error=last_error)
        exchange = ChatExchange(
            system_text=system_text,
            user_text=prompt,
            temperature=GENERATIVE_TEMPERATURE,
            purpose=kind,
        )
        try:
            reply = backend.complete(exchange, sink=sink)
        except AuthenticationError:
            raise
        except BackendError as exc:
            # Transport-level failure: the backend already retried; give
            # the slot up rather than burning generation attempts.
            raise OperatorFailure(kind, parent_ids, attempt, str(exc)) from exc
        try:
            tree = extract_tree(reply)
        except ExtractionError as exc:
            last_error = str(exc)
            continue
        if tree.id in parent_ids:
            last_error = "child is identical to a parent tree"
            continue
        child = ThoughtTree(
            root=tree.root,
            lineage=Lineage(generation=generation, operator=kind, parents=parent_ids),
        )
        anomaly = None
        if kind == "pruning":
            child_size = stats(child).node_count
            parent_size = stats(parents[0]).node_count
            if child_size > parent_size:
                anomaly = f"pruned child grew from {parent_size} to {child_size} nodes"
        return OperatorOutcome(
            child=child,
            operator=kind,
            parent_ids=parent_ids,
            attempts=attempt,
            anomaly=anomaly,
        )
    raise OperatorFailure(kind, parent_ids, MAX_GENERATION_ATTEMPTS, last_error)


def crossover(
    t1: ThoughtTree,
    t2: ThoughtTree,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    generation: int = 0,
    slot: int = 0,
    sink: Sink | None = None,
) -> OperatorOutcome:
    return _generate_child(
        "crossover",
        (t1, t2),
        backend,
        prompts or PromptLibrary(),
        {
            "parent_a": _fenced(t1),
            "parent_b": _fenced(t2),
            "generation": generation,
            "slot": slot,
        },
        generation,
        sink,
    )


def mutation(
    t: ThoughtTree,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    generation: int = 0,
    slot: int = 0,
    sink: Sink | None = None,
) -> OperatorOutcome:
    return _generate_child(
        "mutation",
        (t,),
        backend,
        prompts or PromptLibrary(),
        {"parent": _fenced(t), "generation": generation, "slot": slot},
        generation,
        sink,
    )


def pruning(
    t: ThoughtTree,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    generation: int = 0,
    slot: int = 0,
    sink: Sink | None = None,
) -> OperatorOutcome:
    return _generate_child(
        "pruning",
        (t,),
        backend,
        prompts or PromptLibrary(),
        {"parent": _fenced(t), "generation": generation, "slot": slot},
        generation,
        sink,
    )


def flat_variation(
    t: ThoughtTree,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    generation: int = 0,
    slot: int = 0,
    sink: Sink | None = None,
) -> OperatorOutcome:
    """Ablation operator: generic improvement with no subtree instructions."""
    return _generate_child(
        "flat_variation",
        (t,),
        backend,
        prompts or PromptLibrary(),
        {"parent": _fenced(t), "generation": generation, "slot": slot},
        generation,
        sink,
    )


def generate_initial(
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    slot: int = 0,
    population_size: int = 10,
    sink: Sink | None = None,
) -> OperatorOutcome:
    """One starting thought; slot and size feed the prompt for diversity."""
    return _generate_child(
        "initialization",
        (),
        backend,
        prompts or PromptLibrary(),
        {"slot": slot + 1, "n": population_size},
        0,
        sink,
    )


def ground(
    thought: ThoughtTree,
    backend: Backend,
    prompts: PromptLibrary | None = None,
    *,
    sink: Sink | None = None,
) -> AlphaExpr:
    """Translate a thought into a DSL expression, retrying on parse failures."""
    prompts = prompts or PromptLibrary()
    system_text, user_text = prompts.render("grounding", thought=_fenced(thought))
    last_error = "no attempts made"
    for attempt in range(1, MAX_GENERATION_ATTEMPTS + 1):
        prompt = user_text
        if attempt > 1:
            prompt = user_text + _CORRECTIVE_SUFFIX.format(error=last_error)
        exchange = ChatExchange(
            system_text=system_text,
            user_text=prompt,
            temperature=GROUNDING_TEMPERATURE,
            purpose="grounding",
        )
        try:
            reply = backend.complete(exchange, sink=sink)
        except AuthenticationError:
            raise
        except BackendError as exc:
            raise OperatorFailure("grounding", (thought.id,), attempt, str(exc)) from exc
        try:
            return extract_expression(reply)
        except ExtractionError as exc:
            last_error = str(exc)
    raise OperatorFailure("grounding", (thought.id,), MAX_GENERATION_ATTEMPTS, last_error)


OPERATOR_FUNCS = {
    "crossover": crossover,
    "mutation": mutation,
    "pruning": pruning,
    "flat_variation": flat_variation,
}


def _fenced(tree: ThoughtTree) -> str:
    return "```json\n" + canonical_serialize(tree) + "\n```"
