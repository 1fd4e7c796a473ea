from __future__ import annotations

import pytest

from alphaevo import operators as ops
from alphaevo.alpha_dsl import unparse
from alphaevo.llm_backend import ChatExchange, ExhaustedRetriesError, MockBackend, MockScript
from alphaevo.llm_backend.mock import synthesize_response
from alphaevo.runlog import BufferedSink
from alphaevo.thought_tree import (
    ThoughtNode,
    ThoughtTree,
    canonical_serialize,
    canonical_serialize_node,
    iter_nodes,
    stats,
)

from conftest import example_thought_tree


def _fence(tree: ThoughtTree) -> str:
    return "```json\n" + canonical_serialize(tree) + "\n```"


def _other_parent() -> ThoughtTree:
    return ThoughtTree(
        ThoughtNode(
            "Range contraction setup",
            (ThoughtNode("Compare high low spread to average"), ThoughtNode("Use vwap anchor")),
        )
    )


def test_crossover_rejects_verbatim_parent_then_retries(vwco_tree):
    other = _other_parent()
    distinct = ThoughtTree(ThoughtNode("Fresh synthesis", (ThoughtNode("Blend both signals"),)))
    backend = MockBackend(MockScript({"crossover": [_fence(vwco_tree), _fence(distinct)]}))
    outcome = ops.crossover(vwco_tree, other, backend)
    assert outcome.attempts == 2
    assert outcome.child.id == distinct.id
    assert outcome.parent_ids == (vwco_tree.id, other.id)


def test_crossover_child_contains_parent_subtrees(vwco_tree):
    other = _other_parent()
    sub_a = vwco_tree.root.children[0]
    sub_b = other.root.children[0]
    child = ThoughtTree(ThoughtNode("Combined idea", (sub_a, sub_b)))
    backend = MockBackend(MockScript({"crossover": [_fence(child)]}))
    outcome = ops.crossover(vwco_tree, other, backend)
    child_parts = {canonical_serialize_node(n) for _, n in iter_nodes(outcome.child.root)}
    assert canonical_serialize_node(sub_a) in child_parts
    assert canonical_serialize_node(sub_b) in child_parts


def test_crossover_same_parent_twice_still_must_differ(vwco_tree):
    distinct = ThoughtTree(ThoughtNode("Different idea"))
    backend = MockBackend(
        MockScript({"crossover": [_fence(vwco_tree), _fence(distinct)]})
    )
    outcome = ops.crossover(vwco_tree, vwco_tree, backend)
    assert outcome.child.id != vwco_tree.id
    assert outcome.attempts == 2


def test_mutation_rejects_unchanged_parent(vwco_tree):
    changed = ThoughtTree(
        ThoughtNode(
            vwco_tree.root.label,
            (
                vwco_tree.root.children[0],
                ThoughtNode(
                    "Weight by Volume",
                    (ThoughtNode("Use vwap instead"), vwco_tree.root.children[1].children[1]),
                ),
            ),
        )
    )
    backend = MockBackend(MockScript({"mutation": [_fence(vwco_tree), _fence(changed)]}))
    outcome = ops.mutation(vwco_tree, backend, generation=2)
    assert outcome.attempts == 2
    assert outcome.child.id != vwco_tree.id
    assert stats(outcome.child).node_count == stats(vwco_tree).node_count
    assert outcome.child.lineage.generation == 2
    assert outcome.child.lineage.operator == "mutation"
    assert outcome.child.lineage.parents == (vwco_tree.id,)


def test_mutation_accepts_deeper_tree_within_caps(vwco_tree):
    deeper = ThoughtTree(
        ThoughtNode("root", (ThoughtNode("a", (ThoughtNode("b", (ThoughtNode("c"),)),)),))
    )
    backend = MockBackend(MockScript({"mutation": [_fence(deeper)]}))
    outcome = ops.mutation(vwco_tree, backend)
    assert outcome.child.id == deeper.id


def test_pruning_shrinks_without_anomaly(vwco_tree):
    pruned = ThoughtTree(
        ThoughtNode(vwco_tree.root.label, (vwco_tree.root.children[0],))
    )
    backend = MockBackend(MockScript({"pruning": [_fence(pruned)]}))
    outcome = ops.pruning(vwco_tree, backend)
    assert stats(outcome.child).node_count < stats(vwco_tree).node_count
    assert outcome.anomaly is None


def test_pruning_single_node_parent_yields_nonempty_tree():
    single = ThoughtTree(ThoughtNode("only step"))
    relabeled = ThoughtTree(ThoughtNode("only step, tightened"))
    backend = MockBackend(MockScript({"pruning": [_fence(relabeled)]}))
    outcome = ops.pruning(single, backend)
    assert stats(outcome.child).node_count == 1


def test_pruning_larger_child_accepted_with_anomaly(vwco_tree):
    bigger = ThoughtTree(
        ThoughtNode(
            vwco_tree.root.label,
            vwco_tree.root.children + (ThoughtNode("extra branch", (ThoughtNode("extra"),)),),
        )
    )
    backend = MockBackend(MockScript({"pruning": [_fence(bigger)]}))
    outcome = ops.pruning(vwco_tree, backend)
    assert outcome.anomaly is not None
    assert "grew" in outcome.anomaly


def test_flat_variation_returns_valid_distinct_tree(vwco_tree):
    backend = MockBackend()
    outcome = ops.flat_variation(vwco_tree, backend, generation=3, slot=1)
    assert outcome.child.id != vwco_tree.id
    assert outcome.operator == "flat_variation"


def test_operator_failure_after_attempt_budget(vwco_tree):
    backend = MockBackend(MockScript({"mutation": ["prose"] * 5}))
    with pytest.raises(ops.OperatorFailure) as err:
        ops.mutation(vwco_tree, backend)
    assert err.value.attempts == ops.MAX_GENERATION_ATTEMPTS


def test_corrective_suffix_added_on_retry(vwco_tree):
    sink = BufferedSink()
    fixed = ThoughtTree(ThoughtNode("fixed tree"))
    backend = MockBackend(MockScript({"mutation": ["not a tree", _fence(fixed)]}))
    ops.mutation(vwco_tree, backend, sink=sink)
    assert len(sink.records) == 2
    assert "rejected" not in sink.records[0]["user"]
    assert "rejected" in sink.records[1]["user"]


def test_transport_failure_skips_slot_immediately(vwco_tree):
    class FailingBackend:
        def complete(self, exchange: ChatExchange, sink=None) -> str:
            raise ExhaustedRetriesError("server is down")

    with pytest.raises(ops.OperatorFailure) as err:
        ops.mutation(vwco_tree, FailingBackend())
    assert err.value.attempts == 1


def test_ground_extracts_expression(vwco_tree):
    backend = MockBackend(MockScript({"grounding": ["alpha: (close - open) / open * volume"]}))
    expr = ops.ground(vwco_tree, backend)
    assert unparse(expr) == "(((close - open) / open) * volume)"


def test_ground_retries_then_fails(vwco_tree):
    backend = MockBackend(MockScript({"grounding": ["nothing useful"] * 5}))
    with pytest.raises(ops.OperatorFailure) as err:
        ops.ground(vwco_tree, backend)
    assert err.value.operator == "grounding"
    assert err.value.attempts == ops.MAX_GENERATION_ATTEMPTS


def test_generate_initial_slot_diversity():
    backend = MockBackend()
    a = ops.generate_initial(backend, slot=0, population_size=10)
    b = ops.generate_initial(backend, slot=1, population_size=10)
    assert a.child.id != b.child.id


def test_synthesizer_pruning_usually_shrinks(vwco_tree):
    prompt = "Pruning simplifies...\n" + _fence(vwco_tree)
    reply = synthesize_response("pruning", prompt)
    from alphaevo.llm_backend import extract_tree

    child = extract_tree(reply)
    assert stats(child).node_count < stats(vwco_tree).node_count
