"""Deterministic scripted backend and the log replay backend.

The mock serves canned responses from a script first; past the script it
synthesizes a response as a pure function of (purpose, prompt text), so
identical call sequences are byte-identical regardless of threading, and
full seeded search runs need no network and no hand-written transcripts.

The synthesizer behaves like a cooperative model: it actually performs
the requested edit, parsing the parent trees embedded in the prompt and
exchanging, replacing, or deleting subtrees, and grounds thoughts into
valid expressions drawn from the DSL.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading

from .. import alpha_dsl, thought_tree
from ..runlog import RunLog
from ..thought_tree import ThoughtNode, ThoughtTree
from .backends import BackendError, ChatExchange, Sink
from .extract import extract_all_trees

__all__ = ["MockScript", "MockBackend", "ReplayBackend", "replay_backend_from_log"]


class MockScript:
    """Ordered canned responses per prompt kind plus a fallback rule."""

    def __init__(self, responses: dict[str, list[str]] | None = None, fallback: str = "synthesize"):
        if fallback not in ("synthesize", "echo"):
            raise ValueError(f"unknown fallback rule {fallback!r}")
        self.responses = {k: list(v) for k, v in (responses or {}).items()}
        self.fallback = fallback

    @classmethod
    def from_file(cls, path: str) -> "MockScript":
        with open(path, encoding="utf-8") as handle:
            obj = json.load(handle)
        return cls(obj.get("responses", {}), obj.get("fallback", "synthesize"))

    def to_file(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(
                {"responses": self.responses, "fallback": self.fallback},
                handle,
                indent=2,
                sort_keys=True,
            )


class MockBackend:
    """Scripted backend; replies are pure functions of the call sequence."""

    def __init__(self, script: MockScript | None = None, log: RunLog | None = None):
        self.script = script or MockScript()
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()
        self._default_sink: Sink | None = log.append_record if log else None

    def complete(self, exchange: ChatExchange, sink: Sink | None = None) -> str:
        purpose = exchange.purpose
        with self._lock:
            index = self._counters.get(purpose, 0)
            self._counters[purpose] = index + 1
        canned = self.script.responses.get(purpose, [])
        if index < len(canned):
            text = canned[index]
        elif self.script.fallback == "echo":
            text = _echo_response(purpose, index)
        else:
            text = synthesize_response(purpose, exchange.user_text)
        record = {
            "kind": "llm_call",
            "backend": "mock",
            "purpose": purpose,
            "temperature": exchange.temperature,
            "system": exchange.system_text,
            "user": exchange.user_text,
            "response": text,
            "ok": True,
            "error": None,
            "transport_attempts": 1,
            "latency_ms": 0.0,
        }
        sink = sink or self._default_sink
        if sink is not None:
            sink(record)
        return text


class ReplayMismatchError(BackendError):
    """A replayed call does not appear in the recorded transcript."""


class ReplayBackend:
    """Serves the responses recorded in a completed run log.

    Lookup is keyed by (purpose, prompt text) rather than call order, so a
    replayed run may schedule its calls across workers differently and
    still receive exactly the recorded responses.
    """

    def __init__(self, calls: list[dict]):
        self._queues: dict[tuple[str, str], list[dict]] = {}
        for record in calls:
            key = (record.get("purpose", ""), record.get("user", ""))
            self._queues.setdefault(key, []).append(record)
        self._lock = threading.Lock()

    def complete(self, exchange: ChatExchange, sink: Sink | None = None) -> str:
        key = (exchange.purpose, exchange.user_text)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise ReplayMismatchError(
                    f"no recorded {exchange.purpose!r} call matches the replayed prompt"
                )
            record = queue[0] if len(queue) == 1 else queue.pop(0)
        if not record.get("ok", False):
            raise BackendError(record.get("error") or "recorded call failed")
        if sink is not None:
            sink(dict(record))
        return record["response"]


def replay_backend_from_log(records: list[dict]) -> ReplayBackend:
    calls = [r for r in records if r.get("kind") == "llm_call"]
    return ReplayBackend(calls)


# --- Response synthesis --------------------------------------------------

_ROOT_IDEAS = (
    "Volume weighted close to open return",
    "Rolling volatility contrast",
    "Liquidity adjusted momentum",
    "Overnight gap mean reversion",
    "Price range breakout pressure",
    "Turnover shock decay",
    "Trend strength versus traded volume",
    "Cross sectional value of recent drawdown",
    "Smoothed high low spread signal",
    "Delayed return echo",
)

_STEP_IDEAS = (
    "Compute close to open return",
    "Weight by traded volume",
    "Normalize by rolling dispersion",
    "Rank across the cross section",
    "Smooth with a trailing mean",
    "Difference against the delayed value",
    "Compare high low range to its average",
    "Scale by inverse price level",
    "Use vwap as the anchor price",
    "Cap extreme values by sign",
    "Use close price",
    "Use open price",
    "Use volume",
    "Use vwap",
)

_PROSE_OPENERS = (
    "Here is the thought tree.",
    "Combining the strongest components gives this idea.",
    "A concise version of the reasoning follows.",
    "This variant keeps the core idea while changing one step.",
)


def _seed_from(purpose: str, user_text: str) -> int:
    digest = hashlib.sha256((purpose + "\x00" + user_text).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _random_subtree(rng: random.Random, max_depth: int) -> ThoughtNode:
    label = rng.choice(_STEP_IDEAS)
    if max_depth <= 1 or rng.random() < 0.4:
        return ThoughtNode(label)
    children = tuple(
        _random_subtree(rng, max_depth - 1) for _ in range(rng.randint(1, 3))
    )
    return ThoughtNode(label, children)


def _random_tree(rng: random.Random) -> ThoughtNode:
    root_label = f"{rng.choice(_ROOT_IDEAS)} ({rng.randrange(1000):03d})"
    children = tuple(_random_subtree(rng, 2) for _ in range(rng.randint(2, 3)))
    return ThoughtNode(root_label, children)


def _drop_child(root: ThoughtNode, path: tuple[int, ...]) -> ThoughtNode:
    """Remove the node at a non-root path from its parent's children."""
    if len(path) == 1:
        kids = tuple(c for i, c in enumerate(root.children) if i != path[0])
        return ThoughtNode(root.label, kids)
    kids = list(root.children)
    kids[path[0]] = _drop_child(kids[path[0]], path[1:])
    return ThoughtNode(root.label, tuple(kids))


def _wrap_tree(rng: random.Random, node: ThoughtNode) -> str:
    text = thought_tree.canonical_serialize_node(node)
    return f"{rng.choice(_PROSE_OPENERS)}\n\n```json\n{text}\n```\n"


def _variant_root(rng: random.Random, node: ThoughtNode) -> ThoughtNode:
    return ThoughtNode(f"{node.label} (rev {rng.randrange(100):02d})", node.children)


def synthesize_response(purpose: str, user_text: str) -> str:
    """Deterministic model-like reply for one prompt."""
    rng = random.Random(_seed_from(purpose, user_text))
    if purpose == "grounding":
        expr = alpha_dsl.random_expr(rng, rng.choice((2, 3, 3, 4)))
        text = alpha_dsl.unparse(expr)
        if rng.random() < 0.5:
            return f"The expression is:\n```\n{text}\n```\n"
        return text + "\n"
    parents = [t.root for t in extract_all_trees(user_text)]
    if purpose == "crossover" and len(parents) >= 2:
        child = _cross(rng, parents[0], parents[1])
    elif purpose in ("mutation", "flat_variation") and parents:
        child = _mutate(rng, parents[0])
    elif purpose == "pruning" and parents:
        child = _prune(rng, parents[0])
    else:
        child = _random_tree(rng)
    if thought_tree.validate(ThoughtTree(child)):
        child = _random_tree(rng)
    return _wrap_tree(rng, child)


def _paths(node: ThoughtNode) -> list[tuple[int, ...]]:
    return [path for path, _ in thought_tree.iter_nodes(node)]


def _node_at(node: ThoughtNode, path: tuple[int, ...]) -> ThoughtNode:
    for index in path:
        node = node.children[index]
    return node


def _cross(rng: random.Random, a: ThoughtNode, b: ThoughtNode) -> ThoughtNode:
    before = {ThoughtTree(a).id, ThoughtTree(b).id}
    for _ in range(8):
        target = rng.choice(_paths(a))
        graft = _node_at(b, rng.choice(_paths(b)))
        child = thought_tree.replace_subtree(ThoughtTree(a), target, graft).root
        if ThoughtTree(child).id not in before:
            return child
    return ThoughtNode(a.label, a.children + (b,))


def _mutate(rng: random.Random, parent: ThoughtNode) -> ThoughtNode:
    for _ in range(8):
        target = rng.choice(_paths(parent))
        child = thought_tree.replace_subtree(
            ThoughtTree(parent), target, _random_subtree(rng, 2)
        ).root
        if ThoughtTree(child).id != ThoughtTree(parent).id:
            return child
    return _variant_root(rng, parent)


def _prune(rng: random.Random, parent: ThoughtNode) -> ThoughtNode:
    candidates = [p for p in _paths(parent) if p]
    if not candidates:
        return _variant_root(rng, parent)
    return _drop_child(parent, rng.choice(candidates))


def _echo_response(purpose: str, index: int) -> str:
    if purpose == "grounding":
        return "close\n"
    node = {"label": f"echo {purpose} {index}", "children": []}
    return "```json\n" + json.dumps(node, sort_keys=True, indent=2) + "\n```\n"
