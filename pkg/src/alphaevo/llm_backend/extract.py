"""Pull structured artifacts out of free-form model output.

Model replies mix prose, code fences, and the payload we asked for. The
extractors scan the text in document order and return the first block
that parses: a canonical thought tree for the tree path, a valid DSL
expression for the grounding path. Host-language code, stray JSON, and
chatter are skipped, never executed.
"""

from __future__ import annotations

import json
import re

from .. import alpha_dsl, thought_tree
from ..alpha_dsl import AlphaExpr, ExprError
from ..thought_tree import ThoughtTree, TreeFormatError

__all__ = [
    "ExtractionError",
    "NoTreeFoundError",
    "TreeInvalidError",
    "NoExpressionFoundError",
    "extract_tree",
    "extract_all_trees",
    "extract_expression",
]


class ExtractionError(ValueError):
    """Model output did not contain the requested artifact."""


class NoTreeFoundError(ExtractionError):
    pass


class TreeInvalidError(ExtractionError):
    """A tree block parsed but breaks the tree invariants or size caps."""

    def __init__(self, violations: list[thought_tree.Violation]):
        super().__init__(
            "tree violates invariants: " + "; ".join(str(v) for v in violations)
        )
        self.violations = violations


class NoExpressionFoundError(ExtractionError):
    """No candidate line parsed; carries the most plausible failure."""

    def __init__(self, candidate: str | None, cause: str | None):
        if candidate is None:
            message = "no expression candidate found in output"
        else:
            message = f"best candidate {candidate!r} failed to parse: {cause}"
        super().__init__(message)
        self.candidate = candidate
        self.cause = cause


_DECODER = json.JSONDecoder()


def _json_objects(text: str):
    """Yield (object, slice) for every top-level JSON object in the text."""
    pos = 0
    while True:
        start = text.find("{", pos)
        if start < 0:
            return
        try:
            obj, end = _DECODER.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj, text[start : end]
            pos = end
        else:
            pos = start + 1


def _looks_like_tree(obj: dict) -> bool:
    return set(obj) == {"label", "children"}


def extract_tree(text: str) -> ThoughtTree:
    """Parse and validate the first canonical tree block in model output.

    Prose and code fences around the block are ignored. A block that is
    recognizably a tree but breaks the invariants or the size caps is an
    error, not something to skip: the caller regenerates.
    """
    for obj, snippet in _json_objects(text):
        if not _looks_like_tree(obj):
            continue
        try:
            tree = thought_tree.canonical_deserialize(snippet)
        except TreeFormatError as exc:
            raise TreeInvalidError(
                [thought_tree.Violation((), str(exc))]
            ) from exc
        violations = thought_tree.validate(tree)
        if violations:
            raise TreeInvalidError(violations)
        return tree
    raise NoTreeFoundError("no canonical tree block found in output")


def extract_all_trees(text: str) -> list[ThoughtTree]:
    """All valid canonical tree blocks, in document order; invalid ones skipped."""
    out: list[ThoughtTree] = []
    for obj, snippet in _json_objects(text):
        if not _looks_like_tree(obj):
            continue
        try:
            tree = thought_tree.canonical_deserialize(snippet)
        except TreeFormatError:
            continue
        if not thought_tree.validate(tree):
            out.append(tree)
    return out


_FENCE_RE = re.compile(r"```[A-Za-z0-9_+-]*\n(.*?)```", re.DOTALL)
_INLINE_CODE_RE = re.compile(r"`([^`\n]+)`")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")

_KNOWN_TOKEN_RE = re.compile(
    r"\b(" + "|".join(alpha_dsl.FEATURES + tuple(alpha_dsl.OPERATOR_TABLE)) + r")\b"
)


def _expression_candidates(text: str) -> list[str]:
    candidates: list[str] = []

    def add(raw: str) -> None:
        raw = _BULLET_RE.sub("", raw.strip()).rstrip(".;")
        if raw and raw not in candidates:
            candidates.append(raw)

    for match in _FENCE_RE.finditer(text):
        block = match.group(1)
        add(block)
        for line in block.splitlines():
            add(line)
    for match in _INLINE_CODE_RE.finditer(text):
        add(match.group(1))
    for line in text.splitlines():
        add(line)
        # Prose commonly prefixes the formula with "...: <expr>".
        if ":" in line:
            add(line.split(":", 1)[1])
            add(line.rsplit(":", 1)[1])
    return candidates


def extract_expression(text: str) -> AlphaExpr:
    """Parse the first valid DSL expression found in model output."""
    best_candidate: str | None = None
    best_cause: str | None = None
    for candidate in _expression_candidates(text):
        try:
            return alpha_dsl.parse(candidate)
        except ExprError as exc:
            if best_candidate is None and _KNOWN_TOKEN_RE.search(candidate):
                best_candidate, best_cause = candidate, str(exc)
    raise NoExpressionFoundError(best_candidate, best_cause)
