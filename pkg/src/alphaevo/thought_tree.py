"""Hierarchical thought trees: the genome of the evolutionary search.

A thought is a tree of short natural-language reasoning steps. The root
states the overall alpha idea; children decompose it into finer steps.
Trees are immutable values: every edit returns a new tree, and a tree's
identity is a content hash of its canonical serialization, so structurally
identical thoughts deduplicate regardless of how they were produced.

The canonical text form is a JSON object with exactly two keys per node,
``label`` and ``children``, serialized with sorted keys and 2-space
indentation. This is the format embedded in prompts, expected back from
the model, and stored in run logs.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field

__all__ = [
    "ThoughtNode",
    "ThoughtTree",
    "Lineage",
    "TreeStats",
    "Violation",
    "PathNotFoundError",
    "TreeFormatError",
    "MAX_TREE_DEPTH",
    "MAX_TREE_NODES",
    "normalize_label",
    "validate",
    "subtree_at",
    "replace_subtree",
    "canonical_serialize",
    "canonical_deserialize",
    "stats",
    "iter_nodes",
]

# Acceptance caps for model-produced trees. Outputs beyond these are
# rejected and regenerated rather than truncated.
MAX_TREE_DEPTH = 10
MAX_TREE_NODES = 64

_WS_RE = re.compile(r"\s+")


def normalize_label(text: str) -> str:
    """Trim and collapse internal whitespace so cosmetic variants hash equal."""
    return _WS_RE.sub(" ", text.strip())


class PathNotFoundError(KeyError):
    """A node path does not resolve to a node in the tree."""

    def __init__(self, path: tuple[int, ...], reason: str):
        super().__init__(f"path {list(path)} does not resolve: {reason}")
        self.path = path


class TreeFormatError(ValueError):
    """Canonical tree text is syntactically or structurally invalid."""

    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class ThoughtNode:
    """One reasoning step with an ordered list of sub-steps."""

    label: str
    children: tuple[ThoughtNode, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "label", normalize_label(self.label))
        object.__setattr__(self, "children", tuple(self.children))


@dataclass(frozen=True)
class Lineage:
    """Where a tree came from: generation, producing operator, parent ids."""

    generation: int = 0
    operator: str = "initialization"
    parents: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "operator": self.operator,
            "parents": list(self.parents),
        }


@dataclass(frozen=True)
class ThoughtTree:
    """An immutable thought tree with provenance and a content-hash id."""

    root: ThoughtNode
    lineage: Lineage = field(default_factory=Lineage)
    id: str = field(init=False)

    def __post_init__(self):
        digest = hashlib.sha256(canonical_serialize_node(self.root).encode("utf-8"))
        object.__setattr__(self, "id", digest.hexdigest())


@dataclass(frozen=True)
class TreeStats:
    depth: int
    node_count: int


@dataclass(frozen=True)
class Violation:
    """One invariant breach, located by the path of the offending node."""

    path: tuple[int, ...]
    message: str

    def __str__(self) -> str:
        return f"at {list(self.path)}: {self.message}"


def iter_nodes(root: ThoughtNode):
    """Yield ``(path, node)`` pairs in depth-first pre-order."""
    stack: list[tuple[tuple[int, ...], ThoughtNode]] = [((), root)]
    while stack:
        path, node = stack.pop()
        yield path, node
        for i in range(len(node.children) - 1, -1, -1):
            stack.append((path + (i,), node.children[i]))


def validate(
    tree: ThoughtTree,
    *,
    max_depth: int | None = MAX_TREE_DEPTH,
    max_nodes: int | None = MAX_TREE_NODES,
) -> list[Violation]:
    """Check tree invariants, returning one violation per breach.

    An empty list means the tree is acceptable. Size caps can be disabled
    by passing ``None``; structural checks always run.
    """
    violations: list[Violation] = []
    seen_ids: set[int] = set()
    count = 0
    deepest = 0
    for path, node in iter_nodes(tree.root):
        count += 1
        deepest = max(deepest, len(path) + 1)
        if id(node) in seen_ids:
            violations.append(Violation(path, "node object shared between branches"))
            continue
        seen_ids.add(id(node))
        if not node.label:
            violations.append(Violation(path, "label is empty after normalization"))
    if max_depth is not None and deepest > max_depth:
        violations.append(Violation((), f"depth {deepest} exceeds cap {max_depth}"))
    if max_nodes is not None and count > max_nodes:
        violations.append(Violation((), f"node count {count} exceeds cap {max_nodes}"))
    return violations


def subtree_at(tree: ThoughtTree, path: tuple[int, ...] | list[int]) -> ThoughtNode:
    """Resolve a path of child indices from the root; ``()`` is the root."""
    node = tree.root
    for depth, index in enumerate(path):
        if not 0 <= index < len(node.children):
            raise PathNotFoundError(
                tuple(path),
                f"index {index} out of range at depth {depth} "
                f"({len(node.children)} children)",
            )
        node = node.children[index]
    return node


def replace_subtree(
    tree: ThoughtTree, path: tuple[int, ...] | list[int], sub: ThoughtNode
) -> ThoughtTree:
    """Return a new tree with the subtree at ``path`` replaced by ``sub``.

    The input tree is never modified; lineage records the edit against
    the source tree's id.
    """
    subtree_at(tree, path)  # raises PathNotFoundError on a bad path
    new_root = _rebuild(tree.root, tuple(path), sub)
    lineage = Lineage(
        generation=tree.lineage.generation,
        operator="replace_subtree",
        parents=(tree.id,),
    )
    return ThoughtTree(root=new_root, lineage=lineage)


def _rebuild(node: ThoughtNode, path: tuple[int, ...], sub: ThoughtNode) -> ThoughtNode:
    if not path:
        return sub
    index = path[0]
    children = list(node.children)
    children[index] = _rebuild(children[index], path[1:], sub)
    return ThoughtNode(label=node.label, children=tuple(children))


def stats(tree: ThoughtTree) -> TreeStats:
    """Depth of the deepest leaf (root = 1) and total node count."""
    depth = 0
    count = 0
    for path, _node in iter_nodes(tree.root):
        count += 1
        depth = max(depth, len(path) + 1)
    return TreeStats(depth=depth, node_count=count)


def _node_to_obj(node: ThoughtNode) -> dict:
    return {
        "label": node.label,
        "children": [_node_to_obj(child) for child in node.children],
    }


def canonical_serialize_node(node: ThoughtNode) -> str:
    return json.dumps(_node_to_obj(node), sort_keys=True, indent=2, ensure_ascii=False)


def canonical_serialize(tree: ThoughtTree) -> str:
    """Byte-deterministic canonical text of the tree structure."""
    return canonical_serialize_node(tree.root)


def canonical_deserialize(text: str, lineage: Lineage | None = None) -> ThoughtTree:
    """Parse canonical tree text, rejecting malformed structures.

    Syntax errors carry the byte offset reported by the JSON decoder;
    structural errors (wrong keys, empty labels, excessive nesting) carry
    the offending path in the message.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeFormatError(f"not well-formed tree text: {exc.msg}", exc.pos) from exc
    except RecursionError as exc:
        raise TreeFormatError("tree text is nested too deeply") from exc
    root = _obj_to_node(obj, path=())
    return ThoughtTree(root=root, lineage=lineage or Lineage(operator="deserialized"))


def _obj_to_node(obj, path: tuple[int, ...]) -> ThoughtNode:
    if len(path) > 200:
        raise TreeFormatError(f"nesting deeper than 200 at {list(path)}")
    if not isinstance(obj, dict):
        raise TreeFormatError(f"node at {list(path)} is not an object")
    keys = set(obj)
    if keys != {"label", "children"}:
        # Exactly two keys per node; anything else (including reference
        # keys that could alias or induce cycles) is rejected outright.
        raise TreeFormatError(
            f"node at {list(path)} must have exactly the keys "
            f"'label' and 'children', got {sorted(keys)}"
        )
    if not isinstance(obj["label"], str):
        raise TreeFormatError(f"label at {list(path)} is not a string")
    label = normalize_label(obj["label"])
    if not label:
        raise TreeFormatError(f"label at {list(path)} is empty")
    if not isinstance(obj["children"], list):
        raise TreeFormatError(f"children at {list(path)} is not a list")
    children = tuple(
        _obj_to_node(child, path + (i,)) for i, child in enumerate(obj["children"])
    )
    return ThoughtNode(label=label, children=children)
