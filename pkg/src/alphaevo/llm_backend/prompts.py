"""Prompt templates for the five model roles plus the flat ablation.

Templates are plain text files with ``$placeholder`` substitution (so the
JSON braces of embedded trees need no escaping) and live outside the code
on purpose: deployments tune prompts without touching the package. A
custom directory overrides any subset of the packaged defaults.

Every template can reference the shared context placeholders
``$tree_format``, ``$dsl_grammar`` and ``$feature_list``; the per-kind
placeholders are documented in the template files themselves.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from string import Template

from .. import alpha_dsl

__all__ = [
    "PROMPT_KINDS",
    "GENERATIVE_TEMPERATURE",
    "GROUNDING_TEMPERATURE",
    "PromptLibrary",
    "TREE_FORMAT_DOC",
    "dsl_grammar_doc",
]

PROMPT_KINDS = (
    "initialization",
    "crossover",
    "mutation",
    "pruning",
    "flat_variation",
    "grounding",
)

# Diversity for the generative roles, fidelity for translation.
GENERATIVE_TEMPERATURE = 1.0
GROUNDING_TEMPERATURE = 0.2

TREE_FORMAT_DOC = (
    "Write the thought as a tree in a ```json code fence. Every node is an "
    'object with exactly two keys: "label" (one short reasoning step) and '
    '"children" (an array of nested nodes, possibly empty). Keep the tree '
    "at most 10 levels deep and at most 64 nodes."
)


def dsl_grammar_doc() -> str:
    """Expression syntax summary derived from the live operator table."""
    return (
        "Expressions use infix arithmetic (+ - * /, unary -) and named "
        "operators in call syntax. Windows are integer literals of trading "
        f"days in [{alpha_dsl.MIN_WINDOW}, {alpha_dsl.MAX_WINDOW}]; numeric "
        f"constants must stay within [-{alpha_dsl.CONST_BOUND:g}, "
        f"{alpha_dsl.CONST_BOUND:g}]. Available operators:\n"
        + alpha_dsl.describe_operators()
    )


class PromptLibrary:
    """Loads and renders the prompt template set."""

    def __init__(self, directory: str | Path | None = None):
        self._overrides = Path(directory) if directory is not None else None
        self._cache: dict[str, Template] = {}

    def template_text(self, kind: str) -> str:
        if kind not in PROMPT_KINDS and kind != "system":
            raise KeyError(f"unknown prompt kind {kind!r}")
        if self._overrides is not None:
            candidate = self._overrides / f"{kind}.txt"
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        packaged = resources.files(__package__) / "templates" / f"{kind}.txt"
        return packaged.read_text(encoding="utf-8")

    def _template(self, kind: str) -> Template:
        if kind not in self._cache:
            self._cache[kind] = Template(self.template_text(kind))
        return self._cache[kind]

    def render(self, kind: str, **values) -> tuple[str, str]:
        """Return (system_text, user_text) for one call."""
        context = {
            "tree_format": TREE_FORMAT_DOC,
            "dsl_grammar": dsl_grammar_doc(),
            "feature_list": ", ".join(alpha_dsl.FEATURES),
        }
        context.update(values)
        system_text = self._template("system").safe_substitute(context).strip()
        user_text = self._template(kind).safe_substitute(context).strip()
        return system_text, user_text
