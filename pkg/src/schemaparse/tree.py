"""Parse trees in linearized parenthesized notation.

A parse is a forest of intent nodes (the children of an implicit ``ORDER``
root). Intent nodes hold slot nodes only; a slot node holds either one value
leaf or one or more slot nodes::

    (PIZZAORDER (NUMBER 5 ) (SIZE medium ) (NOT (TOPPING olives ) ) )

Whether a label is an intent or a slot is decided by position, never by
name, so the same code handles schemas it has never seen.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from statistics import fmean
from typing import Iterator, Sequence, Union

from schemaparse.schema import (
    COMPLEX,
    NEGATION,
    NESTED,
    QUANTITY,
    SchemaBundle,
    SchemaError,
)

ROOT_LABEL = "ORDER"

_TOKEN = re.compile(r"\(|\)|[^\s()]+")


class ParseError(ValueError):
    """Malformed linearized parse; ``position`` is a character offset."""

    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} (at character {position})")


class ResolutionError(ValueError):
    def __init__(self, slot: str, value: str, reason: str = "not in catalog"):
        self.slot = slot
        self.value = value
        super().__init__(f"cannot resolve {value!r} under slot {slot}: {reason}")


@dataclass(frozen=True)
class ValueLeaf:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("value leaf text must be non-empty")

    @property
    def is_numeric(self) -> bool:
        return self.text.isdigit()


@dataclass(frozen=True)
class SlotNode:
    label: str
    children: tuple[Union[SlotNode, ValueLeaf], ...]

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("slot label must be non-empty")
        if not self.children:
            raise ValueError(f"slot {self.label} has no children")
        leaves = sum(isinstance(c, ValueLeaf) for c in self.children)
        if leaves and len(self.children) != 1:
            raise ValueError(f"slot {self.label} mixes a value leaf with other children")

    @property
    def value(self) -> str | None:
        """Leaf text, or None for a slot whose children are slots."""
        child = self.children[0]
        return child.text if isinstance(child, ValueLeaf) else None

    @property
    def slots(self) -> tuple[SlotNode, ...]:
        return tuple(c for c in self.children if isinstance(c, SlotNode))


@dataclass(frozen=True)
class IntentNode:
    label: str
    children: tuple[SlotNode, ...]

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("intent label must be non-empty")
        if not self.children:
            raise ValueError(f"intent {self.label} has no slots")
        if not all(isinstance(c, SlotNode) for c in self.children):
            raise ValueError(f"intent {self.label} may only have slot children")


ParseNode = Union[IntentNode, SlotNode, ValueLeaf]


@dataclass(frozen=True)
class ParseForest:
    intents: tuple[IntentNode, ...]

    def __str__(self) -> str:
        return linearize(self)

    def __len__(self) -> int:
        return len(self.intents)


def slot(label: str, *children: SlotNode | ValueLeaf | str | int) -> SlotNode:
    """Convenience constructor: plain strings and ints become value leaves."""
    kids = tuple(ValueLeaf(str(c)) if isinstance(c, (str, int)) else c for c in children)
    return SlotNode(label, kids)


def intent(label: str, *children: SlotNode) -> IntentNode:
    return IntentNode(label, tuple(children))


def forest(*intents: IntentNode) -> ParseForest:
    return ParseForest(tuple(intents))


# ---------------------------------------------------------------------------
# text <-> tree
# ---------------------------------------------------------------------------


def tokenize_linear(text: str) -> list[tuple[str, int]]:
    return [(m.group(0), m.start()) for m in _TOKEN.finditer(text)]


class _Raw:
    __slots__ = ("label", "children", "leaf", "pos")

    def __init__(self, label: str, pos: int):
        self.label = label
        self.children: list[_Raw] = []
        self.leaf: list[str] = []
        self.pos = pos


def _read_nodes(text: str) -> list[_Raw]:
    toks = tokenize_linear(text)
    roots: list[_Raw] = []
    stack: list[_Raw] = []
    i = 0
    while i < len(toks):
        tok, pos = toks[i]
        if tok == "(":
            if i + 1 >= len(toks) or toks[i + 1][0] in "()":
                raise ParseError("empty node: '(' must be followed by a label", pos)
            node = _Raw(toks[i + 1][0], pos)
            if stack:
                parent = stack[-1]
                if parent.leaf:
                    raise ParseError(f"node {parent.label} mixes a value leaf with child nodes", pos)
                parent.children.append(node)
            else:
                roots.append(node)
            stack.append(node)
            i += 2
            continue
        if tok == ")":
            if not stack:
                raise ParseError("unbalanced parentheses: unexpected ')'", pos)
            node = stack.pop()
            if not node.children and not node.leaf:
                raise ParseError(f"empty node {node.label}", node.pos)
        else:
            if not stack:
                raise ParseError(f"value {tok!r} outside of any node", pos)
            node = stack[-1]
            if node.children:
                raise ParseError(f"node {node.label} mixes a value leaf with child nodes", pos)
            node.leaf.append(tok)
        i += 1
    if stack:
        raise ParseError(
            f"unbalanced parentheses: {len(stack)} node(s) left open at end of input", len(text)
        )
    return roots


def _to_slot(raw: _Raw) -> SlotNode:
    if raw.leaf:
        return SlotNode(raw.label, (ValueLeaf(" ".join(raw.leaf)),))
    return SlotNode(raw.label, tuple(_to_slot(c) for c in raw.children))


def parse_linear(text: str) -> ParseForest:
    """Parse a linearized tree into a forest.

    Accepts either a bare forest or a single tree explicitly rooted in
    ``ORDER``; both normalize to the same :class:`ParseForest`.
    """
    roots = _read_nodes(text)
    if not roots:
        raise ParseError("empty parse", 0)
    if len(roots) == 1 and roots[0].label == ROOT_LABEL and roots[0].children:
        roots = roots[0].children
    intents = []
    for raw in roots:
        if raw.leaf:
            raise ParseError(f"intent {raw.label} cannot hold a value leaf", raw.pos)
        intents.append(IntentNode(raw.label, tuple(_to_slot(c) for c in raw.children)))
    return ParseForest(tuple(intents))


def _lin(node: ParseNode) -> str:
    if isinstance(node, ValueLeaf):
        return node.text
    return "(" + node.label + " " + " ".join(_lin(c) for c in node.children) + " )"


def linearize(f: ParseForest) -> str:
    if not f.intents:
        raise ValueError("cannot linearize an empty forest")
    return " ".join(_lin(i) for i in f.intents)


# ---------------------------------------------------------------------------
# traversal helpers
# ---------------------------------------------------------------------------


def iter_slots(f: ParseForest) -> Iterator[tuple[IntentNode, tuple[SlotNode, ...]]]:
    """Yield (intent, path) for every slot node; path ends with the slot itself."""

    def walk(intent: IntentNode, path: tuple[SlotNode, ...]) -> Iterator:
        yield intent, path
        for c in path[-1].slots:
            yield from walk(intent, path + (c,))

    for i in f.intents:
        for s in i.children:
            yield from walk(i, (s,))


def value_pairs(f: ParseForest) -> list[tuple[str, str]]:
    """(slot, leaf text) for every value leaf, in document order."""
    return [(p[-1].label, p[-1].value) for _, p in iter_slots(f) if p[-1].value is not None]


def _map_leaves(node: SlotNode, fn) -> SlotNode:
    if node.value is not None:
        return SlotNode(node.label, (ValueLeaf(fn(node.label, node.value)),))
    return SlotNode(node.label, tuple(_map_leaves(c, fn) for c in node.slots))


def map_leaves(f: ParseForest, fn) -> ParseForest:
    """Rebuild ``f`` with every leaf replaced by ``fn(slot_label, text)``."""
    return ParseForest(
        tuple(IntentNode(i.label, tuple(_map_leaves(s, fn) for s in i.children)) for i in f.intents)
    )


# ---------------------------------------------------------------------------
# entity resolution and comparison
# ---------------------------------------------------------------------------


def resolve_entities(f: ParseForest, bundle: SchemaBundle) -> ParseForest:
    """Replace every surface leaf by its catalog entity.

    Leaves that are already entity ids of their slot, or integers under a
    numeric slot, pass through unchanged, which makes resolution idempotent.
    """

    def fn(label: str, text: str) -> str:
        try:
            entity = bundle.resolve_value(label, text)
        except SchemaError as exc:
            raise ResolutionError(label, text, str(exc)) from exc
        if entity is None:
            raise ResolutionError(label, text)
        return entity

    return map_leaves(f, fn)


def _signature(node: ParseNode):
    if isinstance(node, ValueLeaf):
        return ("=", node.text)
    return (node.label, frozenset(Counter(_signature(c) for c in node.children).items()))


def unordered_signature(f: ParseForest):
    """Hashable form of ``f`` that ignores sibling order at every level."""
    return frozenset(Counter(_signature(i) for i in f.intents).items())


def unordered_equal(a: ParseForest, b: ParseForest) -> bool:
    return unordered_signature(a) == unordered_signature(b)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompositionalityStats:
    intents_per_utterance: float
    slots_per_utterance: float
    avg_depth: float
    n: int = 0


def _depth(node: SlotNode | IntentNode) -> int:
    kids = [c for c in node.children if not isinstance(c, ValueLeaf)]
    return 1 + max((_depth(c) for c in kids), default=0)


def forest_depth(f: ParseForest) -> int:
    """Nesting depth counting the implicit ORDER root as level 1; leaves are not a level."""
    return 1 + max(_depth(i) for i in f.intents)


def count_slots(f: ParseForest) -> int:
    return sum(1 for _ in iter_slots(f))


def compute_stats(forests: Sequence[ParseForest]) -> CompositionalityStats:
    if not forests:
        raise ValueError("compute_stats needs at least one parse")
    return CompositionalityStats(
        intents_per_utterance=fmean(len(f.intents) for f in forests),
        slots_per_utterance=fmean(count_slots(f) for f in forests),
        avg_depth=fmean(forest_depth(f) for f in forests),
        n=len(forests),
    )


# ---------------------------------------------------------------------------
# schema validation
# ---------------------------------------------------------------------------

UNKNOWN_INTENT = "unknown_intent"
UNKNOWN_SLOT = "unknown_slot"
ILLEGAL_SLOT = "illegal_slot"
STRUCTURE = "structure"
INVALID_VALUE = "invalid_value"


@dataclass(frozen=True)
class Violation:
    path: str
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.kind}: {self.message}"


def _legal_under_intent(bundle: SchemaBundle, label: str, intent_label: str) -> bool:
    idef = bundle.intent(intent_label)
    if idef is None:
        return True
    if idef.slot(label) is not None:
        return True
    role = bundle.role(label)
    if role == NEGATION:
        return any(s.negatable for s in idef.slots)
    if role == COMPLEX:
        return any(s.quantifiable for s in idef.slots)
    return False


def validate_against_schema(f: ParseForest, bundle: SchemaBundle) -> list[Violation]:
    """List every schema problem in ``f``; an empty list means fully valid."""
    out: list[Violation] = []

    def check_slot(node: SlotNode, path: str, parent: SlotNode | None, index: int, intent_label: str):
        label = node.label
        here = f"{path}/{label}"
        if not bundle.has_slot(label):
            out.append(Violation(here, UNKNOWN_SLOT, f"slot {label} is not in schema {bundle.name}"))
            return
        role = bundle.role(label)
        # legality under the parent
        if parent is None:
            if not _legal_under_intent(bundle, label, intent_label):
                out.append(Violation(here, ILLEGAL_SLOT, f"{label} is not a slot of {intent_label}"))
        else:
            prole = bundle.role(parent.label)
            ok = True
            if prole == NEGATION:
                ok = role == COMPLEX or bundle.is_negatable(label, intent_label)
            elif prole == COMPLEX:
                ok = role == QUANTITY if index == 0 else bundle.is_quantifiable(label, intent_label)
            else:
                g = bundle.generic_slot(label)
                ok = g is not None and g.role == NESTED and parent.label in g.parents
            if not ok:
                out.append(Violation(here, ILLEGAL_SLOT, f"{label} is not allowed under {parent.label}"))
        # shape of this node
        if role in (NEGATION, COMPLEX):
            if node.value is not None:
                out.append(Violation(here, STRUCTURE, f"wrapper {label} cannot hold a value"))
                return
            arity = 1 if role == NEGATION else 2
            if len(node.children) != arity:
                out.append(
                    Violation(here, STRUCTURE, f"{label} needs exactly {arity} child slot(s), has {len(node.children)}")
                )
        elif node.value is not None:
            if bundle.resolve_value(label, node.value) is None:
                out.append(
                    Violation(here, INVALID_VALUE, f"{node.value!r} is not a catalog value of {label}")
                )
            return
        elif not any(g.role == NESTED and label in g.parents for g in bundle.schema.generic_slots):
            out.append(Violation(here, STRUCTURE, f"{label} takes a value, not child slots"))
        for k, child in enumerate(node.slots):
            check_slot(child, here, node, k, intent_label)

    for i in f.intents:
        if bundle.intent(i.label) is None:
            out.append(Violation(i.label, UNKNOWN_INTENT, f"intent {i.label} is not in schema {bundle.name}"))
        for k, s in enumerate(i.children):
            check_slot(s, i.label, None, k, i.label)
    return out
