from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schemaparse.schema import load_builtin
from schemaparse.tree import (
    IntentNode,
    ParseError,
    ParseForest,
    ResolutionError,
    SlotNode,
    ValueLeaf,
    compute_stats,
    count_slots,
    forest,
    forest_depth,
    intent,
    linearize,
    parse_linear,
    resolve_entities,
    slot,
    unordered_equal,
    validate_against_schema,
    value_pairs,
)

LABELS = st.sampled_from(["SIZE", "TOPPING", "NUMBER", "NOT", "COMPLEX", "QUANTITY", "STYLE"])
INTENTS = st.sampled_from(["PIZZAORDER", "DRINKORDER", "SIDE_ORDER"])
VALUES = st.from_regex(r"[a-z0-9_]{1,8}", fullmatch=True)

slot_nodes = st.recursive(
    st.builds(lambda l, v: SlotNode(l, (ValueLeaf(v),)), LABELS, VALUES),
    lambda kids: st.builds(lambda l, cs: SlotNode(l, tuple(cs)), LABELS, st.lists(kids, min_size=1, max_size=2)),
    max_leaves=6,
)
forests = st.builds(
    lambda xs: ParseForest(tuple(xs)),
    st.lists(st.builds(lambda l, cs: IntentNode(l, tuple(cs)), INTENTS, st.lists(slot_nodes, min_size=1, max_size=4)),
             min_size=1, max_size=3),
)


def shuffled(f: ParseForest, rng: random.Random) -> ParseForest:
    def sh(node):
        if isinstance(node, ValueLeaf):
            return node
        kids = [sh(c) for c in node.children]
        rng.shuffle(kids)
        return type(node)(node.label, tuple(kids))

    intents = [sh(i) for i in f.intents]
    rng.shuffle(intents)
    return ParseForest(tuple(intents))


EXAMPLE = "(PIZZAORDER (NUMBER 5 ) (SIZE medium ) (NOT (TOPPING olives ) ) ) (DRINKORDER (DRINKTYPE coke ) )"


def test_parse_and_linearize_example():
    f = parse_linear(EXAMPLE)
    assert linearize(f) == EXAMPLE
    assert f == forest(
        intent("PIZZAORDER", slot("NUMBER", 5), slot("SIZE", "medium"), slot("NOT", slot("TOPPING", "olives"))),
        intent("DRINKORDER", slot("DRINKTYPE", "coke")),
    )
    assert value_pairs(f) == [("NUMBER", "5"), ("SIZE", "medium"), ("TOPPING", "olives"), ("DRINKTYPE", "coke")]


def test_multiword_leaf_values():
    f = parse_linear("(PIZZAORDER (TOPPING banana peppers ) )")
    assert f.intents[0].children[0].value == "banana peppers"


@pytest.mark.parametrize(
    "text",
    ["", "(PIZZAORDER (SIZE medium )", "(PIZZAORDER (SIZE medium ) ) )", "(PIZZAORDER medium )",
     "(PIZZAORDER )", "(SIZE (TOPPING x ) y )", "PIZZAORDER"],
)
def test_malformed_linear_forms(text):
    with pytest.raises(ParseError):
        parse_linear(text)


@given(forests)
def test_linear_round_trip(f):
    assert parse_linear(linearize(f)) == f


@settings(max_examples=100)
@given(forests, st.integers(0, 2**32))
def test_unordered_equality_ignores_sibling_order(f, seed):
    assert unordered_equal(f, shuffled(f, random.Random(seed)))


@given(forests)
def test_duplicates_matter(f):
    doubled = ParseForest(f.intents + f.intents[:1])
    assert not unordered_equal(f, doubled)


def test_resolution_is_idempotent_and_strict():
    b = load_builtin("COFFEE")
    f = parse_linear("(DRINK_ORDER (SIZE venti ) (DRINK_TYPE hot chocolate ) (NUMBER two ) )")
    r = resolve_entities(f, b)
    assert linearize(r) == "(DRINK_ORDER (SIZE large ) (DRINK_TYPE hot_chocolate ) (NUMBER 2 ) )"
    assert resolve_entities(r, b) == r
    with pytest.raises(ResolutionError):
        resolve_entities(parse_linear("(DRINK_ORDER (SIZE gigantic ) )"), b)


def test_depth_counts_root_not_leaves():
    flat = parse_linear("(DRINK_ORDER (SIZE large ) )")
    wrapped = parse_linear("(PIZZAORDER (NOT (TOPPING ham ) ) )")
    assert forest_depth(flat) == 3
    assert forest_depth(wrapped) == 4
    stats = compute_stats([flat, wrapped])
    assert stats.avg_depth == 3.5
    assert stats.intents_per_utterance == 1.0
    assert count_slots(wrapped) == 2
    assert stats.slots_per_utterance == 1.5


def test_validation_reports_each_kind():
    b = load_builtin("COFFEE")
    ok = parse_linear("(DRINK_ORDER (NUMBER 1 ) (TOPPING (ESPRESSO_SHOT 1 ) ) (NOT (TOPPING honey ) ) )")
    assert validate_against_schema(ok, b) == []
    cases = {
        "unknown_intent": "(PIZZAORDER (SIZE large ) )",
        "unknown_slot": "(DRINK_ORDER (CRUST thin ) )",
        "illegal_slot": "(DRINK_ORDER (NOT (SIZE large ) ) )",
        "structure": "(DRINK_ORDER (NOT honey ) )",
        "invalid_value": "(DRINK_ORDER (SIZE coke ) )",
    }
    for kind, text in cases.items():
        kinds = {v.kind for v in validate_against_schema(parse_linear(text), b)}
        assert kind in kinds, (kind, kinds)


def test_worked_parses_validate(bundles, worked_parses):
    for name, _, f in worked_parses:
        assert validate_against_schema(f, bundles[name]) == [], linearize(f)
