from __future__ import annotations

import json

import pytest
from hypothesis import given

from schemaparse.dataset import Example
from schemaparse.evaluate import EvalReport, evaluate, merge_reports, postprocess, subset_unseen_intents
from schemaparse.linker import fuzzy_match
from schemaparse.tree import linearize, parse_linear

from test_tree import forests


def test_postprocess_adds_unit_number_only_where_missing():
    f = parse_linear("(PIZZAORDER (SIZE large ) ) (DRINKORDER (NUMBER 2 ) (DRINKTYPE coke ) )")
    assert linearize(postprocess(f)) == (
        "(PIZZAORDER (NUMBER 1 ) (SIZE large ) ) (DRINKORDER (NUMBER 2 ) (DRINKTYPE coke ) )"
    )


@given(forests)
def test_postprocess_is_idempotent_and_complete(f):
    once = postprocess(f)
    assert postprocess(once) == once
    assert all(any(c.label == "NUMBER" for c in i.children) for i in once.intents)


def test_identity_and_order_insensitive(bundles):
    b = bundles["PIZZA"]
    gold = ["(PIZZAORDER (NUMBER 2 ) (SIZE large ) (TOPPING ham ) )"]
    assert evaluate(gold, gold, b).unordered_em == 1.0
    pred = ["(PIZZAORDER (TOPPING ham ) (SIZE big ) (NUMBER two ) )"]
    assert evaluate(pred, gold, b).unordered_em == 1.0


def test_unit_number_is_restored_before_matching(bundles):
    b = bundles["PIZZA"]
    r = evaluate(["(PIZZAORDER (SIZE large ) )"], ["(PIZZAORDER (NUMBER 1 ) (SIZE large ) )"], b)
    assert r.correct == (True,)


def test_invalid_predictions_count_as_wrong(bundles):
    b = bundles["PIZZA"]
    gold = ["(PIZZAORDER (SIZE large ) )"] * 4
    preds = ["(PIZZAORDER (SIZE large )", "", "(PIZZAORDER (SIZE colossal ) )", "(PIZZAORDER (SIZE small ) )"]
    r = evaluate(preds, gold, b)
    t = r.tasks["PIZZA"]
    assert (t.n_correct, t.n_invalid_parses) == (0, 3)
    assert r.correct == (False,) * 4


def test_length_mismatch_raises(bundles):
    with pytest.raises(ValueError):
        evaluate([], ["(PIZZAORDER (SIZE large ) )"], bundles["PIZZA"])


def test_missing_schema_count(bundles):
    b = bundles["PIZZA"]
    utts = ["two large pizzas with ham", "two large pizzas"]
    gold = ["(PIZZAORDER (NUMBER 2 ) (SIZE large ) (TOPPING ham ) )"] * 2
    linked = [fuzzy_match(u, b) for u in utts]
    r = evaluate(gold, gold, b, linked=linked)
    assert r.tasks["PIZZA"].n_missing_schema == 1


def test_merge_and_render(bundles):
    g = ["(PIZZAORDER (SIZE large ) )"]
    a = evaluate(g, g, bundles["PIZZA"], task="a")
    b = evaluate(["(PIZZAORDER (SIZE small ) )"], g, bundles["PIZZA"], task="b")
    merged = merge_reports([a, b])
    assert merged.unordered_em == 0.5
    d = json.loads(merged.to_json())
    assert d["aggregate"]["n_examples"] == 2
    assert "ALL" in merged.table()
    with pytest.raises(ValueError):
        merge_reports([a, a])
    assert EvalReport().unordered_em == 0.0


def test_unseen_intent_subset(bundles):
    train = [bundles[n] for n in ("PIZZA", "BURRITO", "SUB")]
    examples = [
        Example("x", parse_linear("(MAIN_DISH_ORDER (MAIN_DISH_TYPE vegan_burger ) )")),
        Example("y", parse_linear("(SIDE_ORDER (SIDE_TYPE french_fries ) )")),
        Example("z", parse_linear("(SIDE_ORDER (SIDE_TYPE french_fries ) ) (MAIN_DISH_ORDER (MAIN_DISH_TYPE vegan_burger ) )")),
    ]
    assert [e.utterance for e in subset_unseen_intents(examples, train)] == ["x", "z"]
