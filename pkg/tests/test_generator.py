from __future__ import annotations

import random

import pytest

from schemaparse.constraints import replay
from schemaparse.dataset import Example, format_dataset, read_dataset, read_parse_lines, write_dataset
from schemaparse.generator import (
    GenerationConfig,
    PoolValue,
    Template,
    TemplateError,
    expand,
    load_templates,
    sample_bindings,
    sample_dataset,
    templates_from_dict,
    validate_templates,
)
from schemaparse.tree import linearize, parse_linear, validate_against_schema

from conftest import BUNDLE_NAMES

SIDE = Template("{prelude} {number} {side_type}", "(SIDE_ORDER (NUMBER {number} ) (SIDE_TYPE {side_type} ) )")
POOLS = {"prelude": (PoolValue("i want"),)}


def test_expand_fills_both_sides(bundles):
    utt, parse = expand(SIDE, {"prelude": "i want", "number": "2", "side_type": "lays"}, bundles["SUB"], POOLS)
    assert utt == "i want two lays"
    assert linearize(parse) == "(SIDE_ORDER (NUMBER 2 ) (SIDE_TYPE lays ) )"


def test_expand_applies_normalization(bundles):
    t = Template("I want {number} {side_type}, THANKS", SIDE.parse)
    utt, _ = expand(t, {"number": 3, "side_type": "lays"}, bundles["SUB"])
    assert utt == "i want three lays thanks"


@pytest.mark.parametrize(
    "bindings",
    [
        {"prelude": "i want", "number": "2"},
        {"prelude": "i want", "number": "2", "side_type": "caviar"},
    ],
)
def test_expand_rejects_bad_bindings(bundles, bindings):
    with pytest.raises(TemplateError):
        expand(SIDE, bindings, bundles["SUB"], POOLS)


def test_expand_rejects_multi_sentence_output(bundles):
    t = Template("{side_type}. {side_type}", "(SIDE_ORDER (SIDE_TYPE {side_type} ) )")
    with pytest.raises(TemplateError):
        expand(t, {"side_type": "lays"}, bundles["SUB"])


def test_indexed_placeholders_draw_distinct_entities(bundles):
    t = Template("{topping0} {topping1} {topping2}", "(SANDWICH_ORDER (TOPPING {topping0} ) (TOPPING {topping1} ) (TOPPING {topping2} ) )")
    b = bundles["SUB"]
    for seed in range(50):
        bindings = sample_bindings(t, b, {}, random.Random(seed))
        assert len({e.entity for e in bindings.values()}) == 3


def test_validate_templates_finds_problems(bundles):
    bad = [
        Template("{prelude} pizza", "(PIZZAORDER (CRUST {crust} ) )"),
        Template("{mystery}", "(PIZZAORDER (SIZE large ) )"),
    ]
    diags = validate_templates(bad, bundles["PIZZA"], POOLS)
    assert any("{crust}" in d for d in diags)
    assert any("{mystery}" in d for d in diags)
    with pytest.raises(TemplateError):
        sample_dataset(bad, bundles["PIZZA"], GenerationConfig(5), POOLS)


@pytest.mark.parametrize("name", BUNDLE_NAMES)
def test_shipped_templates_generate_valid_replayable_data(bundles, engines, name):
    ts = load_templates(name)
    assert ts.bundle == name
    assert validate_templates(ts.templates, bundles[name], ts.pools) == []
    assert ts.simple_only().templates
    examples = sample_dataset(ts.templates, bundles[name], GenerationConfig(200, seed=5), ts.pools)
    assert len(examples) == 200
    assert len({(e.utterance, linearize(e.parse)) for e in examples}) == 200
    for e in examples:
        assert validate_against_schema(e.parse, bundles[name]) == [], linearize(e.parse)
        assert replay(engines[name], linearize(e.parse))


def test_template_counts():
    assert len(load_templates("SUB").templates) == 32
    assert len(load_templates("BURRITO").templates) == 46


def test_generation_is_deterministic(bundles):
    ts = load_templates("BURGER")
    run = lambda seed: sample_dataset(ts.templates, bundles["BURGER"], GenerationConfig(300, seed=seed), ts.pools)
    assert format_dataset(run(1)) == format_dataset(run(1))
    assert format_dataset(run(1)) != format_dataset(run(2))


def test_exhaustion_is_diagnosed(bundles):
    t = Template("{number} {side_type}", SIDE.parse)
    diags: list[str] = []
    out = sample_dataset([t], bundles["SUB"], GenerationConfig(10_000, max_attempts_factor=2), {}, diags)
    assert len(out) < 10_000
    assert diags and "exhausted" in diags[0]


def test_template_documents_are_checked():
    with pytest.raises(TemplateError):
        templates_from_dict({"pools": {}})
    with pytest.raises(TemplateError):
        templates_from_dict({"templates": [{"surface": "x"}]})
    with pytest.raises(TemplateError):
        templates_from_dict({"templates": [], "pools": {"p": []}})
    with pytest.raises(TemplateError):
        Template("x", "(A (B c ) )", weight=0)


def test_dataset_files_round_trip(tmp_path, bundles):
    ts = load_templates("PIZZA")
    examples = sample_dataset(ts.templates, bundles["PIZZA"], GenerationConfig(50), ts.pools)
    path = tmp_path / "d.tsv"
    write_dataset(path, examples, "entity")
    back, form = read_dataset(path)
    assert back == examples and form == "entity"
    assert read_parse_lines(path) == [linearize(e.parse) for e in examples]


def test_jsonl_datasets_are_read(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"train.SRC": "a coke", "train.TOP-DECOUPLED": "(DRINKORDER (DRINKTYPE coke ) )"}\n')
    (ex,), form = read_dataset(path)
    assert ex == Example("a coke", parse_linear("(DRINKORDER (DRINKTYPE coke ) )"))
    assert form == "surface"
