from __future__ import annotations

import json
import sys
import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schemaparse.constraints import (
    BOS,
    CLOSE,
    EOS,
    OPEN,
    ExternalScorer,
    GoldReplayScorer,
    IllegalTransition,
    RandomScorer,
    StrictnessConfig,
    WordTokenizer,
    build,
    constrained_beam_search,
    replay,
    sample,
)
from schemaparse.schema import bundle_from_dict, bundle_to_dict, load_builtin
from schemaparse.tree import linearize, parse_linear, validate_against_schema

from conftest import BUNDLE_NAMES


def _legal_by_step(engine, state):
    out = set()
    for t in range(len(engine.vocab)):
        try:
            engine.step(state, t)
        except IllegalTransition:
            continue
        out.add(t)
    return frozenset(out)


@pytest.mark.parametrize("name", BUNDLE_NAMES)
@settings(max_examples=40, deadline=None)
@given(data=st.data())
def test_allowed_next_agrees_with_step(engines, name, data):
    engine = engines[name]
    state = engine.initial_state()
    for _ in range(data.draw(st.integers(0, 40))):
        allowed = engine.allowed_next(state)
        assert allowed == _legal_by_step(engine, state)
        if not allowed:
            return
        state = engine.step(state, data.draw(st.sampled_from(sorted(allowed))))
    assert engine.allowed_next(state) == _legal_by_step(engine, state)


def test_vocabulary_layout(engines):
    engine = engines["COFFEE"]
    tokens = engine.vocab.tokens
    assert tokens[:4] == [BOS, EOS, OPEN, CLOSE]
    assert tokens[4] == "DRINK_ORDER"
    assert {"latte", "hot_chocolate", "hot", "chocolate"} <= set(tokens)


def test_rejects_out_of_catalog_value(engines):
    engine = engines["COFFEE"]
    tokens = WordTokenizer().tokenize("(DRINK_ORDER (SIZE coke ) )")
    r = replay(engine, tokens)
    assert not r
    assert (r.position, r.token) == (tokens.index("coke"), "coke")
    assert "large" in r.expected


@pytest.mark.parametrize(
    "text, bad",
    [
        ("(DRINK_ORDER (SIZE large )", None),
        ("(DRINK_ORDER )", ")"),
        ("(DRINK_ORDER (DRINK_ORDER (SIZE large ) ) )", "DRINK_ORDER"),
        ("(SIZE large )", "SIZE"),
        ("(DRINK_ORDER (NOT (TOPPING honey ) (TOPPING honey ) ) )", "("),
        ("(DRINK_ORDER (SIZE hot chocolate ) )", "hot"),
        ("(DRINK_ORDER (DRINK_TYPE hot ) )", ")"),
    ],
)
def test_rejections(engines, text, bad):
    r = replay(engines["COFFEE"], text)
    assert not r
    assert r.token == bad


def test_multiword_values_by_surface_or_entity(engines):
    e = engines["COFFEE"]
    assert replay(e, "(DRINK_ORDER (DRINK_TYPE hot chocolate ) )")
    assert replay(e, "(DRINK_ORDER (DRINK_TYPE hot_chocolate ) )")


def test_worked_parses_replay(engines, worked_parses):
    for name, _, f in worked_parses:
        assert replay(engines[name], linearize(f)), linearize(f)


def test_strict_modes_narrow_the_grammar(bundles):
    text = "(DRINK_ORDER (NOT (SIZE large ) ) )"
    assert replay(build(bundles["COFFEE"]), text)
    strict = build(bundles["COFFEE"], StrictnessConfig(enforce_negatable_under_not=True))
    assert not replay(strict, text)
    text = "(SIDE_ORDER (MAIN_FILLING steak ) )"
    assert replay(build(bundles["BURRITO"]), text)
    assert not replay(build(bundles["BURRITO"], StrictnessConfig(enforce_intent_slot_compat=True)), text)


def test_empty_catalog_is_diagnosed_not_fatal():
    raw = bundle_to_dict(load_builtin("COFFEE"))
    raw["catalogs"]["STYLE"] = []
    engine = build(bundle_from_dict(raw))
    assert any("STYLE" in d for d in engine.diagnostics)
    style = engine.vocab.id("STYLE")
    state = engine.initial_state()
    for tok in ("(", "DRINK_ORDER", "("):
        state = engine.step(state, engine.vocab.id(tok))
    assert style not in engine.allowed_next(state)


@pytest.mark.parametrize("name", BUNDLE_NAMES)
def test_random_samples_are_valid(bundles, engines, name):
    # the default grammar may pair a slot with a foreign intent, never an off-catalog value
    for text in sample(engines[name], 50, seed=3):
        assert replay(engines[name], text)
        kinds = {v.kind for v in validate_against_schema(parse_linear(text), bundles[name])}
        assert kinds <= {"illegal_slot"}
    strict = build(bundles[name], StrictnessConfig(True, True))
    for text in sample(strict, 50, seed=3):
        assert validate_against_schema(parse_linear(text), bundles[name]) == []


def test_sampling_is_seeded(engines):
    assert sample(engines["SUB"], 5, seed=11) == sample(engines["SUB"], 5, seed=11)


def test_gold_replay_scorer_recovers_gold(engines, worked_parses):
    for name, _, f in worked_parses:
        engine = engines[name]
        hyps = constrained_beam_search(engine, GoldReplayScorer(engine, linearize(f)), beam=6)
        assert parse_linear(engine.decode(hyps[0].tokens)) == f


def test_beam_results_are_sorted_and_accepting(engines):
    engine = engines["BURGER"]
    hyps = constrained_beam_search(engine, RandomScorer(len(engine.vocab), seed=0), beam=4)
    assert 1 <= len(hyps) <= 4
    assert [h.score for h in hyps] == sorted((h.score for h in hyps), reverse=True)
    assert all(h.tokens[-1] == engine.eos and replay(engine, engine.decode(h.tokens)) for h in hyps)


def test_max_len_exhaustion_is_reported(engines):
    engine = engines["PIZZA"]
    diags: list[str] = []
    assert constrained_beam_search(engine, RandomScorer(len(engine.vocab)), beam=2, max_len=3, diagnostics=diags) == []
    assert diags


SCRIPT = textwrap.dedent(
    """
    import json, sys
    gold = sys.argv[1].split()
    vocab = json.loads(sys.stdin.readline())["vocab"]
    for line in sys.stdin:
        msg = json.loads(line)
        if "prefix" not in msg:
            continue
        n = len(msg["prefix"])
        tok = gold[n] if n < len(gold) else "<eos>"
        print(json.dumps({"scores": {tok: 1.0, **({} if tok == ")" else {")": 0.5})}}), flush=True)
    """
)


def test_external_scorer_protocol(engines, tmp_path):
    engine = engines["COFFEE"]
    gold = "(DRINK_ORDER (SIZE large ) (DRINK_TYPE latte ) )"
    script = tmp_path / "scorer.py"
    script.write_text(SCRIPT)
    with ExternalScorer([sys.executable, str(script), " ".join(engine.encode(gold))], engine.vocab) as scorer:
        scorer.start(json.dumps("one large latte"))
        hyps = constrained_beam_search(engine, scorer, beam=2)
    assert engine.decode(hyps[0].tokens) == gold
