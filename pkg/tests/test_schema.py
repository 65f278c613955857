from __future__ import annotations

import copy
import json

import pytest

from schemaparse.schema import (
    BUILTIN_BUNDLES,
    BundleParseError,
    BundleValidationError,
    bundle_from_dict,
    bundle_stats,
    bundle_to_dict,
    builtin_bundle_path,
    load_builtin,
    load_bundle,
    lookup_entity,
    save_bundle,
    validate_bundle_dict,
)

# (intents, slots) per shipped schema; COFFEE counts its nested shot slot
SKELETON = {
    "PIZZA": (2, 10),
    "BURRITO": (7, 11),
    "SUB": (3, 8),
    "BURGER": (3, 9),
    "COFFEE": (1, 10),
}


def _raw(name="BURRITO"):
    return json.loads(builtin_bundle_path(name).read_text())


@pytest.mark.parametrize("name", BUILTIN_BUNDLES)
def test_builtin_bundles_load_and_match_skeleton(name):
    b = load_builtin(name)
    stats = bundle_stats(b)
    assert (stats["intents"], stats["slots"]) == SKELETON[name]
    assert stats["entities"] == sum(stats["entities_per_slot"].values()) > 0
    assert validate_bundle_dict(_raw(name)) == []


@pytest.mark.parametrize("name", BUILTIN_BUNDLES)
def test_round_trip_through_disk(name, tmp_path):
    b = load_builtin(name)
    path = tmp_path / "b.json"
    save_bundle(b, path)
    assert load_bundle(path) == b
    assert bundle_from_dict(bundle_to_dict(b)) == b


def test_directory_layout_with_separate_catalogs(tmp_path):
    raw = _raw("SUB")
    cats = {k: raw.pop(k) for k in ("catalogs", "generic_lexicons") if k in raw}
    (tmp_path / "schema.json").write_text(json.dumps(raw))
    (tmp_path / "catalogs.json").write_text(json.dumps(cats))
    assert load_bundle(tmp_path) == load_builtin("SUB")


def test_bare_name_selects_shipped_bundle():
    assert load_bundle("burrito") == load_builtin("BURRITO")


def test_lookup_is_many_to_one_and_case_insensitive():
    b = load_builtin("COFFEE")
    assert lookup_entity(b, "SIZE", "venti") == "large"
    assert lookup_entity(b, "SIZE", "  LARGE ") == "large"
    assert lookup_entity(b, "SIZE", "gigantic") is None
    assert b.resolve_value("SIZE", "large") == "large"
    assert b.resolve_value("NUMBER", "3") == "3"
    assert b.resolve_value("NUMBER", "three") == "3"


def test_roles_and_flags():
    b = load_builtin("COFFEE")
    assert b.role("NOT") == "negation"
    assert b.role("ESPRESSO_SHOT") == "nested"
    assert b.is_negatable("TOPPING", "DRINK_ORDER")
    assert not b.is_negatable("SIZE", "DRINK_ORDER")
    assert b.intents_with_slot("TOPPING") == ("DRINK_ORDER",)


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "X",\n  "intents": [}\n')
    with pytest.raises(BundleParseError) as err:
        load_bundle(path)
    assert err.value.line == 2


def test_missing_file_is_a_parse_error(tmp_path):
    with pytest.raises(BundleParseError):
        load_bundle(tmp_path / "nope.json")


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda r: r["catalogs"].update(TOPING=[{"surface": "x", "entity": "x"}]), "TOPING"),
        (lambda r: r["catalogs"]["TOPPING"].append({"surface": "x", "entity": "bad entity"}), "bad entity"),
        (lambda r: r.update(extra=1), "extra"),
        (lambda r: r.update(intents=[]), "no intents"),
    ],
)
def test_validation_collects_diagnostics(mutate, fragment):
    raw = copy.deepcopy(_raw("BURRITO"))
    mutate(raw)
    diags = validate_bundle_dict(raw)
    assert any(fragment in d for d in diags), diags
    with pytest.raises(BundleValidationError):
        bundle_from_dict(raw)


def test_unknown_builtin_name():
    with pytest.raises(KeyError):
        load_builtin("TACO")
