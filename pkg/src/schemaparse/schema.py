"""Task schemas, catalogs and bundle loading.

A bundle is one restaurant's configuration: the intent/slot skeleton, the
per-slot catalogs mapping surface forms onto back-end entities, and the
trigger lexicons of generic wrapper slots such as ``NOT``.

On disk a bundle is a JSON document::

    {
      "name": "BURRITO",
      "intents": [{"name": ..., "invocation_keywords": [...], "slots": [...]}],
      "generic_slots": [{"name": "NOT", "role": "negation"}, ...],
      "catalogs": {"MAIN_FILLING": [{"surface": "steak", "entity": "steak"}]},
      "generic_lexicons": {"NOT": ["with no", "without", "hold the"]}
    }

or a directory holding ``schema.json`` (skeleton) and ``catalogs.json``
(``catalogs`` and ``generic_lexicons``), so menus can change without touching
structure.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from schemaparse.text import normalize_text

NUMBER = "NUMBER"

#: Roles a bundle-wide generic slot may play.
NEGATION = "negation"  # wraps exactly one slot
COMPLEX = "complex"  # wraps (QUANTITY q) followed by one quantifiable slot
QUANTITY = "quantity"  # value slot, only legal as first child of a complex wrapper
NESTED = "nested"  # value slot, only legal under the slots listed in ``parents``
ROLES = (NEGATION, COMPLEX, QUANTITY, NESTED)

_ENTITY_RE = re.compile(r"^[A-Za-z0-9_]+$")
_TOP_KEYS = {"name", "description", "intents", "generic_slots", "catalogs", "generic_lexicons"}
_INTENT_KEYS = {"name", "invocation_keywords", "slots"}
_SLOT_KEYS = {"name", "negatable", "quantifiable"}
_GENERIC_KEYS = {"name", "role", "parents"}

BUILTIN_BUNDLES = ("PIZZA", "BURRITO", "SUB", "BURGER", "COFFEE")


class SchemaError(ValueError):
    """Base class for bundle loading problems."""


class BundleParseError(SchemaError):
    def __init__(self, path: str, message: str, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = f"{path}:{line}:{column}" if line is not None else path
        super().__init__(f"{where}: {message}")


class BundleValidationError(SchemaError):
    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("invalid bundle:\n  " + "\n  ".join(diagnostics))


class UnknownSlotError(SchemaError, KeyError):
    def __init__(self, slot: str):
        self.slot = slot
        super().__init__(f"unknown slot {slot!r}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class SlotDef:
    name: str
    negatable: bool = False
    quantifiable: bool = False


@dataclass(frozen=True)
class IntentDef:
    name: str
    invocation_keywords: tuple[str, ...] = ()
    slots: tuple[SlotDef, ...] = ()

    def slot(self, name: str) -> SlotDef | None:
        for s in self.slots:
            if s.name == name:
                return s
        return None

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)


@dataclass(frozen=True)
class GenericSlot:
    name: str
    role: str
    parents: tuple[str, ...] = ()


@dataclass(frozen=True)
class CatalogEntry:
    surface: str
    entity: str


@dataclass(frozen=True)
class TaskSchema:
    name: str
    intents: tuple[IntentDef, ...]
    generic_slots: tuple[GenericSlot, ...] = ()


@dataclass(frozen=True, eq=False)
class SchemaBundle:
    """A validated, read-only task configuration.

    Build through :func:`load_bundle` or :func:`bundle_from_dict`; the
    constructor assumes its inputs already passed validation.
    """

    schema: TaskSchema
    catalogs: dict[str, tuple[CatalogEntry, ...]]
    generic_lexicons: dict[str, tuple[str, ...]] = field(default_factory=dict)
    description: str = ""

    def __post_init__(self) -> None:
        intents = {i.name: i for i in self.schema.intents}
        generic = {g.name: g for g in self.schema.generic_slots}
        slots: dict[str, None] = {}
        for intent in self.schema.intents:
            for s in intent.slots:
                slots.setdefault(s.name)
        for g in self.schema.generic_slots:
            slots.setdefault(g.name)
        by_surface: dict[str, dict[str, str]] = {}
        by_entity: dict[str, dict[str, str]] = {}
        canonical: dict[str, dict[str, str]] = {}
        for slot, entries in self.catalogs.items():
            surf = by_surface.setdefault(slot, {})
            ents = by_entity.setdefault(slot, {})
            canon = canonical.setdefault(slot, {})
            for e in entries:
                surf[normalize_text(e.surface)] = e.entity
                ents[e.entity.lower()] = e.entity
                canon.setdefault(e.entity, e.surface)
        numeric = {
            slot for slot, entries in self.catalogs.items()
            if entries and all(e.entity.isdigit() for e in entries)
        }
        object.__setattr__(self, "_intents", intents)
        object.__setattr__(self, "_generic", generic)
        object.__setattr__(self, "_slots", tuple(slots))
        object.__setattr__(self, "_by_surface", by_surface)
        object.__setattr__(self, "_by_entity", by_entity)
        object.__setattr__(self, "_canonical", canonical)
        object.__setattr__(self, "_numeric", numeric)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SchemaBundle):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.catalogs == other.catalogs
            and self.generic_lexicons == other.generic_lexicons
            and self.description == other.description
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def intent_names(self) -> tuple[str, ...]:
        return tuple(self._intents)

    @property
    def slot_names(self) -> tuple[str, ...]:
        """Every slot label: intent slots in schema order, then generic slots."""
        return self._slots

    def intent(self, name: str) -> IntentDef | None:
        return self._intents.get(name)

    def generic_slot(self, name: str) -> GenericSlot | None:
        return self._generic.get(name)

    def role(self, slot: str) -> str | None:
        g = self._generic.get(slot)
        return g.role if g else None

    def slots_with_role(self, role: str) -> tuple[str, ...]:
        return tuple(g.name for g in self.schema.generic_slots if g.role == role)

    def has_slot(self, slot: str) -> bool:
        return slot in self._slots

    def is_numeric(self, slot: str) -> bool:
        return slot in self._numeric

    def intents_with_slot(self, slot: str) -> tuple[str, ...]:
        return tuple(i.name for i in self.schema.intents if i.slot(slot) is not None)

    def is_negatable(self, slot: str, intent: str | None = None) -> bool:
        return self._slot_flag(slot, intent, "negatable")

    def is_quantifiable(self, slot: str, intent: str | None = None) -> bool:
        return self._slot_flag(slot, intent, "quantifiable")

    def _slot_flag(self, slot: str, intent: str | None, flag: str) -> bool:
        intents = [self._intents[intent]] if intent in self._intents else self.schema.intents
        return any(getattr(s, flag) for i in intents for s in i.slots if s.name == slot)

    def catalog(self, slot: str) -> tuple[CatalogEntry, ...]:
        if slot not in self._slots:
            raise UnknownSlotError(slot)
        return self.catalogs.get(slot, ())

    def entities(self, slot: str) -> tuple[str, ...]:
        return tuple(self._canonical.get(slot, {}))

    def canonical_surface(self, slot: str, entity: str) -> str:
        """First listed surface form of ``entity`` (the entity itself if unlisted)."""
        return self._canonical.get(slot, {}).get(entity, entity)

    def lookup_entity(self, slot: str, surface: str) -> str | None:
        """Entity for a catalog surface of ``slot``, or None when unlisted."""
        if slot not in self._slots:
            raise UnknownSlotError(slot)
        key = normalize_text(surface)
        if not key:
            return None
        return self._by_surface.get(slot, {}).get(key)

    def resolve_value(self, slot: str, text: str) -> str | None:
        """Resolve a parse leaf: a surface, an entity id, or an integer for numeric slots."""
        entity = self.lookup_entity(slot, text)
        if entity is not None:
            return entity
        text = text.strip()
        entity = self._by_entity.get(slot, {}).get(text.lower())
        if entity is not None:
            return entity
        if slot in self._numeric and text.isdigit():
            return str(int(text))
        return None


def lookup_entity(bundle: SchemaBundle, slot: str, surface: str) -> str | None:
    return bundle.lookup_entity(slot, surface)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _is_str(x: Any) -> bool:
    return isinstance(x, str) and x.strip() != ""


def validate_bundle_dict(raw: Any) -> list[str]:
    """Return every problem found in a raw bundle document (empty if valid)."""
    diags: list[str] = []
    if not isinstance(raw, dict):
        return ["bundle document must be a JSON object"]
    for key in sorted(set(raw) - _TOP_KEYS):
        diags.append(f"unknown top-level key {key!r}")
    if not _is_str(raw.get("name")):
        diags.append("bundle 'name' must be a non-empty string")

    intents = raw.get("intents")
    intent_names: set[str] = set()
    slot_names: set[str] = set()
    if not isinstance(intents, list) or not intents:
        diags.append("schema has no intents")
        intents = []
    for idx, intent in enumerate(intents):
        where = f"intents[{idx}]"
        if not isinstance(intent, dict):
            diags.append(f"{where}: intent must be an object")
            continue
        for key in sorted(set(intent) - _INTENT_KEYS):
            diags.append(f"{where}: unknown key {key!r}")
        name = intent.get("name")
        if not _is_str(name):
            diags.append(f"{where}: intent name must be a non-empty string")
        else:
            where = f"intent {name}"
            if name in intent_names:
                diags.append(f"duplicate intent name {name!r}")
            intent_names.add(name)
        keywords = intent.get("invocation_keywords", [])
        if not isinstance(keywords, list) or not all(_is_str(k) for k in keywords):
            diags.append(f"{where}: invocation_keywords must be a list of non-empty strings")
        slots = intent.get("slots", [])
        if not isinstance(slots, list) or not slots:
            diags.append(f"{where}: intent has no slots")
            slots = []
        seen: set[str] = set()
        for sidx, slot in enumerate(slots):
            if not isinstance(slot, dict):
                diags.append(f"{where}: slots[{sidx}] must be an object")
                continue
            for key in sorted(set(slot) - _SLOT_KEYS):
                diags.append(f"{where}: slots[{sidx}]: unknown key {key!r}")
            sname = slot.get("name")
            if not _is_str(sname):
                diags.append(f"{where}: slots[{sidx}]: slot name must be a non-empty string")
                continue
            if sname in seen:
                diags.append(f"{where}: duplicate slot {sname!r}")
            seen.add(sname)
            slot_names.add(sname)
            for flag in ("negatable", "quantifiable"):
                if flag in slot and not isinstance(slot[flag], bool):
                    diags.append(f"{where}: slot {sname}: {flag!r} must be a boolean")

    generic_names: dict[str, str] = {}
    generic = raw.get("generic_slots", [])
    if not isinstance(generic, list):
        diags.append("'generic_slots' must be a list")
        generic = []
    for gidx, g in enumerate(generic):
        if not isinstance(g, dict) or not _is_str(g.get("name")):
            diags.append(f"generic_slots[{gidx}]: must be an object with a non-empty 'name'")
            continue
        for key in sorted(set(g) - _GENERIC_KEYS):
            diags.append(f"generic slot {g['name']}: unknown key {key!r}")
        gname = g["name"]
        if gname in generic_names:
            diags.append(f"duplicate generic slot {gname!r}")
        if gname in slot_names:
            diags.append(f"generic slot {gname!r} is also declared as an intent slot")
        role = g.get("role")
        if role not in ROLES:
            diags.append(f"generic slot {gname}: role must be one of {', '.join(ROLES)}")
        generic_names[gname] = role
        parents = g.get("parents", [])
        if role == NESTED and not parents:
            diags.append(f"generic slot {gname}: nested slots need 'parents'")
        if not isinstance(parents, list):
            diags.append(f"generic slot {gname}: 'parents' must be a list")
            parents = []
        for p in parents:
            if p not in slot_names:
                diags.append(f"generic slot {gname}: parent {p!r} is not an intent slot")
    if COMPLEX in generic_names.values() and QUANTITY not in generic_names.values():
        diags.append("a complex wrapper slot requires a quantity slot")

    overlap = intent_names & (slot_names | set(generic_names))
    for label in sorted(overlap):
        diags.append(f"label {label!r} is used both as an intent and as a slot")

    known_slots = slot_names | set(generic_names)
    catalogs = raw.get("catalogs", {})
    if not isinstance(catalogs, dict):
        diags.append("'catalogs' must be an object mapping slot -> entries")
        catalogs = {}
    for slot, entries in catalogs.items():
        if slot not in known_slots:
            diags.append(f"catalog references unknown slot {slot!r}")
        if generic_names.get(slot) in (NEGATION, COMPLEX):
            diags.append(f"catalog for wrapper slot {slot!r}; use generic_lexicons instead")
        if not isinstance(entries, list):
            diags.append(f"catalog {slot}: entries must be a list")
            continue
        surface_to_entity: dict[str, str] = {}
        entity_ids: dict[str, str] = {}
        for eidx, entry in enumerate(entries):
            if not isinstance(entry, dict):
                diags.append(f"catalog {slot}[{eidx}]: entry must be an object")
                continue
            surface, entity = entry.get("surface"), entry.get("entity")
            if not _is_str(surface):
                diags.append(f"catalog {slot}[{eidx}]: empty surface form")
                continue
            if not _is_str(entity):
                diags.append(f"catalog {slot}[{eidx}] ({surface!r}): empty entity")
                continue
            if not _ENTITY_RE.match(entity):
                diags.append(f"catalog {slot}: entity {entity!r} must match [A-Za-z0-9_]+")
            key = normalize_text(surface)
            prev = surface_to_entity.get(key)
            if prev is not None and prev != entity:
                diags.append(
                    f"catalog {slot}: surface {surface!r} maps to both {prev!r} and {entity!r}"
                )
            surface_to_entity[key] = entity
            low = entity.lower()
            if entity_ids.get(low, entity) != entity:
                diags.append(f"catalog {slot}: entities {entity_ids[low]!r} and {entity!r} differ only by case")
            entity_ids[low] = entity
        for key, entity in surface_to_entity.items():
            other = entity_ids.get(key)
            if other is not None and other != entity:
                diags.append(
                    f"catalog {slot}: surface {key!r} of {entity!r} collides with entity id {other!r}"
                )

    lexicons = raw.get("generic_lexicons", {})
    if not isinstance(lexicons, dict):
        diags.append("'generic_lexicons' must be an object mapping slot -> phrases")
        lexicons = {}
    for slot, phrases in lexicons.items():
        if slot not in generic_names:
            diags.append(f"generic lexicon references undeclared generic slot {slot!r}")
        if not isinstance(phrases, list) or not all(_is_str(p) for p in phrases):
            diags.append(f"generic lexicon {slot}: phrases must be non-empty strings")
    return diags


def bundle_from_dict(raw: Any) -> SchemaBundle:
    diags = validate_bundle_dict(raw)
    if diags:
        raise BundleValidationError(diags)
    intents = tuple(
        IntentDef(
            name=i["name"],
            invocation_keywords=tuple(i.get("invocation_keywords", [])),
            slots=tuple(
                SlotDef(s["name"], bool(s.get("negatable", False)), bool(s.get("quantifiable", False)))
                for s in i["slots"]
            ),
        )
        for i in raw["intents"]
    )
    generic = tuple(
        GenericSlot(g["name"], g["role"], tuple(g.get("parents", [])))
        for g in raw.get("generic_slots", [])
    )
    catalogs = {
        slot: tuple(CatalogEntry(e["surface"], e["entity"]) for e in entries)
        for slot, entries in raw.get("catalogs", {}).items()
    }
    lexicons = {slot: tuple(p) for slot, p in raw.get("generic_lexicons", {}).items()}
    return SchemaBundle(
        schema=TaskSchema(raw["name"], intents, generic),
        catalogs=catalogs,
        generic_lexicons=lexicons,
        description=raw.get("description", ""),
    )


def bundle_to_dict(bundle: SchemaBundle) -> dict[str, Any]:
    """Inverse of :func:`bundle_from_dict`; optional fields are written only when set."""
    intents = []
    for i in bundle.schema.intents:
        d: dict[str, Any] = {"name": i.name}
        if i.invocation_keywords:
            d["invocation_keywords"] = list(i.invocation_keywords)
        slots = []
        for s in i.slots:
            sd: dict[str, Any] = {"name": s.name}
            if s.negatable:
                sd["negatable"] = True
            if s.quantifiable:
                sd["quantifiable"] = True
            slots.append(sd)
        d["slots"] = slots
        intents.append(d)
    out: dict[str, Any] = {"name": bundle.name}
    if bundle.description:
        out["description"] = bundle.description
    out["intents"] = intents
    generic = []
    for g in bundle.schema.generic_slots:
        gd: dict[str, Any] = {"name": g.name, "role": g.role}
        if g.parents:
            gd["parents"] = list(g.parents)
        generic.append(gd)
    if generic:
        out["generic_slots"] = generic
    out["catalogs"] = {
        slot: [{"surface": e.surface, "entity": e.entity} for e in entries]
        for slot, entries in bundle.catalogs.items()
    }
    out["generic_lexicons"] = {slot: list(p) for slot, p in bundle.generic_lexicons.items()}
    return out


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleParseError(str(path), f"cannot read: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleParseError(str(path), exc.msg, exc.lineno, exc.colno) from exc


def load_bundle(path: str | Path) -> SchemaBundle:
    """Load and validate a bundle file or bundle directory.

    A bare name such as ``"BURRITO"`` that does not exist on disk selects the
    corresponding bundle shipped with the package.
    """
    p = Path(path)
    if not p.exists() and str(path).upper() in BUILTIN_BUNDLES:
        return load_builtin(str(path))
    if p.is_dir():
        single = p / "bundle.json"
        if single.exists():
            raw = _read_json(single)
        else:
            raw = _read_json(p / "schema.json")
            cat_path = p / "catalogs.json"
            if cat_path.exists():
                cats = _read_json(cat_path)
                if not isinstance(cats, dict):
                    raise BundleParseError(str(cat_path), "catalog document must be a JSON object")
                if isinstance(raw, dict):
                    raw = {**raw, **cats}
    else:
        raw = _read_json(p)
    return bundle_from_dict(raw)


def save_bundle(bundle: SchemaBundle, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(bundle), indent=2) + "\n", encoding="utf-8")


def builtin_bundle_path(name: str) -> Path:
    return Path(str(resources.files("schemaparse") / "data" / "bundles" / f"{name.lower()}.json"))


def load_builtin(name: str) -> SchemaBundle:
    if name.upper() not in BUILTIN_BUNDLES:
        raise KeyError(f"no bundled schema named {name!r}; choose from {', '.join(BUILTIN_BUNDLES)}")
    return load_bundle(builtin_bundle_path(name))


def bundle_stats(bundle: SchemaBundle) -> dict[str, Any]:
    """Counts of intents, slots and resolved slot-value entities."""
    per_slot = {slot: len(bundle.entities(slot)) for slot in bundle.catalogs}
    return {
        "intents": len(bundle.intent_names),
        "slots": len(bundle.slot_names),
        "entities": sum(per_slot.values()),
        "entities_per_slot": per_slot,
    }
