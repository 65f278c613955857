"""Template-based synthetic data generation.

A template pairs an utterance pattern with a parse pattern sharing
placeholders::

    {"surface": "{prelude} {number} {side_type}",
     "parse": "(SIDE_ORDER (NUMBER {number} ) (SIDE_TYPE {side_type} ) )"}

A placeholder is ``{name}`` optionally followed by an index, as in
``{topping1}``. Its base name selects where values come from:

* a slot name in lower case samples that slot's catalog (repeated indices
  of one slot get distinct entities); the parse receives the same surface;
* ``number`` samples a spelled-out quantity, the parse receives the digit;
* any other name samples a named pool from the template file. Pool entries
  are either plain phrases (utterance only) or ``{"surface", "parse"}``
  pairs, e.g. ``entity_name`` entries that pick the intent label.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

from schemaparse.dataset import Example
from schemaparse.schema import NUMBER, CatalogEntry, SchemaBundle, load_bundle
from schemaparse.text import normalize_utterance, spell_number
from schemaparse.tree import ParseForest, linearize, parse_linear

__all__ = [
    "GenerationConfig",
    "PoolValue",
    "Template",
    "TemplateError",
    "TemplateSet",
    "expand",
    "load_templates",
    "normalize_utterance",
    "sample_bindings",
    "sample_dataset",
    "validate_templates",
]

log = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{([a-z_]+?)(\d*)\}")

#: quantity -> utterance phrasings used when a file defines no ``number`` pool
DEFAULT_NUMBERS: dict[str, tuple[str, ...]] = {
    "1": ("a", "one"),
    "2": ("two",),
    "3": ("three",),
    "4": ("four",),
    "5": ("five",),
}


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PoolValue:
    """What a placeholder expands to in the utterance and in the parse."""

    surface: str
    parse: str | None = None  # None: not allowed in the parse pattern


Binding = Union[CatalogEntry, PoolValue, str, int]


@dataclass(frozen=True)
class Template:
    surface: str
    parse: str
    weight: float = 1.0
    simple: bool = False

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise TemplateError(f"template weight must be positive: {self.surface!r}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        """Distinct placeholder names in order of first appearance."""
        seen = dict.fromkeys(
            m.group(0)[1:-1] for m in _PLACEHOLDER.finditer(self.surface + " " + self.parse)
        )
        return tuple(seen)


@dataclass(frozen=True)
class GenerationConfig:
    target_count: int
    seed: int = 0
    max_attempts_factor: int = 50

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if self.max_attempts_factor < 1:
            raise ValueError("max_attempts_factor must be >= 1")


@dataclass(frozen=True)
class TemplateSet:
    templates: tuple[Template, ...]
    pools: dict[str, tuple[PoolValue, ...]] = field(default_factory=dict)
    bundle: str | None = None

    def simple_only(self) -> TemplateSet:
        return TemplateSet(tuple(t for t in self.templates if t.simple), self.pools, self.bundle)


def _split(name: str) -> tuple[str, str]:
    m = re.fullmatch(r"([a-z_]+?)(\d*)", name)
    if m is None:
        raise TemplateError(f"bad placeholder name {name!r}")
    return m.group(1), m.group(2)


def _slot_for(bundle: SchemaBundle, base: str) -> str | None:
    label = base.upper()
    return label if bundle.has_slot(label) else None


def _number_pool(pools: Mapping[str, Sequence[PoolValue]]) -> tuple[PoolValue, ...]:
    if "number" in pools:
        return tuple(pools["number"])
    return tuple(PoolValue(s, q) for q, spellings in DEFAULT_NUMBERS.items() for s in spellings)


def _resolve_binding(
    name: str,
    value: Binding,
    bundle: SchemaBundle,
    pools: Mapping[str, Sequence[PoolValue]],
) -> PoolValue:
    base, _ = _split(name)
    if isinstance(value, PoolValue):
        return value
    if base == "number":
        if isinstance(value, CatalogEntry):
            return PoolValue(value.surface, value.entity)
        text = str(value).strip()
        if text.isdigit():
            return PoolValue(spell_number(int(text)), str(int(text)))
        for pv in _number_pool(pools):
            if pv.surface == text:
                return pv
        if bundle.has_slot(NUMBER):
            entity = bundle.lookup_entity(NUMBER, text)
            if entity is not None:
                return PoolValue(text, entity)
        raise TemplateError(f"{text!r} is not a known quantity phrase")
    slot = _slot_for(bundle, base)
    if slot is not None:
        surface = value.surface if isinstance(value, CatalogEntry) else str(value)
        entity = bundle.lookup_entity(slot, surface)
        if entity is None:
            raise TemplateError(f"{surface!r} is not in the catalog of {slot}")
        if isinstance(value, CatalogEntry) and value.entity != entity:
            raise TemplateError(f"{surface!r} maps to {entity!r}, not {value.entity!r}, in {slot}")
        return PoolValue(surface, entity if bundle.is_numeric(slot) else surface)
    if base in pools:
        text = value.surface if isinstance(value, CatalogEntry) else str(value)
        for pv in pools[base]:
            if pv.surface == text:
                return pv
        return PoolValue(text)
    raise TemplateError(f"placeholder {{{name}}} refers to no slot or pool")


def _fill(pattern: str, values: Mapping[str, str | None], what: str) -> str:
    def sub(m: re.Match[str]) -> str:
        name = m.group(0)[1:-1]
        if name not in values:
            raise TemplateError(f"unbound placeholder {{{name}}}")
        v = values[name]
        if v is None:
            raise TemplateError(f"placeholder {{{name}}} has no {what} form")
        return v

    return _PLACEHOLDER.sub(sub, pattern)


def expand(
    template: Template,
    bindings: Mapping[str, Binding],
    bundle: SchemaBundle,
    pools: Mapping[str, Sequence[PoolValue]] | None = None,
) -> tuple[str, ParseForest]:
    """Instantiate ``template``; returns the normalized utterance and its parse."""
    pools = pools or {}
    resolved = {
        name: _resolve_binding(name, value, bundle, pools) for name, value in bindings.items()
    }
    utterance = _fill(template.surface, {k: v.surface for k, v in resolved.items()}, "surface")
    pieces = normalize_utterance(utterance)
    if len(pieces) != 1:
        raise TemplateError(f"utterance {utterance!r} normalizes to {len(pieces)} pieces")
    parse = parse_linear(_fill(template.parse, {k: v.parse for k, v in resolved.items()}, "parse"))
    return pieces[0], parse


def sample_bindings(
    template: Template,
    bundle: SchemaBundle,
    pools: Mapping[str, Sequence[PoolValue]],
    rng: random.Random,
) -> dict[str, Binding]:
    """Random bindings for every placeholder of ``template``."""
    out: dict[str, Binding] = {}
    used: dict[str, set[str]] = {}
    for name in template.placeholders:
        base, _ = _split(name)
        if base == "number":
            out[name] = rng.choice(_number_pool(pools))
            continue
        slot = _slot_for(bundle, base)
        if slot is not None:
            taken = used.setdefault(slot, set())
            entries = [e for e in bundle.catalog(slot) if e.entity not in taken]
            if not entries:
                raise TemplateError(f"not enough distinct {slot} entities for {template.surface!r}")
            entry = rng.choice(entries)
            taken.add(entry.entity)
            out[name] = entry
            continue
        if base in pools:
            out[name] = rng.choice(pools[base])
            continue
        raise TemplateError(f"placeholder {{{name}}} refers to no slot or pool")
    return out


def validate_templates(
    templates: Sequence[Template],
    bundle: SchemaBundle,
    pools: Mapping[str, Sequence[PoolValue]] | None = None,
) -> list[str]:
    """Static problems with ``templates``: unknown placeholders and parse-only bindings."""
    pools = pools or {}
    diags = []
    for k, t in enumerate(templates):
        surface_names = {m.group(0)[1:-1] for m in _PLACEHOLDER.finditer(t.surface)}
        for m in _PLACEHOLDER.finditer(t.parse):
            name = m.group(0)[1:-1]
            base, _ = _split(name)
            if name in surface_names:
                continue
            constant = base in pools and all(pv.parse is not None for pv in pools[base])
            if not constant:
                diags.append(f"template {k}: {{{name}}} is in the parse but not the utterance")
        for name in t.placeholders:
            base, _ = _split(name)
            if base != "number" and base not in pools and _slot_for(bundle, base) is None:
                diags.append(f"template {k}: {{{name}}} refers to no slot or pool")
    return diags


def sample_dataset(
    templates: Sequence[Template],
    bundle: SchemaBundle,
    config: GenerationConfig,
    pools: Mapping[str, Sequence[PoolValue]] | None = None,
    diagnostics: list[str] | None = None,
) -> list[Example]:
    """Sample up to ``config.target_count`` unique (utterance, parse) pairs.

    Templates are drawn in proportion to their weight. When the space runs
    dry (more than ``max_attempts_factor * target_count`` draws) generation
    stops early and a diagnostic is recorded.
    """
    if not templates:
        raise TemplateError("no templates to sample from")
    pools = pools or {}
    problems = validate_templates(templates, bundle, pools)
    if problems:
        raise TemplateError("; ".join(problems))
    rng = random.Random(config.seed)
    weights = [t.weight for t in templates]
    seen: set[tuple[str, str]] = set()
    out: list[Example] = []
    budget = config.max_attempts_factor * config.target_count
    attempts = 0
    while len(out) < config.target_count and attempts < budget:
        attempts += 1
        t = rng.choices(templates, weights)[0]
        utterance, parse = expand(t, sample_bindings(t, bundle, pools, rng), bundle, pools)
        key = (utterance, linearize(parse))
        if key in seen:
            continue
        seen.add(key)
        out.append(Example(utterance, parse))
    if len(out) < config.target_count:
        msg = (
            f"template space exhausted: {len(out)} unique pairs of {config.target_count} "
            f"requested after {attempts} draws"
        )
        log.warning(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
    return out


# ---------------------------------------------------------------------------
# template files
# ---------------------------------------------------------------------------


def _pool_value(raw: Any, where: str) -> PoolValue:
    if isinstance(raw, str):
        return PoolValue(raw)
    if isinstance(raw, dict) and isinstance(raw.get("surface"), str):
        parse = raw.get("parse")
        return PoolValue(raw["surface"], None if parse is None else str(parse))
    raise TemplateError(f"{where}: pool entries are strings or {{surface, parse}} objects")


def templates_from_dict(raw: Any) -> TemplateSet:
    if not isinstance(raw, dict) or not isinstance(raw.get("templates"), list):
        raise TemplateError("template document needs a 'templates' list")
    pools = {}
    for name, entries in (raw.get("pools") or {}).items():
        if not isinstance(entries, list) or not entries:
            raise TemplateError(f"pool {name!r} must be a non-empty list")
        pools[name] = tuple(_pool_value(e, f"pool {name}") for e in entries)
    templates = []
    for k, t in enumerate(raw["templates"]):
        if not isinstance(t, dict) or not {"surface", "parse"} <= set(t):
            raise TemplateError(f"templates[{k}] needs 'surface' and 'parse'")
        templates.append(
            Template(t["surface"], t["parse"], float(t.get("weight", 1.0)), bool(t.get("simple", False)))
        )
    return TemplateSet(tuple(templates), pools, raw.get("bundle"))


def load_templates(path: str | Path) -> TemplateSet:
    """Load a template file; a bare bundle name selects the shipped templates."""
    p = Path(path)
    if not p.exists():
        shipped = builtin_templates_path(str(path))
        if shipped.exists():
            p = shipped
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise TemplateError(f"{p}: cannot read: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise TemplateError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return templates_from_dict(raw)


def builtin_templates_path(name: str) -> Path:
    from importlib import resources

    return Path(str(resources.files("schemaparse") / "data" / "templates" / f"{name.lower()}.json"))


def bundle_for(tset: TemplateSet, bundle: SchemaBundle | str | Path | None) -> SchemaBundle:
    """The bundle given explicitly, else the one the template file names."""
    if isinstance(bundle, SchemaBundle):
        return bundle
    if bundle is None:
        if tset.bundle is None:
            raise TemplateError("template file names no bundle; pass one explicitly")
        bundle = tset.bundle
    return load_bundle(bundle)
