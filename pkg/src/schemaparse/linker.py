"""Fuzzy schema linking, model-input serialization and a rule-based parser.

Every catalog surface, generic-lexicon phrase and invocation keyword is
scored against the word n-grams of the utterance whose length is within one
word of the phrase length. The score of a window is the normalized edit
similarity ``1 - lev(a, b) / max(len(a), len(b))`` on the normalized text,
and a phrase's score is its best window. Matches at or above
``similarity_threshold`` are kept, one per (slot, entity).

Inclusion rules:

* a slot is linked when at least one of its values is kept;
* an intent is linked when one of its slots is linked or one of its
  invocation keywords matches;
* ``NUMBER``, ``QUANTITY`` and ``NOT`` never pull in an intent on their own;
  they attach to every linked intent that can hold them;
* with ``suppress_unit_number`` every match for quantity 1 is dropped, since
  articles would otherwise match almost every utterance. The evaluator adds
  the default ``(NUMBER 1)`` back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from schemaparse.schema import (
    COMPLEX,
    NEGATION,
    NESTED,
    NUMBER,
    QUANTITY,
    CatalogEntry,
    SchemaBundle,
)
from schemaparse.text import match_key, word_spans
from schemaparse.tree import (
    IntentNode,
    ParseForest,
    SlotNode,
    ValueLeaf,
    iter_slots,
    resolve_entities,
)

DEFAULT_THRESHOLD = 0.85


@dataclass(frozen=True)
class LinkerConfig:
    similarity_threshold: float = DEFAULT_THRESHOLD
    suppress_unit_number: bool = True
    oracle_mode: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError(
                f"similarity_threshold must be in (0, 1], got {self.similarity_threshold}"
            )


@dataclass(frozen=True)
class FuzzyMatch:
    """A catalog value (or lexicon phrase, with ``entity`` None) found in the utterance."""

    slot: str
    surface: str
    entity: str | None
    score: float
    span: tuple[int, int]

    @property
    def entry(self) -> CatalogEntry | None:
        return CatalogEntry(self.surface, self.entity) if self.entity is not None else None


@dataclass(frozen=True)
class KeywordMatch:
    intent: str
    keyword: str
    score: float
    span: tuple[int, int]


@dataclass(frozen=True)
class LinkedSlot:
    slot: str
    values: tuple[str, ...]


@dataclass(frozen=True)
class LinkedIntent:
    intent: str
    slots: tuple[LinkedSlot, ...] = ()
    matched_keyword: str | None = None

    def slot(self, name: str) -> LinkedSlot | None:
        for s in self.slots:
            if s.slot == name:
                return s
        return None


@dataclass(frozen=True)
class LinkedSchema:
    intents: tuple[LinkedIntent, ...] = ()
    matches: tuple[FuzzyMatch, ...] = field(default=(), compare=False)
    keyword_matches: tuple[KeywordMatch, ...] = field(default=(), compare=False)

    def __bool__(self) -> bool:
        return bool(self.intents)

    def intent(self, name: str) -> LinkedIntent | None:
        for i in self.intents:
            if i.intent == name:
                return i
        return None


class NoParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# similarity
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1 << 18)
def _bounded_levenshtein(a: str, b: str, k: int) -> int:
    """Edit distance of ``a`` and ``b``, or ``k + 1`` once it provably exceeds ``k``."""
    if a == b:
        return 0
    if abs(len(a) - len(b)) > k:
        return k + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        if min(cur) > k:
            return k + 1
        prev = cur
    return min(prev[-1], k + 1)


def levenshtein(a: str, b: str) -> int:
    return _bounded_levenshtein(a, b, max(len(a), len(b)))


def similarity(a: str, b: str) -> float:
    """Normalized edit similarity in [0, 1] of two already-normalized strings."""
    n = max(len(a), len(b))
    return 1.0 if n == 0 else 1.0 - levenshtein(a, b) / n


def _windows(
    phrase: str, words: list[tuple[str, int, int]], threshold: float
) -> list[tuple[float, tuple[int, int]]]:
    """Non-overlapping utterance windows matching ``phrase``, best first.

    Every window scoring at or above ``threshold`` is a candidate; they are
    taken greedily by score (then position) so each occurrence of a repeated
    phrase is reported once.
    """
    key = match_key(phrase)
    if not key:
        return []
    n = key.count(" ") + 1
    hits: list[tuple[float, tuple[int, int]]] = []
    for length in (n, n - 1, n + 1):
        if length < 1 or length > len(words):
            continue
        for i in range(len(words) - length + 1):
            window = " ".join(w for w, _, _ in words[i : i + length])
            m = max(len(window), len(key))
            k = int((1.0 - threshold) * m + 1e-9)
            d = _bounded_levenshtein(window, key, k)
            if d > k:
                continue
            score = 1.0 - d / m
            if score >= threshold:
                hits.append((score, (words[i][1], words[i + length - 1][2])))
    hits.sort(key=lambda h: (-h[0], h[1][0], h[1][1]))
    out: list[tuple[float, tuple[int, int]]] = []
    for h in hits:
        if all(h[1][1] <= o[1][0] or h[1][0] >= o[1][1] for o in out):
            out.append(h)
    return out


def best_window(
    phrase: str, utterance: str, threshold: float = DEFAULT_THRESHOLD
) -> tuple[float, tuple[int, int]] | None:
    """Best (score, character span) of ``phrase`` in ``utterance``, or None below threshold."""
    hits = _windows(phrase, word_spans(utterance), threshold)
    return hits[0] if hits else None


# ---------------------------------------------------------------------------
# linking
# ---------------------------------------------------------------------------


def _attach_only(bundle: SchemaBundle, slot: str) -> bool:
    return slot == NUMBER or bundle.role(slot) in (QUANTITY, NEGATION)


def _can_hold(bundle: SchemaBundle, intent: str, slot: str) -> bool:
    idef = bundle.intent(intent)
    if idef is None:
        return False
    if idef.slot(slot) is not None:
        return True
    role = bundle.role(slot)
    if role == NEGATION:
        return any(s.negatable for s in idef.slots)
    if role == QUANTITY:
        return any(s.quantifiable for s in idef.slots)
    if role == NESTED:
        g = bundle.generic_slot(slot)
        return any(idef.slot(p) is not None for p in g.parents)
    return False


def candidate_matches(
    utterance: str, bundle: SchemaBundle, config: LinkerConfig | None = None
) -> tuple[list[FuzzyMatch], list[KeywordMatch]]:
    """Every occurrence of a value, lexicon phrase or keyword at or above the threshold.

    Both lists are in utterance order.
    """
    config = config or LinkerConfig()
    thr = config.similarity_threshold
    words = word_spans(utterance)
    if not words:
        return [], []
    matches: list[FuzzyMatch] = []
    for slot in bundle.slot_names:
        role = bundle.role(slot)
        if role == COMPLEX:
            continue
        if role == NEGATION:
            phrases = [(p, None) for p in bundle.generic_lexicons.get(slot, ())]
        else:
            phrases = [(e.surface, e.entity) for e in bundle.catalogs.get(slot, ())]
        for surface, entity in phrases:
            if config.suppress_unit_number and slot == NUMBER and entity == "1":
                continue
            for score, span in _windows(surface, words, thr):
                matches.append(FuzzyMatch(slot, surface, entity, score, span))
    keywords = [
        KeywordMatch(idef.name, kw, score, span)
        for idef in bundle.schema.intents
        for kw in idef.invocation_keywords
        for score, span in _windows(kw, words, thr)
    ]
    matches.sort(key=lambda m: (m.span, -m.score))
    keywords.sort(key=lambda k: (k.span, -k.score))
    return matches, keywords


def _value_key(m: FuzzyMatch) -> tuple[str, str]:
    return (m.slot, m.entity if m.entity is not None else match_key(m.surface))


def _better(m: FuzzyMatch, prev: FuzzyMatch | None) -> bool:
    if prev is None or m.score != prev.score:
        return prev is None or m.score > prev.score
    # same score: earlier, then longer
    return (m.span[0], prev.span[1]) < (prev.span[0], m.span[1])


def fuzzy_match(
    utterance: str, bundle: SchemaBundle, config: LinkerConfig | None = None
) -> LinkedSchema:
    """Link an utterance to the schema elements it mentions.

    Each linked slot lists one value per entity: the surface of its
    best-scoring occurrence. ``matches`` keeps every occurrence of the
    linked values, for span-aware consumers such as :func:`baseline_parse`.
    """
    config = config or LinkerConfig()
    matches, keywords = candidate_matches(utterance, bundle, config)
    first_pos: dict[str, int] = {}

    def touch(intent: str, pos: int) -> None:
        if pos < first_pos.get(intent, 1 << 30):
            first_pos[intent] = pos

    for m in matches:
        if _attach_only(bundle, m.slot):
            continue
        for name in bundle.intent_names:
            if _can_hold(bundle, name, m.slot):
                touch(name, m.span[0])
    best_kw: dict[str, KeywordMatch] = {}
    for k in keywords:
        touch(k.intent, k.span[0])
        prev = best_kw.get(k.intent)
        if prev is None or k.score > prev.score:
            best_kw[k.intent] = k

    best: dict[tuple[str, str], FuzzyMatch] = {}
    for m in matches:
        key = _value_key(m)
        if _better(m, best.get(key)):
            best[key] = m
    reps = sorted(best.values(), key=lambda m: (m.span, -m.score))

    schema_order = {name: i for i, name in enumerate(bundle.intent_names)}
    included = sorted(first_pos, key=lambda i: (first_pos[i], schema_order[i]))
    used_slots: set[str] = set()
    out = []
    for name in included:
        per_slot: dict[str, list[FuzzyMatch]] = {}
        for m in reps:
            if _can_hold(bundle, name, m.slot):
                per_slot.setdefault(m.slot, []).append(m)
                used_slots.add(m.slot)
        slots = tuple(
            LinkedSlot(slot, tuple(m.surface for m in ms))
            for slot, ms in sorted(per_slot.items(), key=lambda kv: kv[1][0].span)
        )
        kw = best_kw.get(name)
        out.append(LinkedIntent(name, slots, kw.keyword if kw else None))
    used = tuple(m for m in matches if m.slot in used_slots)
    kept_kw = tuple(k for k in keywords if k.intent in first_pos)
    return LinkedSchema(tuple(out), used, kept_kw)


def serialize_input(utterance: str, linked: LinkedSchema) -> str:
    """``u [I] intent : keyword [S] slot [V] value ...`` in linked order."""
    parts = [utterance]
    for li in linked.intents:
        parts.append(f"[I] {li.intent}")
        if li.matched_keyword:
            parts.append(f": {li.matched_keyword}")
        for ls in li.slots:
            parts.append(f"[S] {ls.slot}")
            parts.extend(f"[V] {v}" for v in ls.values)
    return " ".join(parts)


def oracle_link(utterance: str, gold: ParseForest, bundle: SchemaBundle) -> LinkedSchema:
    """Linked schema holding exactly the gold parse's intents, slots and values.

    Values are rendered as the first catalog surface of each entity, or as
    the digit string for numeric slots. Wrapper slots carry no value and are
    left out.
    """
    if not gold.intents:
        raise ValueError("oracle_link needs a non-empty gold parse")
    resolved = resolve_entities(gold, bundle)
    per_intent: dict[str, dict[str, list[str]]] = {}
    for node, path in iter_slots(resolved):
        s = path[-1]
        slots = per_intent.setdefault(node.label, {})
        if s.value is None:
            continue
        value = s.value if bundle.is_numeric(s.label) else bundle.canonical_surface(s.label, s.value)
        vals = slots.setdefault(s.label, [])
        if value not in vals:
            vals.append(value)
    for node in resolved.intents:
        per_intent.setdefault(node.label, {})
    return LinkedSchema(
        tuple(
            LinkedIntent(name, tuple(LinkedSlot(k, tuple(v)) for k, v in slots.items()))
            for name, slots in per_intent.items()
        )
    )


def linked_pairs(linked: LinkedSchema, bundle: SchemaBundle) -> set[tuple[str, str]]:
    """Resolved (slot, entity) pairs present anywhere in ``linked``."""
    out = set()
    for li in linked.intents:
        for ls in li.slots:
            for v in ls.values:
                if not bundle.has_slot(ls.slot):
                    continue
                e = bundle.resolve_value(ls.slot, v)
                if e is not None:
                    out.add((ls.slot, e))
    return out


def coverage_report(
    linked: LinkedSchema,
    gold: ParseForest,
    bundle: SchemaBundle,
    ignore_unit_number: bool = True,
) -> list[tuple[str, str]]:
    """Gold (slot, entity) pairs missing from ``linked``, in gold order.

    ``(NUMBER, 1)`` is ignored by default because unit quantities are
    suppressed by the linker and restored by post-processing.
    """
    have = linked_pairs(linked, bundle)
    missing: list[tuple[str, str]] = []
    for _, path in iter_slots(resolve_entities(gold, bundle)):
        s = path[-1]
        if s.value is None:
            continue
        pair = (s.label, s.value)
        if ignore_unit_number and pair == (NUMBER, "1"):
            continue
        if pair not in have and pair not in missing:
            missing.append(pair)
    return missing


def link(
    utterance: str,
    bundle: SchemaBundle,
    config: LinkerConfig | None = None,
    gold: ParseForest | None = None,
) -> LinkedSchema:
    """Fuzzy-link, or build the oracle schema from ``gold`` when ``config.oracle_mode``."""
    config = config or LinkerConfig()
    if config.oracle_mode:
        if gold is None:
            raise ValueError("oracle mode needs the gold parse")
        return oracle_link(utterance, gold, bundle)
    return fuzzy_match(utterance, bundle, config)


# ---------------------------------------------------------------------------
# rule-based parser
# ---------------------------------------------------------------------------


@dataclass
class _Unit:
    alts: list[FuzzyMatch]  # readings of one utterance span, best first
    negated: bool = False
    quantity: FuzzyMatch | None = None
    value: FuzzyMatch | None = None  # the reading chosen during assignment

    @property
    def start(self) -> int:
        return self.alts[0].span[0]


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _select(matches):
    """Greedy non-overlapping spans: best score first, then longest, then leftmost.

    Matches sharing the chosen span and score are kept together as
    alternative readings.
    """
    order = sorted(matches, key=lambda m: (-m.score, m.span[0] - m.span[1], m.span[0]))
    groups: list[list] = []
    for m in order:
        same = next((g for g in groups if g[0].span == m.span and g[0].score == m.score), None)
        if same is not None:
            same.append(m)
        elif not any(_overlaps(m.span, g[0].span) for g in groups):
            groups.append([m])
    return sorted(groups, key=lambda g: g[0].span)


def _units(bundle: SchemaBundle, groups: list[list[FuzzyMatch]]) -> list[_Unit]:
    units: list[_Unit] = []
    negate = False
    quantity: FuzzyMatch | None = None
    for g in groups:
        roles = {bundle.role(m.slot) for m in g}
        if NEGATION in roles:
            negate = True
            continue
        if QUANTITY in roles:
            quantity = next(m for m in g if bundle.role(m.slot) == QUANTITY)
            continue
        u = _Unit(g)
        if negate and any(bundle.is_negatable(m.slot) for m in g):
            u.negated = True
        if quantity is not None and any(bundle.is_quantifiable(m.slot) for m in g):
            u.quantity = quantity
        # a wrapper cue only reaches the value right after it
        negate = False
        quantity = None
        units.append(u)
    return units


def _holds_value(bundle: SchemaBundle, intent: str, slot: str) -> bool:
    idef = bundle.intent(intent)
    if idef is None:
        return False
    g = bundle.generic_slot(slot)
    if g is not None and g.role == NESTED:
        return any(idef.slot(p) is not None for p in g.parents)
    return idef.slot(slot) is not None


def baseline_parse(utterance: str, linked: LinkedSchema, bundle: SchemaBundle) -> ParseForest:
    """Deterministic rule-based parse from a linked schema.

    Each invocation-keyword occurrence anchors one intent node (overlapping
    keywords keep the longest). A value that no anchored intent can hold
    anchors the one linked intent owning its slot, if there is exactly one;
    with no anchor at all the linked intent with the most slots is used. Every
    value goes to the nearest anchor whose intent has its slot (numbers
    prefer the next anchor to their right). A ``NOT`` phrase right before a
    negatable value negates it and a ``QUANTITY`` value right before a
    quantifiable one wraps both in the complex slot. Intents that declare
    ``NUMBER`` get ``(NUMBER 1)`` when no number was found. The result always
    validates against the schema.
    """
    if not linked.intents:
        raise NoParseError("no parse: nothing linked")
    names = [li.intent for li in linked.intents]
    units = _units(bundle, _select([m for m in linked.matches if bundle.has_slot(m.slot)]))

    anchors: list[tuple[int, str]] = [
        (g[0].span[0], g[0].intent)
        for g in _select([k for k in linked.keyword_matches if k.intent in names])
    ]
    anchored = {a[1] for a in anchors}
    for u in units:
        if any(_holds_value(bundle, name, m.slot) for _, name in anchors for m in u.alts):
            continue
        for m in u.alts:
            owners = [n for n in names if _holds_value(bundle, n, m.slot)]
            if len(owners) == 1 and owners[0] not in anchored:
                anchors.append((u.start, owners[0]))
                anchored.add(owners[0])
                break
    if not anchors:
        li = max(linked.intents, key=lambda li: len(li.slots))
        anchors.append((0, li.intent))
    anchors.sort()

    groups: list[list[_Unit]] = [[] for _ in anchors]
    for u in units:
        options = []
        for j, m in enumerate(u.alts):
            ok = [i for i, (_, name) in enumerate(anchors) if _holds_value(bundle, name, m.slot)]
            if m.slot == NUMBER:
                after = [i for i in ok if anchors[i][0] >= u.start]
                ok = after[:1] or ok
            options += [(abs(anchors[i][0] - u.start), i, j) for i in ok]
        if not options:
            continue
        _, i, j = min(options)
        u.value = u.alts[j]
        groups[i].append(u)

    out: list[IntentNode] = []
    for (_, name), group in zip(anchors, groups):
        node = _build_intent(bundle, name, group)
        if node is not None:
            out.append(node)
    if not out:
        raise NoParseError("no parse: no intent could be filled")
    return ParseForest(tuple(out))


def _leaf_text(bundle: SchemaBundle, m: FuzzyMatch) -> str:
    return m.entity if bundle.is_numeric(m.slot) and m.entity is not None else m.surface


def _build_intent(bundle: SchemaBundle, name: str, group: list[_Unit]) -> IntentNode | None:
    idef = bundle.intent(name)
    chosen: list[_Unit] = []
    for u in group:
        slot = u.value.slot
        sdef = idef.slot(slot)
        multi = sdef is None or sdef.negatable or sdef.quantifiable
        if any(c.value.slot == slot and c.value.entity == u.value.entity for c in chosen):
            continue
        if not multi:
            prev = next((c for c in chosen if c.value.slot == slot), None)
            if prev is not None:
                if u.value.score > prev.value.score:
                    chosen[chosen.index(prev)] = u
                continue
        chosen.append(u)

    complex_label = next(iter(bundle.slots_with_role(COMPLEX)), None)
    quantity_label = next(iter(bundle.slots_with_role(QUANTITY)), None)
    not_label = next(iter(bundle.slots_with_role(NEGATION)), None)
    children: list[SlotNode] = []
    for u in chosen:
        slot = u.value.slot
        g = bundle.generic_slot(slot)
        leaf = SlotNode(slot, (ValueLeaf(_leaf_text(bundle, u.value)),))
        if g is not None and g.role == NESTED:
            parent = next(p for p in g.parents if idef.slot(p) is not None)
            children.append(SlotNode(parent, (leaf,)))
            continue
        node = leaf
        if u.quantity is not None and complex_label and bundle.is_quantifiable(slot, name):
            q = SlotNode(quantity_label, (ValueLeaf(_leaf_text(bundle, u.quantity)),))
            node = SlotNode(complex_label, (q, leaf))
        if u.negated and not_label and bundle.is_negatable(slot, name):
            node = SlotNode(not_label, (node,))
        children.append(node)
    if idef.slot(NUMBER) is not None and not any(c.label == NUMBER for c in children):
        children.insert(0, SlotNode(NUMBER, (ValueLeaf("1"),)))
    else:
        children.sort(key=lambda c: c.label != NUMBER)
    if not children:
        return None
    return IntentNode(name, tuple(children))
