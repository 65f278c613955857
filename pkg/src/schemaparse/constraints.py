"""Schema-derived constrained decoding.

The engine turns a bundle into a next-token automaton over a closed output
vocabulary (parentheses, BOS/EOS, intent and slot labels, value tokens).
Allowed transitions::

    BOS        -> "("                       then an intent label
    "("        -> intent (at root) or slot label
    ")"        -> ")" | "(" | EOS           subject to paren balance
    intent     -> "(" slot
    slot       -> first token of a catalog value of that slot
    (COMPLEX   -> (QUANTITY                 then one quantifiable slot

Multi-token values are tracked with a per-slot trie, so a slot leaf can only
ever spell out a complete catalog surface or entity id of that slot.
Intent/slot compatibility and negatability under ``NOT`` are opt-in
(:class:`StrictnessConfig`).
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol, Sequence

import numpy as np

from schemaparse.schema import COMPLEX, NEGATION, NESTED, QUANTITY, SchemaBundle
from schemaparse.tree import tokenize_linear

log = logging.getLogger(__name__)

BOS = "<bos>"
EOS = "<eos>"
OPEN = "("
CLOSE = ")"
SPECIALS = (BOS, EOS, OPEN, CLOSE)

# decoder phases
START, OPENED, LABEL, VALUE, CLOSED, DONE = "start", "open", "label", "value", "closed", "done"


class Tokenizer(Protocol):
    """How linearized parses and catalog values map onto output tokens.

    Labels and parentheses must come out as single tokens; values may be
    split into any number of pieces.
    """

    def tokenize(self, linear: str) -> list[str]: ...

    def detokenize(self, tokens: Sequence[str]) -> str: ...

    def value_pieces(self, value: str) -> list[str]: ...


class WordTokenizer:
    """Whitespace tokenizer; "(LABEL" becomes the two tokens "(" and "LABEL"."""

    def tokenize(self, linear: str) -> list[str]:
        return [t for t, _ in tokenize_linear(linear)]

    def detokenize(self, tokens: Sequence[str]) -> str:
        out: list[str] = []
        glue = False
        for tok in tokens:
            if tok in (BOS, EOS):
                continue
            if glue:
                out[-1] += tok
                glue = False
            else:
                out.append(tok)
                glue = tok == OPEN
        return " ".join(out)

    def value_pieces(self, value: str) -> list[str]:
        return value.split()


@dataclass(frozen=True)
class StrictnessConfig:
    enforce_intent_slot_compat: bool = False
    enforce_negatable_under_not: bool = False


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(dict.fromkeys(tokens))
        self.index = {t: i for i, t in enumerate(self.tokens)}
        for t in SPECIALS:
            if t not in self.index:
                raise ValueError(f"vocabulary lacks special token {t!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index[tok]

    def token(self, i: int) -> str:
        return self.tokens[i]


class TrieNode:
    __slots__ = ("children", "terminal")

    def __init__(self) -> None:
        self.children: dict[int, TrieNode] = {}
        self.terminal = False

    def insert(self, ids: Sequence[int]) -> None:
        node = self
        for i in ids:
            node = node.children.setdefault(i, TrieNode())
        node.terminal = True


class Frame(NamedTuple):
    label: str
    kind: str  # "intent" or "slot"
    nchild: int


@dataclass(frozen=True)
class DecoderState:
    stack: tuple[Frame, ...] = ()
    phase: str = START
    trie: TrieNode | None = field(default=None, compare=False)
    n_intents: int = 0
    emitted: tuple[int, ...] = ()

    @property
    def open_paren_depth(self) -> int:
        return len(self.stack) + (self.phase == OPENED)

    @property
    def is_accepting(self) -> bool:
        return self.phase == CLOSED and not self.stack and self.n_intents > 0

    @property
    def current_slot(self) -> str | None:
        if self.stack and self.stack[-1].kind == "slot":
            return self.stack[-1].label
        return None

    @property
    def context_kind(self) -> str:
        if self.phase == VALUE:
            return "mid-value"
        if self.phase in (START, DONE) or (self.phase == CLOSED and not self.stack):
            return "at-root"
        if self.phase == CLOSED:
            return "after-close"
        if self.phase == LABEL and self.stack[-1].kind == "intent":
            return "after-intent-open"
        return "in-slot"


class IllegalTransition(ValueError):
    def __init__(self, token: str, state: DecoderState):
        self.token = token
        self.state = state
        super().__init__(f"token {token!r} not allowed in {state.context_kind} state")


@dataclass(frozen=True)
class ReplayResult:
    accepted: bool
    position: int | None = None
    token: str | None = None
    expected: frozenset[str] = frozenset()

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    state: DecoderState = field(compare=False)


class ConstraintEngine:
    """Immutable next-token automaton for one bundle."""

    def __init__(
        self,
        bundle: SchemaBundle,
        strict: StrictnessConfig | None = None,
        tokenizer: Tokenizer | None = None,
    ):
        self.bundle = bundle
        self.strict = strict or StrictnessConfig()
        self.tokenizer = tokenizer or WordTokenizer()
        self.diagnostics: list[str] = []

        value_tokens: dict[str, list[list[str]]] = {}
        for slot in bundle.slot_names:
            if bundle.role(slot) in (NEGATION, COMPLEX):
                continue
            seqs = []
            if bundle.is_numeric(slot):
                seqs = [[e] for e in bundle.entities(slot)]
            else:
                for e in bundle.catalogs.get(slot, ()):
                    seqs.append(self.tokenizer.value_pieces(e.surface))
                    seqs.append(self.tokenizer.value_pieces(e.entity))
            value_tokens[slot] = [s for s in seqs if s]

        words = sorted(
            {w for seqs in value_tokens.values() for s in seqs for w in s}
            | {
                w
                for entries in bundle.catalogs.values()
                for e in entries
                for w in self.tokenizer.value_pieces(e.surface)
            }
        )
        self.vocab = Vocabulary([*SPECIALS, *bundle.intent_names, *bundle.slot_names, *words])
        v = self.vocab
        self.bos, self.eos, self.open, self.close = (v.id(t) for t in SPECIALS)

        self.tries: dict[str, TrieNode] = {}
        for slot, seqs in value_tokens.items():
            root = TrieNode()
            for s in seqs:
                root.insert([v.id(w) for w in s])
            self.tries[slot] = root

        self._compute_legality()
        self._label_kind = {v.id(i): "intent" for i in bundle.intent_names}
        self._label_kind.update({v.id(s): "slot" for s in bundle.slot_names})

    # -- construction ------------------------------------------------------

    def _compute_legality(self) -> None:
        b, strict = self.bundle, self.strict
        sid = self.vocab.id
        value_slots = [s for s in b.slot_names if b.role(s) is None]
        quantity = [s for s in b.slots_with_role(QUANTITY) if self.tries[s].children]
        self.nested: dict[str, frozenset[int]] = {}
        for g in b.schema.generic_slots:
            if g.role == NESTED and self.tries[g.name].children:
                for p in g.parents:
                    self.nested[p] = self.nested.get(p, frozenset()) | {sid(g.name)}

        for slot in b.slot_names:
            if b.role(slot) in (None, QUANTITY, NESTED) and not self.tries[slot].children:
                if not self.nested.get(slot):
                    msg = f"slot {slot} has an empty catalog; it can never be generated"
                    log.warning(msg)
                    self.diagnostics.append(msg)
        viable = {s for s in value_slots if self.tries[s].children or self.nested.get(s)}

        self.intent_children: dict[str, frozenset[int]] = {}
        self.not_children: dict[str, frozenset[int]] = {}
        self.complex_second: dict[str, frozenset[int]] = {}
        for idef in b.schema.intents:
            name = idef.name
            if strict.enforce_intent_slot_compat:
                second = [s.name for s in idef.slots if s.quantifiable]
            else:
                second = value_slots
            second_ids = frozenset(sid(s) for s in second if s in viable)
            complex_ok = bool(quantity) and bool(second_ids)
            complexes = [sid(c) for c in b.slots_with_role(COMPLEX) if complex_ok]
            if strict.enforce_negatable_under_not:
                neg = [s.name for s in idef.slots if s.negatable]
            else:
                neg = value_slots
            not_ids = frozenset([sid(s) for s in neg if s in viable] + complexes)
            negations = [sid(n) for n in b.slots_with_role(NEGATION) if not_ids]
            if strict.enforce_intent_slot_compat:
                direct = [s.name for s in idef.slots]
                if not any(s.negatable for s in idef.slots):
                    negations = []
                if not any(s.quantifiable for s in idef.slots):
                    complexes = []
            else:
                direct = value_slots
            self.intent_children[name] = frozenset(
                [sid(s) for s in direct if s in viable] + complexes + negations
            )
            self.not_children[name] = not_ids
            self.complex_second[name] = second_ids
        self.quantity_ids = frozenset(sid(q) for q in quantity)
        self.root_intents = frozenset(
            self.vocab.id(i) for i, kids in self.intent_children.items() if kids
        )
        for i, kids in self.intent_children.items():
            if not kids:
                msg = f"intent {i} has no generable slot"
                log.warning(msg)
                self.diagnostics.append(msg)

    # -- queries -----------------------------------------------------------

    def initial_state(self) -> DecoderState:
        return DecoderState()

    def _role(self, label: str) -> str | None:
        return self.bundle.role(label)

    def allowed_next(self, state: DecoderState) -> frozenset[int]:
        """Token ids that may legally follow ``state``."""
        phase, stack = state.phase, state.stack
        if phase == DONE:
            return frozenset()
        if phase == START:
            return frozenset((self.open,))
        if phase == OPENED:
            if not stack:
                return self.root_intents
            top, intent = stack[-1], stack[0].label
            if top.kind == "intent":
                return self.intent_children[intent]
            role = self._role(top.label)
            if role == NEGATION:
                return self.not_children[intent]
            if role == COMPLEX:
                return self.quantity_ids if top.nchild == 0 else self.complex_second[intent]
            return self.nested.get(top.label, frozenset())
        if phase == LABEL:
            top = stack[-1]
            if top.kind == "intent" or self._role(top.label) in (NEGATION, COMPLEX):
                return frozenset((self.open,))
            out = set(self.tries[top.label].children)
            if self.nested.get(top.label):
                out.add(self.open)
            return frozenset(out)
        if phase == VALUE:
            out = set(state.trie.children)
            if state.trie.terminal:
                out.add(self.close)
            return frozenset(out)
        # CLOSED
        if not stack:
            return frozenset((self.open, self.eos))
        top = stack[-1]
        role = self._role(top.label) if top.kind == "slot" else None
        if role == NEGATION:
            return frozenset((self.close,))
        if role == COMPLEX:
            return frozenset((self.open,)) if top.nchild == 1 else frozenset((self.close,))
        return frozenset((self.open, self.close))

    def _child_ok(self, state: DecoderState, label: str) -> bool:
        """Whether ``label`` may open right after "(" in ``state``."""
        b = self.bundle
        if not state.stack:
            return b.intent(label) is not None and self.vocab.id(label) in self.root_intents
        if b.intent(label) is not None:
            return False
        top, intent = state.stack[-1], state.stack[0].label
        lid = self.vocab.id(label)
        if top.kind == "intent":
            return lid in self.intent_children[intent]
        prole = self._role(top.label)
        if prole == NEGATION:
            return top.nchild == 0 and lid in self.not_children[intent]
        if prole == COMPLEX:
            if top.nchild == 0:
                return self._role(label) == QUANTITY and lid in self.quantity_ids
            return top.nchild == 1 and lid in self.complex_second[intent]
        g = b.generic_slot(label)
        return g is not None and g.role == NESTED and top.label in g.parents and bool(
            self.tries[label].children
        )

    def step(self, state: DecoderState, token_id: int) -> DecoderState:
        """Advance by one token, raising :class:`IllegalTransition` if it is not allowed."""
        tok = self.vocab.token(token_id)
        phase, stack = state.phase, state.stack
        emitted = state.emitted + (token_id,)

        def bad() -> IllegalTransition:
            return IllegalTransition(tok, state)

        if phase == DONE or tok == BOS:
            raise bad()
        if tok == EOS:
            if not state.is_accepting:
                raise bad()
            return DecoderState((), DONE, None, state.n_intents, emitted)

        if tok == OPEN:
            if phase == START or (phase == CLOSED and not stack):
                return DecoderState(stack, OPENED, None, state.n_intents, emitted)
            if phase not in (LABEL, CLOSED) or not stack:
                raise bad()
            top = stack[-1]
            role = self._role(top.label) if top.kind == "slot" else None
            if phase == LABEL:
                ok = top.kind == "intent" or role in (NEGATION, COMPLEX) or bool(self.nested.get(top.label))
            elif role == NEGATION:
                ok = False
            elif role == COMPLEX:
                ok = top.nchild == 1
            else:
                ok = True
            if not ok:
                raise bad()
            return DecoderState(stack, OPENED, None, state.n_intents, emitted)

        if tok == CLOSE:
            if phase == VALUE:
                if not state.trie.terminal:
                    raise bad()
            elif phase == CLOSED and stack:
                top = stack[-1]
                role = self._role(top.label) if top.kind == "slot" else None
                needed = {NEGATION: 1, COMPLEX: 2}.get(role)
                if needed is not None and top.nchild != needed:
                    raise bad()
            else:
                raise bad()
            popped, rest = stack[-1], stack[:-1]
            n_intents = state.n_intents
            if rest:
                rest = rest[:-1] + (rest[-1]._replace(nchild=rest[-1].nchild + 1),)
            elif popped.kind == "intent":
                n_intents += 1
            return DecoderState(rest, CLOSED, None, n_intents, emitted)

        if phase == OPENED:
            if token_id not in self._label_kind or not self._child_ok(state, tok):
                raise bad()
            kind = "intent" if not stack else "slot"
            return DecoderState(stack + (Frame(tok, kind, 0),), LABEL, None, state.n_intents, emitted)

        # value token
        if phase == LABEL and stack and stack[-1].kind == "slot":
            node = self.tries.get(stack[-1].label)
        elif phase == VALUE:
            node = state.trie
        else:
            raise bad()
        child = node.children.get(token_id) if node is not None else None
        if child is None:
            raise bad()
        return DecoderState(stack, VALUE, child, state.n_intents, emitted)

    # -- convenience -------------------------------------------------------

    def encode(self, linear: str) -> list[str]:
        return self.tokenizer.tokenize(linear)

    def decode(self, ids: Sequence[int]) -> str:
        return self.tokenizer.detokenize([self.vocab.token(i) for i in ids])


def build(
    bundle: SchemaBundle, strict: StrictnessConfig | None = None, tokenizer: Tokenizer | None = None
) -> ConstraintEngine:
    return ConstraintEngine(bundle, strict, tokenizer)


def allowed_next(engine: ConstraintEngine, state: DecoderState) -> frozenset[int]:
    return engine.allowed_next(state)


def replay(engine: ConstraintEngine, tokens: Sequence[str] | str) -> ReplayResult:
    """Check a token sequence (or a linearized parse) against the automaton."""
    if isinstance(tokens, str):
        tokens = engine.encode(tokens)
    state = engine.initial_state()
    v = engine.vocab
    for pos, tok in enumerate(tokens):
        allowed = engine.allowed_next(state)
        if tok not in v or v.id(tok) not in allowed:
            return ReplayResult(False, pos, tok, frozenset(v.token(i) for i in allowed))
        state = engine.step(state, v.id(tok))
    if not state.is_accepting:
        allowed = engine.allowed_next(state)
        return ReplayResult(False, len(tokens), None, frozenset(v.token(i) for i in allowed))
    return ReplayResult(True)


# ---------------------------------------------------------------------------
# scorers and search
# ---------------------------------------------------------------------------

#: A scorer maps the emitted prefix (token ids after BOS) to one score per
#: vocabulary id. Higher is better; scores are summed along a hypothesis.
Scorer = Callable[[Sequence[int]], Sequence[float]]


class RandomScorer:
    """Uniform random scores; with beam 1 this samples uniformly among legal tokens."""

    def __init__(self, vocab_size: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.rng = np.random.default_rng(seed)

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        return self.rng.random(self.vocab_size)


class GoldReplayScorer:
    """Scores 1.0 on the gold continuation of a matching prefix and 0 elsewhere."""

    def __init__(self, engine: ConstraintEngine, linear: str):
        v = engine.vocab
        self.vocab_size = len(v)
        self.gold = [v.id(t) for t in engine.encode(linear) if t in v] + [engine.eos]

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        scores = np.zeros(self.vocab_size)
        n = len(prefix)
        if n < len(self.gold) and list(prefix) == self.gold[:n]:
            scores[self.gold[n]] = 1.0
        return scores


class ExternalScorer:
    """Drive the engine from an external process over a JSON-lines pipe.

    Protocol, one JSON object per line:

    * engine -> scorer, once at start: ``{"vocab": [token, ...]}``
    * engine -> scorer, per utterance: ``{"source": model_input}`` (no reply)
    * engine -> scorer, per query:     ``{"prefix": [id, ...]}``
    * scorer -> engine, per query:     ``{"scores": [float, ...]}`` (one per
      vocabulary id) or ``{"scores": {"token": float, ...}}`` (missing
      tokens score ``-inf``).
    """

    def __init__(self, command: Sequence[str], vocab: Vocabulary):
        self.vocab = vocab
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self._send({"vocab": vocab.tokens})

    def _send(self, obj: dict) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()

    def start(self, source: str) -> None:
        """Announce the model input that the following queries decode."""
        self._send({"source": source})

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        self._send({"prefix": list(map(int, prefix))})
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("external scorer closed its output")
        scores = json.loads(line)["scores"]
        if isinstance(scores, dict):
            out = np.full(len(self.vocab), -math.inf)
            for tok, s in scores.items():
                if tok in self.vocab:
                    out[self.vocab.id(tok)] = s
            return out
        if len(scores) != len(self.vocab):
            raise ValueError(f"external scorer returned {len(scores)} scores for {len(self.vocab)} tokens")
        return np.asarray(scores, dtype=float)

    def close(self) -> None:
        if self.proc.poll() is None:
            assert self.proc.stdin is not None
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self) -> ExternalScorer:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def constrained_beam_search(
    engine: ConstraintEngine,
    scorer: Scorer,
    beam: int = 6,
    max_len: int = 128,
    diagnostics: list[str] | None = None,
) -> list[Hypothesis]:
    """Beam search restricted to legal tokens; returns finished hypotheses, best first.

    Each step keeps the ``beam`` best extensions of all live hypotheses;
    extensions ending in EOS leave the beam as finished. Search stops once
    ``beam`` hypotheses have finished, nothing is live, or ``max_len`` tokens
    were emitted.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    live = [Hypothesis((), 0.0, engine.initial_state())]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        cands: list[tuple[float, int, Hypothesis]] = []
        for hyp in live:
            scores = np.asarray(scorer(hyp.tokens), dtype=float)
            for t in sorted(engine.allowed_next(hyp.state)):
                s = scores[t]
                if math.isfinite(s):
                    cands.append((hyp.score + float(s), t, hyp))
        if not cands:
            break
        cands.sort(key=lambda c: -c[0])
        live = []
        for score, t, hyp in cands[:beam]:
            nxt = Hypothesis(hyp.tokens + (t,), score, engine.step(hyp.state, t))
            (finished if t == engine.eos else live).append(nxt)
        if len(finished) >= beam or not live:
            break
    if live and len(finished) < beam:
        msg = f"{len(live)} hypotheses still open after max_len={max_len}; dropped"
        log.debug(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
    if not finished:
        msg = f"no accepting sequence within max_len={max_len}"
        log.info(msg)
        if diagnostics is not None:
            diagnostics.append(msg)
    finished.sort(key=lambda h: -h.score)
    return finished[:beam]


def sample(
    engine: ConstraintEngine,
    n: int,
    seed: int = 0,
    max_len: int = 128,
    diagnostics: list[str] | None = None,
) -> list[str]:
    """Draw ``n`` random valid parses (uniform choice among legal tokens at each step)."""
    scorer = RandomScorer(len(engine.vocab), seed)
    out: list[str] = []
    attempts = 0
    while len(out) < n and attempts < 20 * n:
        attempts += 1
        hyps = constrained_beam_search(engine, scorer, beam=1, max_len=max_len)
        if hyps:
            out.append(engine.decode(hyps[0].tokens))
    if len(out) < n and diagnostics is not None:
        diagnostics.append(f"only {len(out)} of {n} samples finished within max_len={max_len}")
    return out
