"""Unordered exact-match evaluation and analysis slices."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from schemaparse.dataset import Example
from schemaparse.linker import LinkedSchema, coverage_report
from schemaparse.schema import NUMBER, SchemaBundle
from schemaparse.tree import (
    IntentNode,
    ParseForest,
    SlotNode,
    ValueLeaf,
    parse_linear,
    resolve_entities,
    unordered_equal,
)


def postprocess(prediction: ParseForest) -> ParseForest:
    """Give every intent without a ``NUMBER`` slot the default ``(NUMBER 1)``."""
    intents = []
    for node in prediction.intents:
        if any(c.label == NUMBER for c in node.children):
            intents.append(node)
        else:
            default = SlotNode(NUMBER, (ValueLeaf("1"),))
            intents.append(IntentNode(node.label, (default,) + node.children))
    return ParseForest(tuple(intents))


@dataclass(frozen=True)
class TaskReport:
    n_examples: int
    n_correct: int
    n_invalid_parses: int
    n_missing_schema: int | None = None

    @property
    def unordered_em(self) -> float:
        return self.n_correct / self.n_examples if self.n_examples else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unordered_em"] = self.unordered_em
        return d


@dataclass(frozen=True)
class EvalReport:
    tasks: dict[str, TaskReport] = field(default_factory=dict)
    #: per-example correctness, in input order, for the single-task case
    correct: tuple[bool, ...] = ()

    @property
    def aggregate(self) -> TaskReport:
        rs = list(self.tasks.values())
        missing = [r.n_missing_schema for r in rs if r.n_missing_schema is not None]
        return TaskReport(
            sum(r.n_examples for r in rs),
            sum(r.n_correct for r in rs),
            sum(r.n_invalid_parses for r in rs),
            sum(missing) if missing else None,
        )

    @property
    def unordered_em(self) -> float:
        return self.aggregate.unordered_em

    def to_dict(self) -> dict:
        return {
            "tasks": {name: r.to_dict() for name, r in self.tasks.items()},
            "aggregate": self.aggregate.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("task", "n", "unordered EM", "invalid", "missing schema")]
        items = list(self.tasks.items())
        if len(items) > 1:
            items.append(("ALL", self.aggregate))
        for name, r in items:
            missing = "-" if r.n_missing_schema is None else str(r.n_missing_schema)
            rows.append((name, str(r.n_examples), f"{100 * r.unordered_em:.2f}", str(r.n_invalid_parses), missing))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def _as_forest(x: str | ParseForest) -> ParseForest:
    return x if isinstance(x, ParseForest) else parse_linear(x)


def score_one(prediction: str | ParseForest, gold: ParseForest, bundle: SchemaBundle) -> bool | None:
    """True/False for a scored prediction, None when it cannot be parsed or resolved."""
    try:
        pred = resolve_entities(postprocess(_as_forest(prediction)), bundle)
    except ValueError:
        return None
    return unordered_equal(pred, gold)


def evaluate(
    predictions: Sequence[str | ParseForest],
    golds: Sequence[str | ParseForest],
    bundle: SchemaBundle,
    linked: Sequence[LinkedSchema] | None = None,
    task: str | None = None,
) -> EvalReport:
    """Unordered exact match after post-processing and entity resolution.

    Gold parses get the same post-processing, so golds written with or
    without the default ``(NUMBER 1)`` compare alike. Predictions that fail
    to parse or resolve count as wrong and as invalid. With ``linked``, the
    number of examples whose linked schema misses a gold element is
    reported as well.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} gold parses")
    if linked is not None and len(linked) != len(golds):
        raise ValueError(f"{len(linked)} linked schemas for {len(golds)} gold parses")
    resolved_golds = [resolve_entities(postprocess(_as_forest(g)), bundle) for g in golds]
    flags: list[bool] = []
    invalid = 0
    for pred, gold in zip(predictions, resolved_golds):
        ok = score_one(pred, gold, bundle)
        if ok is None:
            invalid += 1
        flags.append(bool(ok))
    missing = None
    if linked is not None:
        missing = sum(bool(coverage_report(l, g, bundle)) for l, g in zip(linked, resolved_golds))
    report = TaskReport(len(golds), sum(flags), invalid, missing)
    return EvalReport({task or bundle.name: report}, tuple(flags))


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    tasks: dict[str, TaskReport] = {}
    for r in reports:
        for name, t in r.tasks.items():
            if name in tasks:
                raise ValueError(f"task {name} reported twice")
            tasks[name] = t
    return EvalReport(tasks)


def subset_unseen_intents(
    examples: Sequence[Example], training_bundles: Sequence[SchemaBundle]
) -> list[Example]:
    """Examples whose gold has an intent label defined in none of ``training_bundles``."""
    seen = {name for b in training_bundles for name in b.intent_names}
    return [ex for ex in examples if any(i.label not in seen for i in ex.parse.intents)]
