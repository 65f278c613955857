"""Reading and writing paired (utterance, parse) datasets.

The native format is tab-separated text with a header line declaring
whether parse leaves are catalog surfaces or resolved entities::

    # parse_form: surface
    i want to order one sunchips\t(SIDE_ORDER (NUMBER 1 ) (SIDE_TYPE sunchips ) )

JSON-lines files are also read; the utterance and parse are taken from the
first present key among ``utterance``/``SRC``/``*.SRC`` and
``parse``/``EXR``/``*.EXR``/``TOP-DECOUPLED``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from schemaparse.tree import ParseForest, linearize, parse_linear

SURFACE = "surface"
ENTITY = "entity"
PARSE_FORMS = (SURFACE, ENTITY)

_HEADER = "# parse_form:"
_UTT_KEYS = ("utterance", "SRC", "train.SRC", "dev.SRC", "test.SRC")
_PARSE_KEYS = ("parse", "EXR", "train.EXR", "dev.EXR", "test.EXR", "TOP-DECOUPLED", "train.TOP-DECOUPLED")


@dataclass(frozen=True)
class Example:
    utterance: str
    parse: ParseForest


class DatasetError(ValueError):
    pass


def format_dataset(examples: Iterable[Example], parse_form: str = SURFACE) -> str:
    if parse_form not in PARSE_FORMS:
        raise ValueError(f"parse_form must be one of {PARSE_FORMS}")
    lines = [f"{_HEADER} {parse_form}"]
    for ex in examples:
        if "\t" in ex.utterance or "\n" in ex.utterance:
            raise DatasetError(f"utterance contains a tab or newline: {ex.utterance!r}")
        lines.append(f"{ex.utterance}\t{linearize(ex.parse)}")
    return "\n".join(lines) + "\n"


def write_dataset(path: str | Path, examples: Iterable[Example], parse_form: str = SURFACE) -> None:
    Path(path).write_text(format_dataset(examples, parse_form), encoding="utf-8")


def _pick(record: dict, keys: tuple[str, ...], what: str, lineno: int) -> str:
    for k in keys:
        if k in record:
            return record[k]
    raise DatasetError(f"line {lineno}: no {what} field (tried {', '.join(keys)})")


def read_dataset(path: str | Path) -> tuple[list[Example], str]:
    """Return the examples and the declared parse form of a dataset file."""
    text = Path(path).read_text(encoding="utf-8")
    examples: list[Example] = []
    parse_form = SURFACE
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith(_HEADER):
            parse_form = line[len(_HEADER):].strip()
            if parse_form not in PARSE_FORMS:
                raise DatasetError(f"line {lineno}: unknown parse_form {parse_form!r}")
            continue
        if line.startswith("#"):
            continue
        if line.lstrip().startswith("{"):
            record = json.loads(line)
            utt = _pick(record, _UTT_KEYS, "utterance", lineno)
            lin = _pick(record, _PARSE_KEYS, "parse", lineno)
        else:
            if "\t" not in line:
                raise DatasetError(f"line {lineno}: expected 'utterance<TAB>parse'")
            utt, lin = line.split("\t", 1)
        try:
            examples.append(Example(utt, parse_linear(lin)))
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from exc
    return examples, parse_form


def read_parse_lines(path: str | Path) -> list[str]:
    """Linearized parses from a dataset file or a file with one parse per line.

    Unlike :func:`read_dataset` the strings are not parsed, so malformed
    predictions survive to be scored as invalid.
    """
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if line.lstrip().startswith("{"):
            record = json.loads(line)
            out.append(_pick(record, _PARSE_KEYS, "parse", len(out) + 1))
        else:
            out.append(line.split("\t", 1)[1] if "\t" in line else line)
    return out
