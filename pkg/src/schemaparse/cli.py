"""Command-line entry point: ``schemaparse <subcommand> ...``.

Every flag can also be set through an environment variable named
``SCHEMAPARSE_`` plus the flag in upper case with dashes turned into
underscores (``--beam`` -> ``SCHEMAPARSE_BEAM``). Explicit flags win.

Each subcommand that writes a file also writes ``<file>.manifest.json``
recording the resolved configuration, inputs, outputs and tool version.

Exit status: 0 on success, 1 when the data fails a check (invalid bundle,
rejected parse, failed decode), 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Sequence

from schemaparse import __version__
from schemaparse.constraints import (
    ExternalScorer,
    GoldReplayScorer,
    RandomScorer,
    StrictnessConfig,
    build,
    constrained_beam_search,
    replay,
    sample,
)
from schemaparse.dataset import ENTITY, SURFACE, Example, read_dataset, read_parse_lines, write_dataset
from schemaparse.evaluate import evaluate, subset_unseen_intents
from schemaparse.generator import (
    GenerationConfig,
    TemplateError,
    bundle_for,
    load_templates,
    sample_dataset,
)
from schemaparse.linker import (
    LinkerConfig,
    NoParseError,
    baseline_parse,
    coverage_report,
    link,
    serialize_input,
)
from schemaparse.schema import SchemaError, bundle_stats, load_bundle
from schemaparse.tree import ParseError, compute_stats, linearize, resolve_entities

log = logging.getLogger("schemaparse")

ENV_PREFIX = "SCHEMAPARSE_"

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env(flag: str, default: Any = None, kind: Callable[[str], Any] = str) -> Any:
    raw = os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"))
    if raw is None:
        return default
    if kind is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    try:
        return kind(raw)
    except ValueError as exc:
        raise UsageError(f"bad value {raw!r} for {ENV_PREFIX}{flag.upper()}: {exc}") from exc


def _write_manifest(out: str | Path, command: str, args: argparse.Namespace, **extra: Any) -> Path:
    config = {
        k: v for k, v in vars(args).items() if k not in ("func", "command", "action") and not callable(v)
    }
    manifest = {
        "subcommand": command,
        "tool": "schemaparse",
        "version": __version__,
        "seed": config.get("seed"),
        "config": config,
        "outputs": [str(out)],
        **extra,
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _ordered_map(fn: Callable, items: Sequence, jobs: int, init: Callable | None = None, initargs: tuple = ()) -> list:
    """``map`` that may fan out over processes; results keep input order."""
    if jobs <= 1 or len(items) < 2:
        if init is not None:
            init(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=init, initargs=initargs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


# ---------------------------------------------------------------------------
# validate / stats
# ---------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    status = EXIT_OK
    for path in args.bundle_paths:
        try:
            b = load_bundle(path)
        except SchemaError as exc:
            print(f"INVALID {path}\n{exc}", file=sys.stderr)
            status = EXIT_FAIL
            continue
        st = bundle_stats(b)
        print(f"OK {path}: {b.name}, {st['intents']} intents, {st['slots']} slots, {st['entities']} entities")
    return status


def cmd_stats(args: argparse.Namespace) -> int:
    out: dict[str, Any] = {}
    if args.bundle:
        b = load_bundle(args.bundle)
        st = bundle_stats(b)
        out["bundle"] = {k: st[k] for k in ("intents", "slots", "entities")}
    if args.gold:
        examples, _ = read_dataset(args.gold)
        if not examples:
            raise UsageError(f"{args.gold} holds no examples")
        out["parses"] = asdict(compute_stats([ex.parse for ex in examples]))
    if not out:
        raise UsageError("stats needs --bundle and/or --gold")
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        _write_manifest(args.out, "stats", args, inputs=[p for p in (args.bundle, args.gold) if p])
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    tset = load_templates(args.templates)
    if args.simple_only:
        tset = tset.simple_only()
    bundle = bundle_for(tset, args.bundle)
    diags: list[str] = []
    examples = sample_dataset(
        tset.templates,
        bundle,
        GenerationConfig(args.n, args.seed, args.max_attempts_factor),
        tset.pools,
        diagnostics=diags,
    )
    if args.parse_form == ENTITY:
        examples = [Example(ex.utterance, resolve_entities(ex.parse, bundle)) for ex in examples]
    write_dataset(args.out, examples, args.parse_form)
    for d in diags:
        print(f"warning: {d}", file=sys.stderr)
    print(f"wrote {len(examples)} examples to {args.out}")
    _write_manifest(
        args.out, "generate", args, inputs=[str(args.templates)], n_written=len(examples), diagnostics=diags
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# link
# ---------------------------------------------------------------------------

_W: dict[str, Any] = {}


def _init_link(bundle_path: str, config: LinkerConfig) -> None:
    _W["bundle"] = load_bundle(bundle_path)
    _W["config"] = config


def _link_one(ex: Example) -> tuple[str, list]:
    b, cfg = _W["bundle"], _W["config"]
    linked = link(ex.utterance, b, cfg, gold=ex.parse)
    return serialize_input(ex.utterance, linked), coverage_report(linked, ex.parse, b)


def _linker_config(args: argparse.Namespace) -> LinkerConfig:
    try:
        return LinkerConfig(args.threshold, not args.no_suppress_unit_number, args.oracle)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_link(args: argparse.Namespace) -> int:
    config = _linker_config(args)
    load_bundle(args.bundle)
    examples, _ = read_dataset(args.gold)
    results = _ordered_map(_link_one, examples, args.jobs, _init_link, (args.bundle, config))
    Path(args.out).write_text("".join(s + "\n" for s, _ in results), encoding="utf-8")
    n_missing = sum(bool(m) for _, m in results)
    n = len(results)
    coverage = 1.0 - n_missing / n if n else 1.0
    summary = {"n_examples": n, "n_missing_schema": n_missing, "coverage": coverage}
    print(json.dumps(summary))
    _write_manifest(args.out, "link", args, inputs=[args.bundle, args.gold], summary=summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# constrain
# ---------------------------------------------------------------------------


def _strictness(args: argparse.Namespace) -> StrictnessConfig:
    return StrictnessConfig(args.strict, args.strict)


def cmd_constrain(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    engine = build(bundle, _strictness(args))
    for d in engine.diagnostics:
        print(f"warning: {d}", file=sys.stderr)
    if args.action == "replay":
        parses = read_parse_lines(args.input)
        lines = []
        n_rejected = 0
        for k, text in enumerate(parses, 1):
            r = replay(engine, text)
            if r.accepted:
                lines.append(f"{k}\taccept")
            else:
                n_rejected += 1
                got = "<end>" if r.token is None else r.token
                lines.append(
                    f"{k}\treject\tposition={r.position}\ttoken={got}\texpected={' '.join(sorted(r.expected))}"
                )
        text = "\n".join(lines) + "\n" if lines else ""
        _emit(text, args.out)
        print(f"{len(parses) - n_rejected} accepted, {n_rejected} rejected", file=sys.stderr)
        if args.out:
            _write_manifest(args.out, "constrain replay", args, inputs=[args.bundle, args.input],
                            n_rejected=n_rejected)
        return EXIT_OK if n_rejected == 0 else EXIT_FAIL
    diags: list[str] = []
    samples = sample(engine, args.n, args.seed, args.max_len, diagnostics=diags)
    _emit("".join(s + "\n" for s in samples), args.out)
    for d in diags:
        print(f"warning: {d}", file=sys.stderr)
    if args.out:
        _write_manifest(args.out, "constrain sample", args, inputs=[args.bundle], diagnostics=diags)
    return EXIT_OK if len(samples) == args.n else EXIT_FAIL


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    examples, _ = read_dataset(args.gold)
    preds = read_parse_lines(args.pred)
    if len(preds) != len(examples):
        raise UsageError(f"{args.pred} has {len(preds)} predictions for {len(examples)} gold examples")
    if args.subset == "unseen-intents":
        if not args.train_bundles:
            raise UsageError("--subset unseen-intents needs --train-bundles")
        train = [load_bundle(p) for p in args.train_bundles]
        keep = {id(ex) for ex in subset_unseen_intents(examples, train)}
        pairs = [(ex, p) for ex, p in zip(examples, preds) if id(ex) in keep]
        examples, preds = [ex for ex, _ in pairs], [p for _, p in pairs]
    linked = None
    if args.missing_schema:
        config = _linker_config(args)
        linked = [link(ex.utterance, bundle, config, gold=ex.parse) for ex in examples]
    report = evaluate(preds, [ex.parse for ex in examples], bundle, linked=linked)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
        _write_manifest(args.out, "eval", args, inputs=[args.bundle, args.gold, args.pred])
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _init_pipeline(bundle_path: str, config: LinkerConfig, strict: StrictnessConfig, opts: dict) -> None:
    _W["bundle"] = load_bundle(bundle_path)
    _W["config"] = config
    _W["engine"] = build(_W["bundle"], strict)
    _W["opts"] = opts


def _decode_one(item: tuple[int, Example]) -> tuple[str, str, str | None]:
    """(model input, predicted linear parse or "", diagnostic)."""
    k, ex = item
    b, cfg, engine, opts = _W["bundle"], _W["config"], _W["engine"], _W["opts"]
    linked = link(ex.utterance, b, cfg, gold=ex.parse)
    source = serialize_input(ex.utterance, linked)
    scorer_kind = opts["scorer"]
    if scorer_kind == "baseline":
        try:
            return source, linearize(baseline_parse(ex.utterance, linked, b)), None
        except NoParseError as exc:
            return source, "", f"example {k}: {exc}"
    if scorer_kind == "random":
        scorer = RandomScorer(len(engine.vocab), opts["seed"] + k)
    elif scorer_kind == "gold-replay":
        scorer = GoldReplayScorer(engine, linearize(ex.parse))
    else:
        scorer = opts["external"]
        scorer.start(source)
    diags: list[str] = []
    hyps = constrained_beam_search(engine, scorer, opts["beam"], opts["max_len"], diags)
    if not hyps:
        return source, "", f"example {k}: empty decode ({'; '.join(diags)})"
    return source, engine.decode(hyps[0].tokens), None


def cmd_pipeline(args: argparse.Namespace) -> int:
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    config = _linker_config(args)
    strict = _strictness(args)
    bundle = load_bundle(args.bundle)
    examples, _ = read_dataset(args.gold)
    opts: dict[str, Any] = {"scorer": args.scorer, "seed": args.seed, "beam": args.beam, "max_len": args.max_len}
    items = list(enumerate(examples))
    if args.scorer == "external":
        if not args.scorer_cmd:
            raise UsageError("--scorer external needs --scorer-cmd")
        _init_pipeline(args.bundle, config, strict, opts)
        with ExternalScorer(shlex.split(args.scorer_cmd), _W["engine"].vocab) as ext:
            opts["external"] = ext
            results = [_decode_one(it) for it in items]
    else:
        results = _ordered_map(_decode_one, items, args.jobs, _init_pipeline, (args.bundle, config, strict, opts))

    preds = [p for _, p, _ in results]
    diags = [d for _, _, d in results if d]
    for d in diags:
        print(f"warning: {d}", file=sys.stderr)
    lines = ["# parse_form: " + SURFACE] + [
        f"{ex.utterance}\t{p}" for ex, p in zip(examples, preds)
    ]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if args.inputs_out:
        Path(args.inputs_out).write_text("".join(s + "\n" for s, _, _ in results), encoding="utf-8")
    linked = [link(ex.utterance, bundle, config, gold=ex.parse) for ex in examples]
    report = evaluate(preds, [ex.parse for ex in examples], bundle, linked=linked)
    print(report.table())
    report_path = Path(str(args.out) + ".report.json")
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _write_manifest(
        args.out, "pipeline", args, inputs=[args.bundle, args.gold],
        report=report.to_dict(), extra_outputs=[str(report_path)], diagnostics=diags,
    )
    return EXIT_OK if not diags else EXIT_FAIL


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_linker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threshold", type=float, default=_env("threshold", 0.85, float),
                   help="fuzzy-match similarity threshold in (0, 1] (default 0.85)")
    p.add_argument("--oracle", action="store_true", default=_env("oracle", False, bool),
                   help="link the gold parse's own schema elements instead of fuzzy matching")
    p.add_argument("--no-suppress-unit-number", action="store_true",
                   default=_env("no_suppress_unit_number", False, bool),
                   help="keep matches for quantity 1 (articles etc.)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="schemaparse",
        description="Schema loading, linking, constrained decoding, data generation and evaluation "
        "for cross-schema food-order parsing.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="load and validate bundle files")
    p.add_argument("bundle_paths", nargs="+", metavar="BUNDLE",
                   help="bundle file, bundle directory or shipped bundle name (e.g. BURRITO)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="bundle counts and parse compositionality statistics")
    p.add_argument("--bundle", default=_env("bundle"))
    p.add_argument("--gold", default=_env("gold"), help="dataset file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("generate", help="sample a synthetic dataset from templates")
    p.add_argument("--templates", required=_env("templates") is None, default=_env("templates"),
                   help="template file or shipped template name (e.g. SUB)")
    p.add_argument("--bundle", default=_env("bundle"), help="defaults to the bundle the template file names")
    p.add_argument("--n", type=int, default=_env("n", 10000, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--max-attempts-factor", type=int, default=_env("max_attempts_factor", 50, int))
    p.add_argument("--simple-only", action="store_true", help="use only templates flagged simple")
    p.add_argument("--parse-form", choices=(SURFACE, ENTITY), default=_env("parse_form", SURFACE))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("link", help="write schema-augmented model inputs and a coverage summary")
    p.add_argument("--bundle", required=_env("bundle") is None, default=_env("bundle"))
    p.add_argument("--gold", required=True, help="dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=_env("jobs", 1, int))
    _add_linker_flags(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("constrain", help="replay parses through, or sample from, the decoding automaton")
    p.add_argument("action", choices=("replay", "sample"))
    p.add_argument("--bundle", required=_env("bundle") is None, default=_env("bundle"))
    p.add_argument("--input", help="parses to replay (dataset file or one parse per line)")
    p.add_argument("--n", type=int, default=_env("n", 1000, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--max-len", type=int, default=_env("max_len", 128, int))
    p.add_argument("--strict", action="store_true", default=_env("strict", False, bool),
                   help="also enforce intent/slot compatibility and negatability under NOT")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("eval", help="unordered exact match of predictions against gold parses")
    p.add_argument("--bundle", required=_env("bundle") is None, default=_env("bundle"))
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True, help="dataset file or one parse per line")
    p.add_argument("--subset", choices=("all", "unseen-intents"), default="all")
    p.add_argument("--train-bundles", nargs="*", default=[])
    p.add_argument("--missing-schema", action="store_true",
                   help="also count examples whose linked schema misses a gold element")
    p.add_argument("--out", default=None, help="write the machine-readable report here")
    _add_linker_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="link, decode, post-process and evaluate end to end")
    p.add_argument("--bundle", required=_env("bundle") is None, default=_env("bundle"))
    p.add_argument("--gold", required=True, help="dataset file")
    p.add_argument("--scorer", choices=("baseline", "random", "gold-replay", "external"),
                   default=_env("scorer", "baseline"))
    p.add_argument("--scorer-cmd", default=_env("scorer_cmd"),
                   help="command for --scorer external (JSON-lines protocol)")
    p.add_argument("--beam", type=int, default=_env("beam", 6, int))
    p.add_argument("--max-len", type=int, default=_env("max_len", 128, int))
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--strict", action="store_true", default=_env("strict", False, bool))
    p.add_argument("--jobs", type=int, default=_env("jobs", 1, int))
    p.add_argument("--inputs-out", default=None, help="also write the serialized model inputs")
    p.add_argument("--out", required=True, help="predictions file")
    _add_linker_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "constrain" and args.action == "replay" and not args.input:
        parser.error("constrain replay needs --input")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, TemplateError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, OSError) else EXIT_FAIL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
