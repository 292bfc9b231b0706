"""Command-line entry points for the pipeline: encode a sheet to tokens,
generate a procedural corpus, build a dataset, train, generate suggestions,
and run the service. Exit codes: 0 ok, 1 user error, 2 internal error."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import anticipate as ant
from .anticipate import Capability, Span, TokenSeq
from .corpus import CorpusSpec, generate_corpus
from .engine import GenerationRequest, SpanOutOfRange, accept, generate
from .leadsheet import Instrument, LeadSheetError, beats_to_seconds, parse, serialize
from .model import (
    CheckpointError,
    NGramModel,
    Policy,
    TinyTransformer,
    TinyTransformerConfig,
    checkpoint_load,
    checkpoint_save,
    train,
)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are user errors, not internal
        raise UserError(message)


def _read_sheet(path: str):
    try:
        return parse(Path(path).read_text())
    except FileNotFoundError:
        raise UserError(f"sheet file not found: {path}")
    except LeadSheetError as e:
        raise UserError(f"{path}: {e}")


def _parse_span(text: str) -> tuple[float, float]:
    try:
        a, b = text.split(":")
        return float(a), float(b)
    except ValueError:
        raise UserError(f"span must look like A:B, got {text!r}")


def cmd_encode(args) -> int:
    sheet = _read_sheet(args.sheet)
    if args.span:
        start_beat, end_beat = _parse_span(args.span)
        if not 0 <= start_beat < end_beat <= sheet.total_beats:
            raise UserError(f"span {args.span} outside the song's {sheet.total_beats} beats")
    else:
        start_beat, end_beat = 0.0, sheet.total_beats
    capability = Capability(args.capability)
    span = Span(
        beats_to_seconds(start_beat, sheet.tempo),
        beats_to_seconds(end_beat, sheet.tempo),
    )
    toks = ant.encode_sheet(sheet, span, capability)
    notes = ant.detokenize(toks)
    print(f"# {len(notes)} triples, capability {capability.value}, "
          f"span [{span.t_s:.2f}s, {span.t_e:.2f}s]")
    for (note, is_control), i in zip(notes, range(1, len(toks.tokens) - 1, 3)):
        triple = toks.tokens[i : i + 3]
        kind = "control" if is_control else "event"
        print(
            f"{note.start_s:8.2f}s {note.duration_s:6.2f}s "
            f"{note.instrument.name.lower():7s} p{note.pitch:<3d} {kind:7s} "
            f"{list(triple)}"
        )
    return 0


def cmd_gen_corpus(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = CorpusSpec(songs=args.songs, seed=args.seed)
    sheets = generate_corpus(spec)
    for i, sheet in enumerate(sheets):
        (out / f"song_{i:04d}.sheet").write_text(serialize(sheet))
    print(f"wrote {len(sheets)} sheets to {out}")
    return 0


def cmd_make_dataset(args) -> int:
    corpus_dir = Path(args.corpus)
    files = sorted(corpus_dir.glob("*.sheet"))
    if not files:
        raise UserError(f"no .sheet files in {corpus_dir}")
    sheets = [_read_sheet(str(f)) for f in files]
    manifest = ant.build_dataset(sheets, args.examples_per_song, args.seed, args.out)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    try:
        sequences = ant.load_dataset(args.dataset)
    except FileNotFoundError:
        raise UserError(f"dataset not found: {args.dataset}")
    if args.kind == "ngram":
        model = NGramModel(order=args.order).fit(sequences)
    else:
        config = TinyTransformerConfig(
            layers=args.layers,
            heads=args.heads,
            model_dim=args.dim,
            learning_rate=args.lr,
            batch_size=args.batch_size,
            steps=args.steps,
            seed=args.seed,
        )
        model = TinyTransformer(config)
        losses = train(model, sequences, config)
        if losses:
            print(f"loss: first {losses[0]:.4f}, last {losses[-1]:.4f}")
    checkpoint_save(model, args.out)
    print(f"saved {model.version} to {args.out}")
    return 0


def cmd_generate(args) -> int:
    sheet = _read_sheet(args.sheet)
    try:
        model = checkpoint_load(args.checkpoint)
    except CheckpointError as e:
        raise UserError(str(e))
    start_beat, end_beat = _parse_span(args.span)
    try:
        req = GenerationRequest(
            sheet=sheet,
            span_beats=(start_beat, end_beat),
            capability=Capability(args.capability),
            policy=Policy(temperature=args.temperature, top_p=args.top_p),
        )
    except (SpanOutOfRange, ValueError) as e:
        raise UserError(str(e))
    suggestion = generate(req, model, session_seed=args.seed)
    updated = accept(sheet, suggestion)
    text = serialize(updated)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out} ({len(suggestion.generated_melody)} melody notes, "
              f"{len(suggestion.generated_harmony)} chords)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, main as serve_main

    config = ServiceConfig.load(args.config) if args.config else ServiceConfig.load()
    if args.port:
        config.port = args.port
    if args.checkpoint:
        config.model_path = args.checkpoint
    if args.log_dir:
        config.log_dir = args.log_dir
    serve_main(config)
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="cowriter", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="dump a sheet's token sequence")
    enc.add_argument("sheet")
    enc.add_argument("--capability", default="left_to_right",
                     choices=[c.value for c in Capability])
    enc.add_argument("--span", help="A:B in beats")
    enc.set_defaults(fn=cmd_encode)

    gc = sub.add_parser("gen-corpus", help="write a procedural corpus")
    gc.add_argument("--songs", type=int, required=True)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out", required=True)
    gc.set_defaults(fn=cmd_gen_corpus)

    md = sub.add_parser("make-dataset", help="encode a corpus into training examples")
    md.add_argument("--corpus", required=True)
    md.add_argument("--out", required=True)
    md.add_argument("--examples-per-song", type=int, default=4)
    md.add_argument("--seed", type=int, default=0)
    md.set_defaults(fn=cmd_make_dataset)

    tr = sub.add_parser("train", help="train a model on a dataset")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--kind", choices=["tiny", "ngram"], default="tiny")
    tr.add_argument("--order", type=int, default=3, help="ngram order")
    tr.add_argument("--steps", type=int, default=300)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--heads", type=int, default=2)
    tr.add_argument("--dim", type=int, default=64)
    tr.add_argument("--lr", type=float, default=3e-3)
    tr.add_argument("--batch-size", type=int, default=16)
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(fn=cmd_train)

    gen = sub.add_parser("generate", help="fill a span and print the updated sheet")
    gen.add_argument("--sheet", required=True)
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--span", required=True, help="A:B in beats")
    gen.add_argument("--capability", default="fill_in_middle",
                     choices=[c.value for c in Capability])
    gen.add_argument("--temperature", type=float, default=1.0)
    gen.add_argument("--top-p", type=float, default=0.95)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out")
    gen.set_defaults(fn=cmd_generate)

    sv = sub.add_parser("serve", help="run the suggestion service")
    sv.add_argument("--config")
    sv.add_argument("--port", type=int)
    sv.add_argument("--checkpoint")
    sv.add_argument("--log-dir")
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - last-resort boundary
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
