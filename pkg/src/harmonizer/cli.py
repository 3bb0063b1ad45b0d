"""Command-line entry point: ``harmonizer {ingest,train,harmonize,evaluate}``.

Parameters resolve as defaults < ``--config`` file (flat YAML mapping) <
command-line flags.  Every output embeds provenance: tool version, the
effective configuration and its hash, and hashes of the inputs.  Set
``HARMONIZER_LOG`` to change the log level.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import yaml

from . import __version__
from .encoding import FrameEncoding, decode_chords, encode
from .gamma import GenerationTrace, density_report, generate
from .metrics import evaluate
from .model import ModelConfig, train
from .musicxml import (
    SCORE_SUFFIXES,
    Corpus,
    MusicXMLError,
    filter_reason,
    leadsheet_to_musicxml,
    load_corpus,
    load_sheet,
    split_corpus,
)
from .chords import ChordParseError
from .score import LeadSheet, dumps_leadsheet, validate_leadsheet
from .toy import toy_corpus
from .weights_io import WeightsFormatError, loads_weights, save_weights

log = logging.getLogger("harmonizer")

INPUT_SUFFIXES = (".json", *SCORE_SUFFIXES)


class CommandError(RuntimeError):
    pass


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def provenance(config: dict, inputs: dict[str, str]) -> dict:
    blob = json.dumps(config, sort_keys=True).encode()
    return {
        "tool": "harmonizer",
        "version": __version__,
        "config": config,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "inputs": dict(sorted(inputs.items())),
    }


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def resolve_config(defaults: dict, args: argparse.Namespace) -> dict:
    """Merge defaults, the optional config file and explicit flags, then validate types."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        loaded = yaml.safe_load(Path(args.config).read_text()) or {}
        if not isinstance(loaded, dict) or any(isinstance(v, (dict, list)) for v in loaded.values()):
            raise CommandError(f"{args.config}: config must be a flat key-value mapping")
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise CommandError(f"{args.config}: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key, default in defaults.items():
        if default is not None and cfg[key] is not None and not isinstance(cfg[key], type(default)):
            try:
                cfg[key] = type(default)(cfg[key])
            except (TypeError, ValueError):
                raise CommandError(f"parameter {key}={cfg[key]!r} is not a valid {type(default).__name__}")
    return cfg


def _gamma(text: str) -> float:
    try:
        g = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid gamma {text!r}") from None
    if not 0.0 <= g <= 1.0:
        raise argparse.ArgumentTypeError(f"gamma must lie in [0, 1], got {g}")
    return g


def _positive_float(text: str) -> float:
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


# -- ingest ------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.demo:
        src = out / "source"
        src.mkdir(exist_ok=True)
        for pid, ls in toy_corpus(args.demo_count, seed=args.seed):
            (src / f"{pid}.musicxml").write_bytes(leadsheet_to_musicxml(ls))
    else:
        if not args.src:
            raise CommandError("ingest needs a source directory (or --demo)")
        src = Path(args.src)
        if not src.is_dir():
            raise CommandError(f"{src} is not a directory")

    files = sorted(p for p in src.iterdir() if p.suffix in INPUT_SUFFIXES and not p.name.startswith("_"))
    pieces, inputs, errors = [], {}, []
    for path in files:
        inputs[path.name] = sha256_file(path)
        try:
            ls = load_sheet(path)
        except (MusicXMLError, ChordParseError, ValueError, KeyError) as exc:
            errors.append({"id": path.stem, "reason": f"parse error: {exc}"})
            continue
        violations = validate_leadsheet(ls)
        if violations:
            errors.append({"id": path.stem, "reason": "invalid: " + ", ".join(map(str, violations[:3]))})
            continue
        pieces.append((path.stem, ls))
    if not pieces:
        raise CommandError(f"no parseable lead sheets in {src}")

    corpus = Corpus(tuple(pieces))
    kept, removed = [], list(errors)
    for pid, ls in corpus:
        reason = filter_reason(ls)
        if reason is None:
            kept.append(pid)
            (out / f"{pid}.json").write_text(dumps_leadsheet(ls))
        else:
            removed.append({"id": pid, "reason": reason})
    removed.sort(key=lambda r: r["id"])
    manifest = {
        "kept": kept,
        "removed": removed,
        "counts": {"kept": len(kept), "removed": len(removed)},
        "notes": {"repeats": "not unrolled"},
        "provenance": provenance({"demo": bool(args.demo), "demo_count": args.demo_count,
                                  "seed": args.seed}, inputs),
    }
    write_json(out / "_manifest.json", manifest)
    print(f"kept {len(kept)}, removed {len(removed)} -> {out}")
    return 0


# -- train -------------------------------------------------------------------

TRAIN_DEFAULTS = {
    **{f.name: f.default for f in fields(ModelConfig) if f.name != "chord_vocab_size"},
    "train_fraction": 0.9,
}


def cmd_train(args) -> int:
    cfg = resolve_config(TRAIN_DEFAULTS, args)
    corpus = load_corpus(args.corpus_dir)
    if len(corpus) < 2:
        raise CommandError(f"corpus {args.corpus_dir} has {len(corpus)} pieces; need at least 2")
    out = Path(args.out)
    if not out.parent.is_dir() or not os.access(out.parent, os.W_OK):
        raise CommandError(f"cannot write weights to {out}")
    train_set, valid_set = split_corpus(corpus, cfg["train_fraction"], cfg["seed"])
    model_cfg = ModelConfig(**{k: v for k, v in cfg.items() if k != "train_fraction"})
    log.info("training on %d pieces, validating on %d", len(train_set), len(valid_set))
    w, report = train(train_set, valid_set, model_cfg,
                      progress=lambda e: log.info("epoch %(epoch)d train %(train_loss).4f valid %(valid_loss).4f", e))
    inputs = {Path(p).name: sha256_file(p) for p in corpus.provenance.values()}
    prov = provenance(cfg, inputs)
    prov["split"] = {"train": [pid for pid, _ in train_set], "valid": [pid for pid, _ in valid_set]}
    try:
        save_weights(w, out, prov)
    except OSError as exc:
        raise CommandError(f"cannot write weights to {out}: {exc}") from None
    report_path = Path(args.report) if args.report else out.with_suffix(".report.json")
    write_json(report_path, {**report.to_dict(), "vocab_hash": w.vocab.hash, "provenance": prov})
    print(f"best epoch {report.best_epoch} (valid loss {report.best_valid_loss:.4f}), "
          f"stopped at {report.stopped_epoch} -> {out}")
    return 0


# -- harmonize -----------------------------------------------------------------

HARMONIZE_DEFAULTS = {"gamma": 0.5, "seed": 0, "strategy": "greedy", "temperature": 1.0}


def cmd_harmonize(args) -> int:
    cfg = resolve_config(HARMONIZE_DEFAULTS, args)
    if not 0.0 <= cfg["gamma"] <= 1.0:
        raise CommandError(f"gamma must lie in [0, 1], got {cfg['gamma']}")
    if cfg["strategy"] not in ("greedy", "sample") or cfg["temperature"] <= 0:
        raise CommandError("strategy must be greedy|sample and temperature positive")
    try:
        w, _ = loads_weights(Path(args.weights).read_bytes(), args.vocab_hash)
    except WeightsFormatError as exc:
        raise CommandError(f"{args.weights}: {exc}") from None

    src = Path(args.melody)
    doc = json.loads(src.read_text()) if src.suffix == ".json" else None
    inputs = {src.name: sha256_file(src), Path(args.weights).name: sha256_file(args.weights)}
    prov = provenance(cfg, inputs)
    trace = GenerationTrace()
    if doc is not None and doc.get("format") == "harmonizer-frames":
        enc = FrameEncoding.from_json(src.read_text())
        if enc.vocab_hash != w.vocab.hash:
            raise CommandError(
                f"encoding vocabulary {enc.vocab_hash[:12]} does not match weights {w.vocab.hash[:12]}")
        chords = generate(w, enc, cfg["gamma"], cfg["strategy"], cfg["temperature"], cfg["seed"], trace)
        Path(args.out).write_text(enc.with_chords(chords).to_json())
    else:
        ls = load_sheet(src)
        enc = encode(ls, w.vocab, oov_as_rest=True)
        chords = generate(w, enc, cfg["gamma"], cfg["strategy"], cfg["temperature"], cfg["seed"], trace)
        out_ls = replace(ls, chord_regions=tuple(decode_chords(chords, w.vocab)), provenance=prov)
        Path(args.out).write_text(dumps_leadsheet(out_ls))
    dens = density_report(chords, enc)
    out = Path(args.out)
    write_json(out.with_name(out.stem + ".density.json"),
               {**dens.to_dict(), "degenerate_steps": trace.degenerate_steps, "provenance": prov})
    if args.trace:
        write_json(args.trace, trace.to_dict())
    print(f"{dens.onsets} chord onsets over {dens.bars} bars -> {out}")
    return 0


# -- evaluate -------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    gen = load_corpus(args.generated_dir, INPUT_SUFFIXES)
    truth = load_corpus(args.truth_dir, INPUT_SUFFIXES)
    gen_ids, truth_ids = {p for p, _ in gen}, {p for p, _ in truth}
    if gen_ids != truth_ids:
        missing = sorted(gen_ids ^ truth_ids)
        raise CommandError(f"unmatched piece ids: {', '.join(missing)}")
    if not gen_ids:
        raise CommandError("no pieces to evaluate")
    truth_map = dict(truth.pieces)
    result = evaluate((pid, ls, truth_map[pid]) for pid, ls in gen)
    inputs = {f"generated/{Path(p).name}": sha256_file(p) for p in gen.provenance.values()}
    inputs.update({f"truth/{Path(p).name}": sha256_file(p) for p in truth.provenance.values()})
    doc = {**result.to_dict(), "provenance": provenance({}, inputs)}
    out = Path(args.out)
    write_json(out, doc)
    out.with_suffix(".csv").write_text(result.to_csv())
    g = result.generated
    print(f"{len(gen_ids)} pieces: ACC {g.acc:.3f} CC {g.cc:.2f} CHE {g.che:.3f} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harmonizer", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="parse, filter and store a corpus")
    ing.add_argument("src", nargs="?")
    ing.add_argument("--out", required=True)
    ing.add_argument("--demo", action="store_true", help="generate the synthetic toy corpus")
    ing.add_argument("--demo-count", type=int, default=10)
    ing.add_argument("--seed", type=int, default=0)
    ing.set_defaults(func=cmd_ingest)

    tr = sub.add_parser("train", help="train a model on an ingested corpus")
    tr.add_argument("corpus_dir")
    tr.add_argument("--out", required=True, help="weights file to write")
    tr.add_argument("--report", help="training report path (default: <out>.report.json)")
    tr.add_argument("--config")
    for key, default in TRAIN_DEFAULTS.items():
        tr.add_argument("--" + key.replace("_", "-"), dest=key, type=type(default))
    tr.set_defaults(func=cmd_train)

    hz = sub.add_parser("harmonize", help="generate chords for a melody")
    hz.add_argument("melody")
    hz.add_argument("-w", "--weights", required=True)
    hz.add_argument("--out", required=True)
    hz.add_argument("--config")
    hz.add_argument("--gamma", type=_gamma)
    hz.add_argument("--seed", type=int)
    hz.add_argument("--strategy", choices=("greedy", "sample"))
    hz.add_argument("--temperature", type=_positive_float)
    hz.add_argument("--trace", help="write a per-step gamma trace here")
    hz.add_argument("--vocab-hash", help="refuse weights whose vocabulary hash differs")
    hz.set_defaults(func=cmd_harmonize)

    ev = sub.add_parser("evaluate", help="score generated lead sheets against ground truth")
    ev.add_argument("generated_dir")
    ev.add_argument("truth_dir")
    ev.add_argument("--out", required=True, help="JSON report path; CSV goes alongside")
    ev.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HARMONIZER_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, MusicXMLError, ChordParseError, WeightsFormatError,
            FileNotFoundError, ValueError) as exc:
        print(f"harmonizer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
