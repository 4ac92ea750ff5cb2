"""Command-line entry point: prepare, synth, stats, train, eval, predict, rerun.

Every flag can also be set through an environment variable named
``ARVSU_<FLAG>`` (upper case, dashes as underscores), e.g. ``ARVSU_LR=0.01``
or ``ARVSU_BATCH_SIZE=32``. Explicit flags win over the environment.

Failures print one line ``error: <reason-code>: <message>`` to stderr and
exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence


from . import __version__
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    ConfigMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from .corpus import (
    CLASS_NAMES,
    DEFAULT_PRIORITY,
    SIGNALS,
    REFERENCE_PROPORTIONS,
    CorpusFormatError,
    SplitSpec,
    class_counts,
    compute_class_weights,
    corpus_stats,
    generate_synthetic,
    parse_priority,
    prepare_records,
    read_corpus,
    read_raw_annotations,
    record_from_json,
    read_features,
    split,
    to_samples,
    write_corpus,
)
from .evaluation import emit_report, evaluate
from .model import VARIANTS, ModelConfig, argmax_lowest, probabilities
from .tensor import no_grad
from .text import Vocabulary, build_vocab, load_pretrained
from .training import TrainConfig, train

ENV_PREFIX = "ARVSU_"
log = logging.getLogger("addressee")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def _require_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("missing-input", f"no such file: {p}")
    return p


def _write_manifest(out_dir: Path, subcommand: str, argv: Sequence[str], config: dict,
                    inputs: dict, outputs: dict, seed: int | None) -> None:
    env = {k: v for k, v in sorted(os.environ.items()) if k.startswith(ENV_PREFIX)}
    manifest = {
        "tool": "addressee",
        "version": __version__,
        "subcommand": subcommand,
        "argv": list(argv),
        "env": env,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
    }
    (out_dir / f"manifest.{subcommand}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -------------------------------------------------------------- subcommands


def cmd_prepare(args, argv) -> int:
    raw_path = _require_file(args.raw)
    priority = parse_priority(args.priority)
    raw = read_raw_annotations(raw_path)
    records = prepare_records(raw, args.d_saliency, args.d_speaker, priority)
    if not records:
        raise CliError("empty-corpus", f"{raw_path}: no records survive label reorganisation")
    out = _out_dir(args.out)
    corpus_path = out / "corpus.jsonl"
    write_corpus(corpus_path, records, sidecar=not args.inline_features)
    table1, table2 = corpus_stats(raw), corpus_stats(records)
    text = table1.to_text() + "\n" + table2.to_text()
    (out / "stats.txt").write_text(text)
    (out / "stats.json").write_text(json.dumps({"raw": table1.to_dict(), "classes": table2.to_dict(),
                                                "dropped": len(raw) - len(records)}, indent=2) + "\n")
    _write_manifest(out, "prepare", argv,
                    {"priority": list(priority), "d_saliency": args.d_saliency, "d_speaker": args.d_speaker,
                     "inline_features": args.inline_features},
                    {"raw": str(raw_path)}, {"corpus": str(corpus_path), "stats": str(out / "stats.txt")}, None)
    sys.stdout.write(text)
    return 0


def cmd_synth(args, argv) -> int:
    cfg = ModelConfig(d_saliency=args.d_saliency, d_speaker_feat=args.d_speaker)
    proportions = tuple(float(x) for x in args.proportions.split(","))
    records = generate_synthetic(args.n, cfg, args.seed, args.signal, proportions, args.noise)
    out = _out_dir(args.out)
    corpus_path = out / "corpus.jsonl"
    write_corpus(corpus_path, records, sidecar=not args.inline_features)
    stats = corpus_stats(records)
    (out / "stats.txt").write_text(stats.to_text())
    _write_manifest(out, "synth", argv,
                    {"n": args.n, "signal": args.signal, "d_saliency": args.d_saliency,
                     "d_speaker": args.d_speaker, "proportions": list(proportions), "noise": args.noise},
                    {}, {"corpus": str(corpus_path)}, args.seed)
    sys.stdout.write(stats.to_text())
    return 0


def cmd_stats(args, argv) -> int:
    records = read_corpus(_require_file(args.corpus))
    sys.stdout.write(corpus_stats(records).to_text())
    return 0


def _read_nonempty(path: Path):
    records = read_corpus(path)
    if not records:
        raise CliError("empty-corpus", f"{path}: corpus has no records")
    return records


def _split_records(records, seed: int):
    return split(records, SplitSpec(ratios=(3, 1, 1), seed=seed))


def cmd_train(args, argv) -> int:
    corpus_path = _require_file(args.corpus)
    records = _read_nonempty(corpus_path)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    train_recs, val_recs, test_recs = _split_records(records, split_seed)
    vocab = build_vocab([r.tokens for r in train_recs], min_count=args.min_count)
    cfg = ModelConfig(
        d_saliency=records[0].saliency_feat.shape[0], d_speaker_feat=records[0].speaker_feat.shape[0],
        d_visual_hidden=args.d_visual_hidden, d_embed=args.d_embed, d_lstm_hidden=args.d_lstm_hidden,
        variant=args.variant, vocab_size=len(vocab),
    )
    weights = None
    if not args.no_class_weights:
        counts = class_counts(train_recs)
        if min(counts) == 0:
            raise CliError("value", f"training split lacks a class (counts {counts}); cannot weight classes")
        weights = compute_class_weights(counts)
    embeddings = None
    if args.embeddings and cfg.uses_text:
        loaded = load_pretrained(_require_file(args.embeddings), vocab, cfg.d_embed, seed=args.seed)
        log.info("embeddings: %d tokens found, %d lines skipped", loaded.found, loaded.skipped)
        embeddings = loaded.matrix
    tcfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, seed=args.seed, variant=args.variant, class_weights=weights)
    ckpt, history = train(to_samples(train_recs, vocab, args.max_len), to_samples(val_recs, vocab, args.max_len),
                          cfg, tcfg, embeddings)
    ckpt.metadata.update({"vocab": vocab.itos, "max_len": args.max_len, "split_seed": split_seed,
                          "split_sizes": [len(train_recs), len(val_recs), len(test_recs)]})
    out = _out_dir(args.out)
    save_checkpoint(ckpt, out / "checkpoint.ckpt")
    with open(out / "epochs.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            fh.write(rec.to_json() + "\n")
    _write_manifest(out, "train", argv,
                    {"model": cfg.to_dict(), "learning_rate": args.lr, "batch_size": args.batch_size,
                     "max_epochs": args.max_epochs, "patience": args.patience, "min_count": args.min_count,
                     "max_len": args.max_len,
                     "class_weights": list(weights.w) if weights else None, "split": [3, 1, 1],
                     "split_seed": split_seed},
                    {"corpus": str(corpus_path), "embeddings": args.embeddings},
                    {"checkpoint": str(out / "checkpoint.ckpt"), "log": str(out / "epochs.jsonl")}, args.seed)
    print(f"best epoch {ckpt.metadata['epoch']} val_accuracy {ckpt.metadata['val_accuracy']:.4f}")
    return 0


def _load(path) -> tuple[Checkpoint, Vocabulary]:
    ckpt = load_checkpoint(_require_file(path))
    return ckpt, Vocabulary(list(ckpt.metadata["vocab"]))


def _check_dims(cfg: ModelConfig, records) -> None:
    r = records[0]
    dims = (r.saliency_feat.shape[0], r.speaker_feat.shape[0])
    if dims != (cfg.d_saliency, cfg.d_speaker_feat):
        raise ConfigMismatchError(
            f"corpus feature dims {dims} != checkpoint dims {(cfg.d_saliency, cfg.d_speaker_feat)}")


def cmd_eval(args, argv) -> int:
    ckpt, vocab = _load(args.checkpoint)
    corpus_path = _require_file(args.corpus)
    records = _read_nonempty(corpus_path)
    _check_dims(ckpt.config, records)
    if args.split == "all":
        chosen = records
    else:
        parts = dict(zip(("train", "val", "test"), _split_records(records, ckpt.metadata.get("split_seed", 0))))
        chosen = parts[args.split]
    report = evaluate(ckpt.to_params(), ckpt.config, to_samples(chosen, vocab, ckpt.metadata.get("max_len")))
    table = emit_report(report, "text_table", title=ckpt.config.variant)
    sys.stdout.write(table)
    if args.out:
        out = _out_dir(args.out)
        (out / "report.txt").write_text(table)
        (out / "report.json").write_text(emit_report(report, "structured"))
        _write_manifest(out, "eval", argv, {"split": args.split, "model": ckpt.config.to_dict()},
                        {"checkpoint": str(args.checkpoint), "corpus": str(corpus_path)},
                        {"report": str(out / "report.json")}, ckpt.metadata.get("seed"))
    return 0


def _iter_predict_records(source: str):
    fh = sys.stdin if source == "-" else open(_require_file(source), encoding="utf-8")
    sidecars = None
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if "schema" in obj:
                    if source != "-":
                        base = Path(source).parent
                        sidecars = {k: read_features(base / n) for k, n in obj.get("sidecars", {}).items()}
                    continue
                yield record_from_json(obj, sidecars)
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise CorpusFormatError(f"{source}:{lineno}: {exc}") from exc
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_predict(args, argv) -> int:
    ckpt, vocab = _load(args.checkpoint)
    params, cfg = ckpt.to_params(), ckpt.config
    for rec in _iter_predict_records(args.input):
        _check_dims(cfg, [rec])
        (sample,) = to_samples([rec], vocab, ckpt.metadata.get("max_len"))
        with no_grad():
            probs = probabilities(params, cfg, sample).data
        label = argmax_lowest(probs)
        sys.stdout.write(json.dumps({"record_id": rec.record_id, "label": label, "label_name": CLASS_NAMES[label],
                                     "probabilities": [float(p) for p in probs]}) + "\n")
        sys.stdout.flush()
    return 0


def cmd_rerun(args, argv) -> int:
    manifest = json.loads(_require_file(args.manifest).read_text())
    saved_env = {k: os.environ.get(k) for k in manifest.get("env", {})}
    os.environ.update(manifest.get("env", {}))
    try:
        return main(manifest["argv"])
    finally:
        for k, v in saved_env.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v


# ------------------------------------------------------------------- parser


def _env_default(flag: str, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + flag.lstrip("-").upper().replace("-", "_"))
    return default if raw is None else cast(raw)


def _flag(p: argparse.ArgumentParser, flag: str, default=None, type=str, **kw):
    p.add_argument(flag, type=type, default=_env_default(flag, default, type), **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="addressee", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="reorganise raw annotations into a 3-class corpus")
    p.add_argument("raw", help="raw annotations, JSON lines")
    _flag(p, "--priority", ",".join(DEFAULT_PRIORITY), help="class order resolving multi-label items")
    _flag(p, "--d-saliency", 4096, int)
    _flag(p, "--d-speaker", 4096, int)
    p.add_argument("--inline-features", action="store_true", help="store features in the JSON lines")
    _flag(p, "--out", required=_env_default("--out", None) is None, help="output directory")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _flag(p, "--n", 600, int)
    _flag(p, "--signal", "both", choices=SIGNALS)
    _flag(p, "--seed", 0, int)
    _flag(p, "--d-saliency", 32, int)
    _flag(p, "--d-speaker", 32, int)
    _flag(p, "--noise", 0.5, float)
    _flag(p, "--proportions", ",".join(str(x) for x in REFERENCE_PROPORTIONS))
    p.add_argument("--inline-features", action="store_true")
    _flag(p, "--out", required=_env_default("--out", None) is None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="print class statistics of a corpus")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("corpus")
    _flag(p, "--variant", "multimodal", choices=VARIANTS)
    _flag(p, "--lr", 0.001, float)
    _flag(p, "--batch-size", 64, int)
    _flag(p, "--max-epochs", 100, int)
    _flag(p, "--patience", 10, int)
    _flag(p, "--seed", 0, int)
    _flag(p, "--split-seed", None, int)
    _flag(p, "--embeddings", None, help="word-vector text file")
    _flag(p, "--d-visual-hidden", 256, int)
    _flag(p, "--d-embed", 100, int)
    _flag(p, "--d-lstm-hidden", 128, int)
    _flag(p, "--min-count", 1, int)
    _flag(p, "--max-len", None, int, help="keep only the first N tokens of each utterance")
    p.add_argument("--no-class-weights", action="store_true")
    _flag(p, "--out", required=_env_default("--out", None) is None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    _flag(p, "--split", "test", choices=("train", "val", "test", "all"))
    _flag(p, "--out", None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify records (file or - for stdin)")
    p.add_argument("checkpoint")
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except BrokenPipeError:
        # downstream reader closed early (e.g. `| head`); silence the final flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 141
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except ConfigMismatchError as exc:
        code, msg = "config-mismatch", str(exc)
    except CheckpointError as exc:
        code, msg = "checkpoint", str(exc)
    except CorpusFormatError as exc:
        code, msg = "format", str(exc)
    except FileNotFoundError as exc:
        code, msg = "missing-input", str(exc)
    except (ValueError, KeyError) as exc:
        code, msg = "value", str(exc)
    print(f"error: {code}: {' '.join(msg.split())}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
