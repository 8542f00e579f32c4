"""Single command-line entry point dispatching to every pipeline stage.

Heavy imports happen inside the handlers, so cheap commands (stats on a
multi-GB corpus in particular) never pay for numpy.

Exit codes: 0 success, 1 operational failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Sequence

from . import __version__

_TRUE_WORDS = frozenset({"1", "true", "yes", "on"})
_FALSE_WORDS = frozenset({"0", "false", "no", "off"})

DEFAULT_SPECIALS_FLAG = "<s>,</s>,<pad>,<unk>,<mask>"


class CliError(Exception):
    """Operational failure; message goes to stderr, exit code 1."""


@dataclass(frozen=True)
class PipelineConfig:
    """Typed view of a flat key=value configuration file.

    Keys mirror CLI flag spellings; unknown keys are rejected so typos
    fail loudly.  Flags given on the command line override these values.
    """

    corpus: str | None = None
    sample_bytes: int | None = None
    seed: int = 0
    vocab_size: int = 52_000
    special_tokens: str = DEFAULT_SPECIALS_FLAG
    warmup: int = 10_000
    total: int = 100_000
    peak: float = 4.0e-4
    power: float = 1.0
    end: float = 0.0
    gold: str | None = None
    pred: str | None = None
    classes: str | None = None
    out: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        raw = read_config(path)
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest not in known:
                raise CliError(f"{path}: unknown config key {key!r}")
            kwargs[dest] = _convert(value, known[dest].type)
        return cls(**kwargs)


def _convert(value: str, annotation: Any) -> Any:
    text = str(annotation)
    if "int" in text:
        return int(value)
    if "float" in text:
        return float(value)
    return value


def read_config(path: str | Path) -> dict[str, str]:
    """Flat key=value lines; '#' comments and blank lines ignored."""
    pairs: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}: line {lineno}: expected key=value")
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    return pairs


def _emit(args: argparse.Namespace, payload: dict[str, Any], human: Callable[[], None]) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    else:
        human()


def _default_threads() -> int:
    raw = os.environ.get("LMPIPE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------- handlers


def _cmd_stats(args: argparse.Namespace) -> int:
    from . import corpus

    st = corpus.stats_path(args.file, threads=args.threads, errors=args.errors)
    payload = {"documents": st.documents, "words": st.words, "bytes": st.bytes}
    _emit(
        args,
        payload,
        lambda: print(
            f"documents {st.documents}\nwords     {st.words}\nbytes     {st.bytes}"
        ),
    )
    return 0


def _cmd_sample(args: argparse.Namespace) -> int:
    from . import corpus

    if args.bytes <= 0:
        raise CliError(f"--bytes must be positive, got {args.bytes}")
    stream = corpus.load_corpus(args.file, errors=args.errors)
    kept_docs = 0
    kept_bytes = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for doc in corpus.sample_documents(stream, args.bytes, args.seed):
            fh.write(doc.text + "\n")
            kept_docs += 1
            kept_bytes += len(doc.text.encode("utf-8"))
    payload = {"documents": kept_docs, "bytes": kept_bytes, "out": str(args.out)}
    _emit(
        args,
        payload,
        lambda: print(f"sampled {kept_docs} documents ({kept_bytes} bytes) -> {args.out}"),
    )
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    from . import corpus

    spec = corpus.SplitSpec(train_fraction=args.fraction, seed=args.seed)
    docs = list(corpus.load_corpus(args.file, errors=args.errors))
    train, val = corpus.split_train_validation(docs, spec)
    for path, part in ((args.train_out, train), (args.val_out, val)):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for doc in part:
                fh.write(doc.text + "\n")
    payload = {
        "train_documents": len(train),
        "validation_documents": len(val),
        "train_out": str(args.train_out),
        "val_out": str(args.val_out),
    }
    _emit(
        args,
        payload,
        lambda: print(
            f"train {len(train)} documents -> {args.train_out}\n"
            f"validation {len(val)} documents -> {args.val_out}"
        ),
    )
    return 0


def _parse_specials(raw: str) -> tuple[str, ...]:
    specials = tuple(s for s in raw.split(",") if s)
    if not specials:
        raise CliError("--special-tokens must name at least one token")
    return specials


def _cmd_train_bpe(args: argparse.Namespace) -> int:
    from . import bpe, corpus

    specials = _parse_specials(args.special_tokens)
    floor = 256 + len(specials)
    if args.vocab_size < floor:
        raise CliError(
            f"--vocab-size must be at least {floor} "
            f"(256 byte symbols + {len(specials)} special tokens)"
        )
    num_merges = args.vocab_size - floor
    stream = corpus.load_corpus(args.file, errors=args.errors)
    vocab = bpe.train_vocab(stream, num_merges, specials)
    bpe.save_vocab(vocab, args.out)
    payload = {
        "vocab_size": vocab.size,
        "merges": len(vocab.merges),
        "requested_merges": num_merges,
        "out": str(args.out),
    }
    _emit(
        args,
        payload,
        lambda: print(
            f"vocabulary of {vocab.size} tokens "
            f"({len(vocab.merges)} of {num_merges} merges learned) -> {args.out}"
        ),
    )
    return 0


def _stdin_byte_lines():
    # readline (not iteration) so each line is handled as soon as it
    # arrives; needed by wrappers that keep this process interactive.
    for raw in iter(sys.stdin.buffer.readline, b""):
        yield raw.rstrip(b"\r\n") if raw.endswith(b"\r\n") else raw.rstrip(b"\n")


def _cmd_encode(args: argparse.Namespace) -> int:
    from . import bpe

    vocab = bpe.load_vocab(args.vocab)
    out = sys.stdout
    if args.tokens:
        id_to_token = {i: t for t, i in vocab.token_to_id.items()}
        for line in _stdin_byte_lines():
            ids = bpe.encode(vocab, line)
            out.write(" ".join(id_to_token[i] for i in ids) + "\n")
            out.flush()
    else:
        for line in _stdin_byte_lines():
            ids = bpe.encode(vocab, line)
            out.write(" ".join(map(str, ids)) + "\n")
            out.flush()
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    from . import bpe

    vocab = bpe.load_vocab(args.vocab)
    out = sys.stdout.buffer
    for lineno, line in enumerate(_stdin_byte_lines(), 1):
        text = line.decode("ascii", errors="replace").split()
        try:
            ids = [int(tok) for tok in text]
            payload = bpe.decode(vocab, ids, render_special=args.render_special)
        except ValueError as exc:
            raise CliError(f"stdin line {lineno}: {exc}") from exc
        out.write(payload + b"\n")
        out.flush()
    return 0


def _cmd_binarize(args: argparse.Namespace) -> int:
    from . import binarize, bpe, corpus

    vocab = bpe.load_vocab(args.vocab)
    stream = corpus.load_corpus(args.file, errors=args.errors)
    header = binarize.binarize(stream, vocab, args.out)
    payload = {
        "tokens": header.token_count,
        "payload_bytes": header.payload_bytes,
        "file_bytes": header.file_bytes,
        "vocab_fingerprint": f"{header.vocab_fingerprint:#018x}",
        "out": str(args.out),
    }
    _emit(
        args,
        payload,
        lambda: print(
            f"{header.token_count} tokens ({header.payload_bytes} payload bytes) -> {args.out}"
        ),
    )
    return 0


def _cmd_compare_size(args: argparse.Namespace) -> int:
    from . import binarize

    a = binarize.read_header(args.a)
    b = binarize.read_header(args.b)
    try:
        cmp = binarize.size_report(a, b)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    ratio = cmp.ratio
    reduction = cmp.reduction * 100.0
    payload = {
        "a_tokens": a.token_count,
        "b_tokens": b.token_count,
        "a_payload_bytes": a.payload_bytes,
        "b_payload_bytes": b.payload_bytes,
        "ratio": ratio,
        "reduction_percent": reduction,
    }

    def human() -> None:
        print(f"a: {a.token_count} tokens, {a.payload_bytes} payload bytes")
        print(f"b: {b.token_count} tokens, {b.payload_bytes} payload bytes")
        print(f"ratio {ratio:.4f}")
        print(f"reduction {reduction:.2f}%")

    _emit(args, payload, human)
    return 0


def _cmd_lr_curve(args: argparse.Namespace) -> int:
    from . import pretraining

    cfg = pretraining.ScheduleConfig(
        warmup_steps=args.warmup,
        total_steps=args.total,
        peak_lr=args.peak,
        decay_power=args.power,
        end_lr=args.end,
    )
    points = args.points if args.points > 0 else None
    curve = list(pretraining.lr_curve(cfg, points))
    if args.json:
        print(json.dumps([{"step": s, "lr": lr} for s, lr in curve]))
    else:
        print("step,lr")
        for s, lr in curve:
            print(f"{s},{lr:.12g}")
    return 0


def _cmd_make_examples(args: argparse.Namespace) -> int:
    from . import binarize, bpe, pretraining

    vocab = bpe.load_vocab(args.vocab)
    _, ids = binarize.read_dataset(args.dataset, vocab)
    cfg = pretraining.MaskingConfig(
        mask_rate=args.mask_rate,
        seed=args.seed,
    )
    vocab_size, special_ids = pretraining.masking_ids(vocab)
    blocks = pretraining.pack_sequences(
        ids.tolist(),
        args.seq_len,
        pad_id=vocab.pad_id,
        respect_boundaries=args.respect_boundaries,
        boundary_id=vocab.end_id,
    )

    def examples():
        for index, block in enumerate(blocks):
            yield pretraining.apply_masking(
                block, vocab_size, special_ids, cfg,
                call_index=index, mask_id=vocab.mask_id,
            )

    header = pretraining.write_examples(args.out, vocab, examples(), args.seq_len)
    payload = {
        "examples": header.example_count,
        "sequence_length": header.sequence_length,
        "out": str(args.out),
    }
    _emit(
        args,
        payload,
        lambda: print(
            f"{header.example_count} examples of length {header.sequence_length} -> {args.out}"
        ),
    )
    return 0


def _print_score(name: str, score) -> None:
    print(f"{name}precision {score.precision:.4f}")
    print(f"{name}recall    {score.recall:.4f}")
    print(f"{name}f1        {score.f1:.4f}")
    print(f"{name}tp {score.tp}  fp {score.fp}  fn {score.fn}")


def _score_payload(score) -> dict[str, Any]:
    return {
        "precision": score.precision,
        "recall": score.recall,
        "f1": score.f1,
        "tp": score.tp,
        "fp": score.fp,
        "fn": score.fn,
    }


def _cmd_eval_ner(args: argparse.Namespace) -> int:
    from . import evaluation

    if args.germeval:
        gold = evaluation.parse_germeval(args.gold)
        pred = evaluation.parse_germeval(args.pred)
        score = evaluation.germeval_f1(gold, pred)
        payload = _score_payload(score)
        if args.per_level:
            levels = evaluation.germeval_level_scores(gold, pred)
            payload["levels"] = {k: _score_payload(v) for k, v in levels.items()}

        def human() -> None:
            _print_score("", score)
            if args.per_level:
                for lvl, sc in levels.items():
                    print(f"-- {lvl} --")
                    _print_score("", sc)

        _emit(args, payload, human)
    else:
        gold = evaluation.parse_conll(args.gold)
        pred = evaluation.parse_conll(args.pred)
        score = evaluation.ner_f1(gold, pred)
        _emit(args, _score_payload(score), lambda: _print_score("", score))
    return 0


def _read_labels(path: str) -> list[str]:
    labels: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                labels.append(line)
    return labels


def _cmd_eval_clf(args: argparse.Namespace) -> int:
    from . import evaluation

    classes = [c for c in args.classes.split(",") if c]
    if not classes:
        raise CliError("--classes must name at least one class")
    gold = _read_labels(args.gold)
    pred = _read_labels(args.pred)
    per_class = evaluation.class_scores(gold, pred, classes)
    mean = evaluation.mean_class_f1(gold, pred, classes, exclude_absent=args.exclude_absent)
    payload = {
        "mean_f1": mean,
        "classes": {c: _score_payload(s) for c, s in per_class.items()},
    }

    def human() -> None:
        for cls in classes:
            s = per_class[cls]
            print(f"{cls}: f1 {s.f1:.4f}  (tp {s.tp}  fp {s.fp}  fn {s.fn})")
        print(f"mean_f1 {mean:.4f}")

    _emit(args, payload, human)
    return 0


def _cmd_select_run(args: argparse.Namespace) -> int:
    from . import evaluation

    runs = evaluation.read_runs_csv(args.runs)
    if not runs:
        raise CliError(f"{args.runs}: no run records found")
    best = evaluation.select_best_run(runs)
    payload = {
        "run_id": best.run_id,
        "validation": best.validation_score,
        "test": best.test_score,
        "reported": best.test_score,
    }
    _emit(
        args,
        payload,
        lambda: print(
            f"run {best.run_id}  validation {best.validation_score:.4f}  "
            f"test {best.test_score:.4f}\nreported {best.test_score:.4f}"
        ),
    )
    return 0


# ------------------------------------------------------------- the parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file; flags override it")
    sub.add_argument("--json", action="store_true", help="machine-readable JSON output")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="lmpipe",
        description="Corpus statistics, byte-level BPE, binarization, "
        "pre-training data math, and evaluation metrics.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="command")
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        _add_common(p)
        registry[name] = p
        return p

    p = sub("stats", _cmd_stats, "count documents, words, and payload bytes")
    p.add_argument("file")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--errors", choices=("strict", "replace"), default="strict")

    p = sub("sample", _cmd_sample, "draw a random document subset by byte budget")
    p.add_argument("file")
    p.add_argument("--bytes", type=int, required=True, help="byte budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--errors", choices=("strict", "replace"), default="strict")

    p = sub("split", _cmd_split, "split documents into train/validation parts")
    p.add_argument("file")
    p.add_argument("--fraction", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-out", required=True)
    p.add_argument("--val-out", required=True)
    p.add_argument("--errors", choices=("strict", "replace"), default="strict")

    p = sub("train-bpe", _cmd_train_bpe, "learn a byte-level BPE vocabulary")
    p.add_argument("file")
    p.add_argument("--vocab-size", type=int, default=52_000)
    p.add_argument("--special-tokens", default=DEFAULT_SPECIALS_FLAG)
    p.add_argument("--out", required=True, help="directory for vocab.json / merges.txt")
    p.add_argument("--errors", choices=("strict", "replace"), default="strict")

    p = sub("encode", _cmd_encode, "encode stdin lines to token ids")
    p.add_argument("vocab", help="vocabulary directory")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--ids", action="store_true", help="emit numeric ids (default)")
    group.add_argument("--tokens", action="store_true", help="emit token strings")

    p = sub("decode", _cmd_decode, "decode id lines from stdin back to text")
    p.add_argument("vocab", help="vocabulary directory")
    p.add_argument("--render-special", action="store_true")

    p = sub("binarize", _cmd_binarize, "encode a corpus into a binary dataset")
    p.add_argument("file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--errors", choices=("strict", "replace"), default="strict")

    p = sub("compare-size", _cmd_compare_size, "payload size ratio of two datasets")
    p.add_argument("a")
    p.add_argument("b")

    p = sub("lr-curve", _cmd_lr_curve, "emit the learning-rate schedule as CSV")
    p.add_argument("--warmup", type=int, default=10_000)
    p.add_argument("--total", type=int, default=100_000)
    p.add_argument("--peak", type=float, default=4.0e-4)
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--end", type=float, default=0.0)
    p.add_argument("--points", type=int, default=0, help="subsample to N points (0 = every step)")

    p = sub("make-examples", _cmd_make_examples, "pack and mask a dataset into training examples")
    p.add_argument("dataset")
    p.add_argument("--vocab", required=True)
    p.add_argument("--seq-len", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask-rate", type=float, default=0.15)
    p.add_argument("--respect-boundaries", action="store_true")
    p.add_argument("--out", required=True)

    p = sub("eval-ner", _cmd_eval_ner, "span F1 between gold and predicted tag files")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--germeval", action="store_true", help="two-level 4-column TSV input")
    p.add_argument("--per-level", action="store_true", help="also report per-level scores")

    p = sub("eval-clf", _cmd_eval_clf, "mean per-class F1 between label files")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--exclude-absent", action="store_true")

    p = sub("select-run", _cmd_select_run, "pick the best run by validation score")
    p.add_argument("runs", help="CSV file: run_id,val,test")

    return parser, registry


def _prescan(argv: Sequence[str]) -> tuple[str | None, str | None]:
    """Find (subcommand, --config value) before the real parse, so config
    values can satisfy required flags."""
    command = next((a for a in argv if not a.startswith("-")), None)
    config = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif arg.startswith("--config="):
            config = arg.split("=", 1)[1]
    return command, config


def _apply_config(
    command: str,
    config_path: str,
    parser: argparse.ArgumentParser,
    registry: dict[str, argparse.ArgumentParser],
) -> None:
    sub = registry[command]
    pairs = read_config(config_path)
    actions = {a.dest: a for a in sub._actions}
    defaults: dict[str, Any] = {}
    for key, value in pairs.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            parser.error(f"config key {key!r} is not a flag of '{command}'")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            lowered = value.lower()
            if lowered in _TRUE_WORDS:
                defaults[dest] = True
            elif lowered in _FALSE_WORDS:
                defaults[dest] = False
            else:
                parser.error(f"config key {key!r}: expected a boolean, got {value!r}")
        elif action.type is not None:
            try:
                defaults[dest] = action.type(value)
            except ValueError:
                parser.error(f"config key {key!r}: bad value {value!r}")
        else:
            defaults[dest] = value
        if action.choices and defaults[dest] not in action.choices:
            parser.error(
                f"config key {key!r}: {value!r} is not one of {sorted(action.choices)}"
            )
        action.required = False  # the config value satisfies it
    sub.set_defaults(**defaults)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    command, config_path = _prescan(argv)
    try:
        if config_path and command in registry:
            _apply_config(command, config_path, parser, registry)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CliError, OSError) as exc:
        print(f"lmpipe: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.handler(args)
    except BrokenPipeError:
        return 1
    except CliError as exc:
        print(f"lmpipe {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"lmpipe {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
