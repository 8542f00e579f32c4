#!/usr/bin/env python3
"""Measure how much in-domain BPE training shrinks a binarized dataset.

Trains two vocabularies of identical size, one on a training split of the
given corpus and one on a control corpus from a different domain, then
binarizes a held-out split with both and reports payload sizes, fertility
(tokens per word), and the size reduction.  Without --corpus a synthetic
pseudo-German corpus is generated, so the script runs out of the box:

    python3 scripts/fertility_experiment.py --merges 1000
"""
import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from helpers import dna_like_corpus, german_like_corpus  # noqa: E402

from lmpipe.binarize import binarize, fertility, size_report  # noqa: E402
from lmpipe.bpe import train_vocab  # noqa: E402
from lmpipe.corpus import SplitSpec, load_corpus, split_train_validation  # noqa: E402


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus", help="UTF-8 text file, one document per line (default: synthetic)")
    ap.add_argument("--control", help="disjoint-domain text file (default: synthetic)")
    ap.add_argument("--bytes", type=int, default=1_000_000, help="synthetic corpus size")
    ap.add_argument("--merges", type=int, default=1_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.corpus:
        docs = [d.text for d in load_corpus(args.corpus)]
    else:
        docs = german_like_corpus(seed=args.seed + 100, target_bytes=args.bytes)
    if len(docs) < 2:
        ap.error("need at least 2 documents to split")
    train, held_out = split_train_validation(docs, SplitSpec(train_fraction=0.8, seed=args.seed))
    if args.control:
        control = [d.text for d in load_corpus(args.control)]
    else:
        control = dna_like_corpus(seed=args.seed + 100, target_bytes=args.bytes)

    print(f"training 2 x {args.merges} merges ...", file=sys.stderr)
    in_vocab = train_vocab(train, args.merges)
    out_vocab = train_vocab(control, args.merges)

    with tempfile.TemporaryDirectory() as tmp:
        a = binarize(held_out, in_vocab, Path(tmp) / "in.bin")
        b = binarize(held_out, out_vocab, Path(tmp) / "out.bin")
    cmp = size_report(a, b)
    fert_in = fertility(held_out, in_vocab)
    fert_out = fertility(held_out, out_vocab)

    print(f"held-out documents      {len(held_out)}")
    print(f"in-domain payload       {a.payload_bytes} bytes")
    print(f"out-of-domain payload   {b.payload_bytes} bytes")
    print(f"in-domain fertility     {fert_in.tokens_per_word:.3f} tokens/word")
    print(f"out-of-domain fertility {fert_out.tokens_per_word:.3f} tokens/word")
    print(f"size ratio              {cmp.ratio:.4f}")
    print(f"reduction               {cmp.reduction:.2%}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
