"""Shared test utilities: synthetic corpora and brute-force reference
implementations (oracles) that trade speed for obvious correctness."""
from __future__ import annotations

import random

from lmpipe.bpe import (
    ByteAlphabet,
    Vocabulary,
    build_vocabulary,
    pre_split,
)

# ------------------------------------------------------- synthetic corpora

_SYLLABLES = [
    "ver", "ge", "be", "ent", "zer", "an", "auf", "aus", "ein", "mit",
    "schaft", "ung", "heit", "keit", "lich", "isch", "chen", "lein",
    "haus", "stadt", "land", "berg", "burg", "bach", "feld", "wald",
    "schnee", "regen", "wasser", "feuer", "luft", "erde", "stein",
    "mann", "frau", "kind", "hund", "katze", "vogel", "fisch",
    "gro", "klein", "alt", "neu", "gut", "schlecht", "schnell",
    "spiel", "werk", "zeit", "jahr", "tag", "nacht", "morgen",
    "schul", "lehr", "arbeit", "leben", "welt", "stra", "ße",
    "über", "unter", "zwischen", "gegen", "ohne", "durch",
]
_ENDINGS = ["", "e", "en", "er", "es", "em", "s", "n", "t", "te", "st"]
_FUNCTION_WORDS = [
    "der", "die", "das", "und", "in", "von", "zu", "mit", "auf", "für",
    "ist", "im", "dem", "nicht", "ein", "eine", "als", "auch", "es",
    "an", "werden", "aus", "er", "hat", "dass", "sie", "nach", "wird",
    "bei", "einer", "um", "am", "sind", "noch", "wie", "einem", "über",
]


def _german_word_pool(rng: random.Random, size: int = 4000) -> list[str]:
    pool = []
    for _ in range(size):
        word = "".join(rng.choices(_SYLLABLES, k=rng.randint(1, 3)))
        word += rng.choice(_ENDINGS)
        if rng.random() < 0.5:
            word = word[0].upper() + word[1:]
        pool.append(word)
    return pool


def _zipf_weights(n: int, exponent: float = 1.07) -> list[float]:
    return [1.0 / (rank ** exponent) for rank in range(1, n + 1)]


def german_like_corpus(seed: int, target_bytes: int) -> list[str]:
    """Documents of Zipf-sampled pseudo-German words, ~target_bytes total.

    Not German, but shares its texture: shared frequent stems, umlauts,
    capitalized nouns, function words.  BPE trained here transfers to other
    samples from the same generator.
    """
    rng = random.Random(seed)
    pool = _FUNCTION_WORDS + _german_word_pool(rng)
    weights = _zipf_weights(len(pool))
    docs: list[str] = []
    total = 0
    while total < target_bytes:
        words = rng.choices(pool, weights=weights, k=rng.randint(5, 40))
        doc = " ".join(words)
        docs.append(doc)
        total += len(doc.encode("utf-8")) + 1
    return docs


def dna_like_corpus(seed: int, target_bytes: int) -> list[str]:
    """Disjoint-domain control: documents of random ACGT runs.

    Merges learned here are useless on the pseudo-German texture above.
    """
    rng = random.Random(seed)
    docs: list[str] = []
    total = 0
    while total < target_bytes:
        words = [
            "".join(rng.choices("ACGT", k=rng.randint(6, 14)))
            for _ in range(rng.randint(5, 30))
        ]
        doc = " ".join(words)
        docs.append(doc)
        total += len(doc) + 1
    return docs


def random_byte_string(rng: random.Random, max_len: int = 1024) -> bytes:
    """Fuzz input mixing raw bytes (often invalid UTF-8) and text runs."""
    choice = rng.random()
    n = rng.randint(0, max_len)
    if choice < 0.4:
        return bytes(rng.getrandbits(8) for _ in range(n))
    if choice < 0.7:
        # mostly-ASCII text with occasional multi-byte and stray bytes
        out = bytearray()
        while len(out) < n:
            r = rng.random()
            if r < 0.75:
                out.append(rng.randint(0x20, 0x7E))
            elif r < 0.9:
                out.extend(rng.choice("äöüßÄÖÜ€…").encode("utf-8"))
            else:
                out.append(rng.getrandbits(8))
        return bytes(out[:n])
    # valid UTF-8 including astral plane
    chars = []
    while sum(len(c.encode("utf-8")) for c in chars) < n:
        cp = rng.choice((rng.randint(0x20, 0x7E), rng.randint(0xA0, 0x2FFF), rng.randint(0x1F300, 0x1F64F)))
        chars.append(chr(cp))
    return "".join(chars).encode("utf-8")[:n]


# ----------------------------------------------------------------- oracles


def oracle_train_merges(texts: list[str], num_merges: int) -> list[tuple[str, str]]:
    """From-scratch recounting BPE trainer.

    Every iteration recounts all adjacent pairs across all pre-split piece
    occurrences (no dedup, no incremental bookkeeping), picks the most
    frequent with the lexicographic (left, right) tie rule, stops when the
    best count is < 2.
    """
    alphabet = ByteAlphabet.default()
    pieces: list[list[str]] = []
    for text in texts:
        for piece in pre_split(text):
            pieces.append(
                [alphabet.forward[b] for b in piece.encode("utf-8", "surrogateescape")]
            )
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts: dict[tuple[str, str], int] = {}
        for syms in pieces:
            for pair in zip(syms, syms[1:]):
                counts[pair] = counts.get(pair, 0) + 1
        if not counts:
            break
        best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        left, right = best[0]
        merged = left + right
        new_pieces = []
        for syms in pieces:
            out: list[str] = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == left and syms[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            new_pieces.append(out)
        pieces = new_pieces
        merges.append((left, right))
    return merges


def oracle_encode(vocab: Vocabulary, text: str | bytes) -> list[int]:
    """Reference encoder: scan the merge list in rank order, applying each
    merge globally within every piece before moving to the next rank."""
    if isinstance(text, bytes):
        text = text.decode("utf-8", "surrogateescape")
    alphabet = vocab.alphabet
    ids: list[int] = []
    for piece in pre_split(text):
        syms = [alphabet.forward[b] for b in piece.encode("utf-8", "surrogateescape")]
        for rule in vocab.merges:
            out: list[str] = []
            i = 0
            while i < len(syms):
                if (
                    i < len(syms) - 1
                    and syms[i] == rule.left
                    and syms[i + 1] == rule.right
                ):
                    out.append(rule.left + rule.right)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            syms = out
        ids.extend(vocab.token_to_id[s] for s in syms)
    return ids


def random_training_corpus(rng: random.Random, max_bytes: int = 200) -> list[str]:
    """Tiny corpora engineered to hit frequency ties in BPE training."""
    alphabet = rng.choice(["ab", "abc", "abcd", "aä", "abö ", "ab c"])
    docs = []
    budget = rng.randint(20, max_bytes)
    while budget > 0:
        n = rng.randint(1, min(40, budget))
        doc = "".join(rng.choice(alphabet) for _ in range(n))
        docs.append(doc)
        budget -= len(doc.encode("utf-8"))
    return docs


def random_vocab(rng: random.Random) -> Vocabulary:
    """Train a small vocabulary on a random corpus (for encoder fuzzing)."""
    from lmpipe.bpe import train_vocab

    corpus = random_training_corpus(rng, max_bytes=rng.randint(50, 400))
    return train_vocab(corpus, num_merges=rng.randint(0, 30))


# ------------------------------------------------------------ golden files

# Frozen inputs for the serialization goldens.  Changing anything here (or
# any on-disk format) invalidates tests/golden/ — regenerate via
# scripts/regen_goldens.py and review the diff deliberately.
GOLDEN_CORPUS = [
    "Die Würde des Menschen ist unantastbar.",
    "Alle Menschen sind vor dem Gesetz gleich.",
    "Die Wohnung ist unverletzlich.",
    "Eigentum verpflichtet.",
    "Die Verwaltung übernimmt die Prüfung der Unterlagen.",
    "Der Antrag wurde fristgerecht eingereicht und geprüft.",
    "Die Prüfung der Unterlagen dauert mehrere Wochen.",
    "Eine Verlängerung der Frist ist schriftlich zu beantragen.",
    "Die Gebühren werden nach Aufwand berechnet.",
    "Der Bescheid wird per Post zugestellt.",
    "Gegen den Bescheid kann Widerspruch eingelegt werden.",
    "Die Bearbeitung erfolgt in der Reihenfolge des Eingangs.",
]
GOLDEN_MERGES = 60
GOLDEN_SEQ_LEN = 32
GOLDEN_MASK_SEED = 2024


def golden_pipeline(outdir) -> None:
    """Run the frozen pipeline: vocab files, binary dataset, masked examples."""
    from pathlib import Path

    from lmpipe.binarize import binarize, read_dataset
    from lmpipe.bpe import save_vocab, train_vocab
    from lmpipe.pretraining import (
        MaskingConfig,
        apply_masking,
        masking_ids,
        pack_sequences,
        write_examples,
    )

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    vocab = train_vocab(GOLDEN_CORPUS, num_merges=GOLDEN_MERGES)
    save_vocab(vocab, outdir)
    binarize(GOLDEN_CORPUS, vocab, outdir / "data.bin")

    _, ids = read_dataset(outdir / "data.bin", vocab)
    size, specials = masking_ids(vocab)
    cfg = MaskingConfig(seed=GOLDEN_MASK_SEED)
    examples = (
        apply_masking(block, size, specials, cfg, call_index=i)
        for i, block in enumerate(
            pack_sequences(ids.tolist(), GOLDEN_SEQ_LEN, pad_id=vocab.pad_id)
        )
    )
    write_examples(outdir / "masked.bin", vocab, examples, GOLDEN_SEQ_LEN)
