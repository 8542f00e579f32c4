"""Byte-level byte-pair-encoding: training, encoding, decoding, serialization.

The base alphabet is the 256 byte values mapped to printable code points, so
any byte sequence encodes without unknown tokens and decode(encode(x)) == x
holds exactly, including for invalid UTF-8.
"""
from __future__ import annotations

import heapq
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import regex

from .corpus import Document

NUM_BYTE_SYMBOLS = 256
MERGES_HEADER = "#version: 1"
VOCAB_FILE = "vocab.json"
MERGES_FILE = "merges.txt"

# Order: begin, end, pad, unk, mask.  The end token doubles as the
# end-of-document separator when binarizing.
DEFAULT_SPECIAL_TOKENS = ("<s>", "</s>", "<pad>", "<unk>", "<mask>")

# Contractions, optional-space letter/digit/symbol runs, whitespace runs.
# Every character falls into exactly one alternative, so the matches tile the
# input and the split is lossless.
_PRESPLIT = regex.compile(
    r"""'(?:[sdmt]|ll|ve|re)| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)

# Encoded pieces are memoized per vocabulary; natural text reuses a small
# set of piece types so the hit rate is high.
_CACHE_LIMIT = 65536


class VocabFormatError(ValueError):
    """Malformed vocab.json or merges.txt."""


@dataclass(frozen=True)
class ByteAlphabet:
    """Bijection between the 256 byte values and printable code points.

    Printable ASCII (0x21-0x7E) maps to itself; every other byte maps to
    chr(0x100 + i) in ascending byte order, keeping merges.txt readable.
    """

    forward: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.forward) != NUM_BYTE_SYMBOLS or len(set(self.forward)) != NUM_BYTE_SYMBOLS:
            raise ValueError("alphabet must map all 256 bytes to distinct code points")

    @property
    def reverse(self) -> dict[str, int]:
        return _default_reverse() if self is _DEFAULT_ALPHABET else {
            ch: b for b, ch in enumerate(self.forward)
        }

    @classmethod
    def default(cls) -> "ByteAlphabet":
        return _DEFAULT_ALPHABET


def _build_default_alphabet() -> ByteAlphabet:
    table: list[str] = []
    next_cp = 0x100
    for b in range(NUM_BYTE_SYMBOLS):
        if 0x21 <= b <= 0x7E:
            table.append(chr(b))
        else:
            table.append(chr(next_cp))
            next_cp += 1
    return ByteAlphabet(tuple(table))


_DEFAULT_ALPHABET = _build_default_alphabet()
_REVERSE_CACHE: dict[str, int] | None = None


def _default_reverse() -> dict[str, int]:
    global _REVERSE_CACHE
    if _REVERSE_CACHE is None:
        _REVERSE_CACHE = {ch: b for b, ch in enumerate(_DEFAULT_ALPHABET.forward)}
    return _REVERSE_CACHE


@dataclass(frozen=True)
class MergeRule:
    left: str
    right: str
    rank: int


@dataclass
class Vocabulary:
    """Immutable BPE vocabulary: alphabet, ordered merges, token ids.

    Ids are dense: byte symbols occupy 0..255 (id == byte value), merge
    tokens follow in rank order, special tokens take the highest ids.
    """

    alphabet: ByteAlphabet
    merges: tuple[MergeRule, ...]
    token_to_id: dict[str, int]
    special_tokens: tuple[str, ...]

    _ranks: dict[tuple[str, str], int] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )
    _id_to_token: tuple[str, ...] = field(init=False, repr=False, compare=False, default=())
    _piece_cache: dict[str, tuple[int, ...]] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        expected = NUM_BYTE_SYMBOLS + len(self.merges) + len(self.special_tokens)
        if len(self.token_to_id) != expected:
            raise ValueError(
                f"vocabulary has {len(self.token_to_id)} tokens, expected "
                f"{expected} (256 bytes + {len(self.merges)} merges + "
                f"{len(self.special_tokens)} specials)"
            )
        if sorted(self.token_to_id.values()) != list(range(expected)):
            raise ValueError("token ids must be dense 0..N-1")
        for rule in self.merges:
            if rule.left + rule.right not in self.token_to_id:
                raise ValueError(
                    f"merge rank {rule.rank} produces unknown token "
                    f"{rule.left + rule.right!r}"
                )
        self._ranks = {(r.left, r.right): r.rank for r in self.merges}
        by_id = sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        self._id_to_token = tuple(tok for tok, _ in by_id)

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[t] for t in self.special_tokens)

    def special_id(self, name_index: int) -> int:
        return self.token_to_id[self.special_tokens[name_index]]

    @property
    def begin_id(self) -> int:
        return self.special_id(0)

    @property
    def end_id(self) -> int:
        return self.special_id(1)

    @property
    def pad_id(self) -> int:
        return self.special_id(2)

    @property
    def unk_id(self) -> int:
        return self.special_id(3)

    @property
    def mask_id(self) -> int:
        return self.special_id(4)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self.alphabet.forward == other.alphabet.forward
            and self.merges == other.merges
            and self.token_to_id == other.token_to_id
            and self.special_tokens == other.special_tokens
        )


def build_vocabulary(
    merges: Sequence[tuple[str, str]] | Sequence[MergeRule],
    special_tokens: Sequence[str] = DEFAULT_SPECIAL_TOKENS,
    alphabet: ByteAlphabet | None = None,
) -> Vocabulary:
    """Assemble a Vocabulary from an ordered merge list."""
    alphabet = alphabet or ByteAlphabet.default()
    rules: list[MergeRule] = []
    for i, m in enumerate(merges):
        if isinstance(m, MergeRule):
            if m.rank != i:
                raise ValueError(f"merge ranks must be consecutive from 0, got {m.rank} at {i}")
            rules.append(m)
        else:
            left, right = m
            rules.append(MergeRule(left, right, i))
    if len({(r.left, r.right) for r in rules}) != len(rules):
        raise ValueError("duplicate merge pair")

    token_to_id: dict[str, int] = {ch: b for b, ch in enumerate(alphabet.forward)}
    for rule in rules:
        tok = rule.left + rule.right
        if tok not in token_to_id:
            token_to_id[tok] = len(token_to_id)
    for sp in special_tokens:
        if sp in token_to_id:
            raise ValueError(f"special token {sp!r} collides with an existing token")
        token_to_id[sp] = len(token_to_id)
    return Vocabulary(
        alphabet=alphabet,
        merges=tuple(rules),
        token_to_id=token_to_id,
        special_tokens=tuple(special_tokens),
    )


def byte_vocabulary(
    special_tokens: Sequence[str] = DEFAULT_SPECIAL_TOKENS,
) -> Vocabulary:
    """Merge-free vocabulary: 256 byte symbols plus specials."""
    return build_vocabulary([], special_tokens)


def pre_split(text: str) -> list[str]:
    """Split text into BPE work pieces; pieces concatenate back to the input."""
    return _PRESPLIT.findall(text)


def _to_work_text(text: str | bytes) -> str:
    if isinstance(text, str):
        return text
    # surrogateescape keeps arbitrary (including invalid UTF-8) bytes
    # round-trippable through the str-based splitter.
    return bytes(text).decode("utf-8", errors="surrogateescape")


def _piece_symbols(piece: str, alphabet: ByteAlphabet) -> list[str]:
    forward = alphabet.forward
    return [forward[b] for b in piece.encode("utf-8", errors="surrogateescape")]


def _apply_merge(syms: list[str], left: str, right: str, merged: str) -> list[str]:
    """Replace occurrences of (left, right) left-to-right, non-overlapping."""
    out: list[str] = []
    i = 0
    n = len(syms)
    while i < n:
        if i < n - 1 and syms[i] == left and syms[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return out


def _greedy_merges(
    piece_freqs: Counter[str], num_merges: int, alphabet: ByteAlphabet
) -> list[MergeRule]:
    """Greedy pair merging over deduplicated piece types weighted by frequency.

    Pair counts are maintained incrementally (only pieces containing the
    merged pair are rewritten); a lazy max-heap ordered by (-count, left,
    right) yields the most frequent pair with lexicographic tie-breaking.
    Stops early once no pair occurs at least twice.
    """
    pieces: list[list[str]] = []
    freqs: list[int] = []
    for piece, freq in piece_freqs.items():
        syms = _piece_symbols(piece, alphabet)
        if len(syms) >= 2:
            pieces.append(syms)
            freqs.append(freq)

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, syms in enumerate(pieces):
        f = freqs[idx]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += f
            where[pair].add(idx)

    heap: list[tuple[int, str, str]] = [
        (-count, left, right) for (left, right), count in pair_counts.items()
    ]
    heapq.heapify(heap)

    merges: list[MergeRule] = []
    while len(merges) < num_merges and heap:
        neg, left, right = heapq.heappop(heap)
        pair = (left, right)
        count = pair_counts.get(pair)
        if count is None or count != -neg:
            continue  # stale heap entry
        if count < 2:
            break
        merged = left + right
        merges.append(MergeRule(left, right, len(merges)))

        changed: set[tuple[str, str]] = set()
        for idx in list(where[pair]):
            syms = pieces[idx]
            f = freqs[idx]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
                where[p].discard(idx)
                changed.add(p)
            new_syms = _apply_merge(syms, left, right, merged)
            pieces[idx] = new_syms
            for p in zip(new_syms, new_syms[1:]):
                pair_counts[p] += f
                where[p].add(idx)
                changed.add(p)
        for p in changed:
            if pair_counts.get(p, 0) <= 0:
                pair_counts.pop(p, None)
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-pair_counts[p], p[0], p[1]))
    return merges


def train_vocab(
    corpus: Iterable[Document | str],
    num_merges: int,
    special_tokens: Sequence[str] = DEFAULT_SPECIAL_TOKENS,
) -> Vocabulary:
    """Learn a BPE vocabulary: 256 byte symbols + num_merges merges + specials.

    Training may stop before num_merges when no adjacent pair occurs at
    least twice.  Ties on frequency resolve to the lexicographically
    smallest (left, right) pair, so results are fully deterministic.
    """
    if num_merges < 0:
        raise ValueError(f"num_merges must be >= 0, got {num_merges}")
    alphabet = ByteAlphabet.default()
    piece_freqs: Counter[str] = Counter()
    empty = True
    for doc in corpus:
        empty = False
        text = doc.text if isinstance(doc, Document) else doc
        for piece in pre_split(text):
            piece_freqs[piece] += 1
    if empty:
        raise ValueError("training corpus is empty")
    merges = _greedy_merges(piece_freqs, num_merges, alphabet)
    return build_vocabulary(merges, special_tokens, alphabet)


def _merge_piece(vocab: Vocabulary, piece: str) -> list[str]:
    syms = _piece_symbols(piece, vocab.alphabet)
    ranks = vocab._ranks
    while len(syms) >= 2:
        best: tuple[str, str] | None = None
        best_rank = len(vocab.merges)
        for pair in zip(syms, syms[1:]):
            rank = ranks.get(pair)
            if rank is not None and rank < best_rank:
                best_rank = rank
                best = pair
        if best is None:
            break
        syms = _apply_merge(syms, best[0], best[1], best[0] + best[1])
    return syms


def encode(vocab: Vocabulary, text: str | bytes) -> list[int]:
    """Encode text (or raw bytes) to token ids.

    Within each pre-split piece the applicable merge with the lowest rank
    is applied repeatedly until none applies.  Never fails: byte-level
    coverage means there are no unknown tokens.
    """
    work = _to_work_text(text)
    if not work:
        return []
    ids: list[int] = []
    cache = vocab._piece_cache
    token_to_id = vocab.token_to_id
    for piece in pre_split(work):
        got = cache.get(piece)
        if got is None:
            got = tuple(token_to_id[s] for s in _merge_piece(vocab, piece))
            if len(cache) < _CACHE_LIMIT:
                cache[piece] = got
        ids.extend(got)
    return ids


def decode(
    vocab: Vocabulary, ids: Iterable[int], render_special: bool = False
) -> bytes:
    """Map token ids back to the exact byte string they encode.

    Special-token ids render as empty unless ``render_special`` is set, in
    which case their literal text is emitted.
    """
    id_to_token = vocab._id_to_token
    special = vocab.special_ids
    reverse = vocab.alphabet.reverse
    out = bytearray()
    for pos, token_id in enumerate(ids):
        if not 0 <= token_id < len(id_to_token):
            raise ValueError(
                f"token id {token_id} at position {pos} out of range "
                f"(vocabulary size {len(id_to_token)})"
            )
        if token_id in special:
            if render_special:
                out.extend(id_to_token[token_id].encode("utf-8"))
            continue
        for ch in id_to_token[token_id]:
            out.append(reverse[ch])
    return bytes(out)


def save_vocab(vocab: Vocabulary, directory: str | Path) -> None:
    """Write vocab.json (token -> id, id order) and merges.txt (rank order).

    Output is byte-for-byte stable for identical vocabularies.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_id = sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])
    payload = json.dumps(dict(by_id), ensure_ascii=True, separators=(",", ":"))
    (directory / VOCAB_FILE).write_text(payload + "\n", encoding="utf-8", newline="\n")
    lines = [MERGES_HEADER]
    lines.extend(f"{r.left} {r.right}" for r in vocab.merges)
    (directory / MERGES_FILE).write_text(
        "\n".join(lines) + "\n", encoding="utf-8", newline="\n"
    )


def load_vocab(directory: str | Path) -> Vocabulary:
    """Load a vocabulary saved by save_vocab; exact inverse including ids."""
    directory = Path(directory)
    vocab_path = directory / VOCAB_FILE
    merges_path = directory / MERGES_FILE
    for p in (vocab_path, merges_path):
        if not p.is_file():
            raise FileNotFoundError(f"missing vocabulary file: {p}")

    try:
        raw = json.loads(vocab_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise VocabFormatError(f"{vocab_path}: invalid JSON at line {exc.lineno}") from exc
    if not isinstance(raw, dict) or not all(
        isinstance(k, str) and isinstance(v, int) for k, v in raw.items()
    ):
        raise VocabFormatError(f"{vocab_path}: expected a token -> integer id object")
    token_to_id: dict[str, int] = raw

    merges: list[MergeRule] = []
    with open(merges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if lineno == 1:
                if not line.startswith("#version"):
                    raise VocabFormatError(
                        f"{merges_path}: line 1: expected '{MERGES_HEADER}' header"
                    )
                continue
            fields = line.split(" ")
            if len(fields) != 2 or not all(fields):
                raise VocabFormatError(
                    f"{merges_path}: line {lineno}: expected 2 fields"
                )
            left, right = fields
            for tok in (left, right, left + right):
                if tok not in token_to_id:
                    raise VocabFormatError(
                        f"{merges_path}: line {lineno}: unknown token {tok!r}"
                    )
            merges.append(MergeRule(left, right, len(merges)))

    n_special = len(token_to_id) - NUM_BYTE_SYMBOLS - len(merges)
    if n_special < 0:
        raise VocabFormatError(
            f"{vocab_path}: {len(token_to_id)} tokens cannot hold 256 byte "
            f"symbols plus {len(merges)} merges"
        )
    boundary = NUM_BYTE_SYMBOLS + len(merges)
    specials = [
        tok for tok, i in sorted(token_to_id.items(), key=lambda kv: kv[1]) if i >= boundary
    ]
    rebuilt = build_vocabulary(merges, specials)
    if rebuilt.token_to_id != token_to_id:
        raise VocabFormatError(
            f"{vocab_path}: token ids do not match the canonical layout "
            "(byte symbols 0..255, merge tokens in rank order, specials last)"
        )
    return rebuilt
