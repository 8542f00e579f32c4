"""Streaming operations on document-per-line text corpora.

A corpus is a plain UTF-8 text file with one document per line (LF line
endings, CR stripped if present).  Everything here is written to run in
constant memory with respect to corpus size: multi-GB files are processed
line by line, never loaded whole.
"""
from __future__ import annotations

import heapq
import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class CorpusDecodeError(ValueError):
    """Invalid UTF-8 in a corpus opened in strict mode."""


@dataclass(frozen=True)
class Document:
    """One corpus line. ``text`` never contains a newline."""

    text: str
    index: int


@dataclass(frozen=True)
class CorpusStats:
    """Document / word / payload-byte counts for a corpus.

    Words are maximal runs of non-whitespace code points; bytes are UTF-8
    payload bytes excluding line terminators.  Stats merge componentwise,
    so shard counts can be added in any grouping.
    """

    documents: int = 0
    words: int = 0
    bytes: int = 0

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(
            documents=self.documents + other.documents,
            words=self.words + other.words,
            bytes=self.bytes + other.bytes,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Parameters for a random train/validation split."""

    train_fraction: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


class FileCorpus:
    """Re-iterable stream of Documents backed by a file.

    Each iteration reopens the file, so two-pass algorithms (stats then
    sample) work without buffering the corpus in memory.
    """

    def __init__(self, path: str | Path, errors: str = "strict"):
        if errors not in ("strict", "replace"):
            raise ValueError(f"errors must be 'strict' or 'replace', got {errors!r}")
        self.path = Path(path)
        self.errors = errors
        if not self.path.is_file():
            raise FileNotFoundError(f"corpus file not found: {self.path}")

    def __iter__(self) -> Iterator[Document]:
        offset = 0
        with open(self.path, "rb") as fh:
            for index, raw in enumerate(fh):
                line = raw.rstrip(b"\n").rstrip(b"\r")
                try:
                    text = line.decode("utf-8")
                except UnicodeDecodeError as exc:
                    if self.errors == "strict":
                        raise CorpusDecodeError(
                            f"{self.path}: invalid UTF-8 at byte offset "
                            f"{offset + exc.start} (line {index + 1})"
                        ) from exc
                    text = line.decode("utf-8", errors="replace")
                    logger.warning(
                        "%s: replaced invalid UTF-8 on line %d", self.path, index + 1
                    )
                yield Document(text, index)
                offset += len(raw)

    def __repr__(self) -> str:
        return f"FileCorpus({str(self.path)!r}, errors={self.errors!r})"


def load_corpus(path: str | Path, errors: str = "strict") -> FileCorpus:
    """Open a document-per-line corpus for streaming.

    ``errors='strict'`` (default) raises on invalid UTF-8 with the byte
    offset; ``errors='replace'`` substitutes U+FFFD and logs a warning.
    """
    return FileCorpus(path, errors=errors)


def _doc_bytes(text: str) -> int:
    return len(text.encode("utf-8"))


def corpus_stats(docs: Iterable[Document]) -> CorpusStats:
    """Count documents, whitespace-delimited words, and payload bytes."""
    documents = words = nbytes = 0
    for doc in docs:
        documents += 1
        words += len(doc.text.split())
        nbytes += _doc_bytes(doc.text)
    return CorpusStats(documents=documents, words=words, bytes=nbytes)


def _shard_stats(path: Path, start: int, end: int, errors: str) -> CorpusStats:
    # [start, end) is aligned so that start sits at a line beginning and the
    # line containing end-1 is fully inside the shard.
    documents = words = nbytes = 0
    with open(path, "rb") as fh:
        fh.seek(start)
        pos = start
        while pos < end:
            raw = fh.readline()
            if not raw:
                break
            pos += len(raw)
            line = raw.rstrip(b"\n").rstrip(b"\r")
            text = line.decode("utf-8", errors="replace" if errors == "replace" else "strict")
            documents += 1
            words += len(text.split())
            nbytes += len(line)
    return CorpusStats(documents, words, nbytes)


def stats_path(path: str | Path, threads: int = 1, errors: str = "strict") -> CorpusStats:
    """corpus_stats over a file, optionally sharded across threads.

    Shards are byte ranges aligned to line boundaries; per-shard stats are
    merged with the associative CorpusStats sum, so the result is identical
    for any thread count.
    """
    corpus = load_corpus(path, errors=errors)
    if threads <= 1:
        return corpus_stats(corpus)

    size = corpus.path.stat().st_size
    if size == 0:
        return CorpusStats()
    # Align shard boundaries to the next newline.
    cuts = [0]
    with open(corpus.path, "rb") as fh:
        for k in range(1, threads):
            target = size * k // threads
            if target <= cuts[-1]:
                continue
            fh.seek(target)
            fh.readline()
            boundary = fh.tell()
            if cuts[-1] < boundary < size:
                cuts.append(boundary)
    cuts.append(size)

    total = CorpusStats()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(_shard_stats, corpus.path, lo, hi, errors)
            for lo, hi in zip(cuts, cuts[1:])
        ]
        for fut in futures:
            total = total + fut.result()
    return total


def _total_bytes(docs: Iterable[Document]) -> int:
    return sum(_doc_bytes(d.text) for d in docs)


def _sample_known_total(
    docs: Iterable[Document], byte_budget: int, seed: int, total_bytes: int
) -> Iterator[Document]:
    # Sequential Bernoulli selection whose rate adapts to the remaining
    # budget/bytes ratio (initially min(1, budget/total)).  A document is
    # force-taken whenever skipping it would leave fewer remaining bytes
    # than remaining budget; that guarantees the output lands in
    # [budget, budget + max document size) before the stream runs out.
    rng = random.Random(seed)
    remaining_budget = byte_budget
    remaining_total = total_bytes
    for doc in docs:
        size = _doc_bytes(doc.text)
        if remaining_total - size < remaining_budget:
            take = True
        else:
            take = rng.random() < remaining_budget / remaining_total
        remaining_total -= size
        if take:
            yield doc
            remaining_budget -= size
            if remaining_budget <= 0:
                break


def _sample_reservoir(
    docs: Iterable[Document], byte_budget: int, seed: int
) -> Iterator[Document]:
    # Byte-weighted reservoir for single-pass streams of unknown total size:
    # every document gets a uniform priority; we keep the lowest-priority set
    # whose byte total still covers the budget, then cut it at the budget.
    rng = random.Random(seed)
    heap: list[tuple[float, int, Document]] = []  # (-priority, index, doc)
    kept_bytes = 0
    total_bytes = 0
    for doc in docs:
        size = _doc_bytes(doc.text)
        total_bytes += size
        priority = rng.random()
        heapq.heappush(heap, (-priority, doc.index, doc))
        kept_bytes += size
        while heap and kept_bytes - _doc_bytes(heap[0][2].text) >= byte_budget:
            _, _, evicted = heapq.heappop(heap)
            kept_bytes -= _doc_bytes(evicted.text)

    if total_bytes < byte_budget:
        logger.warning(
            "byte budget %d exceeds corpus size %d; returning entire corpus",
            byte_budget,
            total_bytes,
        )
    candidates = sorted(((-neg, doc) for neg, _, doc in heap), key=lambda t: t[0])
    chosen: list[Document] = []
    acc = 0
    for _, doc in candidates:
        chosen.append(doc)
        acc += _doc_bytes(doc.text)
        if acc >= byte_budget:
            break
    chosen.sort(key=lambda d: d.index)
    yield from chosen


def sample_documents(
    docs: Iterable[Document],
    byte_budget: int,
    seed: int,
    total_bytes: int | None = None,
) -> Iterator[Document]:
    """Select a random subset of whole documents totalling ~byte_budget bytes.

    Output preserves input order and stops with the first document that
    reaches or exceeds the budget.  Deterministic for a fixed (stream,
    budget, seed).  When the total byte count is known (re-iterable input,
    or ``total_bytes`` given) a single adaptive-rate pass is used; otherwise
    a byte-weighted reservoir buffers roughly ``byte_budget`` bytes.
    """
    if byte_budget <= 0:
        raise ValueError(f"byte_budget must be positive, got {byte_budget}")

    if total_bytes is None:
        if isinstance(docs, (FileCorpus, Sequence)):
            total_bytes = _total_bytes(docs)
        else:
            return _sample_reservoir(docs, byte_budget, seed)
    if byte_budget > total_bytes:
        logger.warning(
            "byte budget %d exceeds corpus size %d; returning entire corpus",
            byte_budget,
            total_bytes,
        )
    return _sample_known_total(docs, byte_budget, seed, total_bytes)


def split_train_validation(
    items: Sequence[T], spec: SplitSpec
) -> tuple[list[T], list[T]]:
    """Randomly partition ``items`` into (train, validation).

    Train size is round(train_fraction * n), clamped so both sides stay
    non-empty.  Assignment is a seeded shuffle of indices; each side keeps
    the original relative order.
    """
    n = len(items)
    if n < 2:
        raise ValueError(
            f"cannot split {n} item(s) into two non-empty parts; need at least 2"
        )
    k = int(math.floor(spec.train_fraction * n + 0.5))
    k = max(1, min(n - 1, k))
    indices = list(range(n))
    random.Random(spec.seed).shuffle(indices)
    train_idx = sorted(indices[:k])
    val_idx = sorted(indices[k:])
    return [items[i] for i in train_idx], [items[i] for i in val_idx]
