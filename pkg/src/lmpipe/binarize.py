"""Token-id binary dataset format plus fertility / size diagnostics.

Layout (little-endian throughout):

    magic    4 bytes  b"GOTB"
    version  u16      currently 1
    vocab    u64      fingerprint of the producing vocabulary
    count    u64      number of token ids in the payload
    payload  count * u32 token ids

Each document's ids are followed by the vocabulary's end-of-document id, so
document boundaries survive the flattening.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .bpe import Vocabulary, encode
from .corpus import Document

MAGIC = b"GOTB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
_WRITE_CHUNK = 1 << 16  # ids buffered per payload write


class DatasetFormatError(ValueError):
    """Raised when a binary dataset file is malformed or mismatched."""


def vocab_fingerprint(vocab: Vocabulary) -> int:
    """Stable 64-bit digest of the vocabulary's full token -> id mapping."""
    by_id = sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])
    payload = json.dumps(dict(by_id), ensure_ascii=True, separators=(",", ":"))
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class DatasetHeader:
    version: int
    vocab_fingerprint: int
    token_count: int

    @property
    def payload_bytes(self) -> int:
        return self.token_count * 4

    @property
    def file_bytes(self) -> int:
        return _HEADER.size + self.payload_bytes


def write_dataset(
    path: str | Path, vocab: Vocabulary, id_stream: Iterable[int]
) -> DatasetHeader:
    """Stream token ids to a dataset file; count is patched into the header."""
    path = Path(path)
    fingerprint = vocab_fingerprint(vocab)
    count = 0
    buf: list[int] = []
    vocab_size = vocab.size
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, fingerprint, 0))
        for token_id in id_stream:
            if not 0 <= token_id < vocab_size:
                raise ValueError(
                    f"token id {token_id} out of range for vocabulary of size {vocab_size}"
                )
            buf.append(token_id)
            count += 1
            if len(buf) >= _WRITE_CHUNK:
                fh.write(np.asarray(buf, dtype="<u4").tobytes())
                buf.clear()
        if buf:
            fh.write(np.asarray(buf, dtype="<u4").tobytes())
        fh.seek(0)
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, fingerprint, count))
    return DatasetHeader(FORMAT_VERSION, fingerprint, count)


def binarize(
    corpus: Iterable[Document | str], vocab: Vocabulary, path: str | Path
) -> DatasetHeader:
    """Encode a document stream and write it as one dataset file.

    Appends the end-of-document id after every document, empty ones
    included, so the number of end ids equals the number of documents.
    """
    end_id = vocab.end_id

    def ids() -> Iterator[int]:
        for doc in corpus:
            text = doc.text if isinstance(doc, Document) else doc
            yield from encode(vocab, text)
            yield end_id

    return write_dataset(path, vocab, ids())


def read_header(path: str | Path) -> DatasetHeader:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read(_HEADER.size)
    if len(blob) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, fingerprint, count = _HEADER.unpack(blob)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}"
        )
    expected = _HEADER.size + count * 4
    actual = path.stat().st_size
    if actual != expected:
        raise DatasetFormatError(
            f"{path}: file is {actual} bytes, header implies {expected}"
        )
    return DatasetHeader(version, fingerprint, count)


def read_dataset(
    path: str | Path, vocab: Vocabulary | None = None
) -> tuple[DatasetHeader, np.ndarray]:
    """Load header and payload; verifies the fingerprint when a vocab is given."""
    header = read_header(Path(path))
    if vocab is not None:
        expected = vocab_fingerprint(vocab)
        if header.vocab_fingerprint != expected:
            raise DatasetFormatError(
                f"{path}: vocabulary fingerprint {header.vocab_fingerprint:#018x} "
                f"does not match the supplied vocabulary ({expected:#018x})"
            )
    ids = np.fromfile(path, dtype="<u4", offset=_HEADER.size)
    if len(ids) != header.token_count:
        raise DatasetFormatError(
            f"{path}: payload holds {len(ids)} ids, header says {header.token_count}"
        )
    return header, ids


def iter_documents(path: str | Path, vocab: Vocabulary) -> Iterator[list[int]]:
    """Yield per-document id lists (end-of-document ids stripped)."""
    _, ids = read_dataset(path, vocab)
    end_id = vocab.end_id
    doc: list[int] = []
    for token_id in ids.tolist():
        if token_id == end_id:
            yield doc
            doc = []
        else:
            doc.append(token_id)
    if doc:
        yield doc


@dataclass(frozen=True)
class FertilityReport:
    """Tokens emitted per word / per byte over a document sample."""

    tokens: int
    words: int
    bytes: int

    @property
    def tokens_per_word(self) -> float | None:
        """None (not a division failure) when the sample has no words."""
        if self.words == 0:
            return None
        return self.tokens / self.words

    @property
    def tokens_per_byte(self) -> float | None:
        if self.bytes == 0:
            return None
        return self.tokens / self.bytes


def fertility(corpus: Iterable[Document | str], vocab: Vocabulary) -> FertilityReport:
    """Mean number of tokens emitted per whitespace-separated word.

    End-of-document separators are not counted; this measures the encoder
    only.  Words and bytes are counted as in corpus statistics.
    """
    tokens = 0
    words = 0
    nbytes = 0
    for doc in corpus:
        text = doc.text if isinstance(doc, Document) else doc
        tokens += len(encode(vocab, text))
        words += len(text.split())
        nbytes += len(text.encode("utf-8"))
    return FertilityReport(tokens=tokens, words=words, bytes=nbytes)


@dataclass(frozen=True)
class SizeComparison:
    """Payload size of dataset a relative to dataset b."""

    a_payload_bytes: int
    b_payload_bytes: int

    @property
    def ratio(self) -> float:
        return self.a_payload_bytes / self.b_payload_bytes

    @property
    def reduction(self) -> float:
        """Fraction saved by a over b; 0.4 means a is 40% smaller."""
        return 1.0 - self.ratio


def size_report(a: DatasetHeader, b: DatasetHeader) -> SizeComparison:
    """Compare payload sizes of two binarizations of the same raw corpus.

    Meaningful only when both datasets encode the same text under
    different vocabularies; that precondition is the caller's to keep
    (the fingerprints will differ by construction).
    """
    if b.token_count == 0:
        raise ValueError("reference dataset b has an empty payload; ratio undefined")
    return SizeComparison(
        a_payload_bytes=a.payload_bytes, b_payload_bytes=b.payload_bytes
    )
