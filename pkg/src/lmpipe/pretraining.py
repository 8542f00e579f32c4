"""Pre-training schedule math and masked-language-model example construction.

No neural network here: learning-rate values, fixed-length packing of token
id streams, dynamic masking, and token/step budget accounting, plus a binary
container for masked examples.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bpe import Vocabulary
from .binarize import DatasetFormatError, vocab_fingerprint

TARGET_IGNORE = -1

# Per-position corruption tags.
KIND_NONE = 0
KIND_MASK = 1
KIND_RANDOM = 2
KIND_KEEP = 3

EXAMPLES_MAGIC = b"GOTM"
EXAMPLES_VERSION = 1
_EX_HEADER = struct.Struct("<4sHQQI")
_IGNORE_U32 = 0xFFFFFFFF  # two's-complement -1 in the u32 sections


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup followed by polynomial decay of remaining progress."""

    warmup_steps: int = 10_000
    total_steps: int = 100_000
    peak_lr: float = 4.0e-4
    decay_power: float = 1.0
    end_lr: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps} / {self.total_steps}"
            )
        if not self.peak_lr > self.end_lr >= 0:
            raise ValueError(
                f"need peak_lr > end_lr >= 0, got {self.peak_lr} / {self.end_lr}"
            )
        if self.decay_power < 1:
            raise ValueError(f"decay_power must be >= 1, got {self.decay_power}")


@dataclass(frozen=True)
class MaskingConfig:
    mask_rate: float = 0.15
    mask_token_share: float = 0.8
    random_token_share: float = 0.1
    keep_share: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.mask_rate < 1:
            raise ValueError(f"mask_rate must be in (0, 1), got {self.mask_rate}")
        total = self.mask_token_share + self.random_token_share + self.keep_share
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"shares must sum to 1, got {total}")
        if min(self.mask_token_share, self.random_token_share, self.keep_share) < 0:
            raise ValueError("shares must be non-negative")


@dataclass
class MaskedExample:
    """One fixed-length masked-LM example.

    target_ids holds the original id at corrupted positions and
    TARGET_IGNORE everywhere else; corruption_kinds tags every position
    with one of the KIND_* constants.
    """

    input_ids: np.ndarray
    target_ids: np.ndarray
    corruption_kinds: np.ndarray

    def __post_init__(self) -> None:
        if not (len(self.input_ids) == len(self.target_ids) == len(self.corruption_kinds)):
            raise ValueError("input_ids, target_ids, corruption_kinds must share a length")

    @property
    def corrupted_positions(self) -> np.ndarray:
        return np.flatnonzero(self.corruption_kinds != KIND_NONE)


@dataclass(frozen=True)
class BatchPlan:
    sequences_per_batch: int = 8_192
    sequence_length: int = 512
    total_steps: int = 100_000

    def __post_init__(self) -> None:
        if min(self.sequences_per_batch, self.sequence_length, self.total_steps) <= 0:
            raise ValueError("all BatchPlan fields must be positive")

    @property
    def tokens_per_step(self) -> int:
        return self.sequences_per_batch * self.sequence_length


@dataclass(frozen=True)
class TrainingBudget:
    tokens_per_step: int
    total_tokens: int

    def epochs(self, corpus_tokens: int) -> float:
        """How many passes over a corpus of the given size the budget implies."""
        if corpus_tokens <= 0:
            raise ValueError(f"corpus_tokens must be positive, got {corpus_tokens}")
        return self.total_tokens / corpus_tokens


def learning_rate(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate at an integer step.

    Linear from 0 to peak_lr over warmup_steps, then
    end_lr + (peak_lr - end_lr) * (1 - progress)^decay_power where progress
    runs over the decay segment.  Endpoints are exact.  Steps past
    total_steps clamp to end_lr with a warning.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step > cfg.total_steps:
        warnings.warn(
            f"step {step} is past total_steps {cfg.total_steps}; clamping to end_lr",
            stacklevel=2,
        )
        return cfg.end_lr
    if step <= cfg.warmup_steps:
        return cfg.peak_lr * (step / cfg.warmup_steps)
    if step == cfg.total_steps:
        return cfg.end_lr
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.end_lr + (cfg.peak_lr - cfg.end_lr) * (1.0 - progress) ** cfg.decay_power


def lr_curve(cfg: ScheduleConfig, points: int | None = None) -> Iterator[tuple[int, float]]:
    """(step, lr) pairs over [0, total_steps]; full resolution by default."""
    if points is None:
        steps: Iterable[int] = range(cfg.total_steps + 1)
    else:
        if points < 2:
            raise ValueError("points must be >= 2")
        steps = sorted({round(i * cfg.total_steps / (points - 1)) for i in range(points)})
    for s in steps:
        yield s, learning_rate(s, cfg)


def pack_sequences(
    ids: Iterable[int],
    length: int,
    pad_id: int,
    respect_boundaries: bool = False,
    boundary_id: int | None = None,
) -> Iterator[list[int]]:
    """Pack an id stream into fixed-length blocks.

    Default mode packs greedily across document boundaries (separators stay
    in the stream).  With respect_boundaries, the current block is flushed
    with padding after each boundary_id so no block spans two documents.
    Dropping pad ids from the concatenated blocks recovers the input, so the
    input must not itself contain pad_id.
    """
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    if respect_boundaries and boundary_id is None:
        raise ValueError("respect_boundaries requires boundary_id")
    block: list[int] = []
    for token_id in ids:
        block.append(token_id)
        if len(block) == length:
            yield block
            block = []
        elif respect_boundaries and token_id == boundary_id:
            block.extend([pad_id] * (length - len(block)))
            yield block
            block = []
    if block:
        block.extend([pad_id] * (length - len(block)))
        yield block


def unpack_sequences(blocks: Iterable[Sequence[int]], pad_id: int) -> Iterator[int]:
    """Inverse of pack_sequences: concatenate blocks and drop pad ids."""
    for block in blocks:
        for token_id in block:
            if token_id != pad_id:
                yield token_id


def apply_masking(
    block: Sequence[int] | np.ndarray,
    vocab_size: int,
    special_ids: frozenset[int] | set[int],
    cfg: MaskingConfig,
    call_index: int = 0,
    mask_id: int | None = None,
) -> MaskedExample:
    """Corrupt a block of token ids for masked-LM training.

    Every non-special position is independently selected with probability
    mask_rate; a selected position becomes the mask id (mask_token_share),
    a uniformly random non-special id (random_token_share), or stays as is
    (keep_share).  Randomness is derived from (cfg.seed, call_index), so
    distinct call indices give fresh corruption patterns while the whole
    procedure stays reproducible.

    mask_id defaults to max(special_ids), which matches the default special
    layout where the mask token holds the highest id.
    """
    if not special_ids:
        raise ValueError("special_ids must contain at least the mask id")
    if mask_id is None:
        mask_id = max(special_ids)
    if mask_id not in special_ids:
        raise ValueError(f"mask id {mask_id} is not one of the special ids")
    if not 0 <= mask_id < vocab_size:
        raise ValueError(f"mask id {mask_id} out of range for vocab size {vocab_size}")

    arr = np.asarray(block, dtype=np.int64)
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, call_index])
    n = len(arr)

    special_arr = np.fromiter(special_ids, dtype=np.int64)
    is_special = np.isin(arr, special_arr)

    u_select = rng.random(n)
    u_kind = rng.random(n)
    non_special_pool = np.setdiff1d(np.arange(vocab_size, dtype=np.int64), special_arr)
    if len(non_special_pool) == 0:
        random_draw = np.zeros(n, dtype=np.int64)
        can_randomize = False
    else:
        random_draw = non_special_pool[rng.integers(0, len(non_special_pool), size=n)]
        can_randomize = True

    selected = (u_select < cfg.mask_rate) & ~is_special
    kinds = np.full(n, KIND_NONE, dtype=np.int64)
    mask_cut = cfg.mask_token_share
    random_cut = cfg.mask_token_share + cfg.random_token_share
    kinds[selected & (u_kind < mask_cut)] = KIND_MASK
    kinds[selected & (u_kind >= mask_cut) & (u_kind < random_cut)] = KIND_RANDOM
    kinds[selected & (u_kind >= random_cut)] = KIND_KEEP
    if not can_randomize and np.any(kinds == KIND_RANDOM):
        raise ValueError("no non-special ids available for random replacement")

    input_ids = arr.copy()
    input_ids[kinds == KIND_MASK] = mask_id
    input_ids[kinds == KIND_RANDOM] = random_draw[kinds == KIND_RANDOM]

    target_ids = np.full(n, TARGET_IGNORE, dtype=np.int64)
    target_ids[selected] = arr[selected]
    return MaskedExample(input_ids=input_ids, target_ids=target_ids, corruption_kinds=kinds)


def masking_ids(vocab: Vocabulary) -> tuple[int, frozenset[int]]:
    """(vocab_size, special_ids) arguments for apply_masking.

    The mask token holds the highest id in the default special layout,
    which is what apply_masking's max(special_ids) convention relies on.
    """
    return vocab.size, vocab.special_ids


def training_budget(plan: BatchPlan) -> TrainingBudget:
    """Token/step accounting implied by a batch plan."""
    tokens_per_step = plan.tokens_per_step
    return TrainingBudget(
        tokens_per_step=tokens_per_step,
        total_tokens=tokens_per_step * plan.total_steps,
    )


@dataclass(frozen=True)
class ExamplesHeader:
    version: int
    vocab_fingerprint: int
    example_count: int
    sequence_length: int


def write_examples(
    path: str | Path,
    vocab: Vocabulary,
    examples: Iterable[MaskedExample],
    sequence_length: int,
) -> ExamplesHeader:
    """Write masked examples as three parallel u32 sections.

    Section order: all input rows, all target rows, all kind rows; targets
    store TARGET_IGNORE as 0xFFFFFFFF.  The example count is patched into
    the header after streaming, and the section layout requires buffering
    targets and kinds until the inputs section is complete.
    """
    path = Path(path)
    fingerprint = vocab_fingerprint(vocab)
    targets_buf: list[np.ndarray] = []
    kinds_buf: list[np.ndarray] = []
    count = 0
    with open(path, "wb") as fh:
        fh.write(_EX_HEADER.pack(EXAMPLES_MAGIC, EXAMPLES_VERSION, fingerprint, 0, sequence_length))
        for ex in examples:
            if len(ex.input_ids) != sequence_length:
                raise ValueError(
                    f"example {count} has length {len(ex.input_ids)}, "
                    f"expected {sequence_length}"
                )
            fh.write(np.asarray(ex.input_ids, dtype="<u4").tobytes())
            tgt = np.asarray(ex.target_ids, dtype=np.int64)
            targets_buf.append(np.where(tgt == TARGET_IGNORE, _IGNORE_U32, tgt).astype("<u4"))
            kinds_buf.append(np.asarray(ex.corruption_kinds, dtype="<u4"))
            count += 1
        for row in targets_buf:
            fh.write(row.tobytes())
        for row in kinds_buf:
            fh.write(row.tobytes())
        fh.seek(0)
        fh.write(
            _EX_HEADER.pack(EXAMPLES_MAGIC, EXAMPLES_VERSION, fingerprint, count, sequence_length)
        )
    return ExamplesHeader(EXAMPLES_VERSION, fingerprint, count, sequence_length)


def read_examples(
    path: str | Path, vocab: Vocabulary | None = None
) -> tuple[ExamplesHeader, np.ndarray, np.ndarray, np.ndarray]:
    """Load (header, inputs, targets, kinds); arrays are [count, seq_len]."""
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read(_EX_HEADER.size)
        if len(blob) < _EX_HEADER.size:
            raise DatasetFormatError(f"{path}: truncated header ({len(blob)} bytes)")
        magic, version, fingerprint, count, seq_len = _EX_HEADER.unpack(blob)
        if magic != EXAMPLES_MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {EXAMPLES_MAGIC!r}")
        if version != EXAMPLES_VERSION:
            raise DatasetFormatError(
                f"{path}: unsupported version {version}, expected {EXAMPLES_VERSION}"
            )
        if vocab is not None:
            expected = vocab_fingerprint(vocab)
            if fingerprint != expected:
                raise DatasetFormatError(
                    f"{path}: vocabulary fingerprint {fingerprint:#018x} does not "
                    f"match the supplied vocabulary ({expected:#018x})"
                )
        section = count * seq_len
        raw = np.fromfile(fh, dtype="<u4", count=3 * section)
    if len(raw) != 3 * section:
        raise DatasetFormatError(
            f"{path}: payload holds {len(raw)} ids, header implies {3 * section}"
        )
    header = ExamplesHeader(version, fingerprint, count, seq_len)
    inputs = raw[:section].astype(np.int64).reshape(count, seq_len)
    targets = raw[section : 2 * section].astype(np.int64).reshape(count, seq_len)
    targets[targets == _IGNORE_U32] = TARGET_IGNORE
    kinds = raw[2 * section :].astype(np.int64).reshape(count, seq_len)
    return header, inputs, targets, kinds
