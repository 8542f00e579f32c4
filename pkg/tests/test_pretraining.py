import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmpipe.binarize import DatasetFormatError
from lmpipe.bpe import byte_vocabulary
from lmpipe.pretraining import (
    KIND_KEEP,
    KIND_MASK,
    KIND_NONE,
    KIND_RANDOM,
    TARGET_IGNORE,
    BatchPlan,
    MaskingConfig,
    ScheduleConfig,
    apply_masking,
    learning_rate,
    lr_curve,
    masking_ids,
    pack_sequences,
    read_examples,
    training_budget,
    unpack_sequences,
    write_examples,
)


# ---------------------------------------------------------------- schedule


def test_lr_paper_endpoints():
    cfg = ScheduleConfig()
    assert learning_rate(10_000, cfg) == pytest.approx(4.0e-4, abs=1e-12)
    assert learning_rate(100_000, cfg) == pytest.approx(0.0, abs=1e-12)
    assert learning_rate(0, cfg) == pytest.approx(0.0, abs=1e-12)


def test_lr_linear_interpolation_both_segments():
    cfg = ScheduleConfig()
    assert learning_rate(5_000, cfg) == pytest.approx(2.0e-4, abs=1e-12)
    assert learning_rate(55_000, cfg) == pytest.approx(2.0e-4, abs=1e-12)


def test_lr_continuous_at_warmup():
    cfg = ScheduleConfig(warmup_steps=100, total_steps=1000, peak_lr=0.3, decay_power=2.5)
    below = learning_rate(99, cfg)
    at = learning_rate(100, cfg)
    above = learning_rate(101, cfg)
    assert below < at and above < at
    assert at == cfg.peak_lr


def test_lr_monotone_on_grid():
    cfg = ScheduleConfig(decay_power=3.0)
    values = [learning_rate(s, cfg) for s in range(0, cfg.total_steps + 1, 100)]
    warm = cfg.warmup_steps // 100
    assert all(a <= b for a, b in zip(values[: warm + 1], values[1 : warm + 1]))
    assert all(a >= b for a, b in zip(values[warm:], values[warm + 1 :]))


def test_lr_clamps_past_total_with_warning():
    cfg = ScheduleConfig(end_lr=1e-5, peak_lr=1e-3)
    with pytest.warns(UserWarning):
        assert learning_rate(cfg.total_steps + 5, cfg) == cfg.end_lr


def test_lr_rejects_negative_step():
    with pytest.raises(ValueError):
        learning_rate(-1, ScheduleConfig())


def test_lr_nonzero_end():
    cfg = ScheduleConfig(warmup_steps=10, total_steps=100, peak_lr=1.0, end_lr=0.25)
    assert learning_rate(100, cfg) == 0.25
    assert learning_rate(10, cfg) == 1.0


def test_schedule_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(warmup_steps=0)
    with pytest.raises(ValueError):
        ScheduleConfig(warmup_steps=100, total_steps=100)
    with pytest.raises(ValueError):
        ScheduleConfig(peak_lr=0.0)
    with pytest.raises(ValueError):
        ScheduleConfig(decay_power=0.5)


def test_lr_curve_includes_endpoints():
    cfg = ScheduleConfig(warmup_steps=10, total_steps=100, peak_lr=1.0)
    points = dict(lr_curve(cfg, points=11))
    assert points[0] == 0.0 and points[100] == 0.0
    full = list(lr_curve(cfg))
    assert len(full) == 101


# ----------------------------------------------------------------- packing


PAD = 99


def blocks(ids, length, **kw):
    return list(pack_sequences(ids, length, pad_id=PAD, **kw))


def test_pack_single_block_with_pad():
    assert blocks(list(range(5)), 6) == [[0, 1, 2, 3, 4, PAD]]


def test_pack_exact_fit():
    got = blocks(list(range(12)), 6)
    assert got == [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11]]


def test_pack_crosses_document_boundaries():
    sep = 7
    ids = [1, 1, 1, 1, 1, sep, 2, 2, 2, 2, sep]  # docs of 5 and 4 plus separators
    got = blocks(ids, 6)
    assert got == [[1, 1, 1, 1, 1, sep], [2, 2, 2, 2, sep, PAD]]


def test_pack_respect_boundaries_flushes_at_separator():
    sep = 7
    ids = [1, 1, sep, 2, 2, 2, sep]
    got = blocks(ids, 4, respect_boundaries=True, boundary_id=sep)
    assert got == [[1, 1, sep, PAD], [2, 2, 2, sep]]
    for b in got:
        inner = [x for x in b if x != PAD]
        assert inner.count(sep) <= 1 or inner[-1] == sep


def test_pack_respect_boundaries_requires_separator_id():
    with pytest.raises(ValueError):
        blocks([1], 4, respect_boundaries=True)


def test_pack_rejects_short_length():
    with pytest.raises(ValueError):
        blocks([1, 2], 1)


@settings(max_examples=100)
@given(st.lists(st.integers(0, 50), max_size=200), st.integers(2, 17))
def test_pack_unpack_identity(ids, length):
    got = list(unpack_sequences(pack_sequences(ids, length, pad_id=PAD), pad_id=PAD))
    assert got == ids
    for block in pack_sequences(ids, length, pad_id=PAD):
        assert len(block) == length


@settings(max_examples=60)
@given(st.lists(st.integers(0, 50), max_size=120), st.integers(2, 9))
def test_pack_unpack_identity_boundary_mode(ids, length):
    got = list(
        unpack_sequences(
            pack_sequences(ids, length, pad_id=PAD, respect_boundaries=True, boundary_id=7),
            pad_id=PAD,
        )
    )
    assert got == ids


# ----------------------------------------------------------------- masking


def _mask(block, cfg=None, call_index=0, vocab_size=1000, specials=frozenset({0, 997, 998, 999})):
    cfg = cfg or MaskingConfig(seed=5)
    return apply_masking(block, vocab_size, specials, cfg, call_index=call_index, mask_id=999)


def test_masking_config_validation():
    with pytest.raises(ValueError):
        MaskingConfig(mask_rate=0.0)
    with pytest.raises(ValueError):
        MaskingConfig(mask_rate=1.0)
    with pytest.raises(ValueError):
        MaskingConfig(mask_token_share=0.9)  # shares no longer sum to 1


def test_all_special_block_is_untouched():
    block = [998] * 64
    ex = _mask(block)
    assert ex.input_ids.tolist() == block
    assert (ex.corruption_kinds == KIND_NONE).all()
    assert (ex.target_ids == TARGET_IGNORE).all()


def test_target_marks_exactly_corrupted_positions():
    block = list(range(1, 513))
    ex = _mask(block)
    corrupted = ex.corruption_kinds != KIND_NONE
    assert ((ex.target_ids != TARGET_IGNORE) == corrupted).all()
    # reconstruction: originals from targets at corrupted positions, inputs elsewhere
    rebuilt = np.where(corrupted, ex.target_ids, ex.input_ids)
    assert rebuilt.tolist() == block


def test_masking_respects_kind_semantics():
    block = list(range(1, 2049))
    ex = _mask(block)
    original = np.asarray(block)
    assert (ex.input_ids[ex.corruption_kinds == KIND_MASK] == 999).all()
    keep = ex.corruption_kinds == KIND_KEEP
    assert (ex.input_ids[keep] == original[keep]).all()
    rnd = ex.corruption_kinds == KIND_RANDOM
    assert not np.isin(ex.input_ids[rnd], [0, 997, 998, 999]).any()
    assert (ex.target_ids[rnd] == original[rnd]).all()


def test_specials_never_corrupted():
    block = ([0] + list(range(1, 15)) + [998]) * 40
    ex = _mask(block)
    special_pos = np.isin(np.asarray(block), [0, 997, 998, 999])
    assert (ex.corruption_kinds[special_pos] == KIND_NONE).all()
    assert (ex.input_ids[special_pos] == np.asarray(block)[special_pos]).all()


def test_masking_deterministic_per_call_index():
    block = list(range(1, 301))
    a = _mask(block, call_index=4)
    b = _mask(block, call_index=4)
    assert (a.input_ids == b.input_ids).all()
    assert (a.corruption_kinds == b.corruption_kinds).all()


def test_masking_differs_across_call_indices():
    block = list(range(1, 1001))
    a = _mask(block, call_index=0)
    b = _mask(block, call_index=1)
    assert (a.corruption_kinds != b.corruption_kinds).any()


def test_masking_differs_across_seeds():
    block = list(range(1, 1001))
    a = _mask(block, cfg=MaskingConfig(seed=1))
    b = _mask(block, cfg=MaskingConfig(seed=2))
    assert (a.corruption_kinds != b.corruption_kinds).any()


def test_mask_id_must_be_special():
    with pytest.raises(ValueError):
        apply_masking([1, 2], 100, frozenset({99}), MaskingConfig(), mask_id=50)


def test_masking_ids_helper():
    vocab = byte_vocabulary()
    size, specials = masking_ids(vocab)
    assert size == vocab.size
    assert max(specials) == vocab.mask_id  # mask holds the highest id


# ------------------------------------------------------------------ budget


def test_budget_default_arithmetic():
    budget = training_budget(BatchPlan())
    assert budget.tokens_per_step == 8_192 * 512 == 4_194_304
    assert budget.total_tokens == 419_430_400_000
    assert budget.total_tokens == pytest.approx(4.19e11, rel=2e-3)


def test_budget_minimal_plan():
    budget = training_budget(BatchPlan(1, 1, 1))
    assert budget.total_tokens == 1


def test_budget_epochs():
    budget = training_budget(BatchPlan(2, 4, 10))  # 80 tokens total
    assert budget.epochs(20) == 4.0
    with pytest.raises(ValueError):
        budget.epochs(0)


def test_batch_plan_validation():
    with pytest.raises(ValueError):
        BatchPlan(0, 1, 1)


# ----------------------------------------------------------- examples file


def test_examples_file_round_trip(tmp_path):
    vocab = byte_vocabulary()
    size, specials = masking_ids(vocab)
    cfg = MaskingConfig(seed=9)
    blocks_in = [list(range(10, 26)), list(range(40, 56))]
    examples = [
        apply_masking(b, size, specials, cfg, call_index=i) for i, b in enumerate(blocks_in)
    ]
    path = tmp_path / "ex.bin"
    header = write_examples(path, vocab, examples, sequence_length=16)
    assert header.example_count == 2

    got_header, inputs, targets, kinds = read_examples(path, vocab)
    assert got_header == header
    for i, ex in enumerate(examples):
        assert inputs[i].tolist() == ex.input_ids.tolist()
        assert targets[i].tolist() == ex.target_ids.tolist()
        assert kinds[i].tolist() == ex.corruption_kinds.tolist()
    assert (targets[kinds == KIND_NONE] == TARGET_IGNORE).all()


def test_examples_file_rejects_wrong_length(tmp_path):
    vocab = byte_vocabulary()
    size, specials = masking_ids(vocab)
    ex = apply_masking(list(range(8)), size, specials, MaskingConfig())
    with pytest.raises(ValueError):
        write_examples(tmp_path / "ex.bin", vocab, [ex], sequence_length=16)


def test_examples_file_fingerprint_check(tmp_path):
    from lmpipe.bpe import train_vocab

    vocab = byte_vocabulary()
    size, specials = masking_ids(vocab)
    ex = apply_masking(list(range(8)), size, specials, MaskingConfig())
    path = tmp_path / "ex.bin"
    write_examples(path, vocab, [ex], sequence_length=8)
    with pytest.raises(DatasetFormatError):
        read_examples(path, train_vocab(["abab"], 1))


def test_examples_file_truncation_detected(tmp_path):
    vocab = byte_vocabulary()
    size, specials = masking_ids(vocab)
    ex = apply_masking(list(range(8)), size, specials, MaskingConfig())
    path = tmp_path / "ex.bin"
    write_examples(path, vocab, [ex], sequence_length=8)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DatasetFormatError):
        read_examples(path)
