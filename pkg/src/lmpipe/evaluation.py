"""Downstream-task evaluation: tagged-corpus parsing, span and class F1,
and the best-of-N run selection rule.

Metrics are count-based and pure: every score carries its tp/fp/fn so
results can be merged associatively or re-derived by hand.
"""
from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

log = logging.getLogger(__name__)

_TAG_RE = re.compile(r"^(O|[BI]-.+)$")

OUTER = "outer"
INNER = "inner"


class EvalParseError(ValueError):
    """Malformed evaluation data file; message carries the line number."""


@dataclass(frozen=True)
class SpanAnnotation:
    start: int  # token index, inclusive
    end: int  # token index, exclusive
    label: str
    level: str = OUTER

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"need 0 <= start < end, got [{self.start}, {self.end})")
        if not self.label:
            raise ValueError("label must be non-empty")


@dataclass(frozen=True)
class TaggedSentence:
    tokens: tuple[str, ...]
    outer_tags: tuple[str, ...]
    inner_tags: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.outer_tags) != len(self.tokens):
            raise ValueError(
                f"{len(self.outer_tags)} outer tags for {len(self.tokens)} tokens"
            )
        if self.inner_tags is not None and len(self.inner_tags) != len(self.tokens):
            raise ValueError(
                f"{len(self.inner_tags)} inner tags for {len(self.tokens)} tokens"
            )


@dataclass(frozen=True)
class PrfScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PrfScore":
        """Precision 1 when nothing was predicted, recall 1 when nothing was
        gold; f1 = 0 when p + r = 0.  Keeps the identities total."""
        if min(tp, fp, fn) < 0:
            raise ValueError("counts must be non-negative")
        precision = tp / (tp + fp) if tp + fp > 0 else 1.0
        recall = tp / (tp + fn) if tp + fn > 0 else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    validation_score: float
    test_score: float

    def __post_init__(self) -> None:
        for name, value in (("validation", self.validation_score), ("test", self.test_score)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} score must be in [0, 1], got {value}")


def normalize_bio(tags: Sequence[str]) -> tuple[list[str], int]:
    """Repair a tag sequence to strict BIO; returns (tags, repair count).

    An I-X that does not continue a B-X/I-X run of the same class is
    promoted to B-X.  This also converts IOB1-style input, where entities
    may open with I-X, into BIO.
    """
    fixed: list[str] = []
    repairs = 0
    prev_class: str | None = None
    for tag in tags:
        if not _TAG_RE.match(tag):
            raise ValueError(f"malformed tag {tag!r}, expected O or B-/I-<class>")
        if tag.startswith("I-") and tag[2:] != prev_class:
            fixed.append("B-" + tag[2:])
            repairs += 1
        else:
            fixed.append(tag)
        prev_class = None if tag == "O" else tag[2:]
    return fixed, repairs


def _line_stream(source: str | Path | Iterable[str]) -> Iterator[tuple[int, str]]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            for i, line in enumerate(fh, 1):
                yield i, line.rstrip("\n").rstrip("\r")
    else:
        for i, line in enumerate(source, 1):
            yield i, line.rstrip("\n").rstrip("\r")


def parse_conll(source: str | Path | Iterable[str]) -> list[TaggedSentence]:
    """Parse CoNLL column format: one token per line, NER tag last,
    blank-line sentence breaks, -DOCSTART- lines skipped.

    Input tags are normalized to strict BIO; repairs are logged.
    """
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[str] = []
    repairs = 0

    def flush() -> None:
        nonlocal repairs, tokens, tags
        if tokens:
            fixed, n = normalize_bio(tags)
            repairs += n
            sentences.append(TaggedSentence(tuple(tokens), tuple(fixed)))
            tokens, tags = [], []

    for lineno, line in _line_stream(source):
        if not line.strip():
            flush()
            continue
        fields = line.split()
        if fields[0] == "-DOCSTART-":
            continue
        if len(fields) < 2:
            raise EvalParseError(f"line {lineno}: expected token and tag columns")
        tag = fields[-1]
        if not _TAG_RE.match(tag):
            raise EvalParseError(
                f"line {lineno}: malformed tag {tag!r}, expected O or B-/I-<class>"
            )
        tokens.append(fields[0])
        tags.append(tag)
    flush()
    if repairs:
        log.warning("normalized %d tag(s) to strict BIO", repairs)
    return sentences


def parse_germeval(source: str | Path | Iterable[str]) -> list[TaggedSentence]:
    """Parse 4-column TSV: index, token, outer tag, inner tag.

    Lines starting with '#' are comments; blank lines separate sentences.
    Label subtype suffixes stay part of the class string.
    """
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    outer: list[str] = []
    inner: list[str] = []
    repairs = 0

    def flush() -> None:
        nonlocal repairs, tokens, outer, inner
        if tokens:
            fixed_outer, n1 = normalize_bio(outer)
            fixed_inner, n2 = normalize_bio(inner)
            repairs += n1 + n2
            sentences.append(
                TaggedSentence(tuple(tokens), tuple(fixed_outer), tuple(fixed_inner))
            )
            tokens, outer, inner = [], [], []

    for lineno, line in _line_stream(source):
        if not line.strip():
            flush()
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise EvalParseError(f"line {lineno}: expected 4 tab-separated columns, got {len(fields)}")
        _, token, outer_tag, inner_tag = fields
        for tag in (outer_tag, inner_tag):
            if not _TAG_RE.match(tag):
                raise EvalParseError(
                    f"line {lineno}: malformed tag {tag!r}, expected O or B-/I-<class>"
                )
        tokens.append(token)
        outer.append(outer_tag)
        inner.append(inner_tag)
    flush()
    if repairs:
        log.warning("normalized %d tag(s) to strict BIO", repairs)
    return sentences


def extract_spans(tags: Sequence[str], level: str = OUTER) -> set[SpanAnnotation]:
    """Maximal B-initiated runs as spans; a B or a class change starts a new
    span.  Expects strict BIO (run normalize_bio first on raw input)."""
    spans: set[SpanAnnotation] = set()
    start: int | None = None
    label = ""
    for i, tag in enumerate(tags):
        if tag.startswith("B-") or (tag.startswith("I-") and tag[2:] != label):
            if start is not None:
                spans.add(SpanAnnotation(start, i, label, level))
            start, label = i, tag[2:]
        elif tag == "O":
            if start is not None:
                spans.add(SpanAnnotation(start, i, label, level))
            start, label = None, ""
    if start is not None:
        spans.add(SpanAnnotation(start, len(tags), label, level))
    return spans


def spans_to_bio(spans: Iterable[SpanAnnotation], length: int) -> list[str]:
    """Render non-overlapping spans as a BIO tag list of the given length."""
    tags = ["O"] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end > length:
            raise ValueError(f"span [{span.start}, {span.end}) exceeds length {length}")
        for i in range(span.start, span.end):
            if tags[i] != "O":
                raise ValueError(f"overlapping span at token {i}")
            tags[i] = ("B-" if i == span.start else "I-") + span.label
    return tags


def _check_alignment(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> None:
    if len(gold) != len(pred):
        raise ValueError(
            f"gold has {len(gold)} sentences, prediction has {len(pred)}"
        )
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g.tokens) != len(p.tokens):
            raise ValueError(
                f"sentence {i}: gold has {len(g.tokens)} tokens, "
                f"prediction has {len(p.tokens)}"
            )


def _match_counts(gold_items: set, pred_items: set) -> tuple[int, int, int]:
    tp = len(gold_items & pred_items)
    return tp, len(pred_items) - tp, len(gold_items) - tp


def ner_f1(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> PrfScore:
    """Micro-averaged exact span match over (sentence, start, end, label)."""
    _check_alignment(gold, pred)
    tp = fp = fn = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        g_items = {(i, s.start, s.end, s.label) for s in extract_spans(g.outer_tags)}
        p_items = {(i, s.start, s.end, s.label) for s in extract_spans(p.outer_tags)}
        a, b, c = _match_counts(g_items, p_items)
        tp, fp, fn = tp + a, fp + b, fn + c
    return PrfScore.from_counts(tp, fp, fn)


def _two_level_items(sent: TaggedSentence, index: int) -> set:
    if sent.inner_tags is None:
        raise ValueError(f"sentence {index}: missing inner tag level")
    items = {
        (index, OUTER, s.start, s.end, s.label)
        for s in extract_spans(sent.outer_tags, OUTER)
    }
    items.update(
        (index, INNER, s.start, s.end, s.label)
        for s in extract_spans(sent.inner_tags, INNER)
    )
    return items


def germeval_f1(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> PrfScore:
    """Two-level span F1: items are (sentence, level, start, end, label)
    quadruples pooled across the outer and inner levels (micro average)."""
    _check_alignment(gold, pred)
    tp = fp = fn = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        a, b, c = _match_counts(_two_level_items(g, i), _two_level_items(p, i))
        tp, fp, fn = tp + a, fp + b, fn + c
    return PrfScore.from_counts(tp, fp, fn)


def germeval_level_scores(
    gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]
) -> dict[str, PrfScore]:
    """Per-level span F1 (outer and inner separately), for comparison with
    the pooled metric."""
    _check_alignment(gold, pred)
    counts = {OUTER: [0, 0, 0], INNER: [0, 0, 0]}
    for i, (g, p) in enumerate(zip(gold, pred)):
        if g.inner_tags is None or p.inner_tags is None:
            raise ValueError(f"sentence {i}: missing inner tag level")
        for level, g_tags, p_tags in (
            (OUTER, g.outer_tags, p.outer_tags),
            (INNER, g.inner_tags, p.inner_tags),
        ):
            g_items = {(i, s.start, s.end, s.label) for s in extract_spans(g_tags, level)}
            p_items = {(i, s.start, s.end, s.label) for s in extract_spans(p_tags, level)}
            a, b, c = _match_counts(g_items, p_items)
            counts[level][0] += a
            counts[level][1] += b
            counts[level][2] += c
    return {lvl: PrfScore.from_counts(*counts[lvl]) for lvl in (OUTER, INNER)}


def class_scores(
    gold: Sequence[str], pred: Sequence[str], classes: Iterable[str]
) -> dict[str, PrfScore]:
    """One-vs-rest PrfScore per class over aligned label lists."""
    classes = list(dict.fromkeys(classes))
    if len(gold) != len(pred):
        raise ValueError(f"gold has {len(gold)} labels, prediction has {len(pred)}")
    if not gold:
        raise ValueError("label lists must be non-empty")
    known = set(classes)
    for name, labels in (("gold", gold), ("prediction", pred)):
        for label in labels:
            if label not in known:
                raise ValueError(f"unknown {name} label {label!r}")
    scores: dict[str, PrfScore] = {}
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        scores[cls] = PrfScore.from_counts(tp, fp, fn)
    return scores


def mean_class_f1(
    gold: Sequence[str],
    pred: Sequence[str],
    classes: Iterable[str],
    exclude_absent: bool = False,
) -> float:
    """Unweighted mean of per-class F1 values.

    A class absent from both gold and prediction contributes F1 = 0 (its
    counts are all zero, which is not evidence of a correct classifier);
    exclude_absent drops such classes from the mean instead.
    """
    classes = list(dict.fromkeys(classes))
    scores = class_scores(gold, pred, classes)
    present = set(gold) | set(pred)
    values: list[float] = []
    for cls in classes:
        if cls not in present:
            if not exclude_absent:
                values.append(0.0)
            continue
        values.append(scores[cls].f1)
    if not values:
        raise ValueError("no classes left to average")
    return sum(values) / len(values)


def select_best_run(runs: Sequence[RunRecord]) -> RunRecord:
    """The run with the highest validation score; ties go to the lowest
    run_id.  Report that run's test_score."""
    if not runs:
        raise ValueError("runs must be non-empty")
    best = runs[0]
    for run in runs[1:]:
        if run.validation_score > best.validation_score or (
            run.validation_score == best.validation_score and run.run_id < best.run_id
        ):
            best = run
    return best


def read_runs_csv(source: str | Path | Iterable[str]) -> list[RunRecord]:
    """Read run records from CSV lines run_id,val,test; a header row whose
    first field is not an integer is skipped."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    runs: list[RunRecord] = []
    for lineno, row in enumerate(rows, 1):
        if not row or not any(field.strip() for field in row):
            continue
        if lineno == 1:
            try:
                int(row[0])
            except ValueError:
                continue  # header
        if len(row) != 3:
            raise EvalParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            runs.append(
                RunRecord(int(row[0]), float(row[1]), float(row[2]))
            )
        except ValueError as exc:
            raise EvalParseError(f"line {lineno}: {exc}") from exc
    return runs
