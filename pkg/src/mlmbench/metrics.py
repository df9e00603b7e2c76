"""Task scoring: span NER F1, tag micro-F1, attachment scores, P@5.

NER is scored on exact span matches (boundaries and class) with an
unweighted macro average over the person, location, and organization
classes.  Tagging is micro-F1, which with one tag per token equals token
accuracy.  Attachment scores are percentages over all tokens,
punctuation included.  Word-prediction probes score 1 when the gold
word appears in the top five candidates, macro-averaged over categories.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

from .depcodec import DepTree

log = logging.getLogger(__name__)

NER_CLASSES = ("PER", "LOC", "ORG")
TASKS = ("NER", "POS", "DP", "WA")
METRICS_BY_TASK: Mapping[str, tuple[str, ...]] = {
    "NER": ("macro_f1",),
    "POS": ("micro_f1",),
    "DP": ("uas", "las"),
    "WA": ("p_at_5",),
}
PERCENT_METRICS = frozenset({"uas", "las"})
RESULTS_HEADER = ("model", "language", "task", "metric", "value")


class MetricsError(Exception):
    """Raised on misaligned inputs or malformed annotations."""


@dataclass(frozen=True)
class SpanAnnotation:
    """Entity spans of one sentence; (start, end) are inclusive indices."""

    sentence_id: int
    spans: tuple[tuple[int, int, str], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spans", tuple(tuple(s) for s in self.spans))
        for start, end, label in self.spans:
            if start < 0 or end < start or not label:
                raise MetricsError(f"bad span ({start}, {end}, {label!r})")
        ordered = sorted(self.spans)
        for (_, prev_end, _), (next_start, _, _) in zip(ordered, ordered[1:]):
            if next_start <= prev_end:
                raise MetricsError(f"overlapping spans in sentence {self.sentence_id}")


@dataclass(frozen=True)
class TaskResult:
    """One scored (model, language, task, metric) cell."""

    model: str
    language: str
    task: str
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.task not in METRICS_BY_TASK:
            raise MetricsError(f"unknown task {self.task!r}")
        if self.metric not in METRICS_BY_TASK[self.task]:
            raise MetricsError(f"metric {self.metric!r} does not belong to {self.task}")
        upper = 100.0 if self.metric in PERCENT_METRICS else 1.0
        if not 0.0 <= self.value <= upper:
            raise MetricsError(
                f"{self.metric} value {self.value} outside [0, {upper:g}]"
            )


def tags_to_spans(tags: Sequence[str]) -> tuple[tuple[int, int, str], ...]:
    """Convert a BIO tag sequence to inclusive entity spans.

    A span is a maximal ``B-c (I-c)*`` run; an ``I-c`` without a
    matching open span starts a new one.
    """
    spans: list[tuple[int, int, str]] = []
    open_start: int | None = None
    open_label = ""

    def close(last_index: int) -> None:
        nonlocal open_start
        if open_start is not None:
            spans.append((open_start, last_index, open_label))
            open_start = None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i - 1)
        elif tag.startswith("B-"):
            close(i - 1)
            open_start, open_label = i, tag[2:]
        elif tag.startswith("I-"):
            label = tag[2:]
            if open_start is None or label != open_label:
                close(i - 1)
                open_start, open_label = i, label
        else:
            raise MetricsError(f"bad BIO tag {tag!r} at position {i}")
    close(len(tags) - 1)
    return tuple(spans)


def annotations_from_tagged(
    tagged: Iterable[Sequence[str]],
) -> list[SpanAnnotation]:
    """Build span annotations from per-sentence BIO tag sequences."""
    return [
        SpanAnnotation(sentence_id=i, spans=tags_to_spans(tags))
        for i, tags in enumerate(tagged)
    ]


def _f1(tp: int, n_pred: int, n_gold: int) -> float:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def ner_f1(
    gold: Sequence[SpanAnnotation],
    pred: Sequence[SpanAnnotation],
    classes: Sequence[str] = NER_CLASSES,
) -> tuple[dict[str, float], float]:
    """Per-class exact-match span F1 and its unweighted macro average.

    Sentences are matched by id; undefined precision or recall counts
    as zero.
    """
    gold_by_id = {a.sentence_id: a for a in gold}
    pred_by_id = {a.sentence_id: a for a in pred}
    if set(gold_by_id) != set(pred_by_id):
        raise MetricsError("gold and predicted sentence ids differ")
    tp: dict[str, int] = {c: 0 for c in classes}
    n_gold: dict[str, int] = {c: 0 for c in classes}
    n_pred: dict[str, int] = {c: 0 for c in classes}
    for sid, gold_ann in gold_by_id.items():
        gold_spans = set(gold_ann.spans)
        pred_spans = set(pred_by_id[sid].spans)
        for c in classes:
            gold_c = {s for s in gold_spans if s[2] == c}
            pred_c = {s for s in pred_spans if s[2] == c}
            tp[c] += len(gold_c & pred_c)
            n_gold[c] += len(gold_c)
            n_pred[c] += len(pred_c)
    per_class = {c: _f1(tp[c], n_pred[c], n_gold[c]) for c in classes}
    macro = sum(per_class.values()) / len(classes)
    return per_class, macro


def token_accuracy(
    gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]
) -> float:
    """Fraction of tokens with the correct tag."""
    if len(gold) != len(pred):
        raise MetricsError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    correct = 0
    total = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise MetricsError(f"sentence {i}: {len(g)} gold tags vs {len(p)}")
        correct += sum(a == b for a, b in zip(g, p))
        total += len(g)
    if total == 0:
        raise MetricsError("no tokens to score")
    return correct / total


def pos_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> float:
    """Micro-averaged tag F1; equals token accuracy with one tag per token."""
    return token_accuracy(gold, pred)


def attachment_scores(
    gold: Sequence[DepTree], pred: Sequence[DepTree]
) -> tuple[float, float]:
    """(UAS, LAS) percentages over all tokens, punctuation included."""
    if len(gold) != len(pred):
        raise MetricsError(f"{len(gold)} gold trees vs {len(pred)} predicted")
    head_hits = 0
    labeled_hits = 0
    total = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if g.n != p.n:
            raise MetricsError(f"sentence {i}: {g.n} gold words vs {p.n}")
        for word in range(1, g.n + 1):
            head_ok = g.head_of(word) == p.head_of(word)
            head_hits += head_ok
            labeled_hits += head_ok and g.rel_of(word) == p.rel_of(word)
        total += g.n
    if total == 0:
        raise MetricsError("no tokens to score")
    return 100.0 * head_hits / total, 100.0 * labeled_hits / total


def _normalize_word(word: str) -> str:
    return word.strip().casefold()


def precision_at_5(gold_word: str, ranked_predictions: Sequence[str]) -> int:
    """1 when the gold word is among the top five predictions, else 0."""
    if not ranked_predictions:
        log.warning("empty prediction list for %r counted as a miss", gold_word)
        return 0
    target = _normalize_word(gold_word)
    return int(target in {_normalize_word(w) for w in ranked_predictions[:5]})


@dataclass(frozen=True)
class CategoryScore:
    category: str
    n: int
    hits: int

    @property
    def p_at_5(self) -> float:
        return self.hits / self.n if self.n else 0.0


def aggregate_hits(
    results: Iterable[tuple[str, int]],
) -> tuple[list[CategoryScore], float]:
    """Roll (category, hit) pairs up to per-category scores and their macro."""
    n: dict[str, int] = {}
    hits: dict[str, int] = {}
    for category, hit in results:
        n[category] = n.get(category, 0) + 1
        hits[category] = hits.get(category, 0) + hit
    scores = [CategoryScore(c, n[c], hits[c]) for c in sorted(n)]
    if not scores:
        raise MetricsError("no probe results to aggregate")
    macro = sum(s.p_at_5 for s in scores) / len(scores)
    return scores, macro


def write_results_csv(results: Iterable[TaskResult], stream: TextIO) -> int:
    """Write ``model,language,task,metric,value`` rows with a header."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RESULTS_HEADER)
    count = 0
    for r in results:
        writer.writerow([r.model, r.language, r.task, r.metric, f"{r.value:g}"])
        count += 1
    return count


def read_results_csv(stream: Iterable[str]) -> list[TaskResult]:
    """Read rows written by :func:`write_results_csv`."""
    rows = csv.reader(line for line in stream if not line.startswith("#"))
    try:
        header = next(rows)
    except StopIteration:
        raise MetricsError("empty results file") from None
    if tuple(header) != RESULTS_HEADER:
        raise MetricsError(f"unexpected header {header}")
    results = []
    for row in rows:
        if not row:
            continue
        if len(row) != len(RESULTS_HEADER):
            raise MetricsError(f"bad row {row}")
        model, language, task, metric, value = row
        results.append(TaskResult(model, language, task, metric, float(value)))
    return results
