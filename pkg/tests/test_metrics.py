import io
import logging
import random
from fractions import Fraction

import pytest

from mlmbench.depcodec import DepTree
from mlmbench.metrics import (
    NER_CLASSES,
    CategoryScore,
    MetricsError,
    SpanAnnotation,
    TaskResult,
    aggregate_hits,
    annotations_from_tagged,
    attachment_scores,
    ner_f1,
    pos_f1,
    precision_at_5,
    read_results_csv,
    tags_to_spans,
    token_accuracy,
    write_results_csv,
)

TAG_POOL = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"]


def spans_to_tags(spans, length):
    tags = ["O"] * length
    for start, end, label in spans:
        tags[start] = f"B-{label}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{label}"
    return tags


def ner_macro_oracle(gold, pred):
    """Exact-rational recount of per-class span F1."""
    gold_by_id = {a.sentence_id: set(a.spans) for a in gold}
    pred_by_id = {a.sentence_id: set(a.spans) for a in pred}
    scores = []
    for c in NER_CLASSES:
        tp = n_gold = n_pred = 0
        for sid in gold_by_id:
            gold_c = {s for s in gold_by_id[sid] if s[2] == c}
            pred_c = {s for s in pred_by_id[sid] if s[2] == c}
            tp += len(gold_c & pred_c)
            n_gold += len(gold_c)
            n_pred += len(pred_c)
        precision = Fraction(tp, n_pred) if n_pred else Fraction(0)
        recall = Fraction(tp, n_gold) if n_gold else Fraction(0)
        if precision + recall:
            scores.append(2 * precision * recall / (precision + recall))
        else:
            scores.append(Fraction(0))
    return float(sum(scores) / len(scores))


def micro_f1_oracle(gold, pred):
    """Class-aggregated micro-F1 recomputed from scratch."""
    tp = fp = fn = 0
    labels = {t for sent in gold for t in sent} | {t for sent in pred for t in sent}
    for label in labels:
        for g_sent, p_sent in zip(gold, pred):
            for g, p in zip(g_sent, p_sent):
                tp += g == label and p == label
                fp += g != label and p == label
                fn += g == label and p != label
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    if not precision + recall:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def random_annotation_pair(rng, max_sentences=10):
    gold_tags, pred_tags = [], []
    for _ in range(rng.randint(1, max_sentences)):
        length = rng.randint(1, 12)
        gold_tags.append([rng.choice(TAG_POOL) for _ in range(length)])
        pred_tags.append([rng.choice(TAG_POOL) for _ in range(length)])
    return annotations_from_tagged(gold_tags), annotations_from_tagged(pred_tags)


def random_tree_pair(rng, n):
    def build():
        heads = [0] * n
        order = list(range(1, n + 1))
        rng.shuffle(order)
        for i, word in enumerate(order):
            heads[word - 1] = rng.choice([0, *order[:i]])
        rels = tuple(rng.choice(["a", "b", "root"]) for _ in range(n))
        return DepTree(tuple(heads), rels)

    return build(), build()


class TestSpans:
    def test_basic_runs(self):
        tags = ["O", "B-PER", "I-PER", "O", "B-LOC"]
        assert tags_to_spans(tags) == ((1, 2, "PER"), (4, 4, "LOC"))

    def test_orphan_inside_tag_starts_span(self):
        assert tags_to_spans(["I-ORG", "I-ORG"]) == ((0, 1, "ORG"),)

    def test_class_switch_closes_span(self):
        assert tags_to_spans(["B-PER", "I-LOC"]) == ((0, 0, "PER"), (1, 1, "LOC"))

    def test_adjacent_b_tags_are_two_spans(self):
        assert tags_to_spans(["B-PER", "B-PER"]) == ((0, 0, "PER"), (1, 1, "PER"))

    def test_bad_tag_rejected(self):
        with pytest.raises(MetricsError):
            tags_to_spans(["B-PER", "X-PER"])

    def test_round_trip_through_tags(self):
        rng = random.Random(7)
        for _ in range(50):
            length = rng.randint(1, 15)
            tags = [rng.choice(TAG_POOL) for _ in range(length)]
            spans = tags_to_spans(tags)
            assert tags_to_spans(spans_to_tags(spans, length)) == spans

    def test_overlapping_spans_rejected(self):
        with pytest.raises(MetricsError):
            SpanAnnotation(0, ((0, 2, "PER"), (2, 3, "LOC")))


class TestNerF1:
    def test_perfect_prediction(self):
        gold = annotations_from_tagged(
            [["B-PER", "O", "B-LOC"], ["B-ORG", "I-ORG"]]
        )
        per_class, macro = ner_f1(gold, gold)
        assert macro == 1.0
        assert per_class == {"PER": 1.0, "LOC": 1.0, "ORG": 1.0}

    def test_one_class_swapped(self):
        gold = [SpanAnnotation(0, ((1, 2, "PER"), (5, 5, "LOC")))]
        pred = [SpanAnnotation(0, ((1, 2, "PER"), (5, 5, "ORG")))]
        per_class, macro = ner_f1(gold, pred)
        assert per_class == {"PER": 1.0, "LOC": 0.0, "ORG": 0.0}
        assert macro == pytest.approx(1 / 3)

    def test_boundary_error_is_no_credit(self):
        gold = [SpanAnnotation(0, ((1, 2, "PER"),))]
        pred = [SpanAnnotation(0, ((1, 3, "PER"),))]
        per_class, _ = ner_f1(gold, pred)
        assert per_class["PER"] == 0.0

    def test_mismatched_ids_rejected(self):
        gold = [SpanAnnotation(0, ())]
        pred = [SpanAnnotation(1, ())]
        with pytest.raises(MetricsError):
            ner_f1(gold, pred)

    def test_order_invariance(self):
        rng = random.Random(3)
        gold, pred = random_annotation_pair(rng)
        _, macro = ner_f1(gold, pred)
        _, macro_shuffled = ner_f1(gold[::-1], pred[::-1])
        assert macro == macro_shuffled

    def test_matches_rational_oracle(self):
        rng = random.Random(11)
        for _ in range(50):
            gold, pred = random_annotation_pair(rng)
            _, macro = ner_f1(gold, pred)
            assert abs(macro - ner_macro_oracle(gold, pred)) <= 1e-9


class TestPosF1:
    def test_identical(self):
        assert pos_f1([["N", "V"]], [["N", "V"]]) == 1.0

    def test_three_of_four(self):
        assert pos_f1([["N", "V", "A", "D"]], [["N", "V", "A", "X"]]) == 0.75

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricsError):
            pos_f1([["N"]], [["N", "V"]])

    def test_sentence_count_mismatch_rejected(self):
        with pytest.raises(MetricsError):
            pos_f1([["N"]], [])

    def test_equals_micro_f1_oracle(self):
        rng = random.Random(23)
        pool = ["NOUN", "VERB", "ADJ", "ADV"]
        for _ in range(50):
            gold = [
                [rng.choice(pool) for _ in range(rng.randint(1, 9))]
                for _ in range(rng.randint(1, 6))
            ]
            pred = [[rng.choice(pool) for _ in sent] for sent in gold]
            assert abs(pos_f1(gold, pred) - micro_f1_oracle(gold, pred)) <= 1e-9
            assert pos_f1(gold, pred) == token_accuracy(gold, pred)


class TestAttachment:
    def test_perfect(self):
        tree = DepTree((2, 0, 2), ("nsubj", "root", "obj"))
        assert attachment_scores([tree], [tree]) == (100.0, 100.0)

    def test_one_wrong_head_one_wrong_rel(self):
        gold = DepTree((2, 0, 2), ("nsubj", "root", "obj"))
        pred = DepTree((3, 0, 2), ("nsubj", "root", "iobj"))
        uas, las = attachment_scores([gold], [pred])
        assert uas == pytest.approx(100 * 2 / 3)
        assert las == pytest.approx(100 * 1 / 3)

    def test_alignment_mismatch_rejected(self):
        a = DepTree((0,), ("root",))
        b = DepTree((2, 0), ("dep", "root"))
        with pytest.raises(MetricsError):
            attachment_scores([a], [b])

    def test_las_never_exceeds_uas(self):
        rng = random.Random(5)
        for _ in range(100):
            n = rng.randint(1, 8)
            gold, pred = random_tree_pair(rng, n)
            uas, las = attachment_scores([gold], [pred])
            assert las <= uas

    def test_recount_oracle(self):
        rng = random.Random(9)
        for _ in range(50):
            pairs = [random_tree_pair(rng, rng.randint(1, 8)) for _ in range(4)]
            gold = [g for g, _ in pairs]
            pred = [p for _, p in pairs]
            uas, las = attachment_scores(gold, pred)
            total = sum(t.n for t in gold)
            head_hits = sum(
                g.head_of(w) == p.head_of(w)
                for g, p in pairs
                for w in range(1, g.n + 1)
            )
            both = sum(
                g.head_of(w) == p.head_of(w) and g.rel_of(w) == p.rel_of(w)
                for g, p in pairs
                for w in range(1, g.n + 1)
            )
            assert abs(uas - 100 * head_hits / total) <= 1e-9
            assert abs(las - 100 * both / total) <= 1e-9


class TestPrecisionAt5:
    def test_rank_one_hit(self):
        assert precision_at_5("cat", ["cat", "dog"]) == 1

    def test_rank_six_miss(self):
        ranked = ["a", "b", "c", "d", "e", "cat"]
        assert precision_at_5("cat", ranked) == 0

    def test_case_and_whitespace_fold(self):
        assert precision_at_5("Tallinn ", ["tallinn"]) == 1

    def test_empty_predictions_warn_and_miss(self, caplog):
        with caplog.at_level(logging.WARNING, logger="mlmbench.metrics"):
            assert precision_at_5("cat", []) == 0
        assert "miss" in caplog.text

    def test_aggregate_macro(self):
        results = [
            ("capitals", 1),
            ("capitals", 1),
            ("family", 1),
            ("family", 0),
        ]
        scores, macro = aggregate_hits(results)
        assert scores == [
            CategoryScore("capitals", 2, 2),
            CategoryScore("family", 2, 1),
        ]
        assert macro == pytest.approx(0.75)

    def test_aggregate_empty_rejected(self):
        with pytest.raises(MetricsError):
            aggregate_hits([])


class TestResultsCsv:
    def test_round_trip(self):
        results = [
            TaskResult("estroberta", "et", "NER", "macro_f1", 0.928),
            TaskResult("estroberta", "et", "DP", "uas", 83.2),
        ]
        buf = io.StringIO()
        assert write_results_csv(results, buf) == 2
        buf.seek(0)
        assert read_results_csv(buf) == results

    def test_header_written(self):
        buf = io.StringIO()
        write_results_csv([], buf)
        assert buf.getvalue().splitlines()[0] == "model,language,task,metric,value"

    def test_bad_header_rejected(self):
        with pytest.raises(MetricsError):
            read_results_csv(io.StringIO("a,b,c\n"))

    def test_comment_lines_skipped(self):
        text = "# provenance\nmodel,language,task,metric,value\nm,et,POS,micro_f1,0.9\n"
        assert len(read_results_csv(io.StringIO(text))) == 1

    @pytest.mark.parametrize(
        "task,metric,value",
        [
            ("NER", "macro_f1", 1.5),
            ("DP", "uas", 101.0),
            ("POS", "uas", 0.5),
            ("XX", "macro_f1", 0.5),
            ("WA", "p_at_5", -0.1),
        ],
    )
    def test_invalid_results_rejected(self, task, metric, value):
        with pytest.raises(MetricsError):
            TaskResult("m", "et", task, metric, value)
