import io
import json

import pytest

from mlmbench.analogy import (
    AnalogyEntry,
    AnalogyError,
    EvaluationResult,
    Probe,
    build_probe,
    evaluate,
    load_templates,
    predict_word,
    read_analogies,
    write_analogy_csv,
)
from mlmbench.corpus import SentenceLine
from mlmbench.metrics import CategoryScore
from mlmbench.scorer import (
    CountScorer,
    ScoreRequest,
    ScoreResponse,
    ScorerDeadError,
)
from mlmbench.subword import (
    BOS,
    EOS,
    MASK,
    N_SPECIALS,
    SubwordVocabulary,
    encode,
    train_vocab,
)

WORD_POOL = (
    "If the word corresponds to , then . tallinn estonia riga latvia "
    "vilnius lithuania man woman king queen wrongword"
)


@pytest.fixture(scope="module")
def whole_word_vocab():
    vocab = train_vocab([SentenceLine.make("en", WORD_POOL)], target_size=600)
    for word in WORD_POOL.split():
        assert len(encode(word, vocab).ids) == 1, word
    return vocab


class FixedScorer:
    """Returns the same candidate lists for every request."""

    def __init__(self, per_mask):
        self.per_mask = per_mask

    def score(self, request):
        return ScoreResponse(request.id, tuple(tuple(c) for c in self.per_mask))


class MappedScorer:
    """Candidate lists chosen by request id."""

    def __init__(self, by_id):
        self.by_id = by_id

    def score(self, request):
        return ScoreResponse(request.id, self.by_id[request.id])


class FailingScorer:
    def __init__(self, inner, fail_from):
        self.inner = inner
        self.fail_from = fail_from

    def score(self, request):
        if request.id >= self.fail_from:
            raise ScorerDeadError("scorer went away")
        return self.inner.score(request)


class TestDataset:
    def test_parse_categories_and_rows(self):
        text = (
            ": capital-common-countries\n"
            "tallinn estonia riga latvia\n"
            "vilnius lithuania tallinn estonia\n"
            "\n"
            ": family\n"
            "man woman king queen\n"
        )
        entries = list(read_analogies(io.StringIO(text)))
        assert len(entries) == 3
        assert entries[0] == AnalogyEntry(
            "capital-common-countries", "tallinn", "estonia", "riga", "latvia"
        )
        assert entries[2].category == "family"

    def test_row_before_header_rejected(self):
        with pytest.raises(AnalogyError, match="line 1"):
            list(read_analogies(io.StringIO("a b c d\n")))

    def test_wrong_word_count_rejected(self):
        with pytest.raises(AnalogyError, match="line 2"):
            list(read_analogies(io.StringIO(": x\na b c\n")))

    def test_empty_header_rejected(self):
        with pytest.raises(AnalogyError):
            list(read_analogies(io.StringIO(":   \n")))

    def test_entry_validation(self):
        with pytest.raises(AnalogyError):
            AnalogyEntry("cat", "", "b", "c", "d")
        with pytest.raises(AnalogyError):
            AnalogyEntry("cat", "two words", "b", "c", "d")


class TestTemplates:
    def test_load_valid_file(self, tmp_path):
        path = tmp_path / "templates.json"
        template = (
            "Jei zodis {w1} atitinka zodi {w2} , "
            "tai zodis {w3} atitinka zodi {w4} ."
        )
        path.write_text(json.dumps({"lt": template}), encoding="utf-8")
        assert load_templates(path) == {"lt": template}

    def test_missing_slot_rejected(self, tmp_path):
        path = tmp_path / "templates.json"
        path.write_text(json.dumps({"lt": "{w1} {w2} {w3}"}), encoding="utf-8")
        with pytest.raises(AnalogyError, match="lt"):
            load_templates(path)

    def test_non_mapping_rejected(self, tmp_path):
        path = tmp_path / "templates.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(AnalogyError):
            load_templates(path)


class TestBuildProbe:
    def test_single_piece_word_gets_one_mask(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga")
        probe = build_probe(entry, whole_word_vocab, "en")
        assert probe.mask_piece_count == 1
        assert probe.masked_word == "tallinn"
        assert probe.ids.count(MASK) == 1

    def test_multi_piece_word_gets_contiguous_masks(self):
        # target_size equal to the character inventory means no merges run,
        # so "aaa" stays three single-character pieces.
        vocab = train_vocab([SentenceLine.make("en", "aaa bbb")], target_size=4)
        entry = AnalogyEntry("c", "x", "aaa", "y", "z")
        probe = build_probe(entry, vocab, "en")
        assert probe.mask_piece_count == 3
        positions = probe.mask_positions
        assert positions == tuple(range(positions[0], positions[0] + 3))
        assert all(probe.ids[p] == MASK for p in positions)

    def test_reconstruction_matches_full_encoding(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "vilnius", "lithuania", "riga", "latvia")
        probe = build_probe(entry, whole_word_vocab, "en")
        full = encode(probe.text, whole_word_vocab)
        assert probe.unmasked_ids() == (BOS, *full.ids, EOS)

    def test_text_has_words_substituted(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga")
        probe = build_probe(entry, whole_word_vocab, "en")
        assert "estonia" in probe.text.split()
        assert "{w1}" not in probe.text

    def test_mask_slot_switch(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga")
        probe = build_probe(entry, whole_word_vocab, "en", mask_slot="w4")
        assert probe.masked_word == "riga"

    def test_missing_template_rejected(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "a", "b", "c", "d")
        with pytest.raises(AnalogyError, match="language"):
            build_probe(entry, whole_word_vocab, "xx")

    def test_fused_slot_rejected(self, whole_word_vocab):
        entry = AnalogyEntry("cap", "a", "b", "c", "d")
        templates = {"en": "word{w2} and {w1} {w3} {w4}"}
        with pytest.raises(AnalogyError, match="token"):
            build_probe(entry, whole_word_vocab, "en", templates=templates)

    def test_probe_invariants_enforced(self):
        with pytest.raises(AnalogyError):
            Probe("t", "w", (BOS, MASK, 7, MASK, EOS), (1, 3), (8, 9))
        with pytest.raises(AnalogyError):
            Probe("t", "w", (BOS, 7, EOS), (1,), (8,))


class TestPredictWord:
    def test_single_mask_equals_raw_top_k(self, whole_word_vocab):
        lines = [SentenceLine.make("en", "word tallinn")] * 3
        scorer = CountScorer(whole_word_vocab, lines)
        entry = AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga")
        probe = build_probe(entry, whole_word_vocab, "en")
        ranked = predict_word(probe, scorer, whole_word_vocab, k=5)
        raw = scorer.score(
            ScoreRequest(0, probe.ids, probe.mask_positions, 5)
        ).candidates[0]
        expected = [
            (whole_word_vocab.piece_text(piece)[1:], logp)
            for piece, logp in raw
            if piece >= N_SPECIALS and whole_word_vocab.is_word_begin(piece)
        ]
        assert ranked == expected[:5]

    def test_count_scorer_ranks_frequent_word_first(self, whole_word_vocab):
        lines = [SentenceLine.make("en", "word tallinn")] * 3 + [
            SentenceLine.make("en", "word estonia")
        ]
        scorer = CountScorer(whole_word_vocab, lines)
        entry = AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga")
        probe = build_probe(entry, whole_word_vocab, "en")
        ranked = predict_word(probe, scorer, whole_word_vocab, k=5)
        assert ranked[0][0] == "tallinn"

    def test_beam_filters_and_dedupes(self):
        vocab = SubwordVocabulary(
            ["▁a", "b", "bc", "▁ab", "c"],
            merges=[("▁a", "b"), ("b", "c")],
            target_size=10,
        )
        entry = AnalogyEntry("c", "x", "abc", "y", "z")
        probe = build_probe(entry, vocab, "en")
        assert probe.mask_piece_count == 2
        scorer = FixedScorer(
            [
                ((8, -0.125), (5, -0.25), (0, -0.3125), (6, -0.375)),
                ((9, -0.125), (7, -0.25), (6, -0.5)),
            ]
        )
        ranked = predict_word(probe, scorer, vocab, k=5, beam_width=10)
        assert [word for word, _ in ranked] == ["abc", "abbc", "ac", "abb", "ab"]
        assert ranked[0][1] == -0.25  # best of the two abc derivations

    def test_ranking_invariant_under_per_mask_shift(self):
        vocab = SubwordVocabulary(
            ["▁a", "b", "bc", "▁ab", "c"],
            merges=[("▁a", "b"), ("b", "c")],
            target_size=10,
        )
        entry = AnalogyEntry("c", "x", "abc", "y", "z")
        probe = build_probe(entry, vocab, "en")
        base = [
            ((8, -0.125), (5, -0.25)),
            ((9, -0.125), (7, -0.25), (6, -0.5)),
        ]
        shifted = [
            base[0],
            tuple((piece, logp - 0.0625) for piece, logp in base[1]),
        ]
        plain = predict_word(probe, FixedScorer(base), vocab, k=5)
        moved = predict_word(probe, FixedScorer(shifted), vocab, k=5)
        assert [w for w, _ in plain] == [w for w, _ in moved]

    def test_beam_equals_exhaustive_on_toy_vocab(self):
        corpus = [
            SentenceLine.make(
                "en", "banana bandana cabana banal canal anna nana bana lana"
            ),
            SentenceLine.make(
                "en", "mango tango mangle tangle jungle jangle single sing ring king"
            ),
        ]
        vocab = train_vocab(corpus, target_size=45)
        assert vocab.size == 50
        scorer = CountScorer(vocab, corpus)
        two_piece = next(
            word
            for word in ("canal", "nana", "mango", "tango", "jungle", "king")
            if len(encode(word, vocab).ids) == 2
        )
        entry = AnalogyEntry("c", "anna", two_piece, "anna", "anna")
        probe = build_probe(entry, vocab, "en")
        assert probe.mask_piece_count == 2
        ranked = predict_word(probe, scorer, vocab, k=5, beam_width=vocab.size)

        response = scorer.score(
            ScoreRequest(0, probe.ids, probe.mask_positions, vocab.size)
        )
        first, second = response.candidates
        best = {}
        for p1, lp1 in first:
            if p1 < N_SPECIALS or not vocab.is_word_begin(p1):
                continue
            for p2, lp2 in second:
                if p2 < N_SPECIALS or vocab.is_word_begin(p2):
                    continue
                word = (vocab.piece_text(p1) + vocab.piece_text(p2))[1:]
                score = lp1 + lp2
                if word not in best or score > best[word]:
                    best[word] = score
        expected = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        assert ranked == expected


class TestEvaluate:
    def make_entries(self):
        return [
            AnalogyEntry("cap", "estonia", "tallinn", "latvia", "riga"),
            AnalogyEntry("cap", "latvia", "riga", "estonia", "tallinn"),
            AnalogyEntry("fam", "man", "woman", "king", "queen"),
            AnalogyEntry("fam", "king", "queen", "man", "woman"),
        ]

    def gold_candidates(self, vocab, word):
        piece = vocab.piece_id("▁" + word)
        assert piece is not None
        return (((piece, -0.125),),)

    def test_oracle_scorer_scores_one(self, whole_word_vocab):
        entries = self.make_entries()
        by_id = {
            i: self.gold_candidates(whole_word_vocab, entry.w2)
            for i, entry in enumerate(entries)
        }
        result = evaluate(entries, MappedScorer(by_id), whole_word_vocab, "en")
        assert result.macro == 1.0
        assert not result.partial
        assert result.completed == result.total == 4

    def test_adversarial_scorer_scores_zero(self, whole_word_vocab):
        entries = self.make_entries()
        wrong = self.gold_candidates(whole_word_vocab, "wrongword")
        result = evaluate(
            entries,
            MappedScorer({i: wrong for i in range(4)}),
            whole_word_vocab,
            "en",
        )
        assert result.macro == 0.0

    def test_mixed_hit_rates_macro(self, whole_word_vocab):
        entries = self.make_entries()
        by_id = {
            i: self.gold_candidates(whole_word_vocab, entry.w2)
            for i, entry in enumerate(entries)
        }
        by_id[3] = self.gold_candidates(whole_word_vocab, "wrongword")
        result = evaluate(entries, MappedScorer(by_id), whole_word_vocab, "en")
        assert result.macro == pytest.approx(0.75)
        assert [(s.category, s.n, s.hits) for s in result.categories] == [
            ("cap", 2, 2),
            ("fam", 2, 1),
        ]

    def test_scorer_death_yields_partial(self, whole_word_vocab):
        entries = self.make_entries()
        by_id = {
            i: self.gold_candidates(whole_word_vocab, entry.w2)
            for i, entry in enumerate(entries)
        }
        scorer = FailingScorer(MappedScorer(by_id), fail_from=2)
        result = evaluate(entries, scorer, whole_word_vocab, "en")
        assert result.partial
        assert result.completed == 2
        assert result.total == 4

    def test_csv_output(self):
        result = EvaluationResult(
            categories=(
                CategoryScore("cap", 2, 2),
                CategoryScore("fam", 2, 1),
            ),
            macro=0.75,
            completed=4,
            total=4,
            partial=False,
        )
        buf = io.StringIO()
        write_analogy_csv(result, buf)
        assert buf.getvalue() == (
            "category,n,hits,p_at_5\n"
            "cap,2,2,1\n"
            "fam,2,1,0.5\n"
            "macro,4,3,0.75\n"
        )
