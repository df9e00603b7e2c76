"""Boilerplate-sentence word analogy probes scored by P@5.

Each analogy (w1, w2, w3, w4) is substituted into a per-language
boilerplate sentence, the second word is replaced by as many mask
tokens as its subword encoding has pieces, and a masked-LM scorer
predicts the missing pieces.  Multi-piece words are reassembled by
beam search over per-mask candidates with summed log-probabilities;
piece sequences that do not spell a single word are discarded.  A
prediction scores 1 when the gold word is in the top five.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

from .metrics import CategoryScore, aggregate_hits, precision_at_5
from .scorer import ScoreRequest, ScorerDeadError
from .subword import BOS, EOS, MASK, N_SPECIALS, SubwordVocabulary, encode

SLOTS = ("w1", "w2", "w3", "w4")
DEFAULT_MASK_SLOT = "w2"
DEFAULT_BEAM_WIDTH = 10
ANALOGY_HEADER = ("category", "n", "hits", "p_at_5")
MACRO_ROW_NAME = "macro"

DEFAULT_TEMPLATES: Mapping[str, str] = {
    "en": (
        "If the word {w1} corresponds to the word {w2} , "
        "then the word {w3} corresponds to the word {w4} ."
    ),
}


class AnalogyError(Exception):
    """Raised on malformed datasets, templates, or probe construction."""


@dataclass(frozen=True)
class AnalogyEntry:
    """One analogy row: w1 is to w2 as w3 is to w4."""

    category: str
    w1: str
    w2: str
    w3: str
    w4: str

    def __post_init__(self) -> None:
        for name in ("category", *SLOTS):
            value = getattr(self, name)
            if not value or value.split() != [value]:
                raise AnalogyError(f"{name} must be a non-empty single token: {value!r}")

    def word(self, slot: str) -> str:
        if slot not in SLOTS:
            raise AnalogyError(f"unknown slot {slot!r}")
        return getattr(self, slot)


@dataclass(frozen=True)
class Probe:
    """A masked boilerplate sentence ready for scoring.

    ``ids`` wrap the sentence in begin/end markers and hold one mask id
    per piece of the masked word; substituting ``gold_piece_ids`` back
    at ``mask_positions`` reconstructs the unmasked encoding.
    """

    text: str
    masked_word: str
    ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    gold_piece_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.mask_positions:
            raise AnalogyError("probe must mask at least one piece")
        for prev, cur in zip(self.mask_positions, self.mask_positions[1:]):
            if cur != prev + 1:
                raise AnalogyError("mask positions must be contiguous")
        for position in self.mask_positions:
            if self.ids[position] != MASK:
                raise AnalogyError(f"position {position} does not hold a mask id")
        if len(self.gold_piece_ids) != len(self.mask_positions):
            raise AnalogyError("one gold piece required per mask")

    @property
    def mask_piece_count(self) -> int:
        return len(self.mask_positions)

    def unmasked_ids(self) -> tuple[int, ...]:
        ids = list(self.ids)
        for position, piece in zip(self.mask_positions, self.gold_piece_ids):
            ids[position] = piece
        return tuple(ids)


def _slot_token_index(template: str, slot: str) -> int:
    tokens = template.split()
    marker = "{" + slot + "}"
    hits = [i for i, token in enumerate(tokens) if token == marker]
    if len(hits) != 1:
        raise AnalogyError(
            f"template must contain {marker} exactly once as its own token"
        )
    return hits[0]


def validate_template(template: str) -> None:
    for slot in SLOTS:
        _slot_token_index(template, slot)


def load_templates(path: str | Path) -> dict[str, str]:
    """Read a JSON object mapping language codes to boilerplate strings."""
    with open(path, encoding="utf-8") as stream:
        try:
            payload = json.load(stream)
        except json.JSONDecodeError as exc:
            raise AnalogyError(f"bad template file: {exc}") from None
    if not isinstance(payload, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in payload.items()
    ):
        raise AnalogyError("template file must map language codes to strings")
    for language, template in payload.items():
        try:
            validate_template(template)
        except AnalogyError as exc:
            raise AnalogyError(f"template for {language!r}: {exc}") from None
    return payload


def build_probe(
    entry: AnalogyEntry,
    vocab: SubwordVocabulary,
    language: str,
    templates: Mapping[str, str] | None = None,
    mask_slot: str = DEFAULT_MASK_SLOT,
) -> Probe:
    """Substitute the analogy into the language's template and mask one slot."""
    templates = DEFAULT_TEMPLATES if templates is None else templates
    template = templates.get(language)
    if template is None:
        raise AnalogyError(f"no boilerplate template for language {language!r}")
    word_index = _slot_token_index(template, mask_slot)
    text = template
    for slot in SLOTS:
        text = text.replace("{" + slot + "}", entry.word(slot))
    encoding = encode(text, vocab)
    start, end = encoding.word_spans[word_index]
    gold = encoding.ids[start:end]
    ids = [BOS, *encoding.ids, EOS]
    positions = tuple(range(start + 1, end + 1))
    for position in positions:
        ids[position] = MASK
    return Probe(
        text=text,
        masked_word=entry.word(mask_slot),
        ids=tuple(ids),
        mask_positions=positions,
        gold_piece_ids=gold,
    )


def _sequence_to_word(pieces: Sequence[int], vocab: SubwordVocabulary) -> str | None:
    """Spell out a piece sequence; None unless it forms one whole word."""
    texts = []
    for i, piece in enumerate(pieces):
        if piece < N_SPECIALS:
            return None
        begins = vocab.is_word_begin(piece)
        if begins != (i == 0):
            return None
        texts.append(vocab.piece_text(piece))
    word = "".join(texts)
    return word[1:] if word else None  # drop the word-begin marker


def predict_word(
    probe: Probe,
    scorer,
    vocab: SubwordVocabulary,
    k: int = 5,
    beam_width: int = DEFAULT_BEAM_WIDTH,
    request_id: int = 0,
) -> list[tuple[str, float]]:
    """Ranked candidate words with joint log-probability scores.

    One piece: the scorer's top candidates decoded directly.  Several
    pieces: beam search of ``beam_width`` over per-mask candidate lists,
    joint score the sum of log-probabilities.  Sequences that do not
    form a single word are dropped; duplicate spellings keep their best
    score.  At most ``k`` words are returned.
    """
    width = beam_width if probe.mask_piece_count > 1 else k
    request = ScoreRequest(
        id=request_id,
        ids=probe.ids,
        mask_positions=probe.mask_positions,
        k=width,
    )
    response = scorer.score(request)
    if len(response.candidates) != probe.mask_piece_count:
        raise AnalogyError(
            f"scorer returned {len(response.candidates)} candidate lists "
            f"for {probe.mask_piece_count} masks"
        )
    beams: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for i, per_mask in enumerate(response.candidates):
        at_start = i == 0
        grown = [
            (pieces + (piece,), score + logp)
            for pieces, score in beams
            for piece, logp in per_mask[:width]
            if piece >= N_SPECIALS and vocab.is_word_begin(piece) == at_start
        ]
        grown.sort(key=lambda beam: (-beam[1], beam[0]))
        if i < len(response.candidates) - 1:
            grown = grown[:width]
        beams = grown
    best: dict[str, float] = {}
    for pieces, score in beams:
        word = _sequence_to_word(pieces, vocab)
        if word is None:
            continue
        if word not in best or score > best[word]:
            best[word] = score
    ranked = sorted(best, key=lambda w: (-best[w], w))
    return [(word, best[word]) for word in ranked[:k]]


@dataclass(frozen=True)
class EvaluationResult:
    """Per-category P@5 plus its unweighted macro average."""

    categories: tuple[CategoryScore, ...]
    macro: float
    completed: int
    total: int
    partial: bool


def evaluate(
    entries: Iterable[AnalogyEntry],
    scorer,
    vocab: SubwordVocabulary,
    language: str,
    templates: Mapping[str, str] | None = None,
    k: int = 5,
    beam_width: int = DEFAULT_BEAM_WIDTH,
    mask_slot: str = DEFAULT_MASK_SLOT,
) -> EvaluationResult:
    """Score every analogy; request ids are the entry indices.

    A scorer failure aborts the run and flags the result as partial
    rather than discarding completed probes.
    """
    entries = list(entries)
    hits: list[tuple[str, int]] = []
    partial = False
    for index, entry in enumerate(entries):
        probe = build_probe(entry, vocab, language, templates, mask_slot)
        try:
            ranked = predict_word(
                probe, scorer, vocab, k=k, beam_width=beam_width, request_id=index
            )
        except ScorerDeadError:
            partial = True
            break
        hit = precision_at_5(probe.masked_word, [word for word, _ in ranked])
        hits.append((entry.category, hit))
    if hits:
        scores, macro = aggregate_hits(hits)
    else:
        scores, macro = [], 0.0
    return EvaluationResult(
        categories=tuple(scores),
        macro=macro,
        completed=len(hits),
        total=len(entries),
        partial=partial,
    )


def read_analogies(stream: Iterable[str]) -> Iterator[AnalogyEntry]:
    """Parse ``: category`` headers followed by ``w1 w2 w3 w4`` lines."""
    category: str | None = None
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(":"):
            category = line[1:].strip()
            if not category:
                raise AnalogyError(f"line {lineno}: empty category header")
            continue
        words = line.split()
        if len(words) != 4:
            raise AnalogyError(f"line {lineno}: expected 4 words, got {len(words)}")
        if category is None:
            raise AnalogyError(f"line {lineno}: analogy before any category header")
        yield AnalogyEntry(category, *words)


def write_analogy_csv(result: EvaluationResult, stream: TextIO) -> None:
    """``category,n,hits,p_at_5`` rows with a trailing macro row."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(ANALOGY_HEADER)
    for score in result.categories:
        writer.writerow([score.category, score.n, score.hits, f"{score.p_at_5:g}"])
    total_n = sum(score.n for score in result.categories)
    total_hits = sum(score.hits for score in result.categories)
    writer.writerow([MACRO_ROW_NAME, total_n, total_hits, f"{result.macro:g}"])
