"""Subword vocabulary induction (BPE with word-begin markers) and encoding.

Words are whitespace-pretokenized; the first character of each word is fused
with a word-begin marker so a merged piece knows whether it starts a word.
That property is what downstream whole-word masking runs on.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .corpus import SentenceLine

WORD_BEGIN = "▁"

PAD, UNK, BOS, EOS, MASK = range(5)
SPECIAL_NAMES = {PAD: "<pad>", UNK: "<unk>", BOS: "<s>", EOS: "</s>", MASK: "<mask>"}
N_SPECIALS = len(SPECIAL_NAMES)


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Piece:
    text: str
    piece_id: int
    is_word_begin: bool


@dataclass(frozen=True)
class Encoding:
    """Piece ids for one sentence plus (start, end) piece ranges per word."""

    ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]


class SubwordVocabulary:
    """Learned pieces with contiguous ids following the five specials."""

    def __init__(self, pieces: Sequence[str], merges: Sequence[tuple[str, str]], target_size: int):
        self.pieces = [
            Piece(text, N_SPECIALS + i, text.startswith(WORD_BEGIN))
            for i, text in enumerate(pieces)
        ]
        self.merges = [tuple(m) for m in merges]
        self.target_size = target_size
        self._ids = {p.text: p.piece_id for p in self.pieces}
        self._ranks = {m: r for r, m in enumerate(self.merges)}
        if len(self._ids) != len(self.pieces):
            raise VocabError("duplicate piece strings")

    @property
    def size(self) -> int:
        """Total id count including specials."""
        return N_SPECIALS + len(self.pieces)

    def piece_id(self, text: str) -> int | None:
        return self._ids.get(text)

    def piece_text(self, piece_id: int) -> str:
        if piece_id in SPECIAL_NAMES:
            return SPECIAL_NAMES[piece_id]
        if N_SPECIALS <= piece_id < self.size:
            return self.pieces[piece_id - N_SPECIALS].text
        raise VocabError(f"unknown piece id {piece_id}")

    def is_word_begin(self, piece_id: int) -> bool:
        if N_SPECIALS <= piece_id < self.size:
            return self.pieces[piece_id - N_SPECIALS].is_word_begin
        return False

    def merge_rank(self, pair: tuple[str, str]) -> int | None:
        return self._ranks.get(pair)


def _word_symbols(word: str) -> list[str]:
    return [WORD_BEGIN + word[0], *word[1:]]


def _merge_once(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    a, b = pair
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def train_vocab(
    sample: Iterable[SentenceLine],
    target_size: int,
    algorithm: str = "bpe",
    seed: int = 0,
) -> SubwordVocabulary:
    """Induce a vocabulary of at most target_size learned pieces.

    Greedy pair merging over word frequencies; the most frequent adjacent
    pair merges first, ties broken by lexicographically smallest pair, so the
    result is reproducible bit-for-bit. `seed` is accepted for interface
    uniformity; exact counting needs no randomness.
    """
    del seed
    if algorithm != "bpe":
        raise VocabError(f"unsupported algorithm {algorithm!r}")
    word_freq: Counter[str] = Counter()
    for line in sample:
        word_freq.update(line.text.split())
    if not word_freq:
        raise VocabError("training sample contains no words")

    words: dict[str, tuple[str, ...]] = {w: tuple(_word_symbols(w)) for w in word_freq}
    base = sorted({s for syms in words.values() for s in syms})
    if target_size < len(base):
        raise VocabError(
            f"target_size {target_size} is below the character inventory ({len(base)} symbols)"
        )

    pair_counts: Counter[tuple[str, str]] = Counter()
    pair_words: dict[tuple[str, str], set[str]] = defaultdict(set)
    for word, syms in words.items():
        freq = word_freq[word]
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freq
            pair_words[pair].add(word)

    pieces = list(base)
    merges: list[tuple[str, str]] = []
    while len(pieces) < target_size and pair_counts:
        best_count = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merges.append(best)
        pieces.append(best[0] + best[1])
        for word in sorted(pair_words[best]):
            freq = word_freq[word]
            old = words[word]
            new = _merge_once(old, best)
            words[word] = new
            for pair in zip(old, old[1:]):
                pair_counts[pair] -= freq
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                pair_words[pair].discard(word)
            for pair in zip(new, new[1:]):
                pair_counts[pair] += freq
                pair_words[pair].add(word)

    return SubwordVocabulary(pieces, merges, target_size)


def _apply_merges(symbols: list[str], vocab: SubwordVocabulary) -> list[str]:
    while len(symbols) > 1:
        best_rank = None
        best_pair = None
        for pair in zip(symbols, symbols[1:]):
            rank = vocab.merge_rank(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
                best_pair = pair
        if best_pair is None:
            break
        symbols = list(_merge_once(tuple(symbols), best_pair))
    return symbols


def encode(line: SentenceLine | str, vocab: SubwordVocabulary) -> Encoding:
    """Encode one sentence; unknown symbols become UNK, spans stay word-exact."""
    text = line.text if isinstance(line, SentenceLine) else line
    ids: list[int] = []
    spans: list[tuple[int, int]] = []
    for word in text.split():
        symbols = _apply_merges(_word_symbols(word), vocab)
        start = len(ids)
        for sym in symbols:
            piece_id = vocab.piece_id(sym)
            ids.append(UNK if piece_id is None else piece_id)
        spans.append((start, len(ids)))
    return Encoding(tuple(ids), tuple(spans))


def decode(ids: Iterable[int], vocab: SubwordVocabulary) -> str:
    """Inverse of encode up to whitespace normalization and UNK loss."""
    out: list[str] = []
    for piece_id in ids:
        if piece_id in (BOS, EOS, PAD):
            continue
        text = vocab.piece_text(piece_id)
        if text.startswith(WORD_BEGIN):
            out.append(" " + text[len(WORD_BEGIN):])
        else:
            out.append(text)
    return "".join(out).lstrip(" ")


def fertility(lines: Iterable[SentenceLine], vocab: SubwordVocabulary) -> float:
    """Mean pieces per word over a corpus."""
    total_pieces = 0
    total_words = 0
    for line in lines:
        enc = encode(line, vocab)
        total_pieces += len(enc.ids)
        total_words += len(enc.word_spans)
    if total_words == 0:
        raise VocabError("fertility undefined on an empty corpus")
    return total_pieces / total_words


def save_vocab(vocab: SubwordVocabulary, path: str | Path) -> None:
    """One piece per line `piece<TAB>id<TAB>word_begin`, JSON header first."""
    header = {
        "specials": {"pad": PAD, "unk": UNK, "bos": BOS, "eos": EOS, "mask": MASK},
        "target_size": vocab.target_size,
        "merges": [list(m) for m in vocab.merges],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n")
        for piece in vocab.pieces:
            fh.write(f"{piece.text}\t{piece.piece_id}\t{1 if piece.is_word_begin else 0}\n")


def load_vocab(path: str | Path) -> SubwordVocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise VocabError(f"{path}: missing JSON header line") from exc
        specials = header.get("specials", {})
        expected = {"pad": PAD, "unk": UNK, "bos": BOS, "eos": EOS, "mask": MASK}
        if specials != expected:
            raise VocabError(f"{path}: unexpected specials layout {specials}")
        pieces: list[str] = []
        for lineno, raw in enumerate(fh, start=2):
            raw = raw.rstrip("\n")
            if not raw:
                continue
            try:
                text, piece_id, word_begin = raw.split("\t")
            except ValueError as exc:
                raise VocabError(f"{path}:{lineno}: expected 3 tab-separated fields") from exc
            if int(piece_id) != N_SPECIALS + len(pieces):
                raise VocabError(f"{path}:{lineno}: non-contiguous piece id {piece_id}")
            if bool(int(word_begin)) != text.startswith(WORD_BEGIN):
                raise VocabError(f"{path}:{lineno}: word_begin flag contradicts marker")
            pieces.append(text)
    merges = [tuple(m) for m in header.get("merges", [])]
    return SubwordVocabulary(pieces, merges, int(header["target_size"]))


def write_encodings(encodings: Iterable[Encoding], out: IO[str]) -> None:
    """Debug/interchange format: whitespace-separated id list per sentence."""
    for enc in encodings:
        out.write(" ".join(str(i) for i in enc.ids) + "\n")


def read_encodings(source: IO[str], vocab: SubwordVocabulary) -> list[Encoding]:
    """Read the id-list format, rebuilding word spans from word-begin flags."""
    encodings = []
    for raw in source:
        raw = raw.strip()
        ids = tuple(int(tok) for tok in raw.split()) if raw else ()
        encodings.append(Encoding(ids, spans_from_ids(ids, vocab)))
    return encodings


def spans_from_ids(ids: Sequence[int], vocab: SubwordVocabulary) -> tuple[tuple[int, int], ...]:
    """Recover word spans: a new word starts at each word-begin piece.

    UNK gives no marker information, so an UNK run directly after a span
    boundary is treated as continuing the current word; only a leading UNK
    opens a span of its own.
    """
    spans: list[tuple[int, int]] = []
    start: int | None = None
    for i, piece_id in enumerate(ids):
        if vocab.is_word_begin(piece_id) or start is None:
            if start is not None:
                spans.append((start, i))
            start = i
    if start is not None:
        spans.append((start, len(ids)))
    return tuple(spans)


def coverage_ok(text: str, vocab: SubwordVocabulary) -> bool:
    """True when every word of `text` encodes without UNK."""
    return UNK not in encode(text, vocab).ids
