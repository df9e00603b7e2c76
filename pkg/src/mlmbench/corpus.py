"""Corpus ingestion: sentence splitting, normalization, exact dedup, stats, sampling.

Raw documents come in as UTF-8 text (optionally gzipped), leave as
one-sentence-per-line files per language plus a stats CSV.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import random
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

TERMINAL_PUNCT = ".!?"
_CLOSERS = "\"'»”’)]"

# Minimal per-language abbreviation exception lists; callers with real
# corpora are expected to supply their own.
DEFAULT_ABBREVIATIONS: dict[str, frozenset[str]] = {
    "en": frozenset({"mr.", "mrs.", "dr.", "e.g.", "i.e.", "etc."}),
    "et": frozenset({"nt.", "jne.", "vt.", "lk.", "a."}),
    "lv": frozenset({"piem.", "u.c.", "t.i.", "lpp."}),
    "lt": frozenset({"pvz.", "t.y.", "kt.", "pan."}),
}


class IngestionError(Exception):
    """Raised when a document cannot be decoded or a manifest is malformed."""


class ShortfallError(Exception):
    """Raised when a sampling request exceeds the available lines."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    language: str
    text: str


@dataclass(frozen=True)
class SentenceLine:
    language: str
    text: str
    content_hash: int

    @classmethod
    def make(cls, language: str, text: str) -> "SentenceLine":
        return cls(language=language, text=text, content_hash=line_hash(text))


@dataclass(frozen=True)
class CorpusStats:
    language: str
    token_count: int
    sentence_count: int
    duplicate_ratio: float


def line_hash(text: str) -> int:
    """64-bit content digest of a normalized line; stable across runs."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


class RuleSplitter:
    """Rule-based sentence splitter: terminal punctuation ends a sentence
    unless the word carrying it is a known abbreviation for the language."""

    def __init__(self, abbreviations: Mapping[str, frozenset[str]] | None = None):
        self.abbreviations = dict(DEFAULT_ABBREVIATIONS if abbreviations is None else abbreviations)

    def split(self, text: str, language: str) -> list[str]:
        abbrevs = self.abbreviations.get(language, frozenset())
        sentences: list[str] = []
        start = 0
        i = 0
        n = len(text)
        while i < n:
            if text[i] in TERMINAL_PUNCT:
                j = i + 1
                while j < n and text[j] in TERMINAL_PUNCT:
                    j += 1
                while j < n and text[j] in _CLOSERS:
                    j += 1
                if j >= n or text[j] == " ":
                    word_start = text.rfind(" ", 0, i) + 1
                    word = text[word_start:j]
                    if word.casefold() not in abbrevs:
                        sentences.append(text[start:j])
                        start = j + 1
                i = j
            else:
                i += 1
        tail = text[start:].strip()
        if tail:
            sentences.append(tail)
        return sentences


def normalize(doc: Document, splitter: RuleSplitter | None = None) -> Iterator[SentenceLine]:
    """Split a document into NFC-normalized, whitespace-collapsed sentence lines.

    Input newlines are hard segment boundaries (a headline never merges into
    the following paragraph); sentences are found inside each segment.
    """
    splitter = splitter or RuleSplitter()
    text = unicodedata.normalize("NFC", doc.text)
    for segment in text.split("\n"):
        segment = collapse_whitespace(segment)
        if not segment:
            continue
        for sentence in splitter.split(segment, doc.language):
            yield SentenceLine.make(doc.language, sentence)


class StreamDeduplicator:
    """Exact line dedup: first occurrence survives, order preserved.

    Keyed by (language, content_hash) with a full-string comparison so a
    hash collision can never drop a distinct line. Tracks per-language
    input/removed counts for duplicate_ratio.
    """

    def __init__(self) -> None:
        self._seen: dict[tuple[str, int], str | list[str]] = {}
        self.input_count: dict[str, int] = {}
        self.removed_count: dict[str, int] = {}

    def process(self, lines: Iterable[SentenceLine]) -> Iterator[SentenceLine]:
        for line in lines:
            self.input_count[line.language] = self.input_count.get(line.language, 0) + 1
            key = (line.language, line.content_hash)
            bucket = self._seen.get(key)
            if bucket is None:
                self._seen[key] = line.text
                yield line
            elif isinstance(bucket, str):
                if bucket == line.text:
                    self.removed_count[line.language] = self.removed_count.get(line.language, 0) + 1
                else:
                    self._seen[key] = [bucket, line.text]
                    yield line
            else:
                if line.text in bucket:
                    self.removed_count[line.language] = self.removed_count.get(line.language, 0) + 1
                else:
                    bucket.append(line.text)
                    yield line

    def duplicate_ratio(self, language: str) -> float:
        total = self.input_count.get(language, 0)
        if total == 0:
            return 0.0
        return self.removed_count.get(language, 0) / total


def deduplicate(lines: Iterable[SentenceLine]) -> Iterator[SentenceLine]:
    """Streaming exact dedup without stats bookkeeping access."""
    return StreamDeduplicator().process(lines)


def collect_stats(
    lines: Iterable[SentenceLine],
    dedup: StreamDeduplicator | None = None,
) -> dict[str, CorpusStats]:
    """Token/sentence counts per language over deduplicated lines.

    duplicate_ratio comes from the deduplicator that produced the stream
    (0.0 when none is given).
    """
    tokens: dict[str, int] = {}
    sentences: dict[str, int] = {}
    for line in lines:
        tokens[line.language] = tokens.get(line.language, 0) + len(line.text.split())
        sentences[line.language] = sentences.get(line.language, 0) + 1
    languages = set(tokens)
    if dedup is not None:
        languages |= set(dedup.input_count)
    return {
        lang: CorpusStats(
            language=lang,
            token_count=tokens.get(lang, 0),
            sentence_count=sentences.get(lang, 0),
            duplicate_ratio=dedup.duplicate_ratio(lang) if dedup else 0.0,
        )
        for lang in sorted(languages)
    }


def write_stats_csv(stats: Iterable[CorpusStats], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["language", "token_count", "sentence_count", "duplicate_ratio"])
    for s in stats:
        writer.writerow([s.language, s.token_count, s.sentence_count, f"{s.duplicate_ratio:.6f}"])


def read_stats_csv(source: IO[str]) -> list[CorpusStats]:
    """Ingest an externally produced stats file (metadata passthrough)."""
    rows = []
    reader = csv.DictReader(line for line in source if not line.startswith("#"))
    for row in reader:
        rows.append(
            CorpusStats(
                language=row["language"],
                token_count=int(row["token_count"]),
                sentence_count=int(row["sentence_count"]),
                duplicate_ratio=float(row["duplicate_ratio"]),
            )
        )
    return rows


def sample_line_indices(
    counts: Mapping[str, int],
    total_lines: int,
    policy: str,
    seed: int,
    language_order: Sequence[str],
) -> dict[str, list[int]]:
    """Choose which line numbers to sample per language; pure and seeded.

    random: uniform without replacement over the concatenation of all
    languages. equal-parts: floor(total/L) per language, remainder handed out
    one by one following language_order; shortfall in any language is an error.
    """
    order = [lang for lang in language_order if lang in counts]
    if set(order) != set(counts):
        raise ValueError("language_order must cover every language in counts")
    rng = random.Random(seed)
    if policy == "random":
        available = sum(counts.values())
        if total_lines > available:
            raise ShortfallError(f"requested {total_lines} lines, only {available} available")
        offsets: list[tuple[str, int]] = []
        base = 0
        for lang in order:
            offsets.append((lang, base))
            base += counts[lang]
        chosen = sorted(rng.sample(range(base), total_lines))
        out: dict[str, list[int]] = {lang: [] for lang in order}
        for idx in chosen:
            for lang, start in reversed(offsets):
                if idx >= start:
                    out[lang].append(idx - start)
                    break
        return out
    if policy == "equal-parts":
        n_lang = len(order)
        share = total_lines // n_lang
        remainder = total_lines - share * n_lang
        out = {}
        for pos, lang in enumerate(order):
            want = share + (1 if pos < remainder else 0)
            if want > counts[lang]:
                raise ShortfallError(
                    f"language {lang!r} has {counts[lang]} lines, equal-parts needs {want}"
                )
            out[lang] = sorted(rng.sample(range(counts[lang]), want))
        return out
    raise ValueError(f"unknown sampling policy {policy!r}")


def sample_for_vocab(
    lines_by_language: Mapping[str, Sequence[str]],
    total_lines: int,
    policy: str = "equal-parts",
    seed: int = 0,
    language_order: Sequence[str] | None = None,
) -> list[SentenceLine]:
    """Draw the subword-training subset from in-memory per-language stores."""
    order = list(language_order) if language_order else sorted(lines_by_language)
    counts = {lang: len(lines) for lang, lines in lines_by_language.items()}
    picked = sample_line_indices(counts, total_lines, policy, seed, order)
    sample: list[SentenceLine] = []
    for lang in order:
        store = lines_by_language[lang]
        for idx in picked.get(lang, []):
            sample.append(SentenceLine.make(lang, store[idx]))
    return sample


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    language: str
    source: str = ""


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Manifest: JSON list of {path, language, source}; paths relative to it."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestionError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise IngestionError(f"manifest {path} must be a JSON list")
    out = []
    for entry in entries:
        try:
            doc_path = entry["path"]
            language = entry["language"]
        except (TypeError, KeyError) as exc:
            raise IngestionError(f"manifest entry missing path/language: {entry!r}") from exc
        if not Path(doc_path).is_absolute():
            doc_path = str(path.parent / doc_path)
        out.append(ManifestEntry(path=doc_path, language=language, source=entry.get("source", "")))
    return out


def read_document(path: str | Path, language: str, doc_id: str | None = None) -> Document:
    """Read one UTF-8 document (gzip transparent); decode errors name the byte offset."""
    path = Path(path)
    if path.suffix == ".gz":
        raw = gzip.open(path, "rb").read()
    else:
        raw = path.read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path}: invalid UTF-8 at byte offset {exc.start}") from exc
    return Document(doc_id=doc_id or path.name, language=language, text=text)


def iter_documents(entries: Iterable[ManifestEntry]) -> Iterator[Document]:
    for entry in entries:
        yield read_document(entry.path, entry.language)


def read_sentence_lines(path: str | Path, language: str) -> Iterator[SentenceLine]:
    """Read an already-normalized one-sentence-per-line file."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8") as handle:  # type: ignore[operator]
        for line in handle:
            line = line.rstrip("\n")
            if line:
                yield SentenceLine.make(language, line)
