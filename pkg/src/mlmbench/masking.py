"""Whole-word-masked batch generation and the pretraining manifest.

Sentence encodings are packed into fixed-budget windows, then words are
masked atomically: every piece of a chosen word is corrupted together, so no
word is ever partially seen and partially masked.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .subword import BOS, EOS, N_SPECIALS, MASK, Encoding, SubwordVocabulary

IGNORE_ID = -100  # target at unselected positions; deliberately outside any vocab range

MODEL_VOCAB_SIZES = {"litlat": 84000, "estroberta": 40000}

BATCH_MAGIC = "mlmb1"


@dataclass(frozen=True)
class MaskingConfig:
    mask_prob: float = 0.15
    corruption_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seq_len: int = 512
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_prob < 1.0:
            raise ValueError(f"mask_prob must be in (0,1), got {self.mask_prob}")
        if len(self.corruption_split) != 3 or abs(sum(self.corruption_split) - 1.0) > 1e-9:
            raise ValueError(f"corruption_split must sum to 1, got {self.corruption_split}")
        if any(f < 0 for f in self.corruption_split):
            raise ValueError("corruption_split fractions must be non-negative")
        if self.seq_len < 2:
            raise ValueError(f"seq_len must be at least 2, got {self.seq_len}")


@dataclass(frozen=True)
class PackedWindow:
    ids: tuple[int, ...]
    word_spans: tuple[tuple[int, int], ...]
    index: int


@dataclass(frozen=True)
class MaskedExample:
    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    mask_flags: tuple[bool, ...]


@dataclass
class PipelineCounters:
    truncated_words: int = 0
    unmaskable_windows: int = 0


def pack_sequences(
    encodings: Iterable[Encoding],
    seq_len: int,
    counters: PipelineCounters | None = None,
) -> Iterator[PackedWindow]:
    """Greedily pack consecutive sentences into BOS...EOS windows of <= seq_len.

    A sentence that fits the piece budget is never split; an oversized one is
    split at word boundaries across windows, and a single word beyond the
    budget is truncated (counted in counters.truncated_words).
    """
    budget = seq_len - 2
    if budget < 1:
        raise ValueError(f"seq_len {seq_len} leaves no room for content")
    cur_ids: list[int] = []
    cur_spans: list[tuple[int, int]] = []
    index = 0

    def flush() -> PackedWindow:
        nonlocal cur_ids, cur_spans, index
        window = PackedWindow(
            ids=(BOS, *cur_ids, EOS),
            word_spans=tuple((s + 1, e + 1) for s, e in cur_spans),
            index=index,
        )
        cur_ids, cur_spans = [], []
        index += 1
        return window

    def add_word(pieces: tuple[int, ...]) -> None:
        start = len(cur_ids)
        cur_ids.extend(pieces)
        cur_spans.append((start, len(cur_ids)))

    for enc in encodings:
        if not enc.ids:
            continue
        if len(enc.ids) <= budget:
            if len(cur_ids) + len(enc.ids) > budget:
                yield flush()
            for s, e in enc.word_spans:
                add_word(enc.ids[s:e])
            continue
        # oversized sentence: start fresh and fill word by word
        if cur_ids:
            yield flush()
        for s, e in enc.word_spans:
            pieces = enc.ids[s:e]
            if len(pieces) > budget:
                pieces = pieces[:budget]
                if counters:
                    counters.truncated_words += 1
            if len(cur_ids) + len(pieces) > budget:
                yield flush()
            add_word(pieces)
    if cur_ids:
        yield flush()


def mask(
    window: PackedWindow,
    cfg: MaskingConfig,
    vocab: SubwordVocabulary,
    counters: PipelineCounters | None = None,
) -> MaskedExample:
    """Whole-word masking of one packed window, reproducible per (seed, index).

    Words are visited in a seeded random order and taken while the masked
    token count stays at or below mask_prob of the non-special tokens; the
    first word that would overshoot is still taken when that lands closer to
    the target. Selected words are corrupted word-atomically per the
    (mask, random, keep) split.
    """
    if not window.word_spans:
        if counters:
            counters.unmaskable_windows += 1
        return MaskedExample(
            input_ids=window.ids,
            target_ids=(IGNORE_ID,) * len(window.ids),
            mask_flags=(False,) * len(window.ids),
        )
    rng = random.Random(f"{cfg.seed}:{window.index}")
    maskable = sum(e - s for s, e in window.word_spans)
    target_tokens = cfg.mask_prob * maskable

    order = list(range(len(window.word_spans)))
    rng.shuffle(order)
    selected: list[int] = []
    total = 0
    for word_index in order:
        s, e = window.word_spans[word_index]
        size = e - s
        if total + size <= target_tokens:
            selected.append(word_index)
            total += size
        else:
            if (total + size) - target_tokens < target_tokens - total:
                selected.append(word_index)
            break

    input_ids = list(window.ids)
    target_ids = [IGNORE_ID] * len(window.ids)
    mask_flags = [False] * len(window.ids)
    mask_frac, random_frac, _ = cfg.corruption_split
    first_random_id = N_SPECIALS
    n_random_ids = vocab.size - N_SPECIALS
    for word_index in sorted(selected):
        s, e = window.word_spans[word_index]
        for pos in range(s, e):
            target_ids[pos] = window.ids[pos]
            mask_flags[pos] = True
        draw = rng.random()
        if draw < mask_frac:
            for pos in range(s, e):
                input_ids[pos] = MASK
        elif draw < mask_frac + random_frac:
            for pos in range(s, e):
                input_ids[pos] = first_random_id + rng.randrange(n_random_ids)
        # else: kept unchanged, still predicted
    return MaskedExample(tuple(input_ids), tuple(target_ids), tuple(mask_flags))


def masked_stream(
    encodings: Iterable[Encoding],
    cfg: MaskingConfig,
    vocab: SubwordVocabulary,
    counters: PipelineCounters | None = None,
) -> Iterator[MaskedExample]:
    for window in pack_sequences(encodings, cfg.seq_len, counters):
        yield mask(window, cfg, vocab, counters)


@dataclass(frozen=True)
class TrainManifest:
    """Pretraining hyperparameters handed to an external trainer.

    Values the training recipe does not pin (learning rate, warmup) are kept
    as explicit nulls rather than silently invented.
    """

    model: str
    vocab_size: int
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    dropout: float = 0.1
    epochs: int = 40
    per_device_batch_tokens: int = 20480
    grad_accum_steps: int = 32
    devices: int = 4
    effective_batch_tokens: int = 2621440
    seq_len: int = 512
    architecture: str = "roberta-base-like, 12 layers, hidden 768"
    learning_rate: float | None = None
    warmup_steps: int | None = None
    masking: MaskingConfig = field(default_factory=MaskingConfig)

    def __post_init__(self) -> None:
        expected = self.per_device_batch_tokens * self.grad_accum_steps * self.devices
        if self.effective_batch_tokens != expected:
            raise ValueError(
                f"effective_batch_tokens {self.effective_batch_tokens} != "
                f"{self.per_device_batch_tokens} x {self.grad_accum_steps} x {self.devices}"
            )

    def to_json(self) -> str:
        payload = {
            "model": self.model,
            "vocab_size": self.vocab_size,
            "optimizer": self.optimizer,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "dropout": self.dropout,
            "epochs": self.epochs,
            "per_device_batch_tokens": self.per_device_batch_tokens,
            "grad_accum_steps": self.grad_accum_steps,
            "devices": self.devices,
            "effective_batch_tokens": self.effective_batch_tokens,
            "seq_len": self.seq_len,
            "architecture": self.architecture,
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "masking": {
                "mask_prob": self.masking.mask_prob,
                "corruption_split": list(self.masking.corruption_split),
                "seq_len": self.masking.seq_len,
                "seed": self.masking.seed,
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def emit_manifest(model: str, masking_cfg: MaskingConfig | None = None) -> TrainManifest:
    if model not in MODEL_VOCAB_SIZES:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(MODEL_VOCAB_SIZES)}")
    return TrainManifest(
        model=model,
        vocab_size=MODEL_VOCAB_SIZES[model],
        masking=masking_cfg or MaskingConfig(),
    )


def write_batches(
    examples: Iterable[MaskedExample],
    out: IO[bytes],
    provenance: dict | None = None,
) -> int:
    """Length-prefixed binary records; one JSON header line leads the file.

    Record layout per example: u32 token count n, then n little-endian i32
    input ids, n i32 target ids, n flag bytes.
    """
    header = {"magic": BATCH_MAGIC}
    if provenance:
        header.update(provenance)
    out.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
    count = 0
    for ex in examples:
        n = len(ex.input_ids)
        out.write(struct.pack("<I", n))
        out.write(struct.pack(f"<{n}i", *ex.input_ids))
        out.write(struct.pack(f"<{n}i", *ex.target_ids))
        out.write(bytes(1 if f else 0 for f in ex.mask_flags))
        count += 1
    return count


def read_batches(source: IO[bytes]) -> tuple[dict, list[MaskedExample]]:
    header_line = source.readline()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("magic") != BATCH_MAGIC:
        raise ValueError(f"not a batch file (magic={header.get('magic')!r})")
    examples = []
    while True:
        prefix = source.read(4)
        if not prefix:
            break
        (n,) = struct.unpack("<I", prefix)
        input_ids = struct.unpack(f"<{n}i", source.read(4 * n))
        target_ids = struct.unpack(f"<{n}i", source.read(4 * n))
        flags = tuple(b == 1 for b in source.read(n))
        examples.append(MaskedExample(input_ids, target_ids, flags))
    return header, examples


def write_batches_text(examples: Iterable[MaskedExample], out: IO[str]) -> int:
    """Debug format: one JSON object per example."""
    count = 0
    for ex in examples:
        out.write(
            json.dumps(
                {
                    "input_ids": list(ex.input_ids),
                    "target_ids": list(ex.target_ids),
                    "mask_flags": [1 if f else 0 for f in ex.mask_flags],
                }
            )
            + "\n"
        )
        count += 1
    return count
