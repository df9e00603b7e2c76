"""Relative-gap analysis of task scores against model metadata.

Scores from the results table are grouped per (language, task axis); within a
group each model's raw value x is expressed as a relative gap to the group's
best value, gap = 1 - x / x_best.  For plotting, gaps are scaled ten-fold
(except word-analogy, which stays unscaled) and shifted downward by a
per-axis offset so the five task bands stack vertically without overlap.
Each point is joined with the model's subword dictionary size and pretraining
corpus size so vocabulary/training-size trends can be read off the plot.

The package bundles a transcription of published reference scores for
Estonian, Latvian, and Lithuanian masked language models as CSV assets,
pinned by checksum so accidental edits are caught at load time.
"""

from __future__ import annotations

import csv
import hashlib
from collections import defaultdict
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .metrics import TaskResult, read_results_csv

TASK_AXES = ("NER", "POS", "DP-UAS", "DP-LAS", "WA")
AXIS_BY_TASK_METRIC: Mapping[tuple[str, str], str] = {
    ("NER", "macro_f1"): "NER",
    ("POS", "micro_f1"): "POS",
    ("DP", "uas"): "DP-UAS",
    ("DP", "las"): "DP-LAS",
    ("WA", "p_at_5"): "WA",
}
# Offsets are stored as positive magnitudes; plotted_y applies the sign.
OFFSET_BY_AXIS: Mapping[str, float] = {
    "NER": 0.0,
    "POS": 0.5,
    "DP-UAS": 1.0,
    "DP-LAS": 1.5,
    "WA": 2.0,
}
WA_SCALE = 1.0
DEFAULT_SCALE = 10.0
METADATA_HEADER = ("model", "language", "vocab_k", "train_tokens_b")
PLOT_HEADER = ("model", "language", "task", "vocab_size", "gap", "plotted_y")

SCORES_ASSET = "task_scores.csv"
METADATA_ASSET = "model_metadata.csv"
ASSET_CHECKSUMS: Mapping[str, str] = {
    SCORES_ASSET: "a469aa779b25ad8e6058f94bd89a4ebb99f5e8d3aea33de20d214458bf13f95e",
    METADATA_ASSET: "3e6ed16b0cedf322c8e2e78233aab23abbeb3e8b7e7d036d8f5d3250d07b25e4",
}


class AnalysisError(Exception):
    """Raised on inconsistent score/metadata inputs or corrupt assets."""


def scale_for(axis: str) -> float:
    """Gap magnification used for plotting on the given task axis."""
    if axis not in OFFSET_BY_AXIS:
        raise AnalysisError(f"unknown task axis {axis!r}")
    return WA_SCALE if axis == "WA" else DEFAULT_SCALE


@dataclass(frozen=True)
class ModelMetadata:
    """Dictionary size (thousands of pieces) and per-language training tokens
    (billions) for one model; train_tokens_b is None when unknown."""

    model: str
    language: str
    vocab_k: float
    train_tokens_b: float | None

    def __post_init__(self) -> None:
        if not self.model or not self.language:
            raise AnalysisError("model and language must be non-empty")
        if self.vocab_k <= 0:
            raise AnalysisError(f"vocab_k must be positive, got {self.vocab_k}")
        if self.train_tokens_b is not None and self.train_tokens_b <= 0:
            raise AnalysisError(
                f"train_tokens_b must be positive when present, got {self.train_tokens_b}"
            )


@dataclass(frozen=True)
class GapPoint:
    """One model's score on one (language, task axis), expressed as the
    relative gap to the group's best model, joined with model metadata."""

    model: str
    language: str
    task: str
    raw_value: float
    gap: float
    plotted_y: float
    vocab_size: float
    train_tokens: float | None

    def __post_init__(self) -> None:
        if self.task not in OFFSET_BY_AXIS:
            raise AnalysisError(f"unknown task axis {self.task!r}")
        if not 0.0 <= self.gap <= 1.0:
            raise AnalysisError(f"gap {self.gap} outside [0, 1]")
        expected = -(OFFSET_BY_AXIS[self.task] + scale_for(self.task) * self.gap) + 0.0
        if abs(self.plotted_y - expected) > 1e-9:
            raise AnalysisError(
                f"plotted_y {self.plotted_y} inconsistent with gap {self.gap}"
            )


def read_model_metadata(stream: Iterable[str]) -> tuple[ModelMetadata, ...]:
    """Parse metadata CSV (model,language,vocab_k,train_tokens_b).

    Lines starting with '#' are comments; an empty train_tokens_b field means
    the training-corpus size is unknown.
    """
    rows = csv.reader(line for line in stream if not line.startswith("#"))
    try:
        header = next(rows)
    except StopIteration:
        raise AnalysisError("metadata CSV is empty") from None
    if tuple(header) != METADATA_HEADER:
        raise AnalysisError(
            f"bad metadata header {header!r}, expected {list(METADATA_HEADER)}"
        )
    out = []
    for row in rows:
        if not row:
            continue
        if len(row) != len(METADATA_HEADER):
            raise AnalysisError(f"metadata row has {len(row)} fields: {row!r}")
        model, language, vocab_text, tokens_text = row
        try:
            vocab_k = float(vocab_text)
            tokens = float(tokens_text) if tokens_text.strip() else None
        except ValueError as exc:
            raise AnalysisError(f"bad number in metadata row {row!r}") from exc
        out.append(ModelMetadata(model, language, vocab_k, tokens))
    return tuple(out)


def compute_gaps(
    results: Iterable[TaskResult],
    metadata: Iterable[ModelMetadata],
) -> tuple[GapPoint, ...]:
    """Turn raw scores into relative-gap points joined with metadata.

    Within every (language, task axis) group the best raw value defines
    gap = 1 - x / x_best, so the best model sits at gap 0 exactly.  Every
    group must contain at least two models, every scored model must have
    metadata, and no (model, language, axis) cell may appear twice.
    """
    meta_by_key: dict[tuple[str, str], ModelMetadata] = {}
    for item in metadata:
        key = (item.model, item.language)
        if key in meta_by_key:
            raise AnalysisError(f"duplicate metadata for {item.model!r}/{item.language}")
        meta_by_key[key] = item

    groups: dict[tuple[str, str], list[TaskResult]] = defaultdict(list)
    for result in results:
        axis = AXIS_BY_TASK_METRIC[(result.task, result.metric)]
        group = groups[(result.language, axis)]
        if any(prior.model == result.model for prior in group):
            raise AnalysisError(
                f"duplicate score for {result.model!r} on {result.language}/{axis}"
            )
        group.append(result)

    points = []
    for (language, axis), group in groups.items():
        if len(group) < 2:
            raise AnalysisError(
                f"group {language}/{axis} has {len(group)} model(s); need at least 2"
            )
        x_best = max(result.value for result in group)
        if x_best <= 0:
            raise AnalysisError(f"group {language}/{axis} has no positive score")
        for result in group:
            meta = meta_by_key.get((result.model, result.language))
            if meta is None:
                raise AnalysisError(
                    f"no metadata for model {result.model!r} ({result.language})"
                )
            gap = 1.0 - result.value / x_best
            plotted_y = -(OFFSET_BY_AXIS[axis] + scale_for(axis) * gap) + 0.0
            points.append(
                GapPoint(
                    model=result.model,
                    language=result.language,
                    task=axis,
                    raw_value=result.value,
                    gap=gap,
                    plotted_y=plotted_y,
                    vocab_size=meta.vocab_k,
                    train_tokens=meta.train_tokens_b,
                )
            )
    axis_order = {axis: i for i, axis in enumerate(TASK_AXES)}
    points.sort(key=lambda p: (p.language, axis_order[p.task], p.model))
    return tuple(points)


def _format_number(value: float) -> str:
    return format(value, ".12g")


def plot_data_csv(points: Iterable[GapPoint]) -> str:
    """Render points as the plot-data CSV, sorted by vocab_size then task."""
    axis_order = {axis: i for i, axis in enumerate(TASK_AXES)}
    ordered = sorted(
        points,
        key=lambda p: (p.vocab_size, axis_order[p.task], p.language, p.model),
    )
    lines = [",".join(PLOT_HEADER)]
    for p in ordered:
        lines.append(
            ",".join(
                (
                    p.model,
                    p.language,
                    p.task,
                    _format_number(p.vocab_size),
                    _format_number(p.gap),
                    _format_number(p.plotted_y),
                )
            )
        )
    return "\n".join(lines) + "\n"


def task_series(points: Iterable[GapPoint]) -> dict[str, str]:
    """One whitespace-plottable series per task axis.

    Columns are tab-separated: vocab_k, gap, plotted_y, language, model
    (model last because its name may contain spaces), sorted by vocab_k.
    """
    by_axis: dict[str, list[GapPoint]] = defaultdict(list)
    for p in points:
        by_axis[p.task].append(p)
    out = {}
    for axis in TASK_AXES:
        if axis not in by_axis:
            continue
        rows = sorted(
            by_axis[axis], key=lambda p: (p.vocab_size, p.language, p.model)
        )
        lines = ["# vocab_k\tgap\tplotted_y\tlanguage\tmodel"]
        for p in rows:
            lines.append(
                "\t".join(
                    (
                        _format_number(p.vocab_size),
                        _format_number(p.gap),
                        _format_number(p.plotted_y),
                        p.language,
                        p.model,
                    )
                )
            )
        out[axis] = "\n".join(lines) + "\n"
    return out


def emit_plot_data(
    points: Iterable[GapPoint], directory: Path, stem: str = "gaps"
) -> tuple[Path, ...]:
    """Write the plot CSV plus one per-task series file; return the paths."""
    points = list(points)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    csv_path = directory / f"{stem}.csv"
    csv_path.write_text(plot_data_csv(points), encoding="utf-8")
    written.append(csv_path)
    for axis, text in task_series(points).items():
        series_path = directory / f"{stem}_{axis.lower()}.dat"
        series_path.write_text(text, encoding="utf-8")
        written.append(series_path)
    return tuple(written)


def load_asset_text(name: str) -> str:
    """Read a bundled data asset, verifying its pinned checksum."""
    if name not in ASSET_CHECKSUMS:
        raise AnalysisError(f"unknown data asset {name!r}")
    data = resources.files("mlmbench").joinpath("data", name).read_bytes()
    digest = hashlib.sha256(data).hexdigest()
    if digest != ASSET_CHECKSUMS[name]:
        raise AnalysisError(
            f"data asset {name!r} failed checksum verification "
            f"(got {digest}); the bundled file was modified"
        )
    return data.decode("utf-8")


def bundled_reference_results() -> tuple[tuple[TaskResult, ...], tuple[ModelMetadata, ...]]:
    """Return the bundled published scores and model metadata."""
    scores = read_results_csv(load_asset_text(SCORES_ASSET).splitlines())
    metadata = read_model_metadata(load_asset_text(METADATA_ASSET).splitlines())
    return tuple(scores), metadata
