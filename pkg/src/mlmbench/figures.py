"""Figure rendering for the relative-gap report.

Plotting is kept out of the analysis module so the library computation has
no rendering dependency; only the command-line report path imports this.
The canvas is driven directly through the Agg backend, so rendering works
headless and never touches global matplotlib state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
from matplotlib.lines import Line2D

from .analysis import GapPoint, TASK_AXES


class FigureError(Exception):
    """Raised when there is nothing to plot or the target cannot be written."""


AXIS_COLORS = {
    "NER": "tab:blue",
    "POS": "tab:orange",
    "DP-UAS": "tab:green",
    "DP-LAS": "tab:red",
    "WA": "tab:purple",
}
_MARKER_CYCLE = "osD^vP*X<>"


def render_gap_figure(
    points: Iterable[GapPoint], path: str | Path, dpi: int = 150
) -> Path:
    """Scatter plot of plotted_y against dictionary size; returns the path.

    Color encodes the task axis, marker shape the language.  The output
    format follows the file suffix (.png, .svg, .pdf).
    """
    points = list(points)
    if not points:
        raise FigureError("no gap points to plot")
    path = Path(path)

    languages = sorted({p.language for p in points})
    marker_for = {
        lang: _MARKER_CYCLE[i % len(_MARKER_CYCLE)]
        for i, lang in enumerate(languages)
    }

    fig = Figure(figsize=(8.0, 6.0))
    canvas = FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    for axis in TASK_AXES:
        for lang in languages:
            subset = [p for p in points if p.task == axis and p.language == lang]
            if not subset:
                continue
            ax.scatter(
                [p.vocab_size for p in subset],
                [p.plotted_y for p in subset],
                color=AXIS_COLORS[axis],
                marker=marker_for[lang],
                s=45,
                alpha=0.85,
                edgecolors="none",
            )
    ax.set_xlabel("dictionary size (thousands of pieces)")
    ax.set_ylabel("relative gap to best model (scaled, offset per task)")
    ax.grid(True, alpha=0.3)

    task_handles = [
        Line2D([], [], color=AXIS_COLORS[a], marker="o", linestyle="", label=a)
        for a in TASK_AXES
        if any(p.task == a for p in points)
    ]
    lang_handles = [
        Line2D(
            [], [], color="gray", marker=marker_for[lang], linestyle="", label=lang
        )
        for lang in languages
    ]
    first = ax.legend(handles=task_handles, loc="lower right", title="task")
    ax.add_artist(first)
    ax.legend(handles=lang_handles, loc="lower left", title="language")

    fig.tight_layout()
    try:
        canvas.print_figure(str(path), dpi=dpi)
    except OSError as exc:
        raise FigureError(f"cannot write figure to {path}: {exc}") from exc
    return path
