"""Dependency trees as per-token transition labels.

A projective dependency tree is linearized through the arc-standard
transition system: one SHIFT per word, one arc transition per head
attachment, then the transition sequence is re-chunked into exactly one
label per word.  Decoding replays labels (well formed or not) back into
a valid rooted tree; inapplicable transitions are skipped and words left
headless are attached to the artificial root.

Trees travel in CoNLL-U files, label sequences in two-column
tab-separated token files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

SHIFT = "SH"
LEFT_ARC = "LA"
RIGHT_ARC = "RA"
ROOT_REL = "root"
CHUNK_SEP = "+"

_ARC_RE = re.compile(r"(LA|RA)@(.+)")
_CONLLU_COLUMNS = 10


class DepCodecError(Exception):
    """Base class for codec failures."""


class TreeError(DepCodecError):
    """Raised when head/relation arrays do not form a rooted tree."""


class NonProjectiveError(DepCodecError):
    """Raised when the transition oracle is asked for a crossing tree."""


class FormatError(DepCodecError):
    """Raised on malformed CoNLL-U, label lines, or label strings."""


def _arcs_cross(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """True when the two arcs interleave strictly.

    Endpoints are positions with the artificial root at 0; arcs that
    share an endpoint never cross.
    """
    l1, r1 = min(a), max(a)
    l2, r2 = min(b), max(b)
    return l1 < l2 < r1 < r2 or l2 < l1 < r2 < r1


@dataclass(frozen=True)
class DepTree:
    """A rooted dependency tree over words 1..n.

    ``heads[i]`` is the head position of word i+1, with 0 the artificial
    root; ``rels[i]`` is its relation string.  Relation strings must not
    contain the label separator, tabs, or newlines.
    """

    heads: tuple[int, ...]
    rels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "rels", tuple(self.rels))
        if len(self.heads) != len(self.rels):
            raise TreeError(
                f"{len(self.heads)} heads but {len(self.rels)} relations"
            )
        n = len(self.heads)
        for word, head in enumerate(self.heads, start=1):
            if not 0 <= head <= n:
                raise TreeError(f"head of word {word} is {head}, outside 0..{n}")
        for word, rel in enumerate(self.rels, start=1):
            if not rel or set(rel) & {CHUNK_SEP, "\t", "\n"}:
                raise TreeError(f"bad relation for word {word}: {rel!r}")
        for word in range(1, n + 1):
            seen = set()
            node = word
            while node != 0:
                if node in seen:
                    raise TreeError(f"cycle through word {node}")
                seen.add(node)
                node = self.heads[node - 1]

    @property
    def n(self) -> int:
        return len(self.heads)

    def head_of(self, word: int) -> int:
        return self.heads[word - 1]

    def rel_of(self, word: int) -> str:
        return self.rels[word - 1]

    def arcs(self) -> Iterator[tuple[int, int]]:
        """Yield (head, dependent) pairs, dependents in word order."""
        for word, head in enumerate(self.heads, start=1):
            yield head, word

    @property
    def is_projective(self) -> bool:
        arcs = list(self.arcs())
        for i, a in enumerate(arcs):
            for b in arcs[i + 1 :]:
                if _arcs_cross(a, b):
                    return False
        return True


def oracle(tree: DepTree) -> list[str]:
    """Static arc-standard transition sequence for a projective tree.

    The returned list has exactly 2n entries: n SHIFTs plus one
    LA@rel or RA@rel per word.
    """
    if not tree.is_projective:
        raise NonProjectiveError("tree has crossing arcs")
    n = tree.n
    pending_deps = [0] * (n + 1)
    for head, _ in tree.arcs():
        pending_deps[head] += 1
    stack = [0]
    buffer = list(range(1, n + 1))
    cursor = 0
    transitions: list[str] = []
    while cursor < n or len(stack) > 1:
        if len(stack) >= 2:
            s0, s1 = stack[-1], stack[-2]
            if s1 != 0 and tree.head_of(s1) == s0 and pending_deps[s1] == 0:
                transitions.append(f"{LEFT_ARC}@{tree.rel_of(s1)}")
                del stack[-2]
                pending_deps[s0] -= 1
                continue
            if tree.head_of(s0) == s1 and pending_deps[s0] == 0:
                transitions.append(f"{RIGHT_ARC}@{tree.rel_of(s0)}")
                stack.pop()
                pending_deps[s1] -= 1
                continue
        if cursor < n:
            stack.append(buffer[cursor])
            cursor += 1
            transitions.append(SHIFT)
            continue
        raise NonProjectiveError("transition system stuck; tree not parsable")
    return transitions


def encode_labels(tree: DepTree) -> tuple[str, ...]:
    """One label per word: its SHIFT plus the arcs emitted before the next.

    Arc transitions after the final SHIFT join the last word's label.
    """
    transitions = oracle(tree)
    chunks: list[list[str]] = []
    for transition in transitions:
        if transition == SHIFT:
            chunks.append([SHIFT])
        else:
            chunks[-1].append(transition)
    return tuple(CHUNK_SEP.join(chunk) for chunk in chunks)


def parse_label(label: str) -> tuple[str, ...]:
    """Split a label into its arc transitions, validating the grammar."""
    parts = label.split(CHUNK_SEP)
    if parts[0] != SHIFT:
        raise FormatError(f"label must start with {SHIFT}: {label!r}")
    for part in parts[1:]:
        if not _ARC_RE.fullmatch(part):
            raise FormatError(f"bad transition {part!r} in label {label!r}")
    return tuple(parts[1:])


def decode_labels(labels: Sequence[str], n: int) -> DepTree:
    """Replay labels into a tree, skipping inapplicable transitions.

    Total over grammar-conforming labels: arcs that would pop the root,
    re-head an attached word, or fire on a short stack are dropped, and
    words still headless afterwards are attached to the root.
    """
    labels = tuple(labels)
    if n != len(labels):
        raise FormatError(f"{len(labels)} labels for {n} words")
    heads = [0] * (n + 1)
    rels = [ROOT_REL] * (n + 1)
    attached = [False] * (n + 1)
    stack = [0]
    for word in range(1, n + 1):
        arcs = parse_label(labels[word - 1])
        stack.append(word)
        for arc in arcs:
            if len(stack) < 2:
                continue
            kind, rel = arc[:2], arc[3:]
            s0, s1 = stack[-1], stack[-2]
            if kind == LEFT_ARC:
                if s1 == 0 or attached[s1]:
                    continue
                heads[s1], rels[s1], attached[s1] = s0, rel, True
                del stack[-2]
            else:
                if attached[s0]:
                    continue
                heads[s0], rels[s0], attached[s0] = s1, rel, True
                stack.pop()
    return DepTree(tuple(heads[1:]), tuple(rels[1:]))


def _crossing_dependent(heads: Sequence[int]) -> int | None:
    """Smallest word whose arc crosses another and whose head is liftable."""
    arcs = [(head, word) for word, head in enumerate(heads, start=1)]
    for head, word in arcs:
        if head == 0:
            continue
        if any(_arcs_cross((head, word), other) for other in arcs if other[1] != word):
            return word
    return None


def projectivize(tree: DepTree) -> DepTree:
    """Lift crossing arcs to the grandparent until no crossings remain.

    Relations are preserved; a projective tree is returned unchanged.
    """
    heads = list(tree.heads)
    changed = False
    while True:
        word = _crossing_dependent(heads)
        if word is None:
            break
        heads[word - 1] = heads[heads[word - 1] - 1]
        changed = True
    if not changed:
        return tree
    return DepTree(tuple(heads), tree.rels)


@dataclass(frozen=True)
class ParsedSentence:
    """Forms plus tree for one sentence, with its comment lines."""

    forms: tuple[str, ...]
    tree: DepTree
    comments: tuple[str, ...] = ()


def read_conllu(stream: Iterable[str]) -> Iterator[ParsedSentence]:
    """Parse CoNLL-U sentences.

    Multiword-token ranges and empty nodes are skipped; word ids must be
    consecutive from 1 after that.
    """
    comments: list[str] = []
    rows: list[tuple[int, str, int, str]] = []

    def build() -> ParsedSentence:
        expected = list(range(1, len(rows) + 1))
        if [row[0] for row in rows] != expected:
            raise FormatError(f"word ids not consecutive: {[r[0] for r in rows]}")
        tree = DepTree(
            tuple(row[2] for row in rows), tuple(row[3] for row in rows)
        )
        return ParsedSentence(
            forms=tuple(row[1] for row in rows),
            tree=tree,
            comments=tuple(comments),
        )

    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            if rows:
                yield build()
            comments, rows = [], []
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != _CONLLU_COLUMNS:
            raise FormatError(
                f"line {lineno}: expected {_CONLLU_COLUMNS} columns, got {len(cols)}"
            )
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            word = int(cols[0])
            head = int(cols[6])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        rows.append((word, cols[1], head, cols[7]))
    if rows:
        yield build()


def write_conllu(sentences: Iterable[ParsedSentence], stream: TextIO) -> int:
    """Write sentences in CoNLL-U, filling unknown columns with ``_``."""
    count = 0
    for sentence in sentences:
        for comment in sentence.comments:
            stream.write(comment + "\n")
        for word, form in enumerate(sentence.forms, start=1):
            cols = (
                str(word),
                form,
                "_",
                "_",
                "_",
                "_",
                str(sentence.tree.head_of(word)),
                sentence.tree.rel_of(word),
                "_",
                "_",
            )
            stream.write("\t".join(cols) + "\n")
        stream.write("\n")
        count += 1
    return count


def write_labels(
    items: Iterable[tuple[Sequence[str], Sequence[str]]], stream: TextIO
) -> int:
    """Write ``FORM<TAB>LABEL`` lines, one blank line after each sentence."""
    count = 0
    for forms, labels in items:
        if len(forms) != len(labels):
            raise FormatError(f"{len(forms)} forms but {len(labels)} labels")
        for form, label in zip(forms, labels):
            stream.write(f"{form}\t{label}\n")
        stream.write("\n")
        count += 1
    return count


def read_labels(
    stream: Iterable[str],
) -> Iterator[tuple[tuple[str, ...], tuple[str, ...]]]:
    """Read ``FORM<TAB>LABEL`` sentences separated by blank lines.

    Lines starting with ``#`` that contain no tab are comments (provenance
    headers); a form literally starting with ``#`` still works because data
    lines always contain the separating tab.
    """
    forms: list[str] = []
    labels: list[str] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n")
        if line.startswith("#") and "\t" not in line:
            continue
        if not line.strip():
            if forms:
                yield tuple(forms), tuple(labels)
            forms, labels = [], []
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"line {lineno}: expected FORM<TAB>LABEL, got {line!r}")
        forms.append(fields[0])
        labels.append(fields[1])
    if forms:
        yield tuple(forms), tuple(labels)
