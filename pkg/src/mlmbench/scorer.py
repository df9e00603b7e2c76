"""Masked-LM scorer wire protocol plus a count-based reference scorer.

A scorer is a child process speaking newline-delimited JSON on standard
streams: it announces itself with ``{"ready": true, "vocab_size": N}``,
then answers each request ``{"id", "ids", "mask_positions", "k"}`` with
``{"id", "candidates"}`` where candidates holds one ranked
``[piece_id, log_probability]`` list per mask.  Responses may arrive in
any order; the client matches them by id.

The reference scorer predicts each mask from left-neighbor bigram
counts with add-one smoothing (unigram fallback when the neighbor is
absent or itself masked), so every consumer can run without a neural
model.
"""

from __future__ import annotations

import argparse
import json
import math
import subprocess
import sys
import threading
from collections import Counter
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from .corpus import SentenceLine
from .subword import MASK, SubwordVocabulary, encode, load_vocab


class ProtocolError(Exception):
    """Raised on malformed wire messages or invalid requests."""


class ScorerDeadError(Exception):
    """Raised when the scorer process hangs, exits, or breaks the stream."""


@dataclass(frozen=True)
class ScoreRequest:
    """One masked sequence to score; ``k`` candidates wanted per mask."""

    id: int
    ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    k: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "mask_positions", tuple(self.mask_positions))
        if self.k < 1:
            raise ProtocolError(f"k must be >= 1, got {self.k}")
        if not self.mask_positions:
            raise ProtocolError("at least one mask position required")
        for prev, cur in zip(self.mask_positions, self.mask_positions[1:]):
            if cur <= prev:
                raise ProtocolError("mask positions must be strictly ascending")
        for position in self.mask_positions:
            if not 0 <= position < len(self.ids):
                raise ProtocolError(f"mask position {position} out of range")


@dataclass(frozen=True)
class ScoreResponse:
    """Ranked candidates per mask, log-probabilities non-increasing."""

    id: int
    candidates: tuple[tuple[tuple[int, float], ...], ...]

    def __post_init__(self) -> None:
        candidates = tuple(
            tuple((int(piece), float(logp)) for piece, logp in per_mask)
            for per_mask in self.candidates
        )
        object.__setattr__(self, "candidates", candidates)
        for per_mask in candidates:
            for (_, a), (_, b) in zip(per_mask, per_mask[1:]):
                if b > a:
                    raise ProtocolError("candidates not sorted by log-probability")
            for _, logp in per_mask:
                if logp > 0.0:
                    raise ProtocolError(f"log-probability {logp} is positive")


HANDSHAKE_KEY = "ready"


def encode_handshake(vocab_size: int) -> str:
    return json.dumps({"ready": True, "vocab_size": vocab_size})


def parse_handshake(line: str) -> int:
    payload = _parse_object(line)
    if payload.get(HANDSHAKE_KEY) is not True or "vocab_size" not in payload:
        raise ProtocolError(f"bad handshake: {line.strip()!r}")
    vocab_size = payload["vocab_size"]
    if not isinstance(vocab_size, int) or vocab_size < 1:
        raise ProtocolError(f"bad vocab_size in handshake: {vocab_size!r}")
    return vocab_size


def encode_request(request: ScoreRequest) -> str:
    return json.dumps(
        {
            "id": request.id,
            "ids": list(request.ids),
            "mask_positions": list(request.mask_positions),
            "k": request.k,
        }
    )


def parse_request(line: str) -> ScoreRequest:
    payload = _parse_object(line)
    try:
        request_id = payload["id"]
        ids = payload["ids"]
        mask_positions = payload["mask_positions"]
        k = payload["k"]
    except KeyError as exc:
        raise ProtocolError(f"request missing field {exc}") from None
    if not isinstance(request_id, int) or isinstance(request_id, bool):
        raise ProtocolError(f"request id must be an integer: {request_id!r}")
    if not _all_ints(ids) or not _all_ints(mask_positions):
        raise ProtocolError("ids and mask_positions must be integer lists")
    if not isinstance(k, int) or isinstance(k, bool):
        raise ProtocolError(f"k must be an integer: {k!r}")
    return ScoreRequest(request_id, tuple(ids), tuple(mask_positions), k)


def encode_response(response: ScoreResponse) -> str:
    return json.dumps(
        {
            "id": response.id,
            "candidates": [
                [[piece, logp] for piece, logp in per_mask]
                for per_mask in response.candidates
            ],
        }
    )


def parse_response(line: str) -> ScoreResponse:
    payload = _parse_object(line)
    try:
        response_id = payload["id"]
        candidates = payload["candidates"]
    except KeyError as exc:
        raise ProtocolError(f"response missing field {exc}") from None
    if not isinstance(response_id, int) or isinstance(response_id, bool):
        raise ProtocolError(f"response id must be an integer: {response_id!r}")
    if not isinstance(candidates, list):
        raise ProtocolError("candidates must be a list")
    parsed = []
    for per_mask in candidates:
        if not isinstance(per_mask, list):
            raise ProtocolError("per-mask candidates must be a list")
        pairs = []
        for entry in per_mask:
            if (
                not isinstance(entry, list)
                or len(entry) != 2
                or not _all_ints([entry[0]])
                or not isinstance(entry[1], (int, float))
            ):
                raise ProtocolError(f"bad candidate entry {entry!r}")
            pairs.append((entry[0], float(entry[1])))
        parsed.append(tuple(pairs))
    return ScoreResponse(response_id, tuple(parsed))


def _parse_object(line: str) -> dict:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"invalid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise ProtocolError("message must be a JSON object")
    return payload


def _all_ints(values: object) -> bool:
    return isinstance(values, list) and all(
        isinstance(v, int) and not isinstance(v, bool) for v in values
    )


class CountScorer:
    """Deterministic bigram/unigram scorer over a subword vocabulary.

    P(x | left) = (bigram(left, x) + 1) / (successors(left) + V); when
    the left neighbor is absent or masked, P(x) = (unigram(x) + 1) /
    (total + V).  Ties rank by piece id, so output is reproducible
    byte for byte.
    """

    def __init__(self, vocab: SubwordVocabulary, lines: Iterable[SentenceLine] = ()):
        self._vocab = vocab
        self._bigrams: dict[int, Counter[int]] = {}
        self._unigrams: Counter[int] = Counter()
        for line in lines:
            pieces = list(encode(line, vocab).ids)
            self._unigrams.update(pieces)
            for left, right in zip(pieces, pieces[1:]):
                self._bigrams.setdefault(left, Counter())[right] += 1

    @property
    def vocab_size(self) -> int:
        return self._vocab.size

    def _distribution(self, left: int | None) -> list[float]:
        size = self._vocab.size
        if left is not None and left != MASK:
            counts = self._bigrams.get(left, Counter())
            total = sum(counts.values())
        else:
            counts = self._unigrams
            total = sum(counts.values())
        denominator = total + size
        return [
            math.log((counts.get(piece, 0) + 1) / denominator)
            for piece in range(size)
        ]

    def score(self, request: ScoreRequest) -> ScoreResponse:
        for position in request.mask_positions:
            if request.ids[position] != MASK:
                raise ProtocolError(
                    f"position {position} holds id {request.ids[position]}, not a mask"
                )
        per_mask = []
        for position in request.mask_positions:
            left = request.ids[position - 1] if position > 0 else None
            logps = self._distribution(left)
            ranked = sorted(range(len(logps)), key=lambda p: (-logps[p], p))
            top = ranked[: min(request.k, len(logps))]
            per_mask.append(tuple((piece, logps[piece]) for piece in top))
        return ScoreResponse(request.id, tuple(per_mask))


def serve(scorer: CountScorer, in_stream: TextIO, out_stream: TextIO) -> None:
    """Answer requests from ``in_stream`` until EOF, handshake first."""
    out_stream.write(encode_handshake(scorer.vocab_size) + "\n")
    out_stream.flush()
    for line in in_stream:
        if not line.strip():
            continue
        response = scorer.score(parse_request(line))
        out_stream.write(encode_response(response) + "\n")
        out_stream.flush()


class ScorerClient:
    """Client half of the protocol over a child process.

    Requests may be submitted from several threads; a single reader
    thread matches responses to submitters by id.
    """

    def __init__(self, argv: Sequence[str], timeout: float = 30.0):
        self._timeout = timeout
        self._lock = threading.Lock()
        self._pending: dict[int, Future] = {}
        self._death_reason: str | None = None
        self._handshake: Future = Future()
        self._proc = subprocess.Popen(
            list(argv),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        try:
            self.vocab_size: int = self._handshake.result(timeout)
        except FutureTimeoutError:
            self.close()
            raise ScorerDeadError("no handshake before timeout") from None

    def _read_loop(self) -> None:
        assert self._proc.stdout is not None
        try:
            handshake_line = self._proc.stdout.readline()
            if not handshake_line:
                raise ScorerDeadError("scorer exited before handshake")
            self._handshake.set_result(parse_handshake(handshake_line))
            for line in self._proc.stdout:
                if not line.strip():
                    continue
                response = parse_response(line)
                with self._lock:
                    future = self._pending.pop(response.id, None)
                if future is None:
                    raise ProtocolError(f"response for unknown id {response.id}")
                future.set_result(response)
            self._fail_all("scorer closed its output stream")
        except (ProtocolError, ScorerDeadError) as exc:
            self._fail_all(str(exc))

    def _fail_all(self, reason: str) -> None:
        with self._lock:
            self._death_reason = reason
            pending = list(self._pending.values())
            self._pending.clear()
        if not self._handshake.done():
            self._handshake.set_exception(ScorerDeadError(reason))
        for future in pending:
            if not future.done():
                future.set_exception(ScorerDeadError(reason))

    def submit(self, request: ScoreRequest) -> Future:
        """Send one request; the returned future resolves to its response."""
        line = encode_request(request)
        future: Future = Future()
        with self._lock:
            if self._death_reason is not None:
                raise ScorerDeadError(self._death_reason)
            if request.id in self._pending:
                raise ProtocolError(f"request id {request.id} already in flight")
            self._pending[request.id] = future
            try:
                assert self._proc.stdin is not None
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._pending.pop(request.id, None)
                self._death_reason = "scorer stdin closed"
                raise ScorerDeadError(self._death_reason) from None
        return future

    def score(self, request: ScoreRequest) -> ScoreResponse:
        """Submit and wait; raises ScorerDeadError on timeout or death."""
        future = self.submit(request)
        try:
            return future.result(self._timeout)
        except FutureTimeoutError:
            raise ScorerDeadError(
                f"no response for request {request.id} within {self._timeout}s"
            ) from None

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass

    def __enter__(self) -> ScorerClient:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _read_train_lines(path: Path) -> list[SentenceLine]:
    lines = []
    with path.open(encoding="utf-8") as stream:
        for raw in stream:
            text = raw.strip()
            if text:
                lines.append(SentenceLine.make("und", text))
    return lines


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlmbench-scorer",
        description="Serve the count-based reference scorer on stdio.",
    )
    parser.add_argument("--vocab", required=True, type=Path)
    parser.add_argument("--train", type=Path, default=None)
    args = parser.parse_args(argv)
    vocab = load_vocab(args.vocab)
    lines = _read_train_lines(args.train) if args.train else []
    serve(CountScorer(vocab, lines), sys.stdin, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
