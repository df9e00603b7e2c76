"""The JSON-lines scoring protocol, worker side.

One message per line on standard streams.  The worker announces itself
with ``{"ready": true, "vocab_size": N}``, then answers each request
``{"id", "ids", "mask_positions", "k"}`` with ``{"id", "candidates"}``
where candidates holds one ranked ``[piece_id, log_probability]`` list
per mask, log-probabilities non-increasing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class WireError(Exception):
    """Raised on malformed protocol messages."""


@dataclass(frozen=True)
class Request:
    id: int
    ids: tuple[int, ...]
    mask_positions: tuple[int, ...]
    k: int


def encode_handshake(vocab_size: int) -> str:
    return json.dumps({"ready": True, "vocab_size": vocab_size})


def parse_request(line: str) -> Request:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"invalid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise WireError("request must be a JSON object")
    try:
        request_id = payload["id"]
        ids = payload["ids"]
        positions = payload["mask_positions"]
        k = payload["k"]
    except KeyError as exc:
        raise WireError(f"request missing field {exc}") from None
    if not _is_int(request_id):
        raise WireError(f"request id must be an integer: {request_id!r}")
    if not _int_list(ids) or not _int_list(positions):
        raise WireError("ids and mask_positions must be integer lists")
    if not _is_int(k) or k < 1:
        raise WireError(f"k must be a positive integer: {k!r}")
    if not positions:
        raise WireError("at least one mask position required")
    for prev, cur in zip(positions, positions[1:]):
        if cur <= prev:
            raise WireError("mask positions must be strictly ascending")
    for position in positions:
        if not 0 <= position < len(ids):
            raise WireError(f"mask position {position} out of range")
    return Request(request_id, tuple(ids), tuple(positions), k)


def encode_response(
    request_id: int, candidates: list[list[tuple[int, float]]]
) -> str:
    return json.dumps(
        {
            "id": request_id,
            "candidates": [
                [[piece, logp] for piece, logp in per_mask]
                for per_mask in candidates
            ],
        }
    )


def _is_int(value: object) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _int_list(values: object) -> bool:
    return isinstance(values, list) and all(_is_int(v) for v in values)
