"""Masked-LM inference worker speaking the JSON-lines scoring protocol.

Wraps any Hugging Face masked-language-model checkpoint (local path or
hub identifier) so the evaluation harness can query it like the
count-based reference scorer: handshake first, then top-k pieces with
log-softmax scores per masked position.

Requests carry piece ids in the model's own vocabulary — the harness
must use the vocabulary file exported from the model, with the model's
mask token id already placed at the masked positions.  Ids pass through
to the model unchanged.

Concurrency: a single reader thread parses stdin into a bounded queue
(backpressure), the main loop micro-batches requests up to the
configured batch size within a small time window and runs inference,
and a single writer thread emits responses.  Inference runs in eval
mode under ``torch.no_grad``, so output is deterministic.
"""

from __future__ import annotations

import argparse
import queue
import sys
import threading
from dataclasses import dataclass
from typing import Sequence, TextIO

import torch
from transformers import AutoModelForMaskedLM

from .wire import Request, WireError, encode_handshake, encode_response, parse_request

BATCH_WINDOW_SECONDS = 0.002
# roberta-style position embeddings reserve slots for the pad offset
_OFFSET_POSITION_MODELS = {"roberta", "xlm-roberta", "camembert"}


class AdapterError(Exception):
    """Raised on configuration, model-loading, or request failures."""


@dataclass(frozen=True)
class AdapterConfig:
    """How to load and drive the model."""

    model: str
    device: str = "cpu"
    batch_size: int = 8
    max_len: int = 512

    def __post_init__(self) -> None:
        if not self.model:
            raise AdapterError("model identifier or path required")
        if self.batch_size < 1:
            raise AdapterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_len < 2:
            raise AdapterError(f"max_len must be >= 2, got {self.max_len}")


def positional_capacity(model_config) -> int:
    """Longest input the model's position embeddings can represent."""
    capacity = int(getattr(model_config, "max_position_embeddings", 0))
    if capacity <= 0:  # e.g. relative-position models: no fixed cap
        return 1 << 30
    if model_config.model_type in _OFFSET_POSITION_MODELS:
        capacity -= 2
    return capacity


class ModelScorer:
    """Batched top-k masked-token prediction over one loaded model."""

    def __init__(self, config: AdapterConfig):
        try:
            model = AutoModelForMaskedLM.from_pretrained(config.model)
        except Exception as exc:
            raise AdapterError(f"cannot load model {config.model!r}: {exc}") from exc
        try:
            self._device = torch.device(config.device)
            model.to(self._device)
        except (RuntimeError, ValueError) as exc:
            raise AdapterError(f"cannot use device {config.device!r}: {exc}") from exc
        model.eval()
        self._model = model
        capacity = positional_capacity(model.config)
        if config.max_len > capacity:
            raise AdapterError(
                f"max_len {config.max_len} exceeds the model's positional "
                f"capacity of {capacity}"
            )
        self._max_len = config.max_len
        self._vocab_size = int(model.config.vocab_size)
        pad_id = model.config.pad_token_id
        self._pad_id = int(pad_id) if pad_id is not None else 0

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def score_batch(self, requests: Sequence[Request]) -> list[str]:
        """Run one padded batch; return encoded response lines in order."""
        for request in requests:
            if len(request.ids) > self._max_len:
                raise AdapterError(
                    f"request {request.id} has {len(request.ids)} tokens; "
                    f"max_len is {self._max_len}"
                )
            if not request.ids:
                raise AdapterError(f"request {request.id} has no tokens")
            for piece in request.ids:
                if not 0 <= piece < self._vocab_size:
                    raise AdapterError(
                        f"request {request.id} holds piece id {piece} outside "
                        f"the model vocabulary of {self._vocab_size}"
                    )
        longest = max(len(request.ids) for request in requests)
        input_ids = torch.full(
            (len(requests), longest), self._pad_id, dtype=torch.long
        )
        attention_mask = torch.zeros((len(requests), longest), dtype=torch.long)
        for row, request in enumerate(requests):
            input_ids[row, : len(request.ids)] = torch.tensor(
                request.ids, dtype=torch.long
            )
            attention_mask[row, : len(request.ids)] = 1
        with torch.no_grad():
            logits = self._model(
                input_ids=input_ids.to(self._device),
                attention_mask=attention_mask.to(self._device),
            ).logits
        log_probs = torch.log_softmax(logits.float().cpu(), dim=-1)

        lines = []
        for row, request in enumerate(requests):
            k = min(request.k, self._vocab_size)
            candidates = []
            for position in request.mask_positions:
                top = torch.topk(log_probs[row, position], k)
                candidates.append(
                    [
                        (int(piece), min(float(logp), 0.0))
                        for piece, logp in zip(top.indices, top.values)
                    ]
                )
            lines.append(encode_response(request.id, candidates))
        return lines


def serve(
    scorer: ModelScorer,
    in_stream: TextIO,
    out_stream: TextIO,
    batch_size: int,
    window: float = BATCH_WINDOW_SECONDS,
) -> None:
    """Answer requests until EOF: handshake, then micro-batched inference."""
    depth = max(2 * batch_size, 8)
    requests: queue.Queue = queue.Queue(maxsize=depth)
    responses: queue.Queue = queue.Queue(maxsize=depth)
    read_failure: list[WireError] = []

    def read_loop() -> None:
        try:
            for line in in_stream:
                if not line.strip():
                    continue
                requests.put(parse_request(line))
        except WireError as exc:
            read_failure.append(exc)
        finally:
            requests.put(None)

    def write_loop() -> None:
        while True:
            line = responses.get()
            if line is None:
                break
            out_stream.write(line + "\n")
            out_stream.flush()

    out_stream.write(encode_handshake(scorer.vocab_size) + "\n")
    out_stream.flush()
    reader = threading.Thread(target=read_loop, daemon=True)
    writer = threading.Thread(target=write_loop, daemon=True)
    reader.start()
    writer.start()
    try:
        done = False
        while not done:
            first = requests.get()
            if first is None:
                break
            batch = [first]
            while len(batch) < batch_size:
                try:
                    nxt = requests.get(timeout=window)
                except queue.Empty:
                    break
                if nxt is None:
                    done = True
                    break
                batch.append(nxt)
            for line in scorer.score_batch(batch):
                responses.put(line)
    finally:
        responses.put(None)
        writer.join()
    if read_failure:
        raise AdapterError(str(read_failure[0]))


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="mlmbench-scorer-adapter",
        description=(
            "Serve a pretrained masked language model on stdio, speaking the "
            "JSON-lines scoring protocol."
        ),
    )
    parser.add_argument("--model", required=True, help="checkpoint path or identifier")
    parser.add_argument("--device", default="cpu", help="torch device (default: cpu)")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--max-len", type=int, default=512)
    args = parser.parse_args(argv)
    try:
        config = AdapterConfig(
            model=args.model,
            device=args.device,
            batch_size=args.batch_size,
            max_len=args.max_len,
        )
        scorer = ModelScorer(config)
        serve(scorer, sys.stdin, sys.stdout, config.batch_size)
    except (AdapterError, OSError) as exc:
        print(f"mlmbench-scorer-adapter: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
