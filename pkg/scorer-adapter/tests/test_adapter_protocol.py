"""Protocol conformance of the adapter worker.

These are the same client-side interactions the harness's own test suite
runs against the count-based reference scorer, pointed at the adapter
process instead, plus adapter-specific configuration checks.
"""

import io
import json
import random
import subprocess
import sys

import pytest

from mlmbench.scorer import MASK, ScorerClient, ScoreRequest
from scorer_adapter import AdapterConfig, AdapterError, ModelScorer, serve
from scorer_adapter.wire import Request, WireError, parse_request

TINY_VOCAB = 200  # the conftest checkpoint's vocabulary
MASK_ID = 4  # the harness vocabulary's mask slot


def make_request(request_id, length=12, masks=(3,), k=5, seed=0):
    rng = random.Random(seed + request_id)
    ids = [rng.randrange(5, TINY_VOCAB) for _ in range(length)]
    for position in masks:
        ids[position] = MASK_ID
    return ScoreRequest(request_id, tuple(ids), tuple(masks), k)


class TestConfig:
    def test_defaults(self):
        config = AdapterConfig(model="x")
        assert config.device == "cpu"
        assert config.batch_size == 8
        assert config.max_len == 512

    @pytest.mark.parametrize(
        "kwargs",
        [{"model": ""}, {"model": "x", "batch_size": 0}, {"model": "x", "max_len": 1}],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(AdapterError):
            AdapterConfig(**kwargs)

    def test_max_len_beyond_positional_capacity(self, tiny_model_dir):
        with pytest.raises(AdapterError, match="positional capacity"):
            ModelScorer(AdapterConfig(model=str(tiny_model_dir), max_len=513))

    def test_max_len_at_capacity_loads(self, tiny_model_dir):
        scorer = ModelScorer(AdapterConfig(model=str(tiny_model_dir), max_len=512))
        assert scorer.vocab_size == TINY_VOCAB

    def test_unloadable_model_is_adapter_error(self, tmp_path):
        with pytest.raises(AdapterError, match="cannot load"):
            ModelScorer(AdapterConfig(model=str(tmp_path / "missing")))


class TestWire:
    def test_request_parses(self):
        line = '{"id": 7, "ids": [1, 2, 3], "mask_positions": [1], "k": 4}'
        assert parse_request(line) == Request(7, (1, 2, 3), (1,), 4)

    @pytest.mark.parametrize(
        "line",
        [
            "not json",
            "[1, 2]",
            '{"id": 1, "ids": [1], "k": 5}',
            '{"id": true, "ids": [1], "mask_positions": [0], "k": 5}',
            '{"id": 1, "ids": [1, "a"], "mask_positions": [0], "k": 5}',
            '{"id": 1, "ids": [1], "mask_positions": [], "k": 5}',
            '{"id": 1, "ids": [1, 2], "mask_positions": [1, 1], "k": 5}',
            '{"id": 1, "ids": [1], "mask_positions": [3], "k": 5}',
            '{"id": 1, "ids": [1], "mask_positions": [0], "k": 0}',
        ],
    )
    def test_bad_requests_rejected(self, line):
        with pytest.raises(WireError):
            parse_request(line)


class TestServeInProcess:
    def test_handshake_then_id_faithful_response(self, tiny_model_dir):
        scorer = ModelScorer(AdapterConfig(model=str(tiny_model_dir), max_len=64))
        request = make_request(9)
        source = io.StringIO(
            '{"id": 9, "ids": %s, "mask_positions": [3], "k": 5}\n'
            % list(request.ids)
        )
        out = io.StringIO()
        serve(scorer, source, out, batch_size=4)
        lines = out.getvalue().splitlines()
        handshake = json.loads(lines[0])
        assert handshake == {"ready": True, "vocab_size": TINY_VOCAB}
        response = json.loads(lines[1])
        assert response["id"] == 9
        assert len(response["candidates"]) == 1

    def test_oversize_request_fails_the_worker(self, tiny_model_dir):
        scorer = ModelScorer(AdapterConfig(model=str(tiny_model_dir), max_len=8))
        ids = [MASK_ID] + [7] * 20
        source = io.StringIO(
            '{"id": 1, "ids": %s, "mask_positions": [0], "k": 2}\n' % ids
        )
        with pytest.raises(AdapterError, match="max_len"):
            serve(scorer, source, io.StringIO(), batch_size=2)

    def test_out_of_vocabulary_piece_rejected(self, tiny_model_dir):
        scorer = ModelScorer(AdapterConfig(model=str(tiny_model_dir), max_len=64))
        source = io.StringIO(
            '{"id": 1, "ids": [4, 9999], "mask_positions": [0], "k": 2}\n'
        )
        with pytest.raises(AdapterError, match="outside"):
            serve(scorer, source, io.StringIO(), batch_size=2)


class TestSubprocessProtocol:
    """The interaction corpus the harness runs against the reference scorer."""

    def test_handshake_declares_model_vocabulary(self, adapter_argv):
        with ScorerClient(adapter_argv, timeout=120) as client:
            assert client.vocab_size == TINY_VOCAB

    def test_echo_round_trip(self, adapter_argv):
        with ScorerClient(adapter_argv, timeout=120) as client:
            response = client.score(make_request(5))
            assert response.id == 5
            assert len(response.candidates) == 1

    def test_one_candidate_list_per_mask(self, adapter_argv):
        with ScorerClient(adapter_argv, timeout=120) as client:
            response = client.score(make_request(2, length=20, masks=(1, 7, 12)))
            assert len(response.candidates) == 3
            for per_mask in response.candidates:
                assert len(per_mask) == 5

    def test_scores_non_increasing_and_k_truncated(self, adapter_argv):
        with ScorerClient(adapter_argv, timeout=120) as client:
            response = client.score(make_request(3, k=10_000))
            (per_mask,) = response.candidates
            assert len(per_mask) == TINY_VOCAB
            scores = [logp for _, logp in per_mask]
            assert scores == sorted(scores, reverse=True)
            assert all(logp <= 0.0 for logp in scores)

    def test_hundred_requests_in_flight(self, adapter_argv):
        with ScorerClient(adapter_argv, timeout=240) as client:
            futures = [client.submit(make_request(i)) for i in range(100)]
            for i, future in enumerate(futures):
                assert future.result(240).id == i

    def test_deterministic_inference(self, adapter_argv):
        request = make_request(11, length=16, masks=(2, 9), k=7)
        with ScorerClient(adapter_argv, timeout=120) as client:
            first = client.score(request)
            second = client.score(ScoreRequest(12, request.ids, (2, 9), 7))
        assert first.candidates == second.candidates

    def test_mask_protocol_constant_matches_harness(self):
        assert MASK == MASK_ID  # probes place this id at masked positions

    def test_load_failure_diagnostic_and_exit(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "scorer_adapter", "--model", str(tmp_path / "no")],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert proc.returncode == 1
        assert "error" in proc.stderr
        assert proc.stdout == ""  # no handshake on failure

    def test_usage_error_exit_two(self):
        proc = subprocess.run(
            [sys.executable, "-m", "scorer_adapter"],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 2
