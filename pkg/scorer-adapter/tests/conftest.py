import sys

import pytest
import torch
from transformers import RobertaConfig, RobertaForMaskedLM

TINY_VOCAB = 200
MASK_ID = 4  # matches the harness vocabulary's mask slot


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small random-weight masked LM saved locally, no network involved."""
    config = RobertaConfig(
        vocab_size=TINY_VOCAB,
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=514,
        pad_token_id=1,
        bos_token_id=0,
        eos_token_id=2,
    )
    torch.manual_seed(20260818)
    model = RobertaForMaskedLM(config)
    target = tmp_path_factory.mktemp("tiny-mlm")
    model.save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def adapter_argv(tiny_model_dir):
    return [
        sys.executable,
        "-m",
        "scorer_adapter",
        "--model",
        str(tiny_model_dir),
        "--batch-size",
        "4",
        "--max-len",
        "128",
    ]
