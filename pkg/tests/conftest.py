import json

import numpy as np
import pytest

from effcl.encoder import EncoderConfig
from effcl.curriculum import CurriculumPolicy
from effcl.trainer import TrainConfig


def write_corpus(path, docs):
    """docs: list of token-string lists, one document per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(" ".join(doc) + "\n")
    return path


def random_corpus(path, rng, num_docs, doc_len_range, num_types=60):
    types = [f"w{i}" for i in range(num_types)]
    lo, hi = doc_len_range
    docs = [
        [types[rng.integers(num_types)] for _ in range(rng.integers(lo, hi + 1))]
        for _ in range(num_docs)
    ]
    return write_corpus(path, docs)


@pytest.fixture
def tiny_encoder_config():
    return EncoderConfig(
        num_layers=2,
        hidden_dim=16,
        num_heads=2,
        ffn_dim=32,
        vocab_size=64,
        max_len=16,
        hook_layer_choices=(1, 2),
    )


@pytest.fixture
def tiny_train_config(tmp_path, tiny_encoder_config):
    """A 12-document corpus plus a config that trains in well under a second."""
    rng = np.random.default_rng(123)
    corpus = random_corpus(tmp_path / "corpus.txt", rng, num_docs=12,
                           doc_len_range=(20, 30))
    return TrainConfig(
        corpus_path=str(corpus),
        output_dir=str(tmp_path / "out"),
        encoder=tiny_encoder_config,
        curriculum=CurriculumPolicy(mode="discrete"),
        seed=7,
        batch_size=4,
        anchor_len=16,
        epochs=1,
    )


def config_as_json(config, path):
    path = str(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2)
    return path
