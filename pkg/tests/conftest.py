"""Shared fixtures: a tiny deterministic model and corpus for fast tests."""

import pytest
import torch

from docadapt.docdata import (
    SyntheticDomainSpec,
    build_vocab,
    generate_synthetic,
    tokenize,
    tokenize_qa,
)
from docadapt.docmodel import ModelConfig, collate, init_params

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_docs():
    spec = SyntheticDomainSpec(density=0.5, fill_rate=0.8)
    return generate_synthetic(spec, 8, seed=11)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_docs):
    return build_vocab(tiny_docs, size=120)


@pytest.fixture(scope="session")
def tiny_model_config(tiny_vocab):
    return ModelConfig(
        vocab_size=len(tiny_vocab.pieces),
        hidden=16,
        layers=1,
        heads=2,
        max_len=32,
        num_classes=7,
        image_patches=4,
    )


@pytest.fixture(scope="session")
def tiny_scheme(tiny_docs):
    from docadapt.docdata import FUNSD_SCHEME

    return FUNSD_SCHEME


@pytest.fixture(scope="session")
def tiny_tokens(tiny_docs, tiny_vocab, tiny_model_config, tiny_scheme):
    return [
        tokenize(d, tiny_vocab, max_len=tiny_model_config.max_len, scheme=tiny_scheme)
        for d in tiny_docs
    ]


@pytest.fixture(scope="session")
def tiny_qa_tokens(tiny_docs, tiny_vocab, tiny_model_config):
    out = []
    for d in tiny_docs:
        for qa in d.qa_pairs or []:
            out.append(tokenize_qa(d, qa, tiny_vocab, max_len=tiny_model_config.max_len))
    return out


@pytest.fixture()
def tiny_params(tiny_model_config):
    return init_params(tiny_model_config, seed=0)


@pytest.fixture()
def tiny_batch(tiny_tokens, tiny_model_config):
    return collate(tiny_tokens[:4], tiny_model_config)
