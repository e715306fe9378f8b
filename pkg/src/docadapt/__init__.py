"""Test-time adaptation for compact layout-aware document models.

A source-trained text+layout(+ink) encoder is adapted on unlabeled target
documents by combining masked visual-language modeling, uncertainty-gated
pseudo-label self-training, and prediction-diversity maximization, with a
source-joint variant and an entropy-minimization baseline for comparison.
"""

from .adapt import AdaptConfig, AdaptLog, run_doctta, run_docuda, run_tent
from .docdata import (
    Document,
    LabelScheme,
    SyntheticDomainSpec,
    Vocab,
    build_vocab,
    generate_synthetic,
    tokenize,
    tokenize_qa,
)
from .docmodel import ModelConfig, forward, init_params
from .evalmetrics import anls, ece, entity_f1
from .harness import RunConfig, cmd_adapt, cmd_gen_data, cmd_train_source

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AdaptLog",
    "Document",
    "LabelScheme",
    "ModelConfig",
    "RunConfig",
    "SyntheticDomainSpec",
    "Vocab",
    "anls",
    "build_vocab",
    "cmd_adapt",
    "cmd_gen_data",
    "cmd_train_source",
    "ece",
    "entity_f1",
    "forward",
    "generate_synthetic",
    "init_params",
    "run_doctta",
    "run_docuda",
    "run_tent",
    "tokenize",
    "tokenize_qa",
    "__version__",
]
