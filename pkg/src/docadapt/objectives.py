"""Adaptation losses: masked visual-language modeling, gated pseudo-label
cross-entropy, prediction-diversity, supervised source cross-entropy, and
the entropy-minimization baseline.

All loss functions take probabilities or logits as documented and return
scalar tensors that stay differentiable through the encoder.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

import torch

from .docdata import IGNORE_INDEX, TokenizedDoc, Vocab
from .numerics import entropy, log_softmax

MASK_KIND_TOKEN = "mask"
MASK_KIND_RANDOM = "random"


@dataclass
class MaskPlan:
    """Per-sequence masked positions: (position, kind, original id)."""

    positions: list[list[tuple[int, str, int]]]

    def total(self) -> int:
        return sum(len(p) for p in self.positions)


def apply_mvlm_mask(
    batch: list[TokenizedDoc],
    vocab: Vocab,
    mask_rate: float = 0.15,
    mask_token_frac: float = 0.80,
    seed: int | str = 0,
) -> tuple[list[TokenizedDoc], MaskPlan]:
    """Independently mask each eligible token with probability ``mask_rate``.

    Of the selected tokens, a ``mask_token_frac`` share becomes [MASK] and the
    rest become a random non-special vocabulary id.  Specials and padding are
    never eligible; boxes and attention are left untouched.
    """
    rng = random.Random(f"mvlm:{seed}")
    regular_ids = sorted(set(range(len(vocab))) - vocab.special_ids)
    masked_docs = []
    plan: list[list[tuple[int, str, int]]] = []
    for doc in batch:
        ids = list(doc.token_ids)
        picks: list[tuple[int, str, int]] = []
        for pos, (tid, att, wid) in enumerate(
            zip(doc.token_ids, doc.attention_mask, doc.word_ids)
        ):
            if att != 1 or wid is None:
                continue
            if rng.random() >= mask_rate:
                continue
            if rng.random() < mask_token_frac:
                picks.append((pos, MASK_KIND_TOKEN, tid))
                ids[pos] = vocab.mask_id
            else:
                # uniform over non-special entries
                rid = regular_ids[rng.randrange(len(regular_ids))]
                picks.append((pos, MASK_KIND_RANDOM, tid))
                ids[pos] = rid
        masked_docs.append(replace(doc, token_ids=ids))
        plan.append(picks)
    return masked_docs, MaskPlan(plan)


def mvlm_loss(logits: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
    """Mean negative log-likelihood of the original ids at masked positions."""
    if plan.total() == 0:
        return logits.sum() * 0.0
    rows, cols, targets = [], [], []
    for b, picks in enumerate(plan.positions):
        for pos, _, orig in picks:
            rows.append(b)
            cols.append(pos)
            targets.append(orig)
    logp = log_softmax(logits[rows, cols], dim=-1)
    return -logp[range(len(targets)), targets].mean()


@dataclass
class AcceptanceMask:
    """Gating outcome per prediction unit."""

    accept: torch.Tensor  # (U,) bool
    pseudo: torch.Tensor  # (U,) long, argmax class
    entropy: torch.Tensor  # (U,) nats
    confidence: torch.Tensor  # (U,) max probability

    @property
    def rate(self) -> float:
        return float(self.accept.float().mean()) if self.accept.numel() else 0.0


def pseudo_ce_loss(probs: torch.Tensor, acceptance: AcceptanceMask) -> torch.Tensor:
    """Mean -log p(pseudo-label) over accepted units; 0 when none accepted."""
    if not bool(acceptance.accept.any()):
        return probs.sum() * 0.0
    idx = acceptance.accept.nonzero(as_tuple=True)[0]
    picked = probs[idx, acceptance.pseudo[idx]]
    return -picked.clamp_min(1e-12).log().mean()


def diversity_loss(probs: torch.Tensor) -> torch.Tensor:
    """Negative entropy of the batch-mean prediction, in [-ln C, 0].

    The mean is floored at 1e-12: exact zeros occur when a class (or a masked
    position, in span extraction) gets probability 0 in every unit, and the
    unfloored xlogy gradient there is nan.  The value shift is below 1e-9.
    """
    p_bar = probs.mean(dim=0).clamp_min(1e-12)
    return torch.special.xlogy(p_bar, p_bar).sum()


def doctta_total(mvlm, ce, div) -> torch.Tensor:
    """Unweighted sum of the three adaptation terms."""
    return mvlm + ce + div


def source_ce_loss(
    probs: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX
) -> torch.Tensor:
    """Mean -log p(true class) over non-ignored units."""
    keep = labels != ignore_index
    if not bool(keep.any()):
        return probs.sum() * 0.0
    picked = probs[keep.nonzero(as_tuple=True)[0], labels[keep]]
    return -picked.clamp_min(1e-12).log().mean()


def docuda_total(mvlm, ce, div, src_ce) -> torch.Tensor:
    """Source-joint total: the adaptation terms plus supervised source CE."""
    return mvlm + ce + div + src_ce


def tent_entropy_loss(probs: torch.Tensor) -> torch.Tensor:
    """Mean Shannon entropy (nats) of the predictions."""
    return entropy(probs, dim=-1).mean()
