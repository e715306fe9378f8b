"""Desk-scale multimodal encoder: token + layout (+ ink-patch) embeddings
into pre-norm self-attention blocks, with vocabulary, token-class, and
span (QA) heads.

The model is functional: all weights live in a ParamSet and every forward
is a pure function of (batch, params, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .docdata import GRID, TokenizedDoc
from .numerics import ParamSet, manual_generator

_BOX_COORDS = ("x_min", "x_max", "y_min", "y_max", "w", "h")
_NEG = -1e9  # additive mask for padded keys / invalid positions


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    num_classes: int = 7
    layout_buckets: int = GRID + 1
    image_patches: int = 16  # 0 disables the image modality; must be square
    ff_mult: int = 4

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.max_len > 512:
            raise ValueError("max_len must be <= 512")
        if self.image_patches:
            side = int(math.isqrt(self.image_patches))
            if side * side != self.image_patches:
                raise ValueError("image_patches must be 0 or a perfect square")


def init_params(config: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> ParamSet:
    """Seeded parameter construction; bit-identical for equal (config, seed)."""
    g = manual_generator(seed)
    d, V, C = config.hidden, config.vocab_size, config.num_classes

    def normal(*shape):
        return torch.randn(*shape, generator=g, dtype=dtype) * 0.02

    p: ParamSet = {}
    p["emb.word"] = normal(V, d)
    p["emb.pos"] = normal(config.max_len, d)
    p["emb.seg"] = normal(2, d)
    for c in _BOX_COORDS:
        p[f"emb.box.{c}"] = normal(config.layout_buckets, d)
    if config.image_patches:
        p["emb.patch"] = normal(config.image_patches, d)
        p["emb.gate"] = torch.full((1,), 0.1, dtype=dtype)
    p["emb.ln.g"] = torch.ones(d, dtype=dtype)
    p["emb.ln.b"] = torch.zeros(d, dtype=dtype)
    for i in range(config.layers):
        for name in ("wq", "wk", "wv", "wo"):
            p[f"blk{i}.attn.{name}"] = normal(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[f"blk{i}.attn.{name}"] = torch.zeros(d, dtype=dtype)
        p[f"blk{i}.ln1.g"] = torch.ones(d, dtype=dtype)
        p[f"blk{i}.ln1.b"] = torch.zeros(d, dtype=dtype)
        p[f"blk{i}.ln2.g"] = torch.ones(d, dtype=dtype)
        p[f"blk{i}.ln2.b"] = torch.zeros(d, dtype=dtype)
        p[f"blk{i}.ff.w1"] = normal(d, config.ff_mult * d)
        p[f"blk{i}.ff.b1"] = torch.zeros(config.ff_mult * d, dtype=dtype)
        p[f"blk{i}.ff.w2"] = normal(config.ff_mult * d, d)
        p[f"blk{i}.ff.b2"] = torch.zeros(d, dtype=dtype)
    p["final_ln.g"] = torch.ones(d, dtype=dtype)
    p["final_ln.b"] = torch.zeros(d, dtype=dtype)
    p["head.mvlm.w"] = normal(d, V)
    p["head.mvlm.b"] = torch.zeros(V, dtype=dtype)
    p["head.cls.w"] = normal(d, C)
    p["head.cls.b"] = torch.zeros(C, dtype=dtype)
    p["head.qa.w"] = normal(d, 2)
    p["head.qa.b"] = torch.zeros(2, dtype=dtype)
    return p


def param_count(config: ModelConfig) -> int:
    return sum(t.numel() for t in init_params(config, seed=0).values())


@dataclass
class Batch:
    token_ids: torch.Tensor  # (B, n) long
    boxes: torch.Tensor  # (B, n, 6) long
    segment_ids: torch.Tensor  # (B, n) long
    attention_mask: torch.Tensor  # (B, n) float (1 content, 0 pad)
    label_ids: torch.Tensor  # (B, n) long, ignore-index elsewhere
    patch_vals: torch.Tensor | None  # (B, P) float mean-pooled ink patches
    content_mask: torch.Tensor  # (B, n) bool: attended and not special
    answer_start: torch.Tensor | None = None  # (B,) long, -1 when absent
    answer_end: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def pool_ink_patches(ink: np.ndarray | None, patches: int) -> np.ndarray:
    """Mean ink coverage over a sqrt(P) x sqrt(P) grid of the binary mask."""
    side = int(math.isqrt(patches))
    if ink is None:
        return np.zeros(patches, dtype=np.float64)
    h, w = ink.shape
    out = np.zeros(patches, dtype=np.float64)
    for r in range(side):
        for c in range(side):
            cell = ink[r * h // side : (r + 1) * h // side, c * w // side : (c + 1) * w // side]
            out[r * side + c] = float(cell.mean()) if cell.size else 0.0
    return out


def collate(docs: list[TokenizedDoc], config: ModelConfig, dtype: torch.dtype = torch.float32) -> Batch:
    n = config.max_len
    for d in docs:
        if len(d.token_ids) > n:
            raise ValueError(
                f"sequence length {len(d.token_ids)} exceeds model max_len {n}"
            )

    def pad_to(xs, fill):
        return xs + [fill] * (n - len(xs))

    ids = torch.tensor([pad_to(d.token_ids, 0) for d in docs], dtype=torch.long)
    boxes = torch.tensor(
        [pad_to([list(b.as_tuple()) for b in d.boxes], [0] * 6) for d in docs],
        dtype=torch.long,
    )
    segs = torch.tensor([pad_to(d.segment_ids, 0) for d in docs], dtype=torch.long)
    attn = torch.tensor([pad_to(d.attention_mask, 0) for d in docs], dtype=dtype)
    labels = torch.tensor([pad_to(d.label_ids, -100) for d in docs], dtype=torch.long)
    content = torch.tensor(
        [
            pad_to([1 if (a == 1 and w is not None) else 0 for a, w in zip(d.attention_mask, d.word_ids)], 0)
            for d in docs
        ],
        dtype=torch.bool,
    )
    patch_vals = None
    if config.image_patches:
        patch_vals = torch.tensor(
            np.stack([pool_ink_patches(d.ink_image, config.image_patches) for d in docs]),
            dtype=dtype,
        )
    a_start = a_end = None
    if any(d.answer_start is not None for d in docs):
        a_start = torch.tensor(
            [d.answer_start if d.answer_start is not None else -1 for d in docs], dtype=torch.long
        )
        a_end = torch.tensor(
            [d.answer_end if d.answer_end is not None else -1 for d in docs], dtype=torch.long
        )
    return Batch(ids, boxes, segs, attn, labels, patch_vals, content, a_start, a_end)


@dataclass
class EncoderOutput:
    hidden: torch.Tensor  # (B, n, d)
    attention: list[torch.Tensor] | None = None  # per layer (B, H, n, n)


def _ln(x: torch.Tensor, p: ParamSet, name: str) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], weight=p[f"{name}.g"], bias=p[f"{name}.b"])


def forward(
    batch: Batch | list[TokenizedDoc],
    params: ParamSet,
    config: ModelConfig,
    return_attention: bool = False,
) -> EncoderOutput:
    """Token + position + segment + 6x layout embeddings (+ gated ink summary),
    through pre-norm attention blocks with padded keys masked out.
    """
    if isinstance(batch, list):
        batch = collate(batch, config, dtype=params["emb.word"].dtype)
    ids = batch.token_ids
    if int(ids.max()) >= config.vocab_size:
        raise ValueError(f"token id {int(ids.max())} outside vocab of {config.vocab_size}")
    B, n = ids.shape
    d, H = config.hidden, config.heads
    dh = d // H

    h = params["emb.word"][ids] + params["emb.pos"][:n] + params["emb.seg"][batch.segment_ids]
    for k, c in enumerate(_BOX_COORDS):
        h = h + params[f"emb.box.{c}"][batch.boxes[..., k]]
    if config.image_patches and batch.patch_vals is not None:
        img_vec = batch.patch_vals.to(h.dtype) @ params["emb.patch"]  # (B, d)
        h = h + params["emb.gate"] * img_vec[:, None, :]
    h = _ln(h, params, "emb.ln")

    key_mask = (1.0 - batch.attention_mask.to(h.dtype)) * _NEG  # (B, n)
    attn_maps = [] if return_attention else None
    for i in range(config.layers):
        x = _ln(h, params, f"blk{i}.ln1")
        q = (x @ params[f"blk{i}.attn.wq"] + params[f"blk{i}.attn.bq"]).view(B, n, H, dh).transpose(1, 2)
        k = (x @ params[f"blk{i}.attn.wk"] + params[f"blk{i}.attn.bk"]).view(B, n, H, dh).transpose(1, 2)
        v = (x @ params[f"blk{i}.attn.wv"] + params[f"blk{i}.attn.bv"]).view(B, n, H, dh).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)  # (B, H, n, n)
        scores = scores + key_mask[:, None, None, :]
        weights = torch.softmax(scores, dim=-1)
        if attn_maps is not None:
            attn_maps.append(weights.detach())
        ctx = (weights @ v).transpose(1, 2).reshape(B, n, d)
        h = h + ctx @ params[f"blk{i}.attn.wo"] + params[f"blk{i}.attn.bo"]
        x = _ln(h, params, f"blk{i}.ln2")
        ff = F.gelu(x @ params[f"blk{i}.ff.w1"] + params[f"blk{i}.ff.b1"])
        h = h + ff @ params[f"blk{i}.ff.w2"] + params[f"blk{i}.ff.b2"]
    h = _ln(h, params, "final_ln")
    return EncoderOutput(hidden=h, attention=attn_maps)


def mvlm_logits(enc: EncoderOutput, params: ParamSet) -> torch.Tensor:
    """(B, n, V) vocabulary logits; losses own the normalization."""
    return enc.hidden @ params["head.mvlm.w"] + params["head.mvlm.b"]


def class_logits(enc: EncoderOutput, params: ParamSet) -> torch.Tensor:
    """(B, n, C) token-class logits."""
    return enc.hidden @ params["head.cls.w"] + params["head.cls.b"]


def qa_logits(enc: EncoderOutput, params: ParamSet) -> tuple[torch.Tensor, torch.Tensor]:
    """Start/end position logits, each (B, n)."""
    both = enc.hidden @ params["head.qa.w"] + params["head.qa.b"]
    return both[..., 0], both[..., 1]


def qa_position_logits(
    enc: EncoderOutput, params: ParamSet, batch: Batch
) -> tuple[torch.Tensor, torch.Tensor]:
    """QA logits with non-document positions (question/specials/pads) masked."""
    start, end = qa_logits(enc, params)
    invalid = ~batch.content_mask | (batch.segment_ids != 1)
    neg = torch.full_like(start, _NEG)
    return torch.where(invalid, neg, start), torch.where(invalid, neg, end)
