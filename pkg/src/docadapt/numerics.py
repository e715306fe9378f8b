"""Tensor plumbing: parameter collections, reverse-mode gradients, AdamW.

Parameters live in a ``ParamSet`` -- a plain ``dict[str, torch.Tensor]``
(insertion-ordered, so iteration order is stable for a fixed construction
sequence).  Training runs in float32; gradient-verification tests construct
everything in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch

ParamSet = dict[str, torch.Tensor]


def manual_generator(seed: int) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(seed)
    return g


def clone_params(params: ParamSet) -> ParamSet:
    """Detached, independent copy (bit-identical values)."""
    return {name: t.detach().clone() for name, t in params.items()}


def zeros_like_params(params: ParamSet) -> ParamSet:
    return {name: torch.zeros_like(t) for name, t in params.items()}


def value_and_grad(
    loss: Callable[[ParamSet], torch.Tensor], params: ParamSet
) -> tuple[float, ParamSet]:
    """Evaluate a scalar loss and its gradient w.r.t. every parameter.

    Parameters that do not participate in the loss get zero gradients.
    Shape mismatches inside ``loss`` surface as the backend's structured
    errors naming both operand shapes.
    """
    leaves = {
        name: t.detach().clone().requires_grad_(True) for name, t in params.items()
    }
    out = loss(leaves)
    if not isinstance(out, torch.Tensor):
        # constant loss: no graph, all gradients vanish
        return float(out), zeros_like_params(params)
    if out.numel() != 1:
        raise ValueError(f"loss must be scalar, got shape {tuple(out.shape)}")
    if out.requires_grad:
        out.backward()
    grads = {
        name: (t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t))
        for name, t in leaves.items()
    }
    return float(out.detach()), grads


@dataclass
class OptimState:
    """AdamW state: decoupled weight decay, bias-corrected moments."""

    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    exp_avg: ParamSet = field(default_factory=dict)
    exp_avg_sq: ParamSet = field(default_factory=dict)


def init_optim_state(
    params: ParamSet,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimState:
    return OptimState(
        lr=lr,
        betas=betas,
        eps=eps,
        weight_decay=weight_decay,
        step=0,
        exp_avg=zeros_like_params(params),
        exp_avg_sq=zeros_like_params(params),
    )


def adamw_step(params: ParamSet, grads: ParamSet, state: OptimState) -> ParamSet:
    """One AdamW update.  Returns fresh parameter tensors; advances state."""
    missing = [name for name in params if name not in grads]
    if missing:
        raise KeyError(f"missing gradient for parameter(s): {', '.join(missing)}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ValueError(
                f"gradient shape {tuple(grads[name].shape)} does not match "
                f"parameter '{name}' shape {tuple(p.shape)}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.betas
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    updated: ParamSet = {}
    for name, p in params.items():
        g = grads[name]
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        step_dir = (m / bc1) / ((v / bc2).sqrt() + state.eps)
        new_p = p - state.lr * step_dir
        if state.weight_decay != 0.0:
            new_p = new_p - state.lr * state.weight_decay * p
        updated[name] = new_p.detach()
    return updated


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Max-subtracted softmax (never NaN on finite input)."""
    return torch.softmax(x, dim=dim)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.log_softmax(x, dim=dim)


def entropy(probs: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Shannon entropy in nats; 0*log0 terms contribute 0."""
    return -torch.special.xlogy(probs, probs).sum(dim=dim)


def entropy_from_logits(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Shannon entropy of softmax(logits), computed in logit space.

    Equals entropy(softmax(logits)) but keeps gradients finite when some
    probabilities underflow to exactly 0 (xlogy backward is nan at 0).
    """
    logp = torch.log_softmax(logits, dim=dim)
    return -(logp.exp() * logp).sum(dim=dim)


def cross_entropy_from_logits(
    logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = -100
) -> torch.Tensor:
    """Mean -log softmax(logits)[label] over non-ignored units."""
    keep = labels != ignore_index
    if not bool(keep.any()):
        return logits.sum() * 0.0
    idx = keep.nonzero(as_tuple=True)[0]
    logp = torch.log_softmax(logits[idx], dim=-1)
    return -logp[range(len(idx)), labels[idx]].mean()
