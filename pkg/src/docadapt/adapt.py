"""Test-time adaptation loops.

Three methods share one engine: gated pseudo-label self-training with masked
visual-language modeling and diversity maximization (the full method), the
same plus a supervised source batch per step (the source-joint variant), and
plain entropy minimization (the baseline).  Every run is a pure function of
(initial params, corpora, config): batch order, masking, and updates are all
seeded, so reruns are bit-identical.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import torch

from . import inference
from .docdata import IGNORE_INDEX, LabelScheme, TokenizedDoc, Vocab
from .docmodel import (
    Batch,
    ModelConfig,
    class_logits,
    collate,
    forward,
    mvlm_logits,
    qa_position_logits,
)
from .numerics import (
    ParamSet,
    adamw_step,
    clone_params,
    entropy,
    entropy_from_logits,
    init_optim_state,
    softmax,
    value_and_grad,
)
from .objectives import (
    AcceptanceMask,
    apply_mvlm_mask,
    diversity_loss,
    doctta_total,
    docuda_total,
    mvlm_loss,
    pseudo_ce_loss,
    source_ce_loss,
)

METHODS = ("doctta", "docuda", "tent")
SELECT_MODES = ("entropy", "confidence", "both", "none")
TASKS = ("entity", "kv", "qa")


@dataclass(frozen=True)
class AdaptConfig:
    method: str = "doctta"
    epochs: int = 1
    lr: float = 1e-4
    batch_size: int = 8
    gamma: float = 1.5  # uncertainty threshold, nats
    conf_threshold: float = 0.95
    select: str = "entropy"  # entropy | confidence | both | none
    use_mvlm: bool = True
    use_ce: bool = True
    use_div: bool = True
    seed: int = 0
    normalize_entropy: bool = False  # gate on entropy / ln(support) instead
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    mask_rate: float = 0.15
    mask_token_frac: float = 0.80
    mvlm_weight: float = 1.0
    ce_weight: float = 1.0
    div_weight: float = 1.0
    src_weight: float = 1.0
    record_steps: bool = False

    @property
    def select_mode(self) -> str:
        # "confidence+entropy" is the long spelling of "both"
        return "both" if self.select == "confidence+entropy" else self.select

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.select_mode not in SELECT_MODES:
            raise ValueError(
                f"select must be one of {SELECT_MODES}, got {self.select!r}"
            )
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 < self.conf_threshold <= 1.0:
            raise ValueError("conf_threshold must be in (0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]  # per-step means of each active term plus total
    acceptance_rate: float | None  # None when no gating ran
    mean_entropy: float | None
    n_units: int
    n_accepted: int
    metrics: dict[str, float] | None = None  # only when labels were supplied


@dataclass
class StepRecord:
    epoch: int
    step: int
    param_version: int  # optimizer steps applied to the params used for gating
    doc_ids: list[str]
    losses: dict[str, float]
    accepted: list[bool]
    pseudo_labels: list[int]
    entropies: list[float]
    n_masked: int


@dataclass
class AdaptLog:
    method: str
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)


def _gate(
    entropies: torch.Tensor, confidences: torch.Tensor, config: AdaptConfig
) -> torch.Tensor:
    mode = config.select_mode
    if mode == "entropy":
        return entropies <= config.gamma
    if mode == "confidence":
        return confidences >= config.conf_threshold
    if mode == "both":
        return (entropies <= config.gamma) & (confidences >= config.conf_threshold)
    return torch.ones_like(entropies, dtype=torch.bool)


def select_pseudo_labels(
    probs: torch.Tensor, config: AdaptConfig, support: torch.Tensor | None = None
) -> AcceptanceMask:
    """Gate prediction units on uncertainty and/or confidence.

    probs: (U, C) row-stochastic, detached by the caller.  support gives the
    per-unit outcome count for the normalized-entropy mode (defaults to C).
    """
    ent = entropy(probs, dim=-1)
    conf, pseudo = probs.max(dim=-1)
    gate_ent = ent
    if config.normalize_entropy:
        if support is None:
            support = torch.full_like(ent, float(probs.shape[-1]))
        gate_ent = ent / support.to(ent.dtype).clamp_min(2.0).log()
    accept = _gate(gate_ent, conf, config)
    return AcceptanceMask(accept=accept, pseudo=pseudo, entropy=ent, confidence=conf)


def select_qa_pairs(
    start_probs: torch.Tensor,
    end_probs: torch.Tensor,
    config: AdaptConfig,
    support: torch.Tensor | None = None,
) -> tuple[AcceptanceMask, AcceptanceMask]:
    """Joint gate for span predictions: one accept decision per document.

    The uncertainty test uses the MEAN of the start and end entropies; the
    confidence test uses the weaker side, so 0.95 stays a floor on both.
    """
    ent_s = entropy(start_probs, dim=-1)
    ent_e = entropy(end_probs, dim=-1)
    conf_s, pseudo_s = start_probs.max(dim=-1)
    conf_e, pseudo_e = end_probs.max(dim=-1)
    pair_ent = (ent_s + ent_e) / 2
    if config.normalize_entropy:
        if support is None:
            support = torch.full_like(pair_ent, float(start_probs.shape[-1]))
        pair_ent = pair_ent / support.to(pair_ent.dtype).clamp_min(2.0).log()
    accept = _gate(pair_ent, torch.minimum(conf_s, conf_e), config)
    return (
        AcceptanceMask(accept=accept, pseudo=pseudo_s, entropy=ent_s, confidence=conf_s),
        AcceptanceMask(accept=accept, pseudo=pseudo_e, entropy=ent_e, confidence=conf_e),
    )


def _require_source_labels(corpus: list[TokenizedDoc], task: str) -> None:
    if task == "qa":
        if not any(d.answer_start is not None for d in corpus):
            raise ValueError("source corpus carries no answer spans")
    elif not any(l != IGNORE_INDEX for d in corpus for l in d.label_ids):
        raise ValueError("source corpus carries no labels")


def _qa_supervised_ce(
    s_probs: torch.Tensor, e_probs: torch.Tensor, batch: Batch
) -> torch.Tensor:
    starts = torch.where(batch.answer_start < 0, IGNORE_INDEX, batch.answer_start)
    ends = torch.where(batch.answer_end < 0, IGNORE_INDEX, batch.answer_end)
    return (source_ce_loss(s_probs, starts) + source_ce_loss(e_probs, ends)) / 2


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def _step_loss(
    p: ParamSet,
    batch: Batch,
    docs: list[TokenizedDoc],
    masked_batch: Batch | None,
    plan,
    src_batch: Batch | None,
    model_config: ModelConfig,
    config: AdaptConfig,
    task: str,
    aux: dict,
) -> torch.Tensor:
    """Total loss for one step; gating statistics land in ``aux``."""
    terms: dict[str, float] = {}
    ce = div = tent = lm = src = 0.0

    need_clean = config.method == "tent" or config.use_ce or config.use_div
    if need_clean:
        enc = forward(batch, p, model_config)
        if task == "qa":
            s_logits, e_logits = qa_position_logits(enc, p, batch)
            if config.method == "tent":
                per_unit = (
                    entropy_from_logits(s_logits) + entropy_from_logits(e_logits)
                ) / 2
                tent = per_unit.mean()
                aux["unit_entropies"] = per_unit.detach()
            else:
                s_probs, e_probs = softmax(s_logits), softmax(e_logits)
                support = (batch.content_mask & (batch.segment_ids == 1)).sum(dim=-1)
                m_s, m_e = select_qa_pairs(
                    s_probs.detach(), e_probs.detach(), config, support
                )
                if config.use_ce:
                    ce = (pseudo_ce_loss(s_probs, m_s) + pseudo_ce_loss(e_probs, m_e)) / 2
                if config.use_div:
                    div = (diversity_loss(s_probs) + diversity_loss(e_probs)) / 2
                aux["accept"] = m_s.accept
                aux["pseudo"] = m_s.pseudo
                aux["unit_entropies"] = (m_s.entropy + m_e.entropy) / 2
        else:
            logits = class_logits(enc, p)
            unit_logits = logits[batch.content_mask]
            if config.method == "tent":
                per_unit = entropy_from_logits(unit_logits)
                tent = per_unit.mean()
                aux["unit_entropies"] = per_unit.detach()
            else:
                unit_probs = softmax(unit_logits)
                mask = select_pseudo_labels(unit_probs.detach(), config)
                if config.use_ce:
                    ce = pseudo_ce_loss(unit_probs, mask)
                if config.use_div:
                    div = diversity_loss(unit_probs)
                aux["accept"] = mask.accept
                aux["pseudo"] = mask.pseudo
                aux["unit_entropies"] = mask.entropy

    if masked_batch is not None:
        enc_m = forward(masked_batch, p, model_config)
        lm = mvlm_loss(mvlm_logits(enc_m, p), plan)

    if src_batch is not None:
        enc_s = forward(src_batch, p, model_config)
        if task == "qa":
            ss, se = qa_position_logits(enc_s, p, src_batch)
            src = _qa_supervised_ce(softmax(ss), softmax(se), src_batch)
        else:
            s_logits = class_logits(enc_s, p)[src_batch.content_mask]
            labels = src_batch.label_ids[src_batch.content_mask]
            src = source_ce_loss(softmax(s_logits), labels)

    if config.method == "tent":
        total = tent
        terms["tent"] = _f(tent)
    else:
        w_lm = config.mvlm_weight * lm if config.use_mvlm else 0.0
        w_ce = config.ce_weight * ce if config.use_ce else 0.0
        w_div = config.div_weight * div if config.use_div else 0.0
        if config.use_mvlm:
            terms["mvlm"] = _f(lm)
        if config.use_ce:
            terms["ce"] = _f(ce)
        if config.use_div:
            terms["div"] = _f(div)
        if config.method == "docuda":
            total = docuda_total(w_lm, w_ce, w_div, config.src_weight * src)
            terms["src_ce"] = _f(src)
        else:
            total = doctta_total(w_lm, w_ce, w_div)
    terms["total"] = _f(total)
    aux["terms"] = terms
    return total


def _monitor(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    model_config: ModelConfig,
    task: str,
    scheme: LabelScheme | None,
    batch_size: int,
) -> dict[str, float] | None:
    if task == "qa":
        if not any(d.gold_answer is not None for d in corpus):
            return None
        report = inference.eval_qa(params, corpus, model_config, batch_size)
        return {"anls": report.anls} if report.anls is not None else None
    if scheme is None:
        return None
    if not any(l != IGNORE_INDEX for d in corpus for l in d.label_ids):
        return None
    report = inference.eval_entity(params, corpus, model_config, scheme, batch_size)
    return {"precision": report.precision, "recall": report.recall, "f1": report.f1}


def _adapt(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    config: AdaptConfig,
    model_config: ModelConfig,
    vocab: Vocab | None,
    task: str,
    source_corpus: list[TokenizedDoc] | None,
    scheme: LabelScheme | None,
) -> tuple[ParamSet, AdaptLog]:
    config.validate()
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if not corpus:
        raise ValueError("target corpus is empty")
    wants_mvlm = config.method in ("doctta", "docuda") and config.use_mvlm
    if wants_mvlm and vocab is None:
        raise ValueError("vocab required when the masking loss is active")
    if config.method == "docuda":
        if not source_corpus:
            raise ValueError("source corpus required for the source-joint method")
        _require_source_labels(source_corpus, task)

    log = AdaptLog(method=config.method)
    params = clone_params(params)
    if config.epochs == 0:
        return params, log

    dtype = params["emb.word"].dtype
    state = init_optim_state(
        params,
        lr=config.lr,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    for epoch in range(config.epochs):
        order = list(range(len(corpus)))
        random.Random(f"order:{config.seed}:{epoch}").shuffle(order)
        batches = [
            order[i : i + config.batch_size]
            for i in range(0, len(order), config.batch_size)
        ]
        src_batches: list[list[int]] = []
        if config.method == "docuda":
            src_order = list(range(len(source_corpus)))
            random.Random(f"order-src:{config.seed}:{epoch}").shuffle(src_order)
            src_batches = [
                src_order[i : i + config.batch_size]
                for i in range(0, len(src_order), config.batch_size)
            ]

        sums: dict[str, float] = {}
        ent_sum, unit_count, accept_count = 0.0, 0, 0
        gated = False
        for bi, idxs in enumerate(batches):
            docs = [corpus[i] for i in idxs]
            batch = collate(docs, model_config, dtype=dtype)
            masked_batch, plan = None, None
            if wants_mvlm:
                masked_docs, plan = apply_mvlm_mask(
                    docs,
                    vocab,
                    config.mask_rate,
                    config.mask_token_frac,
                    seed=f"{config.seed}:{epoch}:{bi}",
                )
                masked_batch = collate(masked_docs, model_config, dtype=dtype)
            src_batch = None
            if src_batches:
                src_docs = [source_corpus[i] for i in src_batches[bi % len(src_batches)]]
                src_batch = collate(src_docs, model_config, dtype=dtype)

            aux: dict = {}
            version = state.step

            def step_loss(p: ParamSet) -> torch.Tensor:
                return _step_loss(
                    p, batch, docs, masked_batch, plan, src_batch,
                    model_config, config, task, aux,
                )

            _, grads = value_and_grad(step_loss, params)
            params = adamw_step(params, grads, state)

            for name, v in aux["terms"].items():
                sums[name] = sums.get(name, 0.0) + v
            ents = aux.get("unit_entropies")
            if ents is not None:
                ent_sum += float(ents.sum())
                unit_count += int(ents.numel())
            if "accept" in aux:
                gated = True
                accept_count += int(aux["accept"].sum())
            if config.record_steps:
                log.steps.append(
                    StepRecord(
                        epoch=epoch,
                        step=bi,
                        param_version=version,
                        doc_ids=[d.doc_id for d in docs],
                        losses=dict(aux["terms"]),
                        accepted=[bool(a) for a in aux.get("accept", [])],
                        pseudo_labels=[int(l) for l in aux.get("pseudo", [])],
                        entropies=[float(e) for e in ents] if ents is not None else [],
                        n_masked=plan.total() if plan is not None else 0,
                    )
                )

        n_steps = len(batches)
        log.epochs.append(
            EpochRecord(
                epoch=epoch,
                losses={k: v / n_steps for k, v in sums.items()},
                acceptance_rate=(accept_count / unit_count) if gated and unit_count else None,
                mean_entropy=(ent_sum / unit_count) if unit_count else None,
                n_units=unit_count,
                n_accepted=accept_count,
                metrics=_monitor(params, corpus, model_config, task, scheme, config.batch_size),
            )
        )
    return params, log


def run_doctta(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    config: AdaptConfig,
    model_config: ModelConfig,
    vocab: Vocab | None = None,
    task: str = "entity",
    scheme: LabelScheme | None = None,
) -> tuple[ParamSet, AdaptLog]:
    """Adapt on unlabeled target documents; labels, when present, feed only
    the per-epoch monitoring metrics."""
    return _adapt(
        params, corpus, replace(config, method="doctta"), model_config,
        vocab, task, None, scheme,
    )


def run_docuda(
    params: ParamSet,
    source_corpus: list[TokenizedDoc],
    corpus: list[TokenizedDoc],
    config: AdaptConfig,
    model_config: ModelConfig,
    vocab: Vocab | None = None,
    task: str = "entity",
    scheme: LabelScheme | None = None,
) -> tuple[ParamSet, AdaptLog]:
    """Source-joint variant: every target step also takes a supervised
    cross-entropy step on one labeled source batch (shorter corpus cycles)."""
    return _adapt(
        params, corpus, replace(config, method="docuda"), model_config,
        vocab, task, source_corpus, scheme,
    )


def run_tent(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    config: AdaptConfig,
    model_config: ModelConfig,
    task: str = "entity",
    scheme: LabelScheme | None = None,
) -> tuple[ParamSet, AdaptLog]:
    """Entropy-minimization baseline: AdamW on mean prediction entropy only."""
    return _adapt(
        params, corpus, replace(config, method="tent"), model_config,
        None, task, None, scheme,
    )
