"""Gradient-free batched prediction and scoring over tokenized corpora.

Entity/key-value scoring compares argmax token classes against gold labels
at labeled positions; span extraction decodes the best (start, end) pair and
scores answers by normalized Levenshtein similarity.  Both paths emit
PredictionRecord lists for the calibration tooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .docdata import IGNORE_INDEX, LabelScheme, TokenizedDoc
from .docmodel import (
    ModelConfig,
    class_logits,
    collate,
    forward,
    qa_position_logits,
)
from .evalmetrics import PredictionRecord, anls, entity_f1
from .numerics import ParamSet, entropy_from_logits, log_softmax, softmax


def iter_batches(corpus: list, batch_size: int):
    for i in range(0, len(corpus), batch_size):
        yield corpus[i : i + batch_size]


@dataclass
class EntityReport:
    precision: float
    recall: float
    f1: float
    records: list[PredictionRecord]
    predicted: list[list[int]]  # per doc, labeled positions only
    gold: list[list[int]]


def eval_entity(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    config: ModelConfig,
    scheme: LabelScheme,
    batch_size: int = 16,
) -> EntityReport:
    predicted: list[list[int]] = []
    gold: list[list[int]] = []
    records: list[PredictionRecord] = []
    dtype = params["emb.word"].dtype
    with torch.no_grad():
        for chunk in iter_batches(corpus, batch_size):
            batch = collate(chunk, config, dtype=dtype)
            logits = class_logits(forward(batch, params, config), params)
            probs = softmax(logits)
            ent = entropy_from_logits(logits)
            for b, doc in enumerate(chunk):
                p_seq: list[int] = []
                g_seq: list[int] = []
                for pos, lab in enumerate(doc.label_ids):
                    if lab == IGNORE_INDEX:
                        continue
                    row = probs[b, pos]
                    pred = int(row.argmax())
                    p_seq.append(pred)
                    g_seq.append(lab)
                    records.append(
                        PredictionRecord(
                            unit_id=f"{doc.doc_id}:{pos}",
                            probs=[float(v) for v in row],
                            pred=pred,
                            confidence=float(row.max()),
                            entropy=float(ent[b, pos]),
                            true_label=lab,
                        )
                    )
                predicted.append(p_seq)
                gold.append(g_seq)
    precision, recall, f1 = entity_f1(predicted, gold, scheme)
    return EntityReport(precision, recall, f1, records, predicted, gold)


@dataclass
class QAPrediction:
    doc_id: str
    question: str | None
    answer: str
    start: int
    end: int
    gold: str | None


@dataclass
class QAReport:
    anls: float | None  # None when no gold answers present
    predictions: list[QAPrediction]
    start_records: list[PredictionRecord]
    end_records: list[PredictionRecord]


def decode_answer(doc: TokenizedDoc, start: int, end: int) -> str:
    """Source words covered by the token span, joined in reading order."""
    seen: list[int] = []
    for t in range(start, end + 1):
        wi = doc.word_ids[t]
        if wi is not None and (not seen or seen[-1] != wi):
            seen.append(wi)
    return " ".join(doc.words[w] for w in seen)


def _span_band(n: int, max_span: int) -> torch.Tensor:
    ones = torch.ones(n, n, dtype=torch.bool)
    return torch.triu(ones) & ~torch.triu(ones, diagonal=max_span)


def _position_record(
    doc_id: str, side: str, probs: torch.Tensor, ent: float, true_pos: int | None
) -> PredictionRecord:
    pred = int(probs.argmax())
    return PredictionRecord(
        unit_id=f"{doc_id}:{side}",
        probs=[float(v) for v in probs],
        pred=pred,
        confidence=float(probs.max()),
        entropy=ent,
        true_label=true_pos,
    )


def eval_qa(
    params: ParamSet,
    corpus: list[TokenizedDoc],
    config: ModelConfig,
    batch_size: int = 16,
    max_span: int = 30,
) -> QAReport:
    predictions: list[QAPrediction] = []
    start_records: list[PredictionRecord] = []
    end_records: list[PredictionRecord] = []
    dtype = params["emb.word"].dtype
    band = None
    with torch.no_grad():
        for chunk in iter_batches(corpus, batch_size):
            batch = collate(chunk, config, dtype=dtype)
            enc = forward(batch, params, config)
            s_logits, e_logits = qa_position_logits(enc, params, batch)
            s_logp, e_logp = log_softmax(s_logits), log_softmax(e_logits)
            s_ent, e_ent = entropy_from_logits(s_logits), entropy_from_logits(e_logits)
            n = s_logits.shape[1]
            if band is None or band.shape[0] != n:
                band = _span_band(n, max_span)
            for b, doc in enumerate(chunk):
                pair = s_logp[b][:, None] + e_logp[b][None, :]
                pair = torch.where(band, pair, torch.full_like(pair, -1e18))
                flat = int(pair.argmax())
                s, e = flat // n, flat % n
                predictions.append(
                    QAPrediction(
                        doc_id=doc.doc_id,
                        question=doc.question,
                        answer=decode_answer(doc, s, e),
                        start=s,
                        end=e,
                        gold=doc.gold_answer,
                    )
                )
                start_records.append(
                    _position_record(
                        doc.doc_id, "start", s_logp[b].exp(), float(s_ent[b]), doc.answer_start
                    )
                )
                end_records.append(
                    _position_record(
                        doc.doc_id, "end", e_logp[b].exp(), float(e_ent[b]), doc.answer_end
                    )
                )
    scored = [(p.answer, [p.gold]) for p in predictions if p.gold is not None]
    score = anls([a for a, _ in scored], [g for _, g in scored]) if scored else None
    return QAReport(score, predictions, start_records, end_records)
