"""Evaluation: span-exact entity F1, normalized Levenshtein similarity for
answers, and confidence calibration (ECE, reliability diagram, confidence
histogram).
"""

from __future__ import annotations

from dataclasses import dataclass

from .docdata import LabelScheme

RELIABILITY_HEADER = ["bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"]
CONF_HIST_HEADER = ["bin_lo", "bin_hi", "count"]


@dataclass
class PredictionRecord:
    """One prediction unit with its probability diagnostics."""

    unit_id: str
    probs: list[float]
    pred: int
    confidence: float
    entropy: float
    true_label: int | None = None

    @property
    def correct(self) -> bool | None:
        if self.true_label is None:
            return None
        return self.pred == self.true_label


@dataclass
class CalibrationReport:
    bin_edges: list[float]  # len bins+1
    bin_counts: list[int]
    bin_confidence: list[float]  # 0 for empty bins
    bin_accuracy: list[float]  # 0 for empty bins
    ece: float
    overall_accuracy: float
    mean_confidence: float

    @property
    def bins(self) -> int:
        return len(self.bin_counts)


def _decode_spans(labels: list[str]) -> set[tuple[int, int, str]]:
    """(start, end, type) spans from a begin/intermediate sequence.

    An intermediate tag without a matching open span starts a new one, which
    keeps decoding total on noisy predictions.
    """
    spans = set()
    start = None
    current = None
    for i, name in enumerate(labels):
        if name.startswith("B-"):
            if current is not None:
                spans.add((start, i - 1, current))
            start, current = i, name[2:]
        elif name.startswith("I-"):
            if current != name[2:]:
                if current is not None:
                    spans.add((start, i - 1, current))
                start, current = i, name[2:]
        else:
            if current is not None:
                spans.add((start, i - 1, current))
            start = current = None
    if current is not None:
        spans.add((start, len(labels) - 1, current))
    return spans


def entity_f1(
    predicted: list[list[int]], gold: list[list[int]], scheme: LabelScheme
) -> tuple[float, float, float]:
    """Micro-averaged span precision/recall/F1; a hit needs exact type and
    boundary agreement."""
    if len(predicted) != len(gold):
        raise ValueError(f"sequence count mismatch: {len(predicted)} vs {len(gold)}")
    names = scheme.names
    n_pred = n_gold = n_hit = 0
    for p_seq, g_seq in zip(predicted, gold):
        if len(p_seq) != len(g_seq):
            raise ValueError(f"length mismatch: {len(p_seq)} vs {len(g_seq)}")
        p_spans = _decode_spans([names[i] for i in p_seq])
        g_spans = _decode_spans([names[i] for i in g_seq])
        n_pred += len(p_spans)
        n_gold += len(g_spans)
        n_hit += len(p_spans & g_spans)
    precision = n_hit / n_pred if n_pred else 0.0
    recall = n_hit / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls(
    predictions: list[str], gold_answers: list[list[str]], tau: float = 0.5
) -> float:
    """Mean over questions of the best (1 - normalized edit distance), zeroed
    at or above the rejection threshold; case-insensitive, whitespace-trimmed.
    """
    if len(predictions) != len(gold_answers):
        raise ValueError("one prediction per question required")
    total = 0.0
    for pred, golds in zip(predictions, gold_answers):
        if not golds:
            raise ValueError("empty gold answer set")
        p = pred.strip().lower()
        best = 0.0
        for gold in golds:
            g = gold.strip().lower()
            denom = max(len(p), len(g))
            nl = levenshtein(p, g) / denom if denom else 0.0
            if nl < tau:
                best = max(best, 1.0 - nl)
        total += best
    return total / len(predictions) if predictions else 0.0


def _bin_index(confidence: float, bins: int) -> int:
    # right-inclusive bins: (0, 1/bins], (1/bins, 2/bins], ...
    import math

    idx = math.ceil(confidence * bins) - 1
    return min(max(idx, 0), bins - 1)


def ece(records: list[PredictionRecord], bins: int = 10) -> CalibrationReport:
    """Bin-weighted |accuracy - confidence| over equal-width confidence bins."""
    if not records:
        raise ValueError("no prediction records")
    if any(r.true_label is None for r in records):
        raise ValueError("all records must carry a true label")
    counts = [0] * bins
    conf_sum = [0.0] * bins
    hit_sum = [0] * bins
    for r in records:
        b = _bin_index(r.confidence, bins)
        counts[b] += 1
        conf_sum[b] += r.confidence
        hit_sum[b] += int(r.correct)
    n = len(records)
    bin_conf = [conf_sum[b] / counts[b] if counts[b] else 0.0 for b in range(bins)]
    bin_acc = [hit_sum[b] / counts[b] if counts[b] else 0.0 for b in range(bins)]
    value = sum(
        counts[b] / n * abs(bin_acc[b] - bin_conf[b]) for b in range(bins) if counts[b]
    )
    return CalibrationReport(
        bin_edges=[b / bins for b in range(bins + 1)],
        bin_counts=counts,
        bin_confidence=bin_conf,
        bin_accuracy=bin_acc,
        ece=value,
        overall_accuracy=sum(hit_sum) / n,
        mean_confidence=sum(conf_sum) / n,
    )


def export_reliability(report: CalibrationReport) -> list[list]:
    """Rows (bin_lo, bin_hi, count, mean_confidence, accuracy), one per bin."""
    return [
        [
            report.bin_edges[b],
            report.bin_edges[b + 1],
            report.bin_counts[b],
            report.bin_confidence[b],
            report.bin_accuracy[b],
        ]
        for b in range(report.bins)
    ]


def export_conf_hist(records: list[PredictionRecord], bins: int = 10) -> list[list]:
    """Histogram rows (bin_lo, bin_hi, count) plus the two overall markers."""
    counts = [0] * bins
    for r in records:
        counts[_bin_index(r.confidence, bins)] += 1
    rows: list[list] = [[b / bins, (b + 1) / bins, counts[b]] for b in range(bins)]
    n = len(records)
    scored = [r for r in records if r.true_label is not None]
    overall_acc = sum(int(r.correct) for r in scored) / len(scored) if scored else 0.0
    mean_conf = sum(r.confidence for r in records) / n if n else 0.0
    rows.append(["overall_accuracy", overall_acc])
    rows.append(["mean_confidence", mean_conf])
    return rows
