"""Experiment orchestration: run configuration, checkpoint persistence,
corpus generation, source training, adaptation, evaluation, calibration,
and the hyperparameter sweep.

Results files are deterministic for a fixed config and seed; wall-clock
timings go to a sidecar file so reruns stay bit-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
import struct
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import inference
from .adapt import AdaptConfig, AdaptLog, run_doctta, run_docuda, run_tent
from .docdata import (
    FUNSD_SCHEME,
    IGNORE_INDEX,
    Document,
    LabelScheme,
    SyntheticDomainSpec,
    TokenizedDoc,
    Vocab,
    build_vocab,
    filter_qa_by_keywords,
    generate_synthetic,
    ingest_funsd,
    load_corpus,
    save_corpus,
    save_manifest,
    tokenize,
    tokenize_qa,
)
from .docmodel import ModelConfig, class_logits, collate, forward, init_params, qa_position_logits
from .evalmetrics import (
    CONF_HIST_HEADER,
    RELIABILITY_HEADER,
    CalibrationReport,
    PredictionRecord,
    ece,
    export_conf_hist,
    export_reliability,
)
from .numerics import (
    ParamSet,
    adamw_step,
    clone_params,
    cross_entropy_from_logits,
    init_optim_state,
    value_and_grad,
)

CHECKPOINT_MAGIC = b"DTTA"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {torch.float32: 0, torch.float64: 1}
_CODE_DTYPES = {0: ("<f4", torch.float32), 1: ("<f8", torch.float64)}
EVAL_BATCH = 16
TASKS = ("entity", "kv", "qa")


# ---------------------------------------------------------------- configs


@dataclass(frozen=True)
class ModelSettings:
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 128
    num_classes: int | None = None  # None: derived from the label scheme
    image_patches: int = 16
    ff_mult: int = 4


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 5e-5
    batch_size: int = 8
    epochs: int = 10
    weight_decay: float = 0.0
    train_on: str = "source"  # 'target' gives the train-on-target upper bound
    # masked-LM pretraining before the supervised stage; the resulting
    # checkpoint is also the 'base' start for the source-joint method
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3


@dataclass(frozen=True)
class SweepSettings:
    lrs: tuple[float, ...] = (1e-5, 2.5e-5, 5e-5)
    weight_decays: tuple[float, ...] = (0.0, 0.01)
    gammas: tuple[float, ...] = (1.5, 2.0)


@dataclass(frozen=True)
class DataConfig:
    ingest_dir: str | None = None  # directory with source/ and target/ form files
    source_spec: SyntheticDomainSpec | None = None
    target_spec: SyntheticDomainSpec | None = None
    n_source: int = 150
    n_target: int = 60
    val_fraction: float = 0.10
    vocab_size: int = 1000
    qa_keywords: tuple[str, ...] | None = None

    def validate(self) -> None:
        synthetic = self.source_spec is not None or self.target_spec is not None
        if (self.ingest_dir is None) == (not synthetic):
            raise ValueError("specify exactly one data source: ingest_dir or spec pair")
        if synthetic and (self.source_spec is None or self.target_spec is None):
            raise ValueError("synthetic data needs both source_spec and target_spec")
        if synthetic and self.source_spec.label_style != self.target_spec.label_style:
            raise ValueError("source and target label styles must match")
        if self.ingest_dir is not None and not Path(self.ingest_dir).is_dir():
            raise ValueError(f"ingest_dir does not exist: {self.ingest_dir}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class RunConfig:
    task: str = "entity"
    seed: int = 0
    out_dir: str = "runs/default"
    uda_init: str = "base"  # source-joint start: 'base' (fresh) or 'source'
    model: ModelSettings = field(default_factory=ModelSettings)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.uda_init not in ("base", "source"):
            raise ValueError("uda_init must be 'base' or 'source'")
        self.data.validate()
        self.adapt.validate()


def run_config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def run_config_from_dict(d: dict) -> RunConfig:
    d = dict(d)
    model = ModelSettings(**d.pop("model", {}))
    data_d = dict(d.pop("data", {}))
    for key in ("source_spec", "target_spec"):
        if data_d.get(key) is not None:
            data_d[key] = SyntheticDomainSpec(**data_d[key])
    if data_d.get("qa_keywords") is not None:
        data_d["qa_keywords"] = tuple(data_d["qa_keywords"])
    data = DataConfig(**data_d)
    train = TrainSettings(**d.pop("train", {}))
    adapt_d = dict(d.pop("adapt", {}))
    if "betas" in adapt_d:
        adapt_d["betas"] = tuple(adapt_d["betas"])
    adapt_cfg = AdaptConfig(**adapt_d)
    sweep_d = {
        k: tuple(v) if isinstance(v, list) else v
        for k, v in d.pop("sweep", {}).items()
    }
    return RunConfig(
        model=model, data=data, train=train, adapt=adapt_cfg,
        sweep=SweepSettings(**sweep_d), **d,
    )


def load_run_config(path: str | Path) -> RunConfig:
    with open(path) as f:
        return run_config_from_dict(json.load(f))


def save_run_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(run_config_to_dict(config), indent=2) + "\n")


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(run_config_to_dict(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path: str | Path, params: ParamSet, model_config: ModelConfig) -> None:
    cfg_blob = json.dumps(asdict(model_config), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        f.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            if tensor.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported tensor dtype {tensor.dtype}")
            name_b = name.encode()
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<BB", _DTYPE_CODES[tensor.dtype], tensor.ndim))
            f.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            code = "<f4" if tensor.dtype == torch.float32 else "<f8"
            f.write(np.ascontiguousarray(tensor.detach().numpy(), dtype=code).tobytes())


def load_checkpoint(
    path: str | Path, expected: ModelConfig | None = None
) -> tuple[ParamSet, ModelConfig]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", f.read(4))
        model_config = ModelConfig(**json.loads(f.read(cfg_len)))
        if expected is not None and model_config != expected:
            raise ValueError(
                f"checkpoint model config {asdict(model_config)} does not match "
                f"expected {asdict(expected)}"
            )
        (count,) = struct.unpack("<I", f.read(4))
        params: ParamSet = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            code, rank = struct.unpack("<BB", f.read(2))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            np_dtype, t_dtype = _CODE_DTYPES[code]
            numel = int(np.prod(dims)) if dims else 1
            payload = f.read(numel * int(np_dtype[-1]))
            arr = np.frombuffer(payload, dtype=np_dtype).reshape(dims).copy()
            params[name] = torch.from_numpy(arr).to(t_dtype)
    return params, model_config


# ---------------------------------------------------------------- results


@dataclass
class ResultsRecord:
    run_id: str
    method: str
    task: str
    seed: int
    config_hash: str
    final_metrics: dict
    adapt_log: AdaptLog | None = None
    metrics_before: dict | None = None
    details: dict | None = None
    wall_clock: float | None = None  # sidecar only, keeps the record file deterministic


def write_results(record: ResultsRecord, path: str | Path) -> None:
    d = asdict(record)
    wall = d.pop("wall_clock")
    Path(path).write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
    if wall is not None:
        Path(str(path) + ".timing").write_text(f"{wall:.3f}\n")


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ------------------------------------------------------------ data access


def _data_dir(config: RunConfig) -> Path:
    return Path(config.out_dir) / "data"


def _results_dir(config: RunConfig) -> Path:
    p = Path(config.out_dir) / "results"
    p.mkdir(parents=True, exist_ok=True)
    return p


def resolve_scheme(config: RunConfig) -> LabelScheme:
    if config.data.source_spec is not None:
        return config.data.source_spec.scheme
    return FUNSD_SCHEME


def build_model_config(config: RunConfig, vocab: Vocab, scheme: LabelScheme) -> ModelConfig:
    m = config.model
    return ModelConfig(
        vocab_size=len(vocab),
        hidden=m.hidden,
        layers=m.layers,
        heads=m.heads,
        max_len=m.max_len,
        num_classes=m.num_classes or len(scheme.names),
        image_patches=m.image_patches,
        ff_mult=m.ff_mult,
    )


def tokenize_corpus(
    docs: list[Document],
    vocab: Vocab,
    task: str,
    scheme: LabelScheme,
    max_len: int,
    qa_keywords: tuple[str, ...] | None = None,
) -> list[TokenizedDoc]:
    if task == "qa":
        out = []
        for d in docs:
            pairs = list(d.qa_pairs or [])
            if qa_keywords:
                pairs = filter_qa_by_keywords(pairs, list(qa_keywords))
            for qa in pairs:
                t = tokenize_qa(d, qa, vocab, max_len=max_len)
                if t is not None:
                    out.append(t)
        return out
    return [tokenize(d, vocab, max_len=max_len, scheme=scheme) for d in docs]


@dataclass
class LoadedData:
    source_train: list[Document]
    source_val: list[Document]
    target: list[Document]
    vocab: Vocab
    scheme: LabelScheme
    model_config: ModelConfig

    def tokenized(self, split: str, config: RunConfig) -> list[TokenizedDoc]:
        docs = getattr(self, split)
        return tokenize_corpus(
            docs, self.vocab, config.task, self.scheme,
            config.model.max_len, config.data.qa_keywords,
        )


def load_data(config: RunConfig) -> LoadedData:
    d = _data_dir(config)
    for name in ("source_train.jsonl", "source_val.jsonl", "target.jsonl", "vocab.txt"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing {d / name}; run gen-data first")
    vocab = Vocab.load(d / "vocab.txt")
    scheme = resolve_scheme(config)
    return LoadedData(
        source_train=load_corpus(d / "source_train.jsonl"),
        source_val=load_corpus(d / "source_val.jsonl"),
        target=load_corpus(d / "target.jsonl"),
        vocab=vocab,
        scheme=scheme,
        model_config=build_model_config(config, vocab, scheme),
    )


# ---------------------------------------------------------------- commands


def cmd_gen_data(config: RunConfig) -> dict:
    """Write source-train/source-val/target corpora, manifests, and vocab."""
    config.validate()
    t0 = time.perf_counter()
    d = _data_dir(config)
    d.mkdir(parents=True, exist_ok=True)
    if config.data.ingest_dir is not None:
        root = Path(config.data.ingest_dir)
        source = ingest_funsd(root / "source")
        target = ingest_funsd(root / "target")
    else:
        source = generate_synthetic(
            config.data.source_spec, config.data.n_source, config.seed, id_prefix="src"
        )
        target = generate_synthetic(
            config.data.target_spec, config.data.n_target, config.seed + 7919,
            id_prefix="tgt",
        )
    n_val = max(1, round(len(source) * config.data.val_fraction))
    val_idx = set(random.Random(f"val-split:{config.seed}").sample(range(len(source)), n_val))
    source_train = [doc for i, doc in enumerate(source) if i not in val_idx]
    source_val = [doc for i, doc in enumerate(source) if i in val_idx]
    vocab = build_vocab(source + target, size=config.data.vocab_size)

    save_corpus(source_train, d / "source_train.jsonl")
    save_corpus(source_val, d / "source_val.jsonl")
    save_corpus(target, d / "target.jsonl")
    save_manifest([doc.id for doc in source_train], d / "manifest_source_train.json")
    save_manifest([doc.id for doc in source_val], d / "manifest_source_val.json")
    save_manifest([doc.id for doc in target], d / "manifest_target.json")
    vocab.save(d / "vocab.txt")
    return {
        "data_dir": str(d),
        "n_source_train": len(source_train),
        "n_source_val": len(source_val),
        "n_target": len(target),
        "vocab_size": len(vocab),
        "wall_clock": time.perf_counter() - t0,
    }


def evaluate_params(
    params: ParamSet,
    corpus_tok: list[TokenizedDoc],
    model_config: ModelConfig,
    task: str,
    scheme: LabelScheme,
) -> tuple[dict, list[PredictionRecord]]:
    """Task metric plus ECE; records are start-position records for spans."""
    if task == "qa":
        rep = inference.eval_qa(params, corpus_tok, model_config, EVAL_BATCH)
        metrics = {"anls": rep.anls}
        records = rep.start_records
    else:
        rep = inference.eval_entity(params, corpus_tok, model_config, scheme, EVAL_BATCH)
        metrics = {"precision": rep.precision, "recall": rep.recall, "f1": rep.f1}
        records = rep.records
    scored = [r for r in records if r.true_label is not None]
    metrics["ece"] = ece(scored).ece if scored else None
    return metrics, records


def _supervised_step_loss(
    p: ParamSet, batch, task: str, model_config: ModelConfig
) -> torch.Tensor:
    enc = forward(batch, p, model_config)
    if task == "qa":
        s_logits, e_logits = qa_position_logits(enc, p, batch)
        starts = torch.where(batch.answer_start < 0, IGNORE_INDEX, batch.answer_start)
        ends = torch.where(batch.answer_end < 0, IGNORE_INDEX, batch.answer_end)
        return (
            cross_entropy_from_logits(s_logits, starts)
            + cross_entropy_from_logits(e_logits, ends)
        ) / 2
    logits = class_logits(enc, p)[batch.content_mask]
    labels = batch.label_ids[batch.content_mask]
    return cross_entropy_from_logits(logits, labels)


def pretrain_mvlm(
    params: ParamSet,
    train_tok: list[TokenizedDoc],
    vocab: Vocab,
    model_config: ModelConfig,
    settings: TrainSettings,
    seed: int,
) -> ParamSet:
    """Masked visual-language pretraining on unlabeled text+layout.

    Gives the supervised stage trained representations and a working
    vocabulary head, so the masking loss is meaningful at adaptation time.
    """
    from .docmodel import mvlm_logits
    from .objectives import apply_mvlm_mask, mvlm_loss

    params = clone_params(params)
    dtype = params["emb.word"].dtype
    state = init_optim_state(params, lr=settings.pretrain_lr)
    for epoch in range(settings.pretrain_epochs):
        order = list(range(len(train_tok)))
        random.Random(f"pretrain:{seed}:{epoch}").shuffle(order)
        for bi in range(0, len(order), settings.batch_size):
            docs = [train_tok[j] for j in order[bi : bi + settings.batch_size]]
            masked_docs, plan = apply_mvlm_mask(docs, vocab, seed=f"pre:{seed}:{epoch}:{bi}")
            batch = collate(masked_docs, model_config, dtype=dtype)

            def step_loss(p: ParamSet) -> torch.Tensor:
                return mvlm_loss(mvlm_logits(forward(batch, p, model_config), p), plan)

            _, grads = value_and_grad(step_loss, params)
            params = adamw_step(params, grads, state)
    return params


def train_supervised(
    params: ParamSet,
    train_tok: list[TokenizedDoc],
    val_tok: list[TokenizedDoc],
    model_config: ModelConfig,
    task: str,
    scheme: LabelScheme,
    settings: TrainSettings,
    seed: int,
) -> tuple[ParamSet, list[dict], float]:
    """Supervised cross-entropy training with best-validation selection."""
    if not train_tok:
        raise ValueError("training corpus is empty")
    metric_name = "anls" if task == "qa" else "f1"
    params = clone_params(params)
    dtype = params["emb.word"].dtype
    state = init_optim_state(
        params, lr=settings.lr, weight_decay=settings.weight_decay
    )
    best = clone_params(params)
    best_val = evaluate_params(best, val_tok, model_config, task, scheme)[0][metric_name]
    best_val = best_val if best_val is not None else 0.0
    history: list[dict] = [{"epoch": -1, "val_metric": best_val}]
    for epoch in range(settings.epochs):
        order = list(range(len(train_tok)))
        random.Random(f"train:{seed}:{epoch}").shuffle(order)
        loss_sum, n_steps = 0.0, 0
        for i in range(0, len(order), settings.batch_size):
            docs = [train_tok[j] for j in order[i : i + settings.batch_size]]
            batch = collate(docs, model_config, dtype=dtype)
            loss, grads = value_and_grad(
                lambda p: _supervised_step_loss(p, batch, task, model_config), params
            )
            params = adamw_step(params, grads, state)
            loss_sum += loss
            n_steps += 1
        val = evaluate_params(params, val_tok, model_config, task, scheme)[0][metric_name]
        val = val if val is not None else 0.0
        history.append(
            {"epoch": epoch, "train_loss": loss_sum / max(n_steps, 1), "val_metric": val}
        )
        if val > best_val:
            best_val = val
            best = clone_params(params)
    return best, history, best_val


def cmd_train_source(config: RunConfig) -> tuple[Path, ResultsRecord]:
    """Supervised training; evaluation on target gives the no-adaptation row.

    With train.train_on='target' the same routine trains on (split) target
    documents instead, producing the train-on-target upper bound.
    """
    config.validate()
    t0 = time.perf_counter()
    data = load_data(config)
    on_target = config.train.train_on == "target"
    if on_target:
        docs = data.target
        n_val = max(1, round(len(docs) * config.data.val_fraction))
        val_idx = set(
            random.Random(f"val-split-tgt:{config.seed}").sample(range(len(docs)), n_val)
        )
        train_docs = [doc for i, doc in enumerate(docs) if i not in val_idx]
        val_docs = [doc for i, doc in enumerate(docs) if i in val_idx]
    else:
        train_docs, val_docs = data.source_train, data.source_val
    tok = lambda docs: tokenize_corpus(
        docs, data.vocab, config.task, data.scheme,
        config.model.max_len, config.data.qa_keywords,
    )
    params = init_params(data.model_config, config.seed)
    train_tok = tok(train_docs)
    if config.train.pretrain_epochs > 0:
        params = pretrain_mvlm(
            params, train_tok, data.vocab, data.model_config, config.train, config.seed
        )
        base_name = "target_upper_base" if on_target else "base"
        save_checkpoint(Path(config.out_dir) / f"{base_name}.ckpt", params, data.model_config)
    best, history, best_val = train_supervised(
        params, train_tok, tok(val_docs), data.model_config,
        config.task, data.scheme, config.train, config.seed,
    )
    target_tok = data.tokenized("target", config)
    metrics, _ = evaluate_params(best, target_tok, data.model_config, config.task, data.scheme)
    metrics["acceptance_rate"] = None

    name = "target_upper" if on_target else "source"
    ckpt_path = Path(config.out_dir) / f"{name}.ckpt"
    save_checkpoint(ckpt_path, best, data.model_config)
    record = ResultsRecord(
        run_id=f"train-{name}-{config.task}-seed{config.seed}",
        method="train-on-target" if on_target else "source-only",
        task=config.task,
        seed=config.seed,
        config_hash=config_hash(config),
        final_metrics=metrics,
        details={"selection": "best-val", "best_val_metric": best_val, "history": history},
        wall_clock=time.perf_counter() - t0,
    )
    write_results(record, _results_dir(config) / f"train_{name}.json")
    return ckpt_path, record


def _calibration_exports(
    records: list[PredictionRecord], out_dir: Path, prefix: str
) -> CalibrationReport | None:
    scored = [r for r in records if r.true_label is not None]
    if not scored:
        return None
    report = ece(scored)
    write_csv(out_dir / f"{prefix}_reliability.csv", RELIABILITY_HEADER, export_reliability(report))
    write_csv(out_dir / f"{prefix}_conf_hist.csv", CONF_HIST_HEADER, export_conf_hist(scored))
    return report


def cmd_adapt(
    config: RunConfig, checkpoint: str | Path | None = None
) -> tuple[Path, ResultsRecord]:
    """Adapt a source checkpoint on unlabeled target documents.

    Labels never reach the adaptation loops: the target corpus is stripped
    before dispatch and used in labeled form only for before/after scoring.
    """
    config.validate()
    t0 = time.perf_counter()
    data = load_data(config)
    method = config.adapt.method
    ckpt_path = Path(checkpoint) if checkpoint else Path(config.out_dir) / "source.ckpt"

    if method == "docuda" and config.uda_init == "base":
        # pretrained-but-not-fine-tuned base when available, else fresh init
        base_path = Path(config.out_dir) / "base.ckpt"
        if base_path.exists():
            start_params, _ = load_checkpoint(base_path, expected=data.model_config)
        else:
            start_params = init_params(data.model_config, config.seed)
    else:
        start_params, _ = load_checkpoint(ckpt_path, expected=data.model_config)

    target_tok = data.tokenized("target", config)
    before_metrics, before_records = evaluate_params(
        start_params, target_tok, data.model_config, config.task, data.scheme
    )
    stripped = [t.strip_labels() for t in target_tok]

    if method == "doctta":
        adapted, log = run_doctta(
            start_params, stripped, config.adapt, data.model_config,
            vocab=data.vocab, task=config.task,
        )
    elif method == "docuda":
        source_tok = data.tokenized("source_train", config)
        adapted, log = run_docuda(
            start_params, source_tok, stripped, config.adapt, data.model_config,
            vocab=data.vocab, task=config.task,
        )
    elif method == "tent":
        adapted, log = run_tent(
            start_params, stripped, config.adapt, data.model_config, task=config.task
        )
    else:
        raise ValueError(f"unknown method {method!r}")

    after_metrics, after_records = evaluate_params(
        adapted, target_tok, data.model_config, config.task, data.scheme
    )
    after_metrics["acceptance_rate"] = (
        log.epochs[-1].acceptance_rate if log.epochs else None
    )
    calib_dir = Path(config.out_dir) / "calib"
    calib_dir.mkdir(parents=True, exist_ok=True)
    _calibration_exports(before_records, calib_dir, f"{method}_before")
    _calibration_exports(after_records, calib_dir, f"{method}_after")

    out_ckpt = Path(config.out_dir) / f"adapted_{method}.ckpt"
    save_checkpoint(out_ckpt, adapted, data.model_config)
    record = ResultsRecord(
        run_id=f"adapt-{method}-{config.task}-seed{config.seed}",
        method=method,
        task=config.task,
        seed=config.seed,
        config_hash=config_hash(config),
        final_metrics=after_metrics,
        adapt_log=log,
        metrics_before=before_metrics,
        wall_clock=time.perf_counter() - t0,
    )
    write_results(record, _results_dir(config) / f"adapt_{method}.json")
    return out_ckpt, record


def cmd_eval(
    config: RunConfig, checkpoint: str | Path, split: str = "target"
) -> ResultsRecord:
    """Score a checkpoint on a named split; the metric follows the task."""
    config.validate()
    t0 = time.perf_counter()
    data = load_data(config)
    params, _ = load_checkpoint(checkpoint, expected=data.model_config)
    corpus_tok = data.tokenized(split, config)
    metrics, _ = evaluate_params(params, corpus_tok, data.model_config, config.task, data.scheme)
    record = ResultsRecord(
        run_id=f"eval-{split}-{config.task}-seed{config.seed}",
        method="eval",
        task=config.task,
        seed=config.seed,
        config_hash=config_hash(config),
        final_metrics=metrics,
        details={"split": split, "checkpoint": Path(checkpoint).name},
        wall_clock=time.perf_counter() - t0,
    )
    write_results(record, _results_dir(config) / f"eval_{split}.json")
    return record


def cmd_calibrate(
    config: RunConfig,
    checkpoint: str | Path,
    checkpoint_after: str | Path | None = None,
    split: str = "target",
) -> dict[str, CalibrationReport]:
    """Calibration report + exports for one checkpoint, or a before/after pair."""
    config.validate()
    data = load_data(config)
    corpus_tok = data.tokenized(split, config)
    calib_dir = Path(config.out_dir) / "calib"
    calib_dir.mkdir(parents=True, exist_ok=True)
    reports: dict[str, CalibrationReport] = {}
    pairs = [("before", checkpoint)]
    if checkpoint_after is not None:
        pairs.append(("after", checkpoint_after))
    for tag, path in pairs:
        params, _ = load_checkpoint(path, expected=data.model_config)
        _, records = evaluate_params(params, corpus_tok, data.model_config, config.task, data.scheme)
        report = _calibration_exports(records, calib_dir, tag)
        if report is None:
            raise ValueError(f"split {split!r} carries no labels to calibrate against")
        reports[tag] = report
    summary = {
        tag: {"ece": r.ece, "overall_accuracy": r.overall_accuracy,
              "mean_confidence": r.mean_confidence}
        for tag, r in reports.items()
    }
    (calib_dir / "calibration.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n"
    )
    return reports


def cmd_sweep(config: RunConfig, checkpoint: str | Path | None = None) -> dict:
    """Grid search over (lr, weight decay, gamma), scored on source-val only."""
    config.validate()
    t0 = time.perf_counter()
    data = load_data(config)
    ckpt_path = Path(checkpoint) if checkpoint else Path(config.out_dir) / "source.ckpt"
    start_params, _ = load_checkpoint(ckpt_path, expected=data.model_config)
    target_stripped = [t.strip_labels() for t in data.tokenized("target", config)]
    val_tok = data.tokenized("source_val", config)
    metric_name = "anls" if config.task == "qa" else "f1"

    rows = []
    best = None
    for lr in config.sweep.lrs:
        for wd in config.sweep.weight_decays:
            for gamma in config.sweep.gammas:
                a_cfg = replace(
                    config.adapt, lr=lr, weight_decay=wd, gamma=gamma, method="doctta"
                )
                adapted, _ = run_doctta(
                    start_params, target_stripped, a_cfg, data.model_config,
                    vocab=data.vocab, task=config.task,
                )
                metrics, _ = evaluate_params(
                    adapted, val_tok, data.model_config, config.task, data.scheme
                )
                score = metrics[metric_name] if metrics[metric_name] is not None else 0.0
                row = {"lr": lr, "weight_decay": wd, "gamma": gamma,
                       "val_metric": score}
                rows.append(row)
                if best is None or score > best["val_metric"]:
                    best = row
    result = {"grid": rows, "best": best, "selection": "source-val"}
    out = _results_dir(config) / "sweep.json"
    out.write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    (Path(str(out) + ".timing")).write_text(f"{time.perf_counter() - t0:.3f}\n")
    return result


# ------------------------------------------------------------ benchmark


def run_benchmark(
    config: RunConfig,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    methods: Sequence[str] = ("doctta", "tent"),
    confidence_ablation: bool = False,
) -> dict:
    """Multi-seed source-training + adaptation sweep over methods.

    Each seed runs in its own subdirectory of config.out_dir and regenerates
    data, so rows are independent draws from the configured shift. docuda
    trains from the masked-LM base checkpoint rather than the fine-tuned
    source model, so it reuses the supervised-stage learning rate.
    """
    t0 = time.perf_counter()
    metric = "anls" if config.task == "qa" else "f1"
    rows = []
    for seed in seeds:
        run = replace(
            config,
            seed=seed,
            out_dir=str(Path(config.out_dir) / f"seed{seed}"),
            adapt=replace(config.adapt, seed=seed),
        )
        cmd_gen_data(run)
        _, src_rec = cmd_train_source(run)
        row = {"seed": seed, "source_only": src_rec.final_metrics}
        variants = [(m, replace(run.adapt, method=m)) for m in methods]
        if confidence_ablation:
            variants.append(
                ("confidence_only", replace(run.adapt, select="confidence"))
            )
        for name, a_cfg in variants:
            if a_cfg.method == "docuda":
                a_cfg = replace(a_cfg, lr=run.train.lr)
            _, rec = cmd_adapt(replace(run, adapt=a_cfg))
            row[name] = {"before": rec.metrics_before, "after": rec.final_metrics}
        rows.append(row)

    n = len(rows)
    variant_names = list(methods) + (["confidence_only"] if confidence_ablation else [])
    mean = {f"source_only_{metric}": sum(r["source_only"][metric] for r in rows) / n}
    for name in variant_names:
        mean[f"{name}_{metric}"] = sum(r[name]["after"][metric] for r in rows) / n
    summary = {
        "config_hash": config_hash(config),
        "task": config.task,
        "seeds": list(seeds),
        "mean": mean,
        "per_seed": rows,
    }
    if "doctta" in variant_names:
        summary["ece_improved_seeds"] = sum(
            r["doctta"]["after"]["ece"] < r["doctta"]["before"]["ece"] for r in rows
        )
    out_root = Path(config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    out = out_root / "summary.json"
    out.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    (Path(str(out) + ".timing")).write_text(f"{time.perf_counter() - t0:.3f}\n")
    return summary
