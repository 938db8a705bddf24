"""Supervised training with AdamW, last-epoch evaluation and multi-trial averaging."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import torch

from afpnet.evaluation import MetricsReport, compute_metrics
from afpnet.fpm import ConfigError, ModelConfig
from afpnet.ingest import Corpus
from afpnet.lexer import Vocabulary, build_vocab, encode, tokenize
from afpnet.model import AFPNet, predict_batches, save_checkpoint

log = logging.getLogger(__name__)

EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 50
    trials: int = 5
    seed: int = 0
    class_weight: float = 1.0
    min_freq: int = 2
    clip_norm: float | None = None
    train_fraction: float = 0.8
    eval_batch_size: int = 64

    def __post_init__(self):
        for name in ("batch_size", "epochs", "trials", "min_freq", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.class_weight <= 0:
            raise ConfigError(f"class_weight must be > 0, got {self.class_weight}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def bce_loss(prob, label, class_weight: float = 1.0):
    """-(w*y*log(Y) + (1-y)*log(1-Y)) with Y clamped to [EPS, 1-EPS]."""
    prob = torch.as_tensor(prob, dtype=torch.float64 if not torch.is_tensor(prob) else None)
    label = torch.as_tensor(label, dtype=prob.dtype)
    if not ((label == 0) | (label == 1)).all():
        raise ValueError("labels must be 0 or 1")
    y = prob.clamp(EPS, 1 - EPS)
    return -(class_weight * label * torch.log(y) + (1 - label) * torch.log(1 - y))


@dataclass
class TrainHistory:
    seed: int
    epochs: list[dict] = field(default_factory=list)
    checkpoint: str | None = None
    model: Any = field(default=None, repr=False)
    vocab: Any = field(default=None, repr=False)

    @property
    def final(self) -> dict:
        return self.epochs[-1]["test"]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "checkpoint": self.checkpoint, "epochs": self.epochs}


def encode_corpus(corpus: Corpus, vocab: Vocabulary) -> list[list[int]]:
    return [encode(tokenize(c.source), vocab) for c in corpus]


def evaluate_encoded(model: AFPNet, id_lists, labels, batch_size: int = 64) -> MetricsReport:
    probs = predict_batches(model, id_lists, batch_size)
    decisions = (probs >= model.config.threshold).astype(int)
    return compute_metrics(decisions.tolist(), list(labels))


def train_model(train: Corpus, test: Corpus, mconfig: ModelConfig, tconfig: TrainConfig,
                seed: int | None = None, checkpoint_path=None, progress=None) -> TrainHistory:
    """Train one model from scratch; the vocabulary comes from ``train`` only.

    Metrics of the final epoch are the trial's result (no early stopping).
    """
    if len(train) == 0 or len(test) == 0:
        raise TrainingError("train and test corpora must both be non-empty")
    overlap = set(train.ids) & set(test.ids)
    if overlap:
        raise TrainingError(f"train and test share {len(overlap)} contract id(s)")
    seed = tconfig.seed if seed is None else seed

    vocab = build_vocab(train, tconfig.min_freq)
    train_ids = encode_corpus(train, vocab)
    test_ids = encode_corpus(test, vocab)
    train_labels = train.labels
    test_labels = test.labels

    model = AFPNet(mconfig, len(vocab), seed=seed)
    opt = torch.optim.AdamW(model.parameters(), lr=tconfig.learning_rate,
                            weight_decay=tconfig.weight_decay)
    shuffler = random.Random(seed)
    history = TrainHistory(seed=seed, model=model, vocab=vocab)
    order = list(range(len(train_ids)))

    for epoch in range(1, tconfig.epochs + 1):
        shuffler.shuffle(order)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(order), tconfig.batch_size)):
            batch = order[start:start + tconfig.batch_size]
            logits = model([train_ids[i] for i in batch])
            labels = torch.tensor([train_labels[i] for i in batch], dtype=logits.dtype)
            loss = bce_loss(torch.sigmoid(logits), labels, tconfig.class_weight).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b} "
                                    f"(contracts {[train.contracts[i].id for i in batch][:5]}...)")
            opt.zero_grad()
            loss.backward()
            if tconfig.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tconfig.clip_norm)
            opt.step()
            total += float(loss.detach()) * len(batch)
            seen += len(batch)
        report = evaluate_encoded(model, test_ids, test_labels, tconfig.eval_batch_size)
        record = {"epoch": epoch, "train_loss": total / seen, "test": report.to_dict()}
        history.epochs.append(record)
        log.info("seed %d epoch %d loss %.4f test f1 %.4f", seed, epoch, record["train_loss"], report.f1)
        if progress is not None:
            progress(record)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, vocab)
        history.checkpoint = str(checkpoint_path)
    return history


def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_trials(train: Corpus, test: Corpus, mconfig: ModelConfig, tconfig: TrainConfig,
               out_dir=None, progress=None) -> dict:
    """Train ``tconfig.trials`` models with seeds seed, seed+1, ... on one split
    and average their last-epoch precision/recall/F1."""
    trials = []
    for t in range(tconfig.trials):
        seed = tconfig.seed + t
        ckpt = None
        if out_dir is not None:
            trial_dir = Path(out_dir) / f"trial_{t}"
            trial_dir.mkdir(parents=True, exist_ok=True)
            ckpt = trial_dir / "checkpoint.afp"
        hist = train_model(train, test, mconfig, tconfig, seed=seed, checkpoint_path=ckpt, progress=progress)
        final = hist.final
        entry = {"trial": t, "seed": seed, "precision": final["precision"],
                 "recall": final["recall"], "f1": final["f1"], "metrics": final}
        if out_dir is not None:
            hist.checkpoint = ckpt.name  # relative to the trial directory
            _dump(trial_dir / "history.json", hist.to_dict())
            _dump(trial_dir / "metrics.json", final)
            hist.vocab.save(trial_dir / "vocab.json")
            entry["checkpoint"] = str(ckpt)
        trials.append(entry)
    mean = {k: float(np.mean([e[k] for e in trials])) for k in ("precision", "recall", "f1")}
    mean["percent"] = {k: round(100 * v, 2) for k, v in mean.items()}
    return {"trials": trials, "mean": mean}
