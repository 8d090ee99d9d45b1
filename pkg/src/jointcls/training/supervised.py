"""Supervised focal-loss training loop with periodic rotating checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import heads
from ..checkpoint import save_rotating
from ..data import train_test_split
from ..errors import ConfigError, NonFiniteError, NumericDomainError
from .losses import focal_bce_loss
from .optim import AdamW, OptimizerConfig

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    train_fraction: float = 0.9
    focal_alpha: float = -1.0
    focal_gamma: float = -1.0
    label_smoothing: float = -1.0
    contrastive_weight: float = None    # None -> the model config's weight
    shuffle_labels: bool = True
    label_noise: float = 0.0            # probability of flipping each training target
    checkpoint_every: int = 1000
    keep_checkpoints: int = 3
    max_consecutive_skips: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise must lie in [0, 1]")
        if self.checkpoint_every < 1 or self.keep_checkpoints < 1:
            raise ConfigError("checkpoint_every and keep_checkpoints must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["optimizer"] = self.optimizer.to_dict()
        return d


@dataclass
class TrainResult:
    train: list
    test: list
    losses: list = field(default_factory=list)
    steps: int = 0
    skipped: int = 0
    checkpoints: list = field(default_factory=list)


def make_batch(examples, rng, shuffle_labels=True, label_noise=0.0):
    """Texts, per-example label order and a [B, C] target matrix (0 where padded)."""
    texts, label_lists = [], []
    for ex in examples:
        labels = list(ex.all_labels)
        if shuffle_labels:
            labels = [labels[i] for i in rng.permutation(len(labels))]
        texts.append(ex.text)
        label_lists.append(labels)
    n_cls = max(len(l) for l in label_lists)
    targets = np.zeros((len(examples), n_cls))
    for i, (ex, labels) in enumerate(zip(examples, label_lists)):
        targets[i, : len(labels)] = ex.targets(labels)
    if label_noise > 0:
        flip = rng.random(targets.shape) < label_noise
        targets = np.where(flip, 1.0 - targets, targets)
    return texts, label_lists, targets


def supervised_loss(model, texts, label_lists, targets, cfg):
    out = model.forward(model.prepare(texts, label_lists))
    mask = out.class_mask
    targets = targets * mask
    loss = focal_bce_loss(out.logits, targets, mask, cfg.focal_alpha, cfg.focal_gamma,
                          cfg.label_smoothing)
    weight = model.config.contrastive_weight if cfg.contrastive_weight is None \
        else cfg.contrastive_weight
    if weight > 0:
        loss = loss + heads.token_contrastive_loss(out.hidden, out.token_mask) * weight
    return loss


def supervised_step(model, examples, optimizer, cfg, rng):
    """One optimizer update; returns the loss, or None when the batch was skipped."""
    texts, label_lists, targets = make_batch(examples, rng, cfg.shuffle_labels, cfg.label_noise)
    try:
        loss = supervised_loss(model, texts, label_lists, targets, cfg)
        optimizer.zero_grad()
        loss.backward()
        for p in model.params.values():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteError("non-finite gradient")
    except (NonFiniteError, NumericDomainError) as e:
        log.warning("skipping batch: %s", e)
        optimizer.zero_grad()
        model.clear_cache()
        return None
    optimizer.step()
    optimizer.zero_grad()
    return loss.item()


def batches(n, batch_size, rng):
    """Endless epoch-shuffled index batches."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def train_loop(model, dataset, cfg=None, out_dir=None, log_file=None, split=True,
               optimizer=None):
    """Shuffle/split ``dataset`` (90/10 by default) and train on the train part.

    Writes one JSON metrics line per step to ``log_file`` (a text handle) and
    a rotating checkpoint every ``cfg.checkpoint_every`` steps into
    ``out_dir``, keeping the newest ``cfg.keep_checkpoints``.
    """
    cfg = cfg or TrainConfig()
    if not dataset:
        raise ConfigError("cannot train on an empty dataset")
    if split:
        train, test = train_test_split(dataset, cfg.train_fraction, cfg.seed)
    else:
        train, test = list(dataset), []
    rng = np.random.default_rng(cfg.seed + 1)
    optimizer = optimizer or AdamW.from_config(model.params, cfg.optimizer)
    result = TrainResult(train=train, test=test)
    consecutive = 0
    it = batches(len(train), cfg.batch_size, rng)
    for step in range(1, cfg.steps + 1):
        idx = next(it)
        loss = supervised_step(model, [train[i] for i in idx], optimizer, cfg, rng)
        result.steps = step
        if loss is None:
            result.skipped += 1
            consecutive += 1
            if consecutive >= cfg.max_consecutive_skips:
                raise NonFiniteError(f"{consecutive} consecutive batches were non-finite")
        else:
            consecutive = 0
            result.losses.append(loss)
        if log_file is not None:
            log_file.write(json.dumps({"step": step, "loss": loss, "skipped": loss is None}) + "\n")
        if out_dir is not None and step % cfg.checkpoint_every == 0:
            result.checkpoints.append(
                str(save_rotating(out_dir, step, model, cfg.keep_checkpoints, {"step": step})))
    return result


def adapt(model, support, cfg=None):
    """Fine-tune a copy of ``model`` on ``support`` (no held-out split); the original is untouched."""
    cfg = cfg or TrainConfig()
    tuned = model.clone()
    if support:
        train_loop(tuned, list(support), cfg, split=False)
    return tuned
