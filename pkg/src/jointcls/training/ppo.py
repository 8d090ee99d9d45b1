"""PPO fine-tuning of a classifier treated as a per-label Bernoulli policy.

Each batch is rolled out once (sample actions, score rewards, snapshot the
old probabilities and the value estimates), then refined ``rl_iters`` times
against the clipped surrogate plus value, KL and entropy terms.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import nn
from .. import tensor as T
from ..checkpoint import save_rotating
from ..errors import ConfigError, NonFiniteError, NumericDomainError
from .losses import (
    RolloutBatch,
    action_probs,
    entropy_bonus,
    kl_penalty,
    ppo_loss,
    sample_actions,
    smooth_targets,
    value_loss,
)
from .optim import AdamW, OptimizerConfig
from .supervised import batches, make_batch

log = logging.getLogger(__name__)

REWARD_COMPONENTS = ("per_label_correct", "example_micro_f1", "length_penalty")


@dataclass
class PPOConfig:
    clip: float = 0.2
    rl_iters: int = 3
    entropy_coef: float = -1.0
    kl_coef: float = -1.0
    focal_alpha: float = -1.0
    focal_gamma: float = -1.0
    label_smoothing: float = -1.0
    sampling: str = "stochastic"
    normalize_advantages: bool = False
    normalize: str = "pairs"             # "pairs" or "examples"
    value_lr: float = 1e-3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if not 0.0 < self.clip < 1.0:
            raise ConfigError("clip must lie in (0, 1)")
        if self.rl_iters < 1:
            raise ConfigError("rl_iters must be >= 1")
        if self.sampling not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown sampling mode {self.sampling!r}")
        if self.normalize not in ("pairs", "examples"):
            raise ConfigError(f"unknown normalization {self.normalize!r}")
        if self.label_smoothing >= 1.0:
            raise ConfigError("label_smoothing must be < 1")
        if self.value_lr <= 0:
            raise ConfigError("value_lr must be > 0")

    def to_dict(self):
        d = asdict(self)
        d["optimizer"] = self.optimizer.to_dict()
        return d


@dataclass
class RewardConfig:
    """Weighted reward components ``R = sum_i w_i r_i``."""
    weights: dict = field(default_factory=lambda: {"per_label_correct": 1.0})

    def __post_init__(self):
        self.weights = {str(k): float(v) for k, v in dict(self.weights).items()}
        unknown = set(self.weights) - set(REWARD_COMPONENTS)
        if unknown:
            raise ConfigError(f"unknown reward components {sorted(unknown)}")
        if not all(math.isfinite(w) for w in self.weights.values()):
            raise ConfigError("reward weights must be finite")
        if not any(w != 0 for w in self.weights.values()):
            raise ConfigError("at least one reward component must be enabled")

    def to_dict(self):
        return {"weights": dict(self.weights)}


def reward_components(actions, targets, mask):
    """Each component as an [N, C] matrix (example-level ones replicated across labels)."""
    a = np.asarray(actions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    counts = np.maximum(m.sum(axis=1), 1.0)
    tp = (a * y * m).sum(axis=1)
    fp = (a * (1 - y) * m).sum(axis=1)
    fn = ((1 - a) * y * m).sum(axis=1)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 1.0)
    return {
        "per_label_correct": (a == y).astype(np.float64) * m,
        "example_micro_f1": f1[:, None] * m,
        "length_penalty": -((a * m).sum(axis=1) / counts)[:, None] * m,
    }


def compute_rewards(actions, targets, mask, cfg):
    """Weighted reward [N, C] and the mean of each enabled component over valid cells."""
    m = np.asarray(mask, dtype=np.float64)
    parts = reward_components(actions, targets, m)
    total = np.zeros_like(m)
    means = {}
    for name, w in cfg.weights.items():
        if w == 0:
            continue
        total += w * parts[name]
        means[name] = float(parts[name].sum() / max(m.sum(), 1.0))
    return total, means


# -- value head ------------------------------------------------------------------
def init_value_params(d, seed=0):
    """Pooled-text MLP D -> D/2 -> 1."""
    rng = np.random.default_rng(seed)
    params = nn.Params()
    hidden = max(1, d // 2)
    nn.init_linear(params, "value.fc1", rng, d, hidden)
    nn.init_linear(params, "value.fc2", rng, hidden, 1)
    return params


def value_forward(params, features):
    h = T.relu(nn.linear(params, "value.fc1", features))
    return nn.linear(params, "value.fc2", h).reshape(-1)


# -- one PPO batch -------------------------------------------------------------------
def _policy_probs(out):
    m = out.class_mask
    return T.sigmoid(T.where(m > 0, out.logits, 0.0))


def rollout(policy, value_params, ref_policy, texts, label_lists, targets, cfg, reward_cfg, rng):
    """Sample actions under the current policy and freeze everything PPO compares against."""
    with T.no_grad():
        out = policy.forward(policy.prepare(texts, label_lists))
        mask = out.class_mask.astype(np.float64)
        probs = _policy_probs(out).data
        feats = out.text.data
        values = value_forward(value_params, feats).data
        ref_probs = None
        if cfg.kl_coef >= 0:
            ref_probs = _policy_probs(ref_policy.forward(ref_policy.prepare(texts, label_lists))).data
    actions = sample_actions(probs, cfg.sampling, rng) * mask
    rewards, parts = compute_rewards(actions, targets, mask, reward_cfg)
    batch = RolloutBatch.build(actions, probs, rewards, values, mask, ref_probs)
    if cfg.normalize_advantages:
        valid = mask > 0
        adv = batch.advantages[valid]
        std = adv.std()
        batch.advantages = np.where(valid, (batch.advantages - adv.mean()) / (std + 1e-8), 0.0)
    return batch, feats, parts


def ppo_step(policy, value_params, ref_policy, texts, label_lists, targets, cfg, reward_cfg,
             optimizers, rng):
    """Roll out one batch and run ``cfg.rl_iters`` updates of policy and value model.

    Returns a metrics dict, or None when a non-finite value forced the batch
    to be skipped (label-vector caches are cleared in that case).
    """
    policy_opt, value_opt = optimizers
    try:
        batch, feats, parts = rollout(policy, value_params, ref_policy, texts, label_lists,
                                      targets, cfg, reward_cfg, rng)
        m = batch.label_valid_mask
        a = smooth_targets(batch.actions, cfg.label_smoothing)
        history = []
        first_ratio_dev = None
        for it in range(cfg.rl_iters):
            out = policy.forward(policy.prepare(texts, label_lists))
            new_probs = _policy_probs(out)
            if it == 0:
                ratio = action_probs(new_probs.data, a) / np.where(
                    m > 0, action_probs(batch.old_probs, a), 1.0)
                first_ratio_dev = float(np.abs(np.where(m > 0, ratio - 1.0, 0.0)).max())
            l_ppo = ppo_loss(new_probs, batch, cfg, cfg.normalize)
            l_value = value_loss(value_forward(value_params, feats), batch.value_targets)
            l_kl = kl_penalty(batch.ref_probs, new_probs, cfg.kl_coef, m) \
                if batch.ref_probs is not None else T.Tensor(0.0)
            l_ent = entropy_bonus(new_probs, cfg.entropy_coef, m)
            # the bonus rewards uncertainty, so it enters the minimized total with a minus sign
            total = l_ppo + l_value + l_kl - l_ent
            if not np.isfinite(total.data).all():
                raise NonFiniteError("non-finite PPO loss")
            policy_opt.zero_grad()
            value_opt.zero_grad()
            total.backward()
            for p in list(policy.params.values()) + list(value_params.values()):
                if p.grad is not None and not np.isfinite(p.grad).all():
                    raise NonFiniteError("non-finite gradient")
            policy_opt.step()
            value_opt.step()
            history.append({"loss_total": total.item(), "loss_ppo": l_ppo.item(),
                            "loss_value": l_value.item(), "loss_kl": l_kl.item(),
                            "entropy": l_ent.item()})
    except (NonFiniteError, NumericDomainError) as e:
        log.warning("skipping PPO batch: %s", e)
        policy_opt.zero_grad()
        value_opt.zero_grad()
        policy.clear_cache()
        return None
    policy_opt.zero_grad()
    value_opt.zero_grad()
    n_valid = max(m.sum(), 1.0)
    metrics = dict(history[-1])
    metrics.update({
        "mean_reward": float(batch.rewards.sum() / n_valid),
        "mean_advantage": float(batch.advantages.sum() / n_valid),
        "mean_value": float(batch.values.mean()),
        "first_iter_ratio_dev": first_ratio_dev,
        "iterations": history,
    })
    metrics.update({"reward/" + k: v for k, v in parts.items()})
    return metrics


class PPOTrainer:
    """Owns the policy, a frozen reference copy, the value head and both optimizers."""

    def __init__(self, policy, cfg=None, reward_cfg=None, seed=0):
        self.policy = policy
        self.cfg = cfg or PPOConfig()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.ref_policy = policy.clone()
        for p in self.ref_policy.params.values():
            p.requires_grad = False
        self.value_params = init_value_params(policy.config.d_model, seed)
        self.policy_opt = AdamW.from_config(policy.params, self.cfg.optimizer)
        vcfg = OptimizerConfig(encoder_lr=self.cfg.value_lr, head_lr=self.cfg.value_lr,
                               encoder_weight_decay=self.cfg.optimizer.head_weight_decay,
                               head_weight_decay=self.cfg.optimizer.head_weight_decay,
                               betas=self.cfg.optimizer.betas, eps=self.cfg.optimizer.eps)
        self.value_opt = AdamW.from_config(self.value_params, vcfg)
        self.rng = np.random.default_rng(seed)

    def step(self, examples):
        texts, label_lists, targets = make_batch(examples, self.rng, shuffle_labels=True)
        return ppo_step(self.policy, self.value_params, self.ref_policy, texts, label_lists,
                        targets, self.cfg, self.reward_cfg, (self.policy_opt, self.value_opt),
                        self.rng)

    def train(self, dataset, steps, batch_size=8, out_dir=None, log_file=None,
              checkpoint_every=1000, keep=3, max_consecutive_skips=10):
        """Run ``steps`` PPO batches; returns the per-step metrics (None for skipped)."""
        if not dataset:
            raise ConfigError("cannot train on an empty dataset")
        it = batches(len(dataset), batch_size, self.rng)
        history, consecutive = [], 0
        for step in range(1, steps + 1):
            metrics = self.step([dataset[i] for i in next(it)])
            history.append(metrics)
            consecutive = consecutive + 1 if metrics is None else 0
            if consecutive >= max_consecutive_skips:
                raise NonFiniteError(f"{consecutive} consecutive PPO batches were non-finite")
            if log_file is not None:
                row = {"step": step, "skipped": metrics is None}
                if metrics is not None:
                    row.update({k: v for k, v in metrics.items() if k != "iterations"})
                log_file.write(json.dumps(row) + "\n")
            if out_dir is not None and step % checkpoint_every == 0:
                save_rotating(out_dir, step, self.policy, keep, {"step": step, "stage": "ppo"})
        return history


def expected_reward(policy, examples, batch_size=32):
    """Mean per-label-correct reward the stochastic policy earns in expectation:
    p for true labels and 1 - p for false ones, averaged over all label cells."""
    total, count = 0.0, 0
    with T.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            labels = [list(ex.all_labels) for ex in chunk]
            out = policy.forward(policy.prepare([ex.text for ex in chunk], labels))
            probs = _policy_probs(out).data
            for row, ex, labs in zip(probs, chunk, labels):
                y = np.asarray(ex.targets(labs), dtype=np.float64)
                p = row[: len(labs)]
                total += float((y * p + (1 - y) * (1 - p)).sum())
                count += len(labs)
    return total / max(count, 1)
