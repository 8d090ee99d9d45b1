"""Classification and policy-optimization losses.

Conventions shared by every function here:

* ``mask`` marks valid (example, label) cells; invalid cells never touch the
  value or the gradient.
* A negative coefficient disables its component and the function returns an
  exact zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..errors import ContractError, ShapeError
from ..tensor import Tensor


def _mask_like(mask, shape):
    if mask is None:
        return np.ones(shape)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != tuple(shape):
        raise ShapeError(f"mask shape {m.shape} does not match {shape}")
    return m


def _masked_mean(x, m):
    n = m.sum()
    if n == 0:
        raise ContractError("no valid entries to average")
    return (x * m).sum() * (1.0 / n)


def smooth_targets(targets, smoothing):
    """(1 - eps) * a + 0.5 * eps; no-op when ``smoothing`` < 0."""
    a = np.asarray(targets, dtype=np.float64)
    if smoothing is None or smoothing < 0:
        return a
    return (1.0 - smoothing) * a + 0.5 * smoothing


def focal_bce_loss(logits, targets, mask=None, alpha=-1.0, gamma=-1.0, label_smoothing=-1.0):
    """Masked mean of ``-alpha_t (1 - p_t)^gamma log p_t`` over label cells.

    ``alpha_t`` is ``alpha`` for positives and ``1 - alpha`` for negatives;
    ``alpha < 0`` drops that factor and ``gamma < 0`` drops the modulating
    term, so both disabled is plain binary cross-entropy.
    """
    y = smooth_targets(targets, label_smoothing)
    m = _mask_like(mask, logits.shape)
    z = T.where(m > 0, logits, 0.0)
    bce = -(T.log_sigmoid(z) * y + T.log_sigmoid(-z) * (1.0 - y))
    if gamma is not None and gamma >= 0:
        p = T.sigmoid(z)
        p_t = p * y + (1.0 - p) * (1.0 - y)
        bce = bce * T.power(1.0 - p_t, gamma)
    if alpha is not None and alpha >= 0:
        bce = bce * (alpha * y + (1.0 - alpha) * (1.0 - y))
    return _masked_mean(bce, m)


@dataclass
class RolloutBatch:
    actions: np.ndarray          # [N, C] in {0, 1}
    old_probs: np.ndarray        # [N, C] policy P(label on) when the batch was sampled
    rewards: np.ndarray          # [N, C]
    values: np.ndarray           # [N] value predictions V(s_i) at rollout time
    advantages: np.ndarray       # [N, C] = rewards - values[:, None]
    label_valid_mask: np.ndarray  # [N, C]
    value_targets: np.ndarray = None   # [N]; mean reward over valid labels
    ref_probs: np.ndarray = None       # [N, C] reference-policy probabilities

    @classmethod
    def build(cls, actions, old_probs, rewards, values, mask, ref_probs=None):
        m = np.asarray(mask, dtype=np.float64)
        rewards = np.asarray(rewards, dtype=np.float64) * m
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        counts = np.maximum(m.sum(axis=1), 1.0)
        return cls(actions=np.asarray(actions, dtype=np.float64),
                   old_probs=np.asarray(old_probs, dtype=np.float64),
                   rewards=rewards, values=values,
                   advantages=(rewards - values[:, None]) * m,
                   label_valid_mask=m,
                   value_targets=rewards.sum(axis=1) / counts,
                   ref_probs=None if ref_probs is None else np.asarray(ref_probs, np.float64))


def action_probs(probs, actions):
    """pi(a | s) for Bernoulli labels: p where a = 1, 1 - p where a = 0 (a may be smoothed)."""
    return probs * actions + (1.0 - probs) * (1.0 - actions)


def ppo_loss(new_probs, rollout, cfg, normalize="pairs"):
    """Negative clipped surrogate.

    ``normalize="pairs"`` averages over valid (i, j) cells; ``"examples"``
    sums over labels and divides by the number of examples N.
    """
    m = rollout.label_valid_mask
    if new_probs.shape != m.shape:
        raise ShapeError(f"probabilities {new_probs.shape} vs rollout {m.shape}")
    a = smooth_targets(rollout.actions, cfg.label_smoothing)
    old_pi = action_probs(rollout.old_probs, a)
    if np.any((old_pi <= 0) & (m > 0)):
        raise ContractError("old policy assigns zero probability to a taken action")
    old_pi = np.where(m > 0, old_pi, 1.0)
    ratio = action_probs(new_probs, a) / old_pi
    adv = rollout.advantages
    eps = cfg.clip
    surrogate = T.minimum(ratio * adv, T.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    weight = m
    if cfg.focal_alpha >= 0 or cfg.focal_gamma >= 0:
        w = np.ones_like(m)
        if cfg.focal_alpha >= 0:
            w = w * (cfg.focal_alpha * a + (1.0 - cfg.focal_alpha) * (1.0 - a))
        if cfg.focal_gamma >= 0:
            w = w * (1.0 - action_probs(new_probs.data, a)) ** cfg.focal_gamma
        weight = m * w
    if normalize == "pairs":
        denom = m.sum()
    elif normalize == "examples":
        denom = m.shape[0]
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    if denom == 0:
        raise ContractError("no valid entries in rollout")
    return -(surrogate * weight).sum() * (1.0 / denom)


def value_loss(values, returns):
    """Mean squared error between value predictions and reward targets."""
    r = np.asarray(returns, dtype=np.float64)
    if values.shape != r.shape:
        raise ShapeError(f"values {values.shape} vs returns {r.shape}")
    d = values - r
    return (d * d).mean()


def _bernoulli_terms(p):
    # clamp keeps log finite at the exact 0/1 limits (contribution -> 0 either way)
    return T.clip(p, 1e-300, 1.0), T.clip(1.0 - p, 1e-300, 1.0)


def kl_penalty(ref_probs, new_probs, beta, mask=None):
    """beta * mean Bernoulli KL(ref || new); exactly 0 when beta < 0."""
    if beta is None or beta < 0:
        return Tensor(0.0)
    q = np.asarray(ref_probs, dtype=np.float64)
    m = _mask_like(mask, new_probs.shape)
    p_on, p_off = _bernoulli_terms(new_probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        const = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0) + \
            np.where(q < 1, (1 - q) * np.log(np.where(q < 1, 1 - q, 1.0)), 0.0)
    kl = const - T.log(p_on) * q - T.log(p_off) * (1.0 - q)
    return _masked_mean(kl, m) * beta


def bernoulli_entropy(probs):
    p_on, p_off = _bernoulli_terms(probs)
    return -(probs * T.log(p_on) + (1.0 - probs) * T.log(p_off))


def entropy_bonus(new_probs, beta, mask=None):
    """beta * mean Bernoulli entropy; exactly 0 when beta < 0."""
    if beta is None or beta < 0:
        return Tensor(0.0)
    m = _mask_like(mask, new_probs.shape)
    return _masked_mean(bernoulli_entropy(new_probs), m) * beta


def sample_actions(probs, mode="stochastic", rng=None):
    """Per-label Bernoulli(p) draws, or the deterministic rule p > 0.5."""
    p = np.asarray(probs, dtype=np.float64)
    if mode == "deterministic":
        return (p > 0.5).astype(np.float64)
    if mode == "stochastic":
        rng = rng if rng is not None else np.random.default_rng()
        return (rng.random(p.shape) < p).astype(np.float64)
    raise ValueError(f"unknown sampling mode {mode!r}")
