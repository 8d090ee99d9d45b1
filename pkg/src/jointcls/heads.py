"""Pooling, class-feature extraction, scoring, layer re-weighting and the
token-level contrastive loss.

Everything here maps encoder states to logits (or to an auxiliary loss) and
is a pure function of its inputs and a :class:`~jointcls.nn.Params` store.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from . import tensor as T
from .encoder import MASK_BIAS
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

POOLING = ("first", "mean", "attention")
CLASS_FEATURES = ("span_mean", "marker")


@dataclass
class ScorerConfig:
    kind: str = "dot"
    temperature: float = 1.0
    mlp_hidden: tuple = (32,)

    def __post_init__(self):
        if self.kind not in ("dot", "mlp"):
            raise ConfigError(f"unknown scorer kind {self.kind!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)

    def to_dict(self):
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d


@dataclass
class PooledRepresentations:
    text: Tensor                  # [B, D]
    classes: Tensor               # [B, C, D]
    class_valid_mask: np.ndarray  # [B, C]


def span_mask(text_span, length):
    spans = np.asarray(text_span)
    idx = np.arange(length)[None, :]
    return (idx >= spans[:, :1]) & (idx < spans[:, 1:])


# -- pooling -----------------------------------------------------------------
def init_pool_params(params, d, rng=None):
    # zero query: attention pooling starts out as mean pooling
    params["pool.query"] = nn.zeros((d,))
    return params


def pool_text(H, text_span, strategy="first", query=None):
    """Reduce token states over each example's text span to one vector [B, D].

    ``attention`` pooling is softmax(H q / sqrt(D))-weighted over the span
    with a learned query ``q``.
    """
    b, length, d = H.shape
    spans = np.asarray(text_span, dtype=np.int64).reshape(b, 2)
    if np.any(spans[:, 1] <= spans[:, 0]):
        raise ContractError("text span must be non-empty")
    if np.any(spans < 0) or np.any(spans[:, 1] > length):
        raise ContractError("text span out of range")
    if strategy == "first":
        return H[np.arange(b), spans[:, 0]]
    mask = span_mask(spans, length).astype(np.float64)
    if strategy == "mean":
        counts = mask.sum(axis=1, keepdims=True)
        return (H * mask[:, :, None]).sum(axis=1) / counts
    if strategy == "attention":
        if query is None:
            raise ContractError("attention pooling needs a query vector")
        scores = (H @ query.reshape(d, 1)).reshape(b, length) * (1.0 / math.sqrt(d))
        scores = scores + np.where(mask > 0, 0.0, MASK_BIAS)
        w = T.softmax(scores, axis=-1)
        return (H * w.reshape(b, length, 1)).sum(axis=1)
    raise ConfigError(f"unknown pooling strategy {strategy!r}")


# -- class features -----------------------------------------------------------
def extract_class_features(H, class_positions, class_mask=None):
    """Gather the hidden state at each label marker: ([B, C, D], mask [B, C]).

    Rows of absent labels (mask 0) are zero vectors.
    """
    b, length, d = H.shape
    pos = np.asarray(class_positions, dtype=np.int64)
    if pos.ndim != 2 or pos.shape[0] != b:
        raise ContractError("class positions must be a [B, C] matrix")
    mask = np.ones_like(pos) if class_mask is None else np.asarray(class_mask, dtype=np.int64)
    if mask.shape != pos.shape:
        raise ContractError("class mask must match class positions")
    if np.any((pos < 0) | (pos >= length)):
        raise ContractError("class token position out of range")
    gathered = H[np.arange(b)[:, None], pos]
    if not mask.all():
        gathered = gathered * mask[:, :, None].astype(np.float64)
    return gathered, mask


def extract_class_spans(H, class_positions, class_ends, class_mask=None):
    """Mean of the hidden states over each label block ``[marker, end)``: ([B, C, D], mask)."""
    b, length, d = H.shape
    start = np.asarray(class_positions, dtype=np.int64)
    end = np.asarray(class_ends, dtype=np.int64)
    mask = np.ones_like(start) if class_mask is None else np.asarray(class_mask, dtype=np.int64)
    if start.shape != end.shape or start.shape != mask.shape or start.ndim != 2 \
            or start.shape[0] != b:
        raise ContractError("class positions, ends and mask must share a [B, C] shape")
    valid = mask > 0
    if np.any(valid & ((start < 0) | (end > length) | (end <= start))):
        raise ContractError("class token span out of range")
    idx = np.arange(length)[None, None, :]
    w = ((idx >= start[:, :, None]) & (idx < end[:, :, None]) & valid[:, :, None]).astype(float)
    w /= np.maximum(w.sum(axis=-1, keepdims=True), 1.0)
    return w @ H, mask


# -- scoring -------------------------------------------------------------------
def init_scorer_params(params, cfg, d, rng):
    if cfg.kind == "mlp":
        sizes = (2 * d,) + cfg.mlp_hidden + (1,)
        for i in range(len(sizes) - 1):
            nn.init_linear(params, f"scorer.mlp.{2 * i}", rng, sizes[i], sizes[i + 1])
    return params


def score(pooled, cfg, params=None):
    """Per-label logits [B, C]; invalid labels get -inf.

    dot: ``t . c / tau``; mlp: ``g([t; c])`` with ReLU between layers.
    """
    t, c, mask = pooled.text, pooled.classes, np.asarray(pooled.class_valid_mask)
    if not cfg.temperature > 0:
        raise ConfigError("temperature must be > 0")
    b, n_cls, d = c.shape
    if t.shape != (b, d):
        raise ShapeError(f"text {t.shape} and classes {c.shape} disagree")
    if cfg.kind == "dot":
        # elementwise product + sum keeps each logit independent of C bit-for-bit
        logits = (t.reshape(b, 1, d) * c).sum(axis=-1) * (1.0 / cfg.temperature)
    elif cfg.kind == "mlp":
        x = T.concat([t.reshape(b, 1, d) + np.zeros((1, n_cls, 1)), c], axis=-1)
        n_layers = len(cfg.mlp_hidden) + 1
        for i in range(n_layers):
            x = nn.linear(params, f"scorer.mlp.{2 * i}", x)
            if i < n_layers - 1:
                x = T.relu(x)
        logits = x.reshape(b, n_cls)
    else:
        raise ConfigError(f"unknown scorer kind {cfg.kind!r}")
    if not mask.all():
        logits = T.masked_fill(logits, mask == 0, -np.inf)
    return logits


# -- layer re-weighting --------------------------------------------------------------
def excite_width(k):
    """Bottleneck width of the excitation MLP: ceil(K / 2)."""
    return max(1, (k + 1) // 2)


def init_reweight_params(params, n_layers, d, d_out, rng, prefix="reweight"):
    kh = excite_width(n_layers)
    nn.init_linear(params, prefix + ".squeeze", rng, d, 1)
    params[prefix + ".W1"] = nn.normal(rng, (kh, n_layers))
    params[prefix + ".W2"] = nn.normal(rng, (n_layers, kh))
    nn.init_linear(params, prefix + ".proj", rng, d, d_out)
    return params


def layer_weights(layer_states, params, mask=None, prefix="reweight"):
    """Squeeze-excitation gate S in (0, 1)^[B, K] over encoder layers."""
    if not layer_states:
        raise ContractError("need at least one layer state")
    shape = layer_states[0].shape
    if any(u.shape != shape for u in layer_states):
        raise ContractError("all layer states must share one shape")
    b, length, d = shape
    if mask is None:
        w = np.full((b, length, 1), 1.0 / length)
    else:
        m = np.asarray(mask, dtype=np.float64)
        w = (m / np.maximum(m.sum(axis=1, keepdims=True), 1.0))[:, :, None]
    z = T.concat([(nn.linear(params, prefix + ".squeeze", u) * w).sum(axis=1)
                  for u in layer_states], axis=1)                                 # [B, K]
    hidden = T.relu(z @ params[prefix + ".W1"].T)                                 # [B, K/2]
    return T.sigmoid(hidden @ params[prefix + ".W2"].T)                           # [B, K]


def reweight_layers(layer_states, params, mask=None, prefix="reweight"):
    """Gate-weighted sum of layer outputs, then a linear projection -> [B, L, D_out].

    The squeeze average runs over valid tokens only when ``mask`` is given
    (identical to a plain 1/L mean for unpadded rows).
    """
    s = layer_weights(layer_states, params, mask, prefix)
    b = s.shape[0]
    mixed = layer_states[0] * s[:, 0].reshape(b, 1, 1)
    for k in range(1, len(layer_states)):
        mixed = mixed + layer_states[k] * s[:, k].reshape(b, 1, 1)
    return nn.linear(params, prefix + ".proj", mixed)


# -- contrastive loss --------------------------------------------------------------
def token_contrastive_loss(E, token_mask):
    """Each valid token must pick itself out of its sequence by cosine similarity.

    Cross-entropy of row l of E_hat E_hat^T against target l, averaged over
    valid tokens. Invalid tokens are neither queries nor candidates.
    """
    m = np.asarray(token_mask)
    if m.shape != E.shape[:2]:
        raise ContractError("token mask must be [B, L] matching the embeddings")
    n_valid = m.sum()
    if n_valid == 0:
        raise ContractError("contrastive loss needs at least one valid token")
    e_hat = T.l2_normalize(E, axis=-1)
    sim = e_hat @ e_hat.transpose(0, 2, 1)                                        # [B, L, L]
    sim = sim + np.where(m[:, None, :] > 0, 0.0, MASK_BIAS)
    logp = T.log_softmax(sim, axis=-1)
    length = E.shape[1]
    diag = logp[:, np.arange(length), np.arange(length)]                          # [B, L]
    return -(diag * m.astype(np.float64)).sum() * (1.0 / n_valid)
