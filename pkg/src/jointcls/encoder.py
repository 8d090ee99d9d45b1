"""Pre-LayerNorm bidirectional transformer encoder and a cross-attention decoder."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, ContractError, SequenceLengthError, VocabError
from .tensor import Tensor

# Additive attention bias for masked keys. exp(MASK_BIAS - max) underflows to
# exactly 0.0, so masked keys contribute nothing, bit for bit.
MASK_BIAS = -1e30
EMBED_STD = 1.0


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_seq_len: int = 1024
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.d_model, self.n_heads, self.d_ff, self.max_seq_len) < 1:
            raise ConfigError("encoder sizes must be positive")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.dropout_rate != 0.0:
            raise ConfigError("dropout is not supported (dropout_rate must be 0)")

    def to_dict(self):
        return asdict(self)


@dataclass
class EncoderOutput:
    final_hidden: Tensor        # [B, L, D]
    layer_states: list          # K tensors [B, L, D]; last one is final_hidden
    mask: np.ndarray            # [B, L] in {0, 1}


@lru_cache(maxsize=32)
def _pe_table(length, d):
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    pe.setflags(write=False)
    return pe


def positional_encoding(length, d):
    """Sinusoidal table: even dims sin(pos / 10000^(2i/d)), odd dims the matching cos."""
    return _pe_table(int(length), int(d))


def init_encoder_params(config, rng, params=None, prefix="enc"):
    params = nn.Params() if params is None else params
    d = config.d_model
    params[f"{prefix}.tok_emb.weight"] = nn.normal(rng, (config.vocab_size, d), EMBED_STD)
    for i in range(config.n_layers):
        p = f"{prefix}.layers.{i}"
        nn.init_layer_norm(params, p + ".ln1", d)
        for m in ("query", "key", "value", "out"):
            nn.init_linear(params, f"{p}.attn.{m}", rng, d, d)
        nn.init_layer_norm(params, p + ".ln2", d)
        nn.init_linear(params, p + ".ffn.fc1", rng, d, config.d_ff)
        nn.init_linear(params, p + ".ffn.fc2", rng, config.d_ff, d)
    return params


def init_decoder_params(config, rng, n_layers, params=None, prefix="dec"):
    params = nn.Params() if params is None else params
    d = config.d_model
    for i in range(n_layers):
        p = f"{prefix}.layers.{i}"
        nn.init_layer_norm(params, p + ".ln1", d)
        for m in ("query", "key", "value", "out"):
            nn.init_linear(params, f"{p}.self_attn.{m}", rng, d, d)
        nn.init_layer_norm(params, p + ".ln2", d)
        for m in ("query", "key", "value", "out"):
            nn.init_linear(params, f"{p}.cross_attn.{m}", rng, d, d)
        nn.init_layer_norm(params, p + ".ln3", d)
        nn.init_linear(params, p + ".ffn.fc1", rng, d, config.d_ff)
        nn.init_linear(params, p + ".ffn.fc2", rng, config.d_ff, d)
    return params


def attention(params, name, x_q, x_kv, key_mask, n_heads):
    """Multi-head scaled dot-product attention; ``key_mask`` is [B, Lk] or None."""
    b, lq, d = x_q.shape
    lk = x_kv.shape[1]
    dh = d // n_heads
    q = nn.linear(params, name + ".query", x_q).reshape(b, lq, n_heads, dh).transpose(0, 2, 1, 3)
    k = nn.linear(params, name + ".key", x_kv).reshape(b, lk, n_heads, dh).transpose(0, 2, 3, 1)
    v = nn.linear(params, name + ".value", x_kv).reshape(b, lk, n_heads, dh).transpose(0, 2, 1, 3)
    scores = (q @ k) * (1.0 / math.sqrt(dh))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask)[:, None, None, :] > 0, 0.0, MASK_BIAS)
        scores = scores + bias
    weights = T.softmax(scores, axis=-1)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
    return nn.linear(params, name + ".out", ctx)


def _ffn(params, name, x):
    return nn.linear(params, name + ".fc2", T.gelu(nn.linear(params, name + ".fc1", x)))


def _check_ids(config, token_ids, what="token"):
    ids = np.asarray(token_ids)
    if ids.ndim != 2:
        raise ContractError(f"{what} ids must be a [B, L] matrix")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise VocabError(f"{what} id out of range for vocab of size {config.vocab_size}")
    if ids.shape[1] > config.max_seq_len:
        raise SequenceLengthError(f"sequence length {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}")
    return ids


def embed(config, params, token_ids, prefix="enc"):
    """Token embedding lookup only (no positions)."""
    ids = _check_ids(config, token_ids)
    return params[f"{prefix}.tok_emb.weight"][ids]


def encode_embeddings(config, params, token_embeds, attn_mask, prefix="enc"):
    """Run the encoder stack on precomputed token embeddings [B, L, D]."""
    b, length, d = token_embeds.shape
    if length > config.max_seq_len:
        raise SequenceLengthError(f"sequence length {length} exceeds max_seq_len {config.max_seq_len}")
    mask = np.asarray(attn_mask)
    if mask.shape != (b, length) or not np.isin(mask, (0, 1)).all():
        raise ContractError("attn_mask must be a {0,1} matrix matching token ids")
    h = token_embeds + positional_encoding(length, d)
    states = []
    for i in range(config.n_layers):
        p = f"{prefix}.layers.{i}"
        x = nn.layer_norm(params, p + ".ln1", h)
        h = h + attention(params, p + ".attn", x, x, mask, config.n_heads)
        h = h + _ffn(params, p + ".ffn", nn.layer_norm(params, p + ".ln2", h))
        states.append(h)
    return EncoderOutput(final_hidden=h, layer_states=states, mask=mask)


def encode(config, params, token_ids, attn_mask, prefix="enc"):
    """Encode a batch of token ids; returns every layer's output."""
    return encode_embeddings(config, params, embed(config, params, token_ids, prefix),
                             attn_mask, prefix)


def decoder_depth(params, prefix="dec"):
    n = 0
    while f"{prefix}.layers.{n}.ln1.weight" in params:
        n += 1
    return n


def decode_with_cross_attention(config, params, class_ids, enc_out, class_mask=None,
                                prefix="dec", embed_prefix="enc"):
    """Class-query decoder: self-attention over the class sequence, then cross-attention
    into the encoder memory ``enc_out``. Token embeddings are shared with the encoder.
    """
    ids = _check_ids(config, class_ids, "class")
    b, lc = ids.shape
    if enc_out.final_hidden.shape[0] != b:
        raise ContractError("class ids and encoder output have different batch sizes")
    d = config.d_model
    if class_mask is None:
        class_mask = np.ones((b, lc), dtype=np.int64)
    if lc == 0:
        return Tensor(np.zeros((b, 0, d)))
    h = params[f"{embed_prefix}.tok_emb.weight"][ids] + positional_encoding(lc, d)
    for i in range(decoder_depth(params, prefix)):
        p = f"{prefix}.layers.{i}"
        x = nn.layer_norm(params, p + ".ln1", h)
        h = h + attention(params, p + ".self_attn", x, x, class_mask, config.n_heads)
        x = nn.layer_norm(params, p + ".ln2", h)
        h = h + attention(params, p + ".cross_attn", x, enc_out.final_hidden, enc_out.mask,
                          config.n_heads)
        h = h + _ffn(params, p + ".ffn", nn.layer_norm(params, p + ".ln3", h))
    return h
