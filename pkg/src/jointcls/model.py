"""The label-conditioned classifier and its four architectural variants.

``uni``       labels and text encoded jointly in one sequence
``bi``        text encoder and class encoder run separately (label vectors cacheable)
``fused_bi``  class-encoder vectors written into the joint input's embedding layer
              at the label-marker positions, then encoded jointly
``enc_dec``   text encoder + class-query decoder with cross-attention
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import assembly, heads, nn
from . import tensor as T
from .encoder import (
    EncoderConfig,
    EncoderOutput,
    decode_with_cross_attention,
    embed,
    encode,
    encode_embeddings,
    init_decoder_params,
    init_encoder_params,
)
from .errors import ConfigError, ContractError
from .heads import PooledRepresentations, ScorerConfig
from .tensor import Tensor

VARIANTS = ("uni", "bi", "fused_bi", "enc_dec")


@dataclass
class ModelConfig:
    variant: str = "uni"
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 64
    max_len: int = 1024
    class_layers: int = 1          # class encoder depth (bi, fused_bi)
    decoder_layers: int = 1        # enc_dec only
    pooling: str = "first"
    class_features: str = "span_mean"
    layer_reweight: bool = True
    contrastive_weight: float = 0.1
    scorer: ScorerConfig = field(default_factory=ScorerConfig)

    def __post_init__(self):
        if isinstance(self.scorer, dict):
            self.scorer = ScorerConfig(**self.scorer)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.pooling not in heads.POOLING:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.class_features not in heads.CLASS_FEATURES:
            raise ConfigError(f"unknown class feature mode {self.class_features!r}")
        if self.layer_reweight and self.n_layers < 1:
            raise ConfigError("layer re-weighting needs at least one encoder layer")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")

    def encoder_config(self, vocab_size, n_layers=None):
        return EncoderConfig(vocab_size=vocab_size, d_model=self.d_model, n_heads=self.n_heads,
                             n_layers=self.n_layers if n_layers is None else n_layers,
                             d_ff=self.d_ff, max_seq_len=self.max_len)

    def to_dict(self):
        d = asdict(self)
        d["scorer"] = self.scorer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ForwardOutput:
    logits: Tensor            # [B, C], -inf at invalid labels
    class_mask: np.ndarray    # [B, C]
    text: Tensor              # pooled text vectors [B, D]
    hidden: Tensor            # token states used by the heads [B, L, D]
    token_mask: np.ndarray    # [B, L]


def init_model_params(config, vocab_size, seed=0):
    rng = np.random.default_rng(seed)
    d = config.d_model
    params = init_encoder_params(config.encoder_config(vocab_size), rng, prefix="enc")
    if config.variant in ("bi", "fused_bi"):
        init_encoder_params(config.encoder_config(vocab_size, config.class_layers), rng,
                            params, prefix="cls")
        # class encoder shares nothing with the text encoder, including embeddings
    if config.variant == "enc_dec":
        init_decoder_params(config.encoder_config(vocab_size), rng, config.decoder_layers,
                            params, prefix="dec")
    if config.layer_reweight:
        heads.init_reweight_params(params, config.n_layers, d, d, rng)
    heads.init_pool_params(params, d)
    heads.init_scorer_params(params, config.scorer, d, rng)
    return params


class Classifier:
    """A vocabulary, a config and a parameter store, with convenience entry points."""

    def __init__(self, config, vocab, params=None, seed=0):
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else init_model_params(config, len(vocab), seed)
        self.encoder_calls = 0
        self._label_cache = {}
        self._label_cache_version = None

    @property
    def encoder_config(self):
        return self.config.encoder_config(len(self.vocab))

    def clone(self):
        out = Classifier(self.config, self.vocab, self.params.copy())
        return out

    # -- input preparation ------------------------------------------------
    def prepare(self, texts, label_lists):
        """Assemble a batch for this model's variant."""
        if len(texts) != len(label_lists):
            raise ContractError("texts and label lists differ in length")
        v, n = self.vocab, self.config.max_len
        kind = self.config.variant
        if kind in ("uni", "fused_bi"):
            return {"joint": assembly.batch([assembly.assemble(t, labs, v, n)
                                             for t, labs in zip(texts, label_lists)])}
        text = assembly.batch([assembly.assemble_text(t, v, n) for t in texts])
        classes = assembly.batch([assembly.assemble_labels(labs, v, n) for labs in label_lists])
        return {"text": text, "classes": classes}

    # -- forward ------------------------------------------------------------
    def _encode(self, ids, mask):
        self.encoder_calls += 1
        return encode(self.encoder_config, self.params, ids, mask, prefix="enc")

    def _heads_input(self, out):
        if self.config.layer_reweight:
            return heads.reweight_layers(out.layer_states, self.params, out.mask)
        return out.final_hidden

    def class_vector(self, label):
        """Class-encoder vector for one label: state at its marker, shape [D]."""
        cache = not T.is_grad_enabled()
        if cache:
            if self._label_cache_version != (id(self.params), self.params.version):
                self._label_cache = {}
                self._label_cache_version = (id(self.params), self.params.version)
            hit = self._label_cache.get(label)
            if hit is not None:
                return hit
        inp = assembly.assemble_labels([label], self.vocab, self.config.max_len)
        cfg = self.config.encoder_config(len(self.vocab), self.config.class_layers)
        out = encode(cfg, self.params, inp.token_ids, inp.attn_mask, prefix="cls")
        vec = _class_features(self, out.final_hidden, inp)[0][0, 0]
        if cache:
            self._label_cache[label] = vec
        return vec

    def clear_cache(self):
        self._label_cache = {}

    def forward(self, inputs, class_vectors=None):
        return forward_variant(self.config.variant, inputs, self, class_vectors)

    def logits(self, texts, label_lists):
        return self.forward(self.prepare(texts, label_lists)).logits

    def predict_proba(self, text, labels):
        with T.no_grad():
            logits = self.logits([text], [labels]).data[0]
        probs = T._sigmoid_np(logits)
        return dict(zip(labels, probs.tolist()))


def _class_features(model, H, inp):
    if model.config.class_features == "marker":
        return heads.extract_class_features(H, inp.class_positions, inp.class_mask)
    return heads.extract_class_spans(H, inp.class_positions, inp.class_ends, inp.class_mask)


def _pool(model, H, span):
    return heads.pool_text(H, span, model.config.pooling, model.params.get("pool.query"))


def _stack_class_vectors(model, label_lists, n_cls, d, class_vectors):
    rows = []
    zero = Tensor(np.zeros(d))
    unique = dict(class_vectors or {})
    for labs in label_lists:
        for lab in labs:
            if lab not in unique:
                unique[lab] = model.class_vector(lab)
    for labs in label_lists:
        vecs = [unique[lab] for lab in labs]
        vecs += [zero] * (n_cls - len(vecs))
        rows.append(T.stack(vecs, axis=0))
    return T.stack(rows, axis=0)


def forward_variant(kind, inputs, model, class_vectors=None):
    """Logits for a prepared batch. ``class_vectors`` optionally overrides the
    class encoder output per label (bi and fused_bi only)."""
    if kind != model.config.variant:
        raise ConfigError(f"model is {model.config.variant!r}, asked to run {kind!r}")
    p, cfg = model.params, model.config
    if kind == "uni":
        inp = inputs["joint"]
        out = model._encode(inp.token_ids, inp.attn_mask)
        H = model._heads_input(out)
        C, cmask = _class_features(model, H, inp)
        t = _pool(model, H, inp.text_span)
        token_mask = inp.attn_mask
    elif kind == "fused_bi":
        inp = inputs["joint"]
        E = embed(model.encoder_config, p, inp.token_ids, prefix="enc")
        b, n_cls = inp.class_mask.shape
        raw = _stack_class_vectors(model, inp.labels, n_cls, cfg.d_model, class_vectors)
        rows, cols = np.nonzero(inp.class_mask)
        E = T.scatter_rows(E, (rows, inp.class_positions[rows, cols]), raw[rows, cols])
        model.encoder_calls += 1
        out = encode_embeddings(model.encoder_config, p, E, inp.attn_mask, prefix="enc")
        H = model._heads_input(out)
        C, cmask = _class_features(model, H, inp)
        t = _pool(model, H, inp.text_span)
        token_mask = inp.attn_mask
    elif kind == "bi":
        text = inputs["text"]
        out = model._encode(text.token_ids, text.attn_mask)
        H = model._heads_input(out)
        t = _pool(model, H, text.text_span)
        cls_inp = inputs["classes"]
        cmask = cls_inp.class_mask
        C = _stack_class_vectors(model, cls_inp.labels, cmask.shape[1], cfg.d_model,
                                 class_vectors)
        token_mask = text.attn_mask
    elif kind == "enc_dec":
        text = inputs["text"]
        out = model._encode(text.token_ids, text.attn_mask)
        H = model._heads_input(out)
        t = _pool(model, H, text.text_span)
        cls_inp = inputs["classes"]
        memory = EncoderOutput(final_hidden=H, layer_states=out.layer_states, mask=out.mask)
        H_dec = decode_with_cross_attention(model.encoder_config, p, cls_inp.token_ids, memory,
                                            class_mask=cls_inp.attn_mask, prefix="dec")
        C, cmask = _class_features(model, H_dec, cls_inp)
        token_mask = text.attn_mask
    else:
        raise ConfigError(f"unknown variant {kind!r}")
    logits = heads.score(PooledRepresentations(t, C, cmask), cfg.scorer, p)
    return ForwardOutput(logits=logits, class_mask=cmask, text=t, hidden=H,
                         token_mask=token_mask)
