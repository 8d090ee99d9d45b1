import numpy as np
import pytest

from jointcls import tensor as T
from jointcls.errors import ConfigError
from jointcls.model import VARIANTS, ModelConfig, forward_variant
from jointcls.training.supervised import TrainConfig, supervised_loss

from gradcheck import check
from toy import LABELS, TARGETS, TEXTS, VOCAB, make_model


@pytest.mark.parametrize("variant", VARIANTS)
def test_logit_shapes_and_mask(variant):
    m = make_model(variant, scramble=1)
    out = m.forward(m.prepare(TEXTS, LABELS))
    assert out.logits.shape == (3, 3)
    assert out.class_mask.tolist() == [[1, 1, 0], [1, 1, 1], [1, 0, 0]]
    assert np.isneginf(out.logits.data[out.class_mask == 0]).all()
    assert np.isfinite(out.logits.data[out.class_mask == 1]).all()


@pytest.mark.parametrize("variant", VARIANTS)
def test_padding_labels_never_change_real_logits(variant):
    m = make_model(variant, scramble=2)
    alone = m.logits(TEXTS[2:], LABELS[2:]).data[0, :1]
    batched = m.logits(TEXTS, LABELS).data[2, :1]
    assert np.abs(alone - batched).max() <= 1e-12


def test_unknown_variant():
    with pytest.raises(ConfigError):
        ModelConfig(variant="cross")


def test_variant_mismatch():
    m = make_model("uni")
    with pytest.raises(ConfigError):
        forward_variant("bi", m.prepare(TEXTS, LABELS), m)


def test_fused_with_pinned_class_vectors_equals_uni():
    fused = make_model("fused_bi", scramble=3)
    uni = make_model("uni")
    uni.params = fused.params          # uni reads only the shared names
    marker = fused.params["enc.tok_emb.weight"][VOCAB.label_id]
    labels = {lab for labs in LABELS for lab in labs}
    pinned = {lab: marker for lab in labels}
    a = fused.forward(fused.prepare(TEXTS, LABELS), class_vectors=pinned).logits.data
    b = uni.logits(TEXTS, LABELS).data
    valid = np.isfinite(b)
    assert np.abs(a[valid] - b[valid]).max() <= 1e-9


def test_bi_logits_independent_of_co_candidates():
    m = make_model("bi", scramble=4)
    text = "bank the stock market"
    a = m.logits([text], [["finance", "sports"]]).data[0, 0]
    b = m.logits([text], [["finance", "cooking", "music", "soup"]]).data[0, 0]
    c = m.logits([text], [["finance"]]).data[0, 0]
    assert a == b == c


def test_bi_label_order_invariance():
    m = make_model("bi", scramble=5)
    labs = ["finance", "cooking", "music"]
    perm = [2, 0, 1]
    a = m.logits(["hello world"], [labs]).data[0]
    b = m.logits(["hello world"], [[labs[i] for i in perm]]).data[0]
    assert np.abs(a[perm] - b).max() <= 1e-6


def test_bi_caches_label_vectors_under_no_grad():
    m = make_model("bi", scramble=6)
    with T.no_grad():
        m.logits(TEXTS, LABELS)
        first = dict(m._label_cache)
        m.logits(TEXTS, LABELS)
    assert set(first) == {"sports", "finance", "cooking", "music"}
    assert all(m._label_cache[k] is v for k, v in first.items())
    m.params.version += 1
    with T.no_grad():
        m.logits(TEXTS, LABELS)
    assert all(m._label_cache[k] is not v for k, v in first.items())


def test_enc_dec_zero_layers_gives_query_embeddings():
    m = make_model("enc_dec", scramble=7, decoder_layers=0, class_features="marker",
                   scorer={"kind": "mlp", "mlp_hidden": [4]})
    inputs = m.prepare(TEXTS[:1], LABELS[:1])
    from jointcls.encoder import positional_encoding
    cls = inputs["classes"]
    emb = m.params["enc.tok_emb.weight"].data[cls.token_ids[0]]
    expect = (emb + positional_encoding(emb.shape[0], 8))[cls.class_positions[0]]
    from jointcls import heads
    from jointcls.encoder import decode_with_cross_attention
    out = m._encode(inputs["text"].token_ids, inputs["text"].attn_mask)
    H = decode_with_cross_attention(m.encoder_config, m.params, cls.token_ids, out)
    got, _ = heads.extract_class_features(H, cls.class_positions, cls.class_mask)
    assert np.array_equal(got.data[0], expect)
    assert m.logits(TEXTS[:1], LABELS[:1]).shape == (1, 2)


def test_predict_proba_matches_sigmoid_of_logits():
    m = make_model("uni", scramble=8)
    probs = m.predict_proba("hello world", ["sports", "finance"])
    logits = m.logits(["hello world"], [["sports", "finance"]]).data[0]
    assert list(probs.values()) == (1 / (1 + np.exp(-logits))).tolist()


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("pooling", ["first", "mean", "attention"])
def test_full_loss_gradient_check(variant, pooling):
    m = make_model(variant, seed=1, scramble=9, pooling=pooling)
    rng = np.random.default_rng(0)
    cfg = TrainConfig(focal_alpha=0.7, focal_gamma=2.0)
    fn = lambda: supervised_loss(m, TEXTS[:2], LABELS[:2], TARGETS[:2], cfg)
    leaves = [p for p in m.params.values()]
    assert check(fn, leaves, rng=rng, max_coords=2) == []
