"""The nine acceptance criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -s`` to see the verdict lines as they are
produced; they are also repeated in the terminal summary.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

import loss_oracles as oracle
from jointcls import heads
from jointcls.assembly import Vocab
from jointcls.bench import BenchConfig, run_benchmark, scaling_ratio
from jointcls.checkpoint import (
    list_checkpoints,
    load_checkpoint,
    params_digest,
    save_checkpoint,
    save_rotating,
)
from jointcls.data import (
    HELDOUT_THEMES,
    BucketSpec,
    corpus_vocab_texts,
    few_shot_split,
    generate_single_label,
    generate_synthetic,
    load_dataset,
    save_dataset,
    theme_vocab_texts,
    train_test_split,
)
from jointcls.metrics import evaluate
from jointcls.model import Classifier, ModelConfig
from jointcls.tensor import Tensor
from jointcls.training.losses import (
    RolloutBatch,
    entropy_bonus,
    focal_bce_loss,
    kl_penalty,
    ppo_loss,
    value_loss,
)
from jointcls.training.lora import LoraConfig, apply_lora, merge_lora
from jointcls.training.optim import OptimizerConfig
from jointcls.training.ppo import PPOConfig, PPOTrainer, expected_reward
from jointcls.training.supervised import TrainConfig, adapt, supervised_loss, train_loop

from gradcheck import check
from op_cases import CASES
from toy import LABELS, TEXTS, VOCAB, make_model

pytestmark = pytest.mark.slow

TOY_OPT = OptimizerConfig(encoder_lr=3e-3, head_lr=3e-3)


@pytest.fixture(scope="session")
def corpus():
    data = generate_synthetic(BucketSpec(n_texts=1000), seed=0)
    assert len(data) == 2000
    return data


@pytest.fixture(scope="session")
def learned(corpus):
    """The toy uni-encoder trained on the bucket corpus (shared by criteria 5-7)."""
    vocab = Vocab.build(itertools.chain(corpus_vocab_texts(corpus), theme_vocab_texts()))
    model = Classifier(ModelConfig(max_len=128), vocab, seed=0)
    start = time.perf_counter()
    res = train_loop(model, corpus, TrainConfig(steps=2000, batch_size=8, optimizer=TOY_OPT))
    return model, res, time.perf_counter() - start


# -- 1 --------------------------------------------------------------------------------------
def test_gradient_integrity(verdict):
    start = time.perf_counter()
    bad = []
    for name, build in sorted(CASES.items()):
        for seed in range(100):
            leaves, fn = build(np.random.default_rng(seed))
            if check(fn, leaves):
                bad.append(f"{name}/{seed}")
    cfg = TrainConfig(focal_alpha=0.7, focal_gamma=2.0)
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        model = make_model("uni", seed=seed, n_layers=2)
        targets = (rng.random((3, 3)) < 0.5).astype(float)
        fn = lambda: supervised_loss(model, TEXTS, LABELS, targets, cfg)
        if check(fn, list(model.params.values()), rng=rng, max_coords=2):
            bad.append(f"full-uni/{seed}")
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 120
    verdict(1, ok, f"{len(CASES)} ops x 100 seeds + 2-layer uni pass x 100 seeds, "
                   f"{len(bad)} failures, {elapsed:.0f}s (limit 120s)")
    assert ok, bad[:10]


# -- 2 --------------------------------------------------------------------------------------
def _rollout(actions, old, adv, mask):
    rb = RolloutBatch.build(actions, old, np.zeros_like(old), np.zeros(old.shape[0]), mask)
    rb.advantages = adv * mask
    return rb


def test_loss_oracles(verdict):
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, c = rng.integers(1, 5, size=2)
        mask = (rng.random((n, c)) < 0.8).astype(float)
        mask[:, 0] = 1
        z = rng.normal(0, 2, (n, c))
        y = (rng.random((n, c)) < 0.5).astype(float)
        errs = {}
        got = focal_bce_loss(Tensor(z), y, mask, alpha=0.7, gamma=2.0).item()
        errs["focal"] = abs(got - oracle.focal_bce(z.tolist(), y.tolist(), mask.tolist(), 0.7, 2.0))
        E = rng.normal(size=(n, 4, 3))
        M = (rng.random((n, 4)) < 0.75).astype(int)
        M[:, 0] = 1
        errs["contrastive"] = abs(heads.token_contrastive_loss(Tensor(E), M).item()
                                  - oracle.contrastive(E, M))
        old, new = rng.uniform(0.05, 0.95, (n, c)), rng.uniform(0.05, 0.95, (n, c))
        act = (rng.random((n, c)) < 0.5).astype(float)
        adv = rng.normal(size=(n, c))
        got = ppo_loss(Tensor(new), _rollout(act, old, adv, mask), PPOConfig(clip=0.2)).item()
        errs["ppo"] = abs(got - oracle.ppo(new.tolist(), old.tolist(), act.tolist(),
                                           (adv * mask).tolist(), mask.tolist(), 0.2))
        v, r = rng.normal(size=n), rng.normal(size=n)
        errs["value"] = abs(value_loss(Tensor(v), r).item() - oracle.mse(v.tolist(), r.tolist()))
        errs["kl"] = abs(kl_penalty(old, Tensor(new), 1.0, mask).item()
                         - oracle.kl(old.tolist(), new.tolist(), mask.tolist(), 1.0))
        errs["entropy"] = abs(entropy_bonus(Tensor(new), 1.0, mask).item()
                              - oracle.entropy(new.tolist(), mask.tolist(), 1.0))
        for k, e in errs.items():
            worst[k] = max(worst.get(k, 0.0), e)
    ok = max(worst.values()) <= 1e-10
    verdict(2, ok, "max |impl - oracle| " +
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (limit 1e-10)")
    assert ok


# -- 3 --------------------------------------------------------------------------------------
def _ppo_grad(new, old, action, adv, cfg=PPOConfig()):
    x = Tensor(np.array([[new]]), requires_grad=True)
    ppo_loss(x, _rollout(np.array([[action]]), np.array([[old]]), np.array([[adv]]),
                         np.ones((1, 1))), cfg).backward()
    return x.grad[0, 0]


def test_ppo_clipping_invariants(verdict):
    rng = np.random.default_rng(0)
    flat = []
    for _ in range(200):
        old = rng.uniform(0.1, 0.7)
        action = float(rng.integers(0, 2))
        pi_old = old if action else 1 - old
        # choose the new action-probability so the ratio lands beyond the clip edge
        hi = pi_old * rng.uniform(1.21, min(1.9, 0.99 / pi_old)) if pi_old < 0.8 else None
        lo = pi_old * rng.uniform(0.1, 0.79)
        for pi_new, adv in ((hi, rng.uniform(0.1, 3)), (lo, -rng.uniform(0.1, 3))):
            if pi_new is None:
                continue
            new = pi_new if action else 1 - pi_new
            flat.append(_ppo_grad(new, old, action, adv))
    flat_ok = all(g == 0.0 for g in flat)

    ratio_devs = []
    model = make_model(seed=3)
    trainer = PPOTrainer(model, PPOConfig(rl_iters=3, optimizer=TOY_OPT), seed=0)
    data = generate_single_label(("sports", "finance", "cooking"), 4, seed=0)
    for _ in range(5):
        ratio_devs.append(trainer.step(data)["first_iter_ratio_dev"])
    ratio_ok = all(d == 0.0 for d in ratio_devs)

    zero_ok = True
    for seed in range(10):
        r2 = np.random.default_rng(seed)
        mask = np.ones((3, 4))
        old, new = r2.uniform(0.1, 0.9, (3, 4)), r2.uniform(0.1, 0.9, (3, 4))
        act = (r2.random((3, 4)) < 0.5).astype(float)
        rb = _rollout(act, old, r2.normal(size=(3, 4)), mask)
        plain = ppo_loss(Tensor(new), rb, PPOConfig()).item()
        neg = PPOConfig(focal_alpha=-0.5, focal_gamma=-2, label_smoothing=-0.1,
                        kl_coef=-1, entropy_coef=-3)
        zero_ok &= ppo_loss(Tensor(new), rb, neg).item() == plain
        zero_ok &= kl_penalty(old, Tensor(new), neg.kl_coef, mask).item() == 0.0
        zero_ok &= entropy_bonus(Tensor(new), neg.entropy_coef, mask).item() == 0.0
        z = r2.normal(size=(3, 4))
        p = 1 / (1 + np.exp(-z))
        bce = -np.mean(act * np.log(p) + (1 - act) * np.log(1 - p))
        zero_ok &= abs(focal_bce_loss(Tensor(z), act, mask, alpha=-0.3, gamma=-2,
                                      label_smoothing=-0.1).item() - bce) <= 1e-12
    for it in trainer.step(data)["iterations"]:
        zero_ok &= it["loss_kl"] == 0.0 and it["entropy"] == 0.0
        zero_ok &= it["loss_total"] == it["loss_ppo"] + it["loss_value"]
    ok = flat_ok and ratio_ok and zero_ok
    verdict(3, ok, f"clip-bound gradients all zero ({len(flat)} cases): {flat_ok}; "
                   f"first-iteration ratio == 1 on every batch: {ratio_ok}; "
                   f"negative coefficients contribute exactly 0: {zero_ok}")
    assert ok


# -- 4 --------------------------------------------------------------------------------------
def test_throughput_scaling(verdict):
    vocab = Vocab.build(theme_vocab_texts())
    model = Classifier(ModelConfig(d_model=128, n_heads=4, n_layers=4, d_ff=512, max_len=1024),
                       vocab, seed=0)
    start = time.perf_counter()
    rows = run_benchmark({"joint": model},
                         BenchConfig(labels=(1, 128), tokens=(256,), repeats=3))
    elapsed = time.perf_counter() - start
    joint = scaling_ratio(rows, "joint", 256)
    pair = scaling_ratio(rows, "joint-pairwise", 256)
    rate = {(r.model, r.labels): r.examples_per_second for r in rows}
    speedup = rate[("joint", 128)] / rate[("joint-pairwise", 128)]
    ok = joint <= 6 and pair >= 64 and speedup >= 10 and elapsed < 600
    verdict(4, ok, f"T(128)/T(1): joint {joint:.2f} (<= 6), pairwise {pair:.1f} (>= 64); "
                   f"joint/pairwise at L=128 {speedup:.1f}x (>= 10); {elapsed:.0f}s")
    assert ok


# -- 5 --------------------------------------------------------------------------------------
def test_end_to_end_learnability(learned, verdict):
    model, res, elapsed = learned
    report = evaluate(model, res.test)
    ok = report.macro_f1 >= 0.95 and len(res.losses) <= 2000 and elapsed < 900
    verdict(5, ok, f"held-out macro-F1 {report.macro_f1:.3f} (>= 0.95) on {len(res.test)} "
                   f"examples after {len(res.losses)} steps, {elapsed:.0f}s")
    assert ok


# -- 6 --------------------------------------------------------------------------------------
def test_ppo_improves(learned, corpus, verdict):
    base, res, _ = learned
    model = base.clone()
    train, test = res.train, res.test
    noisy = TrainConfig(steps=400, batch_size=8, label_noise=0.45, seed=5, optimizer=TOY_OPT)
    train_loop(model, train, noisy, split=False)
    degraded_f1 = evaluate(model, test).macro_f1
    before = expected_reward(model, test)
    trainer = PPOTrainer(model, PPOConfig(optimizer=OptimizerConfig(encoder_lr=1e-3,
                                                                    head_lr=1e-3)), seed=0)
    history = [h for h in trainer.train(train, 300) if h]
    after = expected_reward(model, test)
    adv = np.array([h["mean_advantage"] for h in history])
    sampled = np.array([h["mean_reward"] for h in history])
    window = 30
    first, last = abs(adv[:window].mean()), abs(adv[-window:].mean())
    gain = after / before - 1
    ok = len(history) == 300 and gain >= 0.10 and last < first
    verdict(6, ok, f"mean reward {before:.3f} -> {after:.3f} (+{gain:.0%}, >= +10%) "
                   f"after 300 PPO steps from a noise-degraded checkpoint "
                   f"(macro-F1 {degraded_f1:.3f} -> {evaluate(model, test).macro_f1:.3f}); "
                   f"|E[A]| {first:.3f} -> {last:.3f}; sampled rollout reward "
                   f"{sampled[:window].mean():.3f} -> {sampled[-window:].mean():.3f}")
    assert ok


# -- 7 --------------------------------------------------------------------------------------
def test_few_shot_protocol(learned, verdict):
    model, _, _ = learned
    task = generate_single_label(HELDOUT_THEMES, 40, seed=1)
    support, query = few_shot_split(task, k=8, seed=0)
    assert len(support) == 8 * len(HELDOUT_THEMES)
    zero = evaluate(model, query, mode="argmax").macro_f1
    tuned = adapt(model, support, TrainConfig(steps=50, batch_size=8, optimizer=TOY_OPT))
    few = evaluate(tuned, query, mode="argmax").macro_f1
    ok = few - zero >= 0.05
    verdict(7, ok, f"query macro-F1 zero-shot {zero:.3f} -> 8-shot {few:.3f} "
                   f"(+{few - zero:.3f}, >= +0.05) on {len(HELDOUT_THEMES)} held-out themes")
    assert ok


# -- 8 --------------------------------------------------------------------------------------
def test_variant_equivalences(verdict):
    fused_err = 0.0
    bi_ok = True
    lora_err = 0.0
    for seed in range(5):
        fused = make_model("fused_bi", seed=seed, scramble=seed)
        uni = make_model("uni")
        uni.params = fused.params
        marker = fused.params["enc.tok_emb.weight"][VOCAB.label_id]
        pinned = {lab: marker for labs in LABELS for lab in labs}
        a = fused.forward(fused.prepare(TEXTS, LABELS), class_vectors=pinned).logits.data
        b = uni.logits(TEXTS, LABELS).data
        valid = np.isfinite(b)
        fused_err = max(fused_err, float(np.abs(a[valid] - b[valid]).max()))

        bi = make_model("bi", seed=seed, scramble=seed + 10)
        for text in TEXTS:
            alone = bi.logits([text], [["finance"]]).data[0, 0]
            for others in (["sports"], ["cooking", "music", "soup"], ["music", "goal"]):
                bi_ok &= bi.logits([text], [["finance"] + others]).data[0, 0] == alone
                bi_ok &= bi.logits([text], [others + ["finance"]]).data[0, -1] == alone

        m = make_model(seed=seed)
        m.params = apply_lora(m.params, LoraConfig(rank=2, alpha=4), seed=seed)
        data = generate_single_label(("sports", "finance", "cooking"), 4, seed=seed)
        train_loop(m, data, TrainConfig(steps=5, batch_size=4, optimizer=TOY_OPT), split=False)
        adapted = m.logits(TEXTS, LABELS).data
        m.params = merge_lora(m.params)
        merged = m.logits(TEXTS, LABELS).data
        lora_err = max(lora_err, float(np.abs(adapted[valid] - merged[valid]).max()))
    ok = fused_err <= 1e-9 and bi_ok and lora_err <= 1e-9
    verdict(8, ok, f"pinned fused vs uni {fused_err:.1e} (<= 1e-9); bi logits exactly "
                   f"independent of co-candidates: {bi_ok}; LoRA merge {lora_err:.1e} (<= 1e-9)")
    assert ok


# -- 9 --------------------------------------------------------------------------------------
def test_persistence(learned, corpus, tmp_path, verdict):
    model, res, _ = learned
    path = save_checkpoint(tmp_path / "m.npz", model)
    back = load_checkpoint(path)
    ckpt_ok = params_digest(back.params) == params_digest(model.params) and \
        back.config == model.config and back.vocab.itos == model.vocab.itos
    sample = [e.text for e in res.test[:8]], [e.all_labels for e in res.test[:8]]
    ckpt_ok &= np.array_equal(back.logits(*sample).data, model.logits(*sample).data)

    save_dataset(tmp_path / "d.jsonl", corpus)
    first = (tmp_path / "d.jsonl").read_bytes()
    again = load_dataset(tmp_path / "d.jsonl")
    save_dataset(tmp_path / "e.jsonl", again)
    data_ok = again == corpus and (tmp_path / "e.jsonl").read_bytes() == first

    train, test = train_test_split(corpus, 0.9, seed=0)
    split_ok = (len(train), len(test)) == (1800, 200) and (len(res.train), len(res.test)) == \
        (1800, 200)

    small = make_model()
    for step in range(1, 11):
        save_rotating(tmp_path / "ckpts", step, small, keep=3)
    kept = [s for s, _ in list_checkpoints(tmp_path / "ckpts")]
    keep_ok = kept == [8, 9, 10]
    ok = ckpt_ok and data_ok and split_ok and keep_ok
    verdict(9, ok, f"checkpoint bit-exact: {ckpt_ok}; dataset bit-exact: {data_ok}; "
                   f"split {len(train)}/{len(test)}: {split_ok}; retained steps {kept}")
    assert ok
