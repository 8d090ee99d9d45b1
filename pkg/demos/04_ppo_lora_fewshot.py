# Reinforcement fine-tuning, LoRA adapters and few-shot adaptation
#
# Starting from a briefly trained model we (1) damage it with noisy labels and
# let PPO recover it, (2) train a LoRA adapter and merge it back, and (3)
# adapt to three themes the model never saw during training.

import itertools

import numpy as np

from jointcls import Classifier, ModelConfig, Vocab, evaluate
from jointcls.data import (
    HELDOUT_THEMES,
    BucketSpec,
    corpus_vocab_texts,
    few_shot_split,
    generate_single_label,
    generate_synthetic,
    theme_vocab_texts,
    train_test_split,
)
from jointcls.training.lora import LoraConfig, apply_lora, merge_lora
from jointcls.training.optim import OptimizerConfig
from jointcls.training.ppo import PPOConfig, PPOTrainer, expected_reward
from jointcls.training.supervised import TrainConfig, adapt, train_loop

fast = OptimizerConfig(encoder_lr=3e-3, head_lr=3e-3)
data = generate_synthetic(BucketSpec(n_texts=400, boundaries=(0, 8, 16, 32)), seed=0)
train, test = train_test_split(data, 0.9, seed=0)
vocab = Vocab.build(itertools.chain(corpus_vocab_texts(data), theme_vocab_texts()))
model = Classifier(ModelConfig(d_model=32, n_layers=2, d_ff=64, max_len=128), vocab, seed=0)
train_loop(model, train, TrainConfig(steps=900, batch_size=8, optimizer=fast), split=False)
print("supervised macro-F1", round(evaluate(model, test).macro_f1, 3))

# (1) PPO. Every candidate label is a Bernoulli action; the reward is 1 when
# the sampled decision matches the target.
train_loop(model, train, TrainConfig(steps=200, batch_size=8, label_noise=0.45, seed=5,
                                     optimizer=fast), split=False)
print("after noisy fine-tuning: macro-F1", round(evaluate(model, test).macro_f1, 3),
      "expected reward", round(expected_reward(model, test), 3))
trainer = PPOTrainer(model, PPOConfig(optimizer=OptimizerConfig(encoder_lr=1e-3, head_lr=1e-3)))
history = [h for h in trainer.train(train, 200) if h]
adv = [h["mean_advantage"] for h in history]
print("after PPO: macro-F1", round(evaluate(model, test).macro_f1, 3),
      "expected reward", round(expected_reward(model, test), 3))
print("mean advantage, first vs last 20 steps:", round(np.mean(adv[:20]), 3),
      round(np.mean(adv[-20:]), 3))

# (2) LoRA: only the low-rank factors train, and merging folds them into the
# base weights without changing any logit.
lora = model.clone()
lora.params = apply_lora(lora.params, LoraConfig(rank=4, alpha=8))
print("trainable tensors with LoRA:", sum(p.requires_grad for p in lora.params.values()),
      "of", len(lora.params))
train_loop(lora, train, TrainConfig(steps=50, batch_size=8, focal_alpha=0.7, optimizer=fast),
           split=False)
texts, labs = [e.text for e in test[:16]], [e.all_labels for e in test[:16]]
before = lora.logits(texts, labs).data
lora.params = merge_lora(lora.params)
after = lora.logits(texts, labs).data
ok = np.isfinite(before)
print("max logit change from merging:", np.abs(before[ok] - after[ok]).max())

# (3) Few-shot: 8 examples per held-out label, 50 adaptation steps.
task = generate_single_label(HELDOUT_THEMES, 40, seed=1)
support, query = few_shot_split(task, k=8, seed=0)
zero = evaluate(model, query, mode="argmax").macro_f1
tuned = adapt(model, support, TrainConfig(steps=50, batch_size=8, optimizer=fast))
print(f"held-out themes {HELDOUT_THEMES}: zero-shot {zero:.3f}, "
      f"8-shot {evaluate(tuned, query, mode='argmax').macro_f1:.3f}")
