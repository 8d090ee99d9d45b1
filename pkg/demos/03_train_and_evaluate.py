# Supervised training on the synthetic corpus
#
# The generator writes texts out of theme keywords and filler words; a theme
# is a true label exactly when one of its keywords is present. A small
# uni-encoder learns this in a few hundred steps.

import itertools
import tempfile
import time
from pathlib import Path

from jointcls import Classifier, ModelConfig, Vocab, evaluate, load_checkpoint, save_checkpoint
from jointcls.data import BucketSpec, corpus_vocab_texts, generate_synthetic, theme_vocab_texts
from jointcls.training.optim import OptimizerConfig
from jointcls.training.supervised import TrainConfig, train_loop

spec = BucketSpec(n_texts=400, boundaries=(0, 8, 16, 32, 64))
data = generate_synthetic(spec, seed=0)
print(len(data), "examples; first:", data[0])

vocab = Vocab.build(itertools.chain(corpus_vocab_texts(data), theme_vocab_texts()))
model = Classifier(ModelConfig(d_model=32, n_layers=2, d_ff=64, max_len=128), vocab, seed=0)

cfg = TrainConfig(steps=600, batch_size=8,
                  optimizer=OptimizerConfig(encoder_lr=3e-3, head_lr=3e-3))
out = Path(tempfile.mkdtemp())
start = time.time()
res = train_loop(model, data, cfg, out_dir=out)     # holds out 10% for testing
print(f"trained {len(res.losses)} steps in {time.time() - start:.0f}s")
for i in range(0, len(res.losses), 100):
    chunk = res.losses[i:i + 100]
    print(f"  steps {i + 1:4d}-{i + len(chunk):4d}  mean loss {sum(chunk) / len(chunk):.4f}")

report = evaluate(model, res.test)
print(report.format())

path = save_checkpoint(out / "final.npz", model)
again = load_checkpoint(path)
print("reloaded predictions:",
      again.predict_proba("the coach praised the team after the storm",
                          ["sports", "weather", "finance"]))
