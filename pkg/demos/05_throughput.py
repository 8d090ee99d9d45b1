# Throughput: one joint pass vs one pass per label
#
# A pairwise (cross-encoder style) classifier pays a full encoder pass for
# every candidate label. The joint model pays once, plus the extra attention
# over the label block. Timing is single-threaded at batch size 1.

import tempfile
from pathlib import Path

from jointcls import Classifier, ModelConfig, Vocab
from jointcls.bench import BenchConfig, format_table, run_benchmark, scaling_ratio, write_csv
from jointcls.data import theme_vocab_texts

vocab = Vocab.build(theme_vocab_texts())
model = Classifier(ModelConfig(d_model=64, n_heads=4, n_layers=2, d_ff=256, max_len=512),
                   vocab, seed=0)
rows = run_benchmark({"joint": model}, BenchConfig(labels=(1, 4, 16, 64), tokens=(128,),
                                                    repeats=3))
print(format_table(rows))
print("slowdown from 1 to 64 labels: joint "
      f"{scaling_ratio(rows, 'joint', 128, hi=64):.1f}x, pairwise "
      f"{scaling_ratio(rows, 'joint-pairwise', 128, hi=64):.1f}x")

path = Path(tempfile.mkdtemp()) / "bench.csv"
write_csv(path, rows)
print("wrote", path)
