# Joint text + label encoding
#
# Candidate labels are packed in front of the text:
#   [<<LABEL>> label tokens]* [SEP] text tokens
# and a single encoder pass scores every label at once. This script shows the
# token layout and compares the four model variants on one input.

import numpy as np

from jointcls import Classifier, ModelConfig, Vocab, assemble, batch

texts = ["the striker scored a late goal in the match",
         "the bank raised its loan rates"]
labels = [["sports", "finance", "cooking"], ["finance", "weather"]]

vocab = Vocab.build(texts + [" ".join(l) for l in labels])
print("vocab size", len(vocab))

inp = assemble(texts[0], labels[0], vocab, max_len=64)
print("tokens   ", vocab.detokenize(inp.token_ids[0]))
print("label at ", inp.class_positions[0], "span ends", inp.class_ends[0])
print("text span", inp.text_span[0])

# Batching pads to the longest sequence and the widest label set.
b = batch([assemble(t, l, vocab, 64) for t, l in zip(texts, labels)])
print("batch ids", b.token_ids.shape, "class mask\n", b.class_mask)

for variant in ("uni", "bi", "fused_bi", "enc_dec"):
    cfg = ModelConfig(variant=variant, d_model=16, n_heads=2, n_layers=1, d_ff=32, max_len=64)
    model = Classifier(cfg, vocab, seed=0)
    logits = model.logits(texts, labels).data
    print(f"{variant:9s}", np.round(logits, 4).tolist())   # -inf marks padding slots

# A bi-encoder embeds each label on its own, so adding co-candidates cannot
# change a label's score. The joint (uni) encoder lets labels attend to each other.
bi = Classifier(ModelConfig(variant="bi", d_model=16, n_layers=1, d_ff=32, max_len=64), vocab)
uni = Classifier(ModelConfig(variant="uni", d_model=16, n_layers=1, d_ff=32, max_len=64), vocab)
for name, m in (("bi", bi), ("uni", uni)):
    alone = m.logits([texts[1]], [["finance"]]).data[0, 0]
    crowded = m.logits([texts[1]], [["finance", "sports", "cooking"]]).data[0, 0]
    print(f"{name}: finance alone {alone:.6f}, with co-candidates {crowded:.6f}")
