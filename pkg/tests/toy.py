"""Tiny vocabulary, batches and models shared across tests."""

import numpy as np

from jointcls.assembly import Vocab
from jointcls.model import Classifier, ModelConfig

WORDS = "hello world sports finance cooking the a goal match bank recipe soup market stock"
VOCAB = Vocab.build([WORDS, "music science"])
TEXTS = ["hello goal match", "bank the stock market", "recipe soup"]
LABELS = [["sports", "finance"], ["finance", "cooking", "music"], ["cooking"]]
TARGETS = np.array([[1, 0, 0], [1, 0, 0], [1, 0, 0]], dtype=float)


def make_model(variant="uni", seed=0, scramble=None, **kw):
    cfg = dict(variant=variant, d_model=8, n_heads=2, n_layers=2, d_ff=16, max_len=64)
    cfg.update(kw)
    model = Classifier(ModelConfig(**cfg), VOCAB, seed=seed)
    if scramble is not None:
        rng = np.random.default_rng(scramble)
        for p in model.params.values():
            p.data = rng.normal(0, 0.5, p.shape)
    return model
