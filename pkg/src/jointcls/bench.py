"""Throughput benchmark: examples per second over a (labels x tokens) grid.

Every cell is timed single-threaded at batch size 1, after one untimed
warmup pass. Alongside each joint model we time a pairwise baseline that runs
the same encoder once per (text, label) pair, which is what makes the cost of
a cross-encoder grow linearly with the number of labels.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .assembly import RESERVED
from .errors import ConfigError, JointClsError

DEFAULT_LABELS = (1, 2, 4, 8, 16, 32, 64, 128)
DEFAULT_TOKENS = (64, 256, 512)
CSV_HEADER = ("model", "labels", "tokens", "examples_per_second")


@dataclass
class BenchConfig:
    labels: tuple = DEFAULT_LABELS
    tokens: tuple = DEFAULT_TOKENS
    repeats: int = 10
    batch_size: int = 1
    pairwise: bool = True
    seed: int = 0

    def __post_init__(self):
        self.labels = tuple(int(x) for x in self.labels)
        self.tokens = tuple(int(x) for x in self.tokens)
        if not self.labels or not self.tokens:
            raise ConfigError("benchmark grid must be non-empty")
        if min(self.labels + self.tokens) < 1 or self.repeats < 1:
            raise ConfigError("label counts, token counts and repeats must be positive")
        if self.batch_size != 1:
            raise ConfigError("the benchmark times batch size 1 only")

    def to_dict(self):
        return asdict(self)


@dataclass
class BenchRow:
    model: str
    labels: int
    tokens: int
    examples_per_second: float
    error: str = field(default="", compare=False)

    @property
    def ok(self):
        return math.isfinite(self.examples_per_second)


def bench_text(vocab, n_tokens, rng):
    """A text that tokenizes to exactly ``n_tokens`` in-vocabulary words."""
    words = [w for w in vocab.itos if w not in RESERVED and w.isalnum()] or ["x"]
    return " ".join(rng.choice(words, size=n_tokens).tolist())


def bench_labels(n):
    return [f"label{i}" for i in range(n)]


def _joint_length(model, labels, n_tokens):
    block = sum(1 + len(model.vocab.tokenize(lab)) for lab in labels)
    return block + 1 + n_tokens


def time_calls(fn, repeats):
    """Examples per second of ``fn`` (one example per call), warmup excluded."""
    fn()
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    elapsed = time.perf_counter() - start
    return repeats / elapsed if elapsed > 0 else math.inf


def joint_call(model, text, labels):
    def run():
        with T.no_grad():
            model.logits([text], [labels])
    return run


def pairwise_call(model, text, labels):
    """The same encoder invoked once per label on a (text, single label) input."""
    def run():
        with T.no_grad():
            for lab in labels:
                model.logits([text], [[lab]])
    return run


def _cell(name, model, text, labels, n_tokens, pairwise, repeats):
    n = len(labels)
    need = _joint_length(model, labels[:1] if pairwise else labels, n_tokens)
    if need > model.config.max_len:
        return BenchRow(name, n, n_tokens, math.nan,
                        f"assembled length {need} exceeds max_len {model.config.max_len}")
    fn = (pairwise_call if pairwise else joint_call)(model, text, labels)
    try:
        return BenchRow(name, n, n_tokens, time_calls(fn, repeats))
    except JointClsError as e:
        return BenchRow(name, n, n_tokens, math.nan, str(e))


def run_benchmark(models, cfg=None):
    """Time every (model, L, T) cell; ``models`` maps display names to classifiers.

    A failing cell becomes a row with a NaN rate and the run continues.
    """
    cfg = cfg or BenchConfig()
    rows = []
    with threadpool_limits(limits=1):
        for name, model in dict(models).items():
            variants = [(name, False)]
            if cfg.pairwise:
                variants.append((f"{name}-pairwise", True))
            for n_tokens in cfg.tokens:
                text = bench_text(model.vocab, n_tokens, np.random.default_rng(cfg.seed))
                for n_labels in cfg.labels:
                    labels = bench_labels(n_labels)
                    for display, pairwise in variants:
                        rows.append(_cell(display, model, text, labels, n_tokens, pairwise,
                                          cfg.repeats))
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.model, r.labels, r.tokens, repr(float(r.examples_per_second))])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise ValueError(f"unexpected benchmark header {header!r}")
        return [BenchRow(m, int(l), int(t), float(x)) for m, l, t, x in reader]


def format_table(rows):
    lines = [f"{'model':<24} {'labels':>6} {'tokens':>6} {'ex/s':>10}"]
    for r in rows:
        rate = f"{r.examples_per_second:10.2f}" if r.ok else f"{'failed':>10}"
        lines.append(f"{r.model:<24} {r.labels:>6} {r.tokens:>6} {rate}")
    return "\n".join(lines)


def scaling_ratio(rows, model, tokens, lo=1, hi=128):
    """Slowdown factor time(L=hi) / time(L=lo) for one model at fixed T."""
    rate = {r.labels: r.examples_per_second for r in rows
            if r.model == model and r.tokens == tokens}
    return rate[lo] / rate[hi]
