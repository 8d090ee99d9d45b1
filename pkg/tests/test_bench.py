import math

import pytest

from jointcls.bench import (
    BenchConfig,
    BenchRow,
    bench_labels,
    bench_text,
    read_csv,
    run_benchmark,
    scaling_ratio,
    write_csv,
)
from jointcls.errors import ConfigError

from toy import make_model


def test_config_validation():
    for kw in ({"labels": ()}, {"tokens": (0,)}, {"repeats": 0}, {"batch_size": 4}):
        with pytest.raises(ConfigError):
            BenchConfig(**kw)


def test_bench_text_has_exact_token_count():
    import numpy as np
    m = make_model()
    text = bench_text(m.vocab, 17, np.random.default_rng(0))
    assert len(m.vocab.tokenize(text)) == 17
    assert bench_labels(3) == ["label0", "label1", "label2"]


def test_grid_rows_and_overflow():
    m = make_model(max_len=64)
    rows = run_benchmark({"toy": m}, BenchConfig(labels=(1, 4), tokens=(8, 60), repeats=1))
    assert len(rows) == 2 * 2 * 2
    assert {r.model for r in rows} == {"toy", "toy-pairwise"}
    by = {(r.model, r.labels, r.tokens): r for r in rows}
    assert by[("toy", 1, 8)].ok and by[("toy-pairwise", 4, 8)].ok
    # 4 labels + 60 tokens do not fit in 64 positions for the joint model
    assert not by[("toy", 4, 60)].ok and "max_len" in by[("toy", 4, 60)].error


def test_csv_round_trip(tmp_path):
    rows = [BenchRow("a", 1, 64, 12.5), BenchRow("a", 128, 64, math.nan)]
    write_csv(tmp_path / "b.csv", rows)
    back = read_csv(tmp_path / "b.csv")
    assert back[0] == rows[0] and math.isnan(back[1].examples_per_second)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == \
        "model,labels,tokens,examples_per_second"


def test_scaling_ratio():
    rows = [BenchRow("m", 1, 64, 100.0), BenchRow("m", 128, 64, 25.0)]
    assert scaling_ratio(rows, "m", 64) == 4.0


def test_one_timed_pass_per_repeat_and_l_invocations(monkeypatch):
    m = make_model()
    calls = []
    orig = m.logits

    def counting(texts, labels):
        calls.append(len(labels[0]))
        return orig(texts, labels)
    monkeypatch.setattr(m, "logits", counting)
    run_benchmark({"toy": m}, BenchConfig(labels=(5,), tokens=(8,), repeats=1))
    # joint: warmup + 1 timed call with 5 labels; pairwise: (warmup + 1) x 5 single-label calls
    assert calls == [5, 5] + [1] * 10


@pytest.mark.slow
def test_timing_shape():
    from jointcls import Classifier, ModelConfig
    from jointcls.data import theme_vocab_texts
    from jointcls.assembly import Vocab
    model = Classifier(ModelConfig(d_model=64, n_heads=4, n_layers=2, d_ff=256, max_len=512),
                       Vocab.build(theme_vocab_texts()), seed=0)
    rows = run_benchmark({"m": model}, BenchConfig(labels=(1, 4, 16), tokens=(64, 256),
                                                   repeats=3))
    rate = {(r.model, r.labels, r.tokens): r.examples_per_second for r in rows}
    for name in ("m", "m-pairwise"):
        for n in (1, 4, 16):
            # larger T never faster, allowing 10% timing noise
            assert rate[(name, n, 256)] <= 1.1 * rate[(name, n, 64)]
    for t in (64, 256):
        for n in (4, 16):
            ratio = rate[("m-pairwise", 1, t)] / rate[("m-pairwise", n, t)]
            assert 0.8 * n <= ratio <= 1.3 * n, (t, n, ratio)
