"""Command-line interface: ``jointcls {train,predict,eval,bench,gen-data}``.

Configuration is a JSON file (``--config``, or the path in ``$JOINTCLS_CONFIG``)
with sections ``model``, ``train``, ``ppo``, ``reward``, ``lora`` and the
top-level keys ``data``, ``out_dir``, ``init_checkpoint`` and ``seed``.
Flags win over the file, the file wins over built-in defaults.

Exit codes: 0 ok, 2 config or validation error, 3 numeric failure,
4 data-contract failure.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import bench as bench_mod
from .assembly import Vocab
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    BucketSpec,
    corpus_vocab_texts,
    few_shot_split,
    generate_synthetic,
    load_dataset,
    save_dataset,
    theme_vocab_texts,
    train_test_split,
)
from .errors import ConfigError, JointClsError, NonFiniteError, NumericDomainError
from .metrics import evaluate
from .model import Classifier, ModelConfig
from .training.lora import LoraConfig, apply_lora, merge_lora
from .training.ppo import PPOConfig, PPOTrainer, RewardConfig
from .training.supervised import TrainConfig, adapt, train_loop

CONFIG_ENV = "JOINTCLS_CONFIG"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4
STAGES = ("supervised", "ppo", "lora")

log = logging.getLogger("jointcls")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    data: str = None
    out_dir: str = "runs/default"
    init_checkpoint: str = None
    seed: int = 0

    SECTIONS = {"model": ModelConfig, "train": TrainConfig, "ppo": PPOConfig,
                "reward": RewardConfig, "lora": LoraConfig}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in d.items():
            section = cls.SECTIONS.get(key)
            if section is None:
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            try:
                kwargs[key] = section(**value)
            except TypeError as e:
                raise ConfigError(f"bad {key!r} section: {e}") from e
        return cls(**kwargs)

    def to_dict(self):
        out = {k: getattr(self, k).to_dict() for k in self.SECTIONS}
        out.update(data=self.data, out_dir=self.out_dir, init_checkpoint=self.init_checkpoint,
                   seed=self.seed)
        return out


def _set_path(d, dotted, value):
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_run_config(args):
    """Defaults <- JSON file <- flags."""
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    raw = copy.deepcopy(raw)
    for text in getattr(args, "set", None) or []:
        _set_path(raw, *_parse_override(text))
    flags = {"data": "data", "out": "out_dir", "init": "init_checkpoint", "seed": "seed",
             "steps": "train.steps"}
    for attr, dotted in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            _set_path(raw, dotted, value)
    if getattr(args, "seed", None) is not None:
        _set_path(raw, "train.seed", args.seed)
    return RunConfig.from_dict(raw)


# -- commands ---------------------------------------------------------------------
def _load_data(path):
    if not path:
        raise ConfigError("no dataset given (config key 'data' or --data)")
    if not Path(path).is_file():
        raise ConfigError(f"dataset not found: {path}")
    return load_dataset(path)


def _load_model(path):
    if not path or not Path(path).is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_train(args):
    cfg = load_run_config(args)
    dataset = _load_data(cfg.data)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = args.stage
    if stage == "supervised" and not cfg.init_checkpoint:
        vocab = Vocab.build(itertools.chain(corpus_vocab_texts(dataset), theme_vocab_texts()))
        model = Classifier(cfg.model, vocab, seed=cfg.seed)
    else:
        if not cfg.init_checkpoint:
            raise ConfigError(f"the {stage} stage needs an initial checkpoint (--init)")
        model = _load_model(cfg.init_checkpoint)
    train, test = train_test_split(dataset, cfg.train.train_fraction, cfg.train.seed)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as log_file:
        if stage == "ppo":
            trainer = PPOTrainer(model, cfg.ppo, cfg.reward, seed=cfg.seed)
            trainer.train(train, cfg.train.steps, cfg.train.batch_size, out_dir, log_file,
                          cfg.train.checkpoint_every, cfg.train.keep_checkpoints,
                          cfg.train.max_consecutive_skips)
        elif stage == "lora":
            tcfg = copy.deepcopy(cfg.train)
            if tcfg.focal_alpha < 0:
                tcfg.focal_alpha = cfg.lora.focal_alpha
            model.params = apply_lora(model.params, cfg.lora, seed=cfg.seed)
            train_loop(model, train, tcfg, out_dir, log_file, split=False)
            model.params = merge_lora(model.params)
        else:
            train_loop(model, train, cfg.train, out_dir, log_file, split=False)
    final = save_checkpoint(out_dir / "final.npz", model, {"stage": stage})
    report = evaluate(model, test)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2), encoding="utf-8")
    print(json.dumps({"stage": stage, "checkpoint": str(final), "test": report.to_dict()},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _split_labels(text):
    labels = [s.strip() for s in text.split(",") if s.strip()]
    if not labels:
        raise ConfigError("at least one label is required")
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate labels")
    return labels


def cmd_predict(args):
    model = _load_model(args.checkpoint)
    labels = _split_labels(args.labels)
    probs = model.predict_proba(args.text, labels)
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], labels.index(kv[0])))
    if args.top_k is not None:
        if args.top_k < 1:
            raise ConfigError("--top-k must be >= 1")
        predicted = [k for k, _ in ranked[: args.top_k]]
    else:
        predicted = [k for k, p in ranked if p > args.threshold]
    print(json.dumps({"probabilities": dict(ranked), "predicted": predicted}, indent=2))
    return EXIT_OK


def cmd_eval(args):
    model = _load_model(args.checkpoint)
    dataset = _load_data(args.dataset)
    k = args.few_shot_k
    if k < 0:
        raise ConfigError("--few-shot-k must be >= 0")
    if k == 0:
        report = evaluate(model, dataset, args.threshold, args.mode)
    else:
        support, query = few_shot_split(dataset, k, args.seed)
        tcfg = load_run_config(args).train
        tcfg.steps = args.adapt_steps
        tuned = adapt(model, support, tcfg)
        report = evaluate(tuned, query, args.threshold, args.mode)
    print(report.format())
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from e


def cmd_bench(args):
    cfg = bench_mod.BenchConfig(labels=_int_list(args.labels), tokens=_int_list(args.tokens),
                                repeats=args.repeats, pairwise=not args.no_pairwise,
                                seed=args.seed or 0)
    models, rows = {}, []
    for path in args.checkpoints:
        name = Path(path).stem
        try:
            models[name] = load_checkpoint(path)
        except (JointClsError, OSError) as e:
            log.error("cannot load %s: %s", path, e)
            rows += [bench_mod.BenchRow(name, n_l, n_t, math.nan, str(e))
                     for n_t in cfg.tokens for n_l in cfg.labels]
    if models:
        rows += bench_mod.run_benchmark(models, cfg)
    print(bench_mod.format_table(rows))
    if args.out:
        bench_mod.write_csv(args.out, rows)
    return EXIT_OK if models else EXIT_DATA


def cmd_gen_data(args):
    spec = BucketSpec()
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read bucket spec {args.spec}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("bucket spec must be a JSON object")
        spec = BucketSpec.from_dict(raw)
    examples = generate_synthetic(spec, seed=args.seed or 0)
    save_dataset(args.out, examples)
    print(f"wrote {len(examples)} examples to {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="jointcls", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.batch_size=16")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="run one training stage")
    with_config(t)
    t.add_argument("--stage", choices=STAGES, default="supervised")
    t.add_argument("--data")
    t.add_argument("--out", help="output directory for checkpoints and metrics")
    t.add_argument("--init", help="checkpoint to start from (required for ppo and lora)")
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="label probabilities for one text")
    pr.add_argument("checkpoint")
    pr.add_argument("--text", required=True)
    pr.add_argument("--labels", required=True, help="comma-separated candidate labels")
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--top-k", type=int)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="zero-shot or k-shot evaluation")
    with_config(e)
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--few-shot-k", type=int, default=0)
    e.add_argument("--adapt-steps", type=int, default=50)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--mode", choices=("multi", "argmax"), default="multi")
    e.add_argument("--out", help="also write the report as JSON")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="throughput over a labels x tokens grid")
    b.add_argument("checkpoints", nargs="+")
    b.add_argument("--labels", default=",".join(map(str, bench_mod.DEFAULT_LABELS)))
    b.add_argument("--tokens", default=",".join(map(str, bench_mod.DEFAULT_TOKENS)))
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--no-pairwise", action="store_true")
    b.add_argument("--seed", type=int)
    b.add_argument("--out", help="CSV output path")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-data", help="write a synthetic bucket corpus")
    g.add_argument("spec", nargs="?", help="JSON bucket spec (defaults if omitted)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def exit_code_for(exc):
    if isinstance(exc, (NonFiniteError, NumericDomainError)):
        return EXIT_NUMERIC
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (JointClsError, OSError)):
        return EXIT_DATA
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # coded exits for every library failure
        code = exit_code_for(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
