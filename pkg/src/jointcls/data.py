"""Dataset records, JSON-lines I/O, the synthetic word-count-bucket corpus and
dataset splits (train/test and few-shot support/query)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, SplitError

DEFAULT_BOUNDARIES = (0, 4, 8, 16, 24, 32, 48, 64, 96, 128, 192, 256, 384, 512, 768, 1024)


@dataclass
class LabeledExample:
    text: str
    all_labels: list
    true_labels: list

    def validate(self):
        if not isinstance(self.text, str):
            raise DatasetError("text must be a string")
        if not self.all_labels:
            raise DatasetError("all_labels must be non-empty")
        if not all(isinstance(x, str) and x for x in self.all_labels):
            raise DatasetError("labels must be non-empty strings")
        if len(set(self.all_labels)) != len(self.all_labels):
            raise DatasetError("all_labels contains duplicates")
        if not set(self.true_labels) <= set(self.all_labels):
            raise DatasetError("true_labels must be a subset of all_labels")
        return self

    def targets(self, labels=None):
        truth = set(self.true_labels)
        return [1.0 if lab in truth else 0.0 for lab in (labels or self.all_labels)]


# -- JSON lines ------------------------------------------------------------------
def example_from_dict(d, line=None):
    try:
        ex = LabeledExample(text=d["text"], all_labels=list(d["all_labels"]),
                            true_labels=list(d["true_labels"]))
    except (KeyError, TypeError) as e:
        raise DatasetError(f"missing or malformed field: {e}", line) from None
    try:
        return ex.validate()
    except DatasetError as e:
        raise DatasetError(str(e), line) from None


def load_dataset(path):
    """Read a JSON-lines file (one example per line; blank lines ignored)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON ({e.msg})", i) from None
            if not isinstance(rec, dict):
                raise DatasetError("record is not an object", i)
            out.append(example_from_dict(rec, i))
    return out


def save_dataset(path, examples):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            ex.validate()
            fh.write(json.dumps(asdict(ex), ensure_ascii=False) + "\n")


# -- synthetic corpus ---------------------------------------------------------------
DEFAULT_THEMES = {
    "sports": ["goal", "match", "team", "coach", "league", "score", "stadium", "sports"],
    "finance": ["bank", "stock", "market", "loan", "profit", "invest", "budget", "finance"],
    "cooking": ["recipe", "oven", "flour", "simmer", "spice", "bake", "kitchen", "cooking"],
    "weather": ["rain", "storm", "cloud", "forecast", "wind", "snow", "sunny", "weather"],
    "music": ["guitar", "melody", "concert", "song", "drum", "album", "chorus", "music"],
    "health": ["doctor", "clinic", "vaccine", "symptom", "nurse", "therapy", "fever", "health"],
    "travel": ["flight", "hotel", "passport", "luggage", "tourist", "airport", "beach", "travel"],
    "science": ["atom", "experiment", "theory", "molecule", "physics", "telescope", "lab", "science"],
    # held out from default training corpora; used for few-shot tasks
    "gardening": ["soil", "seed", "compost", "prune", "tulip", "shovel", "garden", "gardening"],
    "law": ["court", "judge", "verdict", "lawyer", "statute", "appeal", "jury", "law"],
    "fashion": ["dress", "fabric", "runway", "style", "tailor", "jacket", "model", "fashion"],
}
TRAIN_THEMES = tuple(list(DEFAULT_THEMES)[:8])
HELDOUT_THEMES = tuple(list(DEFAULT_THEMES)[8:])

FILLER = ("the", "a", "of", "and", "to", "in", "is", "was", "it", "for", "on", "with", "as",
          "at", "by", "this", "that", "from", "very", "some", "about", "then", "there", "today",
          "people", "said", "time", "day", "new", "good", "first", "last", "long", "great",
          "little", "own", "other", "old", "right", "big")


@dataclass
class BucketSpec:
    """Word-count buckets: consecutive boundaries form half-open [lo, hi) buckets."""

    boundaries: tuple = DEFAULT_BOUNDARIES
    n_texts: int = 1000            # base texts, spread evenly over buckets; duplication doubles
    positives: tuple = (1, 3)      # inclusive range of true labels per example
    negatives: tuple = (1, 5)      # inclusive range of false candidate labels
    keyword_rate: float = 0.4      # chance a non-forced word is a theme keyword
    themes: tuple = TRAIN_THEMES

    def __post_init__(self):
        self.boundaries = tuple(int(b) for b in self.boundaries)
        self.positives = tuple(self.positives)
        self.negatives = tuple(self.negatives)
        self.themes = tuple(self.themes)
        b = self.boundaries
        if len(b) < 2 or any(x >= y for x, y in zip(b, b[1:])) or b[0] < 0:
            raise ConfigError("bucket boundaries must be non-negative and strictly increasing")
        if self.n_texts < 0:
            raise ConfigError("n_texts must be >= 0")
        for lo, hi in (self.positives, self.negatives):
            if lo < 0 or hi < lo:
                raise ConfigError("label-count ranges must satisfy 0 <= lo <= hi")
        if self.positives[0] < 1:
            raise ConfigError("every example needs at least one positive label")
        if not 0.0 <= self.keyword_rate <= 1.0:
            raise ConfigError("keyword_rate must lie in [0, 1]")
        if len(self.themes) < self.positives[1] + self.negatives[1]:
            raise ConfigError("not enough themes for the requested label counts")

    @property
    def buckets(self):
        return list(zip(self.boundaries, self.boundaries[1:]))

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if set(d) - set(known):
            raise ConfigError(f"unknown bucket-spec fields: {sorted(set(d) - set(known))}")
        return cls(**known)


def _draw_labels(rng, generating, pool, positives, negatives):
    n_pos = int(rng.integers(positives[0], positives[1] + 1))
    n_pos = max(1, min(n_pos, len(generating)))
    pos = list(rng.choice(generating, size=n_pos, replace=False))
    others = [t for t in pool if t not in generating]
    n_neg = min(int(rng.integers(negatives[0], negatives[1] + 1)), len(others))
    neg = list(rng.choice(others, size=n_neg, replace=False)) if n_neg else []
    labels = pos + neg
    rng.shuffle(labels)
    return [str(x) for x in labels], sorted(str(x) for x in pos)


def generate_synthetic(spec=None, themes=None, seed=0):
    """Theme-keyword corpus whose true labels are exactly the generating themes.

    For each bucket [lo, hi) the texts have between max(lo, 1) and hi - 1
    words. Each generating theme contributes at least one keyword; remaining
    words are keywords of a generating theme (probability ``keyword_rate``)
    or neutral filler. Every text appears twice: the duplicate re-draws how
    many of its themes are offered as positives and how many negatives are
    added.
    """
    spec = spec or BucketSpec()
    themes = themes or DEFAULT_THEMES
    missing = [t for t in spec.themes if t not in themes]
    if missing:
        raise ConfigError(f"themes without a lexicon: {missing}")
    rng = np.random.default_rng(seed)
    pool = list(spec.themes)
    n_b = len(spec.buckets)
    per_bucket = [spec.n_texts // n_b + (1 if i < spec.n_texts % n_b else 0) for i in range(n_b)]
    out = []
    for (lo, hi), count in zip(spec.buckets, per_bucket):
        for _ in range(count):
            n_words = int(rng.integers(max(lo, 1), hi))
            n_gen = int(rng.integers(spec.positives[0], spec.positives[1] + 1))
            n_gen = max(1, min(n_gen, n_words))
            generating = [str(t) for t in rng.choice(pool, size=n_gen, replace=False)]
            words = [str(rng.choice(themes[t])) for t in generating]
            for _ in range(n_words - n_gen):
                if rng.random() < spec.keyword_rate:
                    words.append(str(rng.choice(themes[str(rng.choice(generating))])))
                else:
                    words.append(str(rng.choice(FILLER)))
            rng.shuffle(words)
            text = " ".join(words)
            for _ in range(2):
                labels, truth = _draw_labels(rng, generating, pool, spec.positives,
                                             spec.negatives)
                out.append(LabeledExample(text, labels, truth))
    return out


def generate_single_label(themes_used, n_per_theme, themes=None, n_words=(4, 12),
                          keyword_rate=0.5, seed=0):
    """Multi-class task: one generating theme per text, all themes as candidates."""
    themes = themes or DEFAULT_THEMES
    rng = np.random.default_rng(seed)
    out = []
    for theme in themes_used:
        for _ in range(n_per_theme):
            n = int(rng.integers(n_words[0], n_words[1] + 1))
            words = [str(rng.choice(themes[theme]))]
            for _ in range(n - 1):
                words.append(str(rng.choice(themes[theme])) if rng.random() < keyword_rate
                             else str(rng.choice(FILLER)))
            rng.shuffle(words)
            out.append(LabeledExample(" ".join(words), list(themes_used), [theme]))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


# -- splits ---------------------------------------------------------------------------
def train_test_split(examples, train_fraction=0.9, seed=0):
    """Shuffle with ``seed`` and cut at floor(n * train_fraction)."""
    n = len(examples)
    frac = Fraction(train_fraction).limit_denominator(10_000)
    n_train = n * frac.numerator // frac.denominator
    if n_train == 0 or n_train == n:
        raise ConfigError(f"a {float(frac):.0%} split of {n} examples leaves an empty partition")
    order = np.random.default_rng(seed).permutation(n)
    return [examples[i] for i in order[:n_train]], [examples[i] for i in order[n_train:]]


def few_shot_split(examples, k=8, seed=0):
    """Pick exactly ``k`` support examples per label; the rest form the query set.

    Labels are visited in sorted order and each draws from examples not
    already taken. Every label needs at least ``k + 1`` examples.
    """
    if k < 0:
        raise SplitError("k must be >= 0")
    if k == 0:
        return [], list(examples)
    by_label = {}
    for i, ex in enumerate(examples):
        for lab in ex.true_labels:
            by_label.setdefault(lab, []).append(i)
    short = sorted(lab for lab, idx in by_label.items() if len(idx) < k + 1)
    if short:
        raise SplitError(f"labels with fewer than {k + 1} examples: {short}")
    rng = np.random.default_rng(seed)
    taken = set()
    for lab in sorted(by_label):
        free = [i for i in by_label[lab] if i not in taken]
        if len(free) < k:
            raise SplitError(f"label {lab!r} has only {len(free)} unused examples")
        taken.update(int(i) for i in rng.choice(free, size=k, replace=False))
    support = [examples[i] for i in sorted(taken)]
    query = [ex for i, ex in enumerate(examples) if i not in taken]
    return support, query


def corpus_vocab_texts(examples):
    """All strings that should be in a vocabulary covering ``examples``."""
    for ex in examples:
        yield ex.text
        yield from ex.all_labels


def theme_vocab_texts(themes=None):
    """Every theme name, keyword and filler word, so held-out themes are never [UNK]."""
    themes = themes or DEFAULT_THEMES
    for name, words in themes.items():
        yield name
        yield from words
    yield from FILLER
