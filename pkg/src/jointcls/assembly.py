"""Toy tokenizer and joint label+text input assembly.

Joint layout for one example::

    <<LABEL>> l1 tokens  <<LABEL>> l2 tokens ... [SEP] text tokens [PAD] ...

``text_span`` starts at the [SEP] token, so it is never empty and the pooler
always has a well-defined first position.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, LabelOverflowError, VocabError

PAD, UNK, CLS, SEP, LABEL = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "<<LABEL>>"
RESERVED = (PAD, UNK, CLS, SEP, LABEL)
DEFAULT_MAX_LEN = 1024

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text):
    """Lowercase, then split into word runs and single punctuation marks."""
    return _WORD_RE.findall(text.lower())


class Vocab:
    """Token <-> id map. Reserved tokens take ids 0..4; the rest are sorted."""

    def __init__(self, tokens=()):
        words = sorted(set(tokens) - set(RESERVED))
        self.itos = list(RESERVED) + words
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3
    label_id = 4

    @classmethod
    def build(cls, texts):
        toks = set()
        for t in texts:
            toks.update(split_words(t))
        return cls(toks)

    @classmethod
    def from_itos(cls, itos):
        if tuple(itos[: len(RESERVED)]) != RESERVED:
            raise VocabError("reserved tokens missing or out of order")
        v = cls.__new__(cls)
        v.itos = list(itos)
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        if len(v.stoi) != len(v.itos):
            raise VocabError("duplicate tokens in vocabulary")
        return v

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_itos(lines)

    def tokenize(self, text):
        return [self.stoi.get(w, self.unk_id) for w in split_words(text)]

    def detokenize(self, ids):
        return " ".join(self.itos[i] for i in ids)


def tokenize(text, vocab):
    return vocab.tokenize(text)


def detokenize(ids, vocab):
    return vocab.detokenize(ids)


@dataclass
class AssembledInput:
    token_ids: np.ndarray         # [B, L]
    attn_mask: np.ndarray         # [B, L]
    class_positions: np.ndarray   # [B, C]; padded with 0
    class_mask: np.ndarray        # [B, C]; 1 for real labels
    text_span: np.ndarray         # [B, 2] half-open [start, end); start is the SEP position
    labels: list = field(default_factory=list)   # per-example label strings
    class_ends: np.ndarray = None  # [B, C] exclusive end of each label's token block

    @property
    def batch_size(self):
        return self.token_ids.shape[0]

    @property
    def labels_per_example(self):
        return self.class_mask.sum(axis=1)

    @property
    def class_token_positions(self):
        """Per example: list of (label_index, position)."""
        return [[(k, int(p)) for k, (p, m) in enumerate(zip(pos, msk)) if m]
                for pos, msk in zip(self.class_positions, self.class_mask)]

    @property
    def text_mask(self):
        idx = np.arange(self.token_ids.shape[1])[None, :]
        return ((idx >= self.text_span[:, :1]) & (idx < self.text_span[:, 1:])).astype(np.int64)


def _label_block(labels, vocab):
    if not labels:
        raise ContractError("at least one candidate label is required")
    ids, positions, ends = [], [], []
    for lab in labels:
        toks = vocab.tokenize(lab) if isinstance(lab, str) else []
        if not toks:
            raise ContractError(f"label {lab!r} is empty after tokenization")
        positions.append(len(ids))
        ids.append(vocab.label_id)
        ids.extend(toks)
        ends.append(len(ids))
    return ids, positions, ends


def _single(ids, positions, ends, span, labels):
    n = len(ids)
    c = len(positions)
    return AssembledInput(
        token_ids=np.asarray([ids], dtype=np.int64).reshape(1, n),
        attn_mask=np.ones((1, n), dtype=np.int64),
        class_positions=np.asarray([positions], dtype=np.int64).reshape(1, c),
        class_mask=np.ones((1, c), dtype=np.int64),
        text_span=np.asarray([span], dtype=np.int64).reshape(1, 2),
        labels=[list(labels)],
        class_ends=np.asarray([ends], dtype=np.int64).reshape(1, c),
    )


def assemble(text, candidate_labels, vocab, max_len=DEFAULT_MAX_LEN):
    """Build the joint input for one example.

    Text tokens are truncated from the right to fit ``max_len``; label tokens
    are never dropped. Raises :class:`LabelOverflowError` when the label
    block plus the separator alone exceeds ``max_len``.
    """
    ids, positions, ends = _label_block(candidate_labels, vocab)
    if len(ids) + 1 > max_len:
        raise LabelOverflowError(
            f"{len(candidate_labels)} labels need {len(ids) + 1} tokens, max_len is {max_len}")
    start = len(ids)
    room = max_len - start - 1
    ids = ids + [vocab.sep_id] + vocab.tokenize(text)[:room]
    return _single(ids, positions, ends, (start, len(ids)), candidate_labels)


def assemble_text(text, vocab, max_len=DEFAULT_MAX_LEN):
    """Text-only input ``[SEP] text`` (bi-encoder / encoder-decoder text side)."""
    ids = [vocab.sep_id] + vocab.tokenize(text)[: max_len - 1]
    return _single(ids, [], [], (0, len(ids)), [])


def assemble_labels(candidate_labels, vocab, max_len=DEFAULT_MAX_LEN):
    """Label-only input ``<<LABEL>> l1 <<LABEL>> l2 ...`` (class encoder / decoder side)."""
    ids, positions, ends = _label_block(candidate_labels, vocab)
    if len(ids) > max_len:
        raise LabelOverflowError(f"label block of {len(ids)} tokens exceeds max_len {max_len}")
    return _single(ids, positions, ends, (len(ids), len(ids)), candidate_labels)


def batch(examples, pad_id=Vocab.pad_id):
    """Pad a list of single- or multi-row inputs to the longest sequence and label count."""
    if not examples:
        raise ContractError("cannot batch an empty list")
    rows = []
    for ex in examples:
        for b in range(ex.batch_size):
            n = int(ex.attn_mask[b].sum())
            c = int(ex.class_mask[b].sum())
            ends = ex.class_ends[b, :c] if ex.class_ends is not None else ex.class_positions[b, :c] + 1
            rows.append((ex.token_ids[b, :n], ex.class_positions[b, :c], ex.text_span[b],
                         ex.labels[b] if ex.labels else [], ends))
    length = max(len(r[0]) for r in rows)
    n_cls = max(len(r[1]) for r in rows)
    bsz = len(rows)
    token_ids = np.full((bsz, length), pad_id, dtype=np.int64)
    attn = np.zeros((bsz, length), dtype=np.int64)
    cpos = np.zeros((bsz, n_cls), dtype=np.int64)
    cmask = np.zeros((bsz, n_cls), dtype=np.int64)
    cends = np.zeros((bsz, n_cls), dtype=np.int64)
    spans = np.zeros((bsz, 2), dtype=np.int64)
    labels = []
    for i, (ids, pos, span, labs, ends) in enumerate(rows):
        token_ids[i, : len(ids)] = ids
        attn[i, : len(ids)] = 1
        cpos[i, : len(pos)] = pos
        cmask[i, : len(pos)] = 1
        cends[i, : len(pos)] = ends
        spans[i] = span
        labels.append(list(labs))
    return AssembledInput(token_ids, attn, cpos, cmask, spans, labels, cends)
