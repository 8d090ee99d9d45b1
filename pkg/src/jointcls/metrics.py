"""Multi-label classification metrics and model evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class LabelStats:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricsReport:
    per_label: dict = field(default_factory=dict)
    macro_f1: float = 0.0
    micro_f1: float = 0.0
    accuracy: float = 0.0
    n_examples: int = 0

    def to_dict(self):
        return {
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
            "per_label": {k: vars(v) for k, v in sorted(self.per_label.items())},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format(self):
        lines = [f"examples   {self.n_examples}",
                 f"macro-F1   {self.macro_f1:.4f}",
                 f"micro-F1   {self.micro_f1:.4f}",
                 f"accuracy   {self.accuracy:.4f}",
                 f"{'label':<20} {'prec':>6} {'rec':>6} {'f1':>6} {'support':>8}"]
        for lab, s in sorted(self.per_label.items()):
            lines.append(f"{lab:<20} {s.precision:6.3f} {s.recall:6.3f} {s.f1:6.3f} {s.support:8d}")
        return "\n".join(lines)


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def classification_report(truth, predicted, candidates):
    """Metrics from per-example sets of true, predicted and candidate labels.

    Counts are taken only over each example's candidates. Macro-F1 averages
    per-label F1 over labels with non-zero support; accuracy is exact-match.
    """
    tp, fp, fn = {}, {}, {}
    exact = 0
    for t, p, c in zip(truth, predicted, candidates):
        t, p = set(t) & set(c), set(p) & set(c)
        exact += t == p
        for lab in c:
            tp[lab] = tp.get(lab, 0) + (lab in t and lab in p)
            fp[lab] = fp.get(lab, 0) + (lab in p and lab not in t)
            fn[lab] = fn.get(lab, 0) + (lab in t and lab not in p)
    per_label = {}
    for lab in tp:
        prec = tp[lab] / (tp[lab] + fp[lab]) if tp[lab] + fp[lab] else 0.0
        rec = tp[lab] / (tp[lab] + fn[lab]) if tp[lab] + fn[lab] else 0.0
        per_label[lab] = LabelStats(prec, rec, _f1(prec, rec), tp[lab] + fn[lab])
    supported = [s.f1 for s in per_label.values() if s.support > 0]
    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    micro_p = TP / (TP + FP) if TP + FP else 0.0
    micro_r = TP / (TP + FN) if TP + FN else 0.0
    n = len(truth)
    return MetricsReport(per_label=per_label,
                         macro_f1=float(np.mean(supported)) if supported else 0.0,
                         micro_f1=_f1(micro_p, micro_r),
                         accuracy=exact / n if n else 0.0,
                         n_examples=n)


def predict_probs(model, examples, batch_size=16):
    """Sigmoid probabilities per example, aligned with ``ex.all_labels``."""
    out = []
    with T.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            logits = model.logits([ex.text for ex in chunk], [ex.all_labels for ex in chunk])
            probs = T._sigmoid_np(logits.data)
            for j, ex in enumerate(chunk):
                out.append(probs[j, : len(ex.all_labels)])
    return out


def evaluate(model, examples, threshold=0.5, mode="multi", batch_size=16):
    """Score ``model`` on ``examples``.

    ``multi``: a label is predicted when sigmoid(logit) > threshold.
    ``argmax``: exactly the top-scoring candidate is predicted.
    """
    probs = predict_probs(model, examples, batch_size)
    preds = []
    for ex, p in zip(examples, probs):
        if mode == "argmax":
            preds.append([ex.all_labels[int(np.argmax(p))]])
        elif mode == "multi":
            preds.append([lab for lab, q in zip(ex.all_labels, p) if q > threshold])
        else:
            raise ValueError(f"unknown evaluation mode {mode!r}")
    return classification_report([ex.true_labels for ex in examples], preds,
                                 [ex.all_labels for ex in examples])
