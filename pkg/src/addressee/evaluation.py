"""Accuracy, per-class precision/recall/F1, confusion matrices and Cohen's kappa.

Undefined ratios (a class never predicted, or never present) are reported
as 0 rather than NaN.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .corpus import CLASS_NAMES
from .model import ModelConfig, ModelParams, SampleInput, predict

EVAL_SCHEMA = "arvsu-eval/1"


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den else 0.0


@dataclass
class EvalReport:
    accuracy: float
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]
    confusion: np.ndarray
    n: int

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.confusion.sum(axis=1))

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def micro(self) -> tuple[float, float, float]:
        """Pooled precision, recall and F1 over all classes."""
        tp = int(np.trace(self.confusion))
        fp = fn = self.n - tp  # single-label: every miss is one FP and one FN
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        return p, r, _ratio(2 * p * r, p + r)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalReport):
            return NotImplemented
        return (self.accuracy == other.accuracy and self.precision == other.precision
                and self.recall == other.recall and self.f1 == other.f1 and self.n == other.n
                and np.array_equal(self.confusion, other.confusion))


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = 3) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return m


def report_from_confusion(m: np.ndarray) -> EvalReport:
    m = np.asarray(m, dtype=np.int64)
    n = int(m.sum())
    if n == 0:
        raise ValueError("cannot report on zero samples")
    tp = np.diag(m)
    precision = tuple(_ratio(tp[c], m[:, c].sum()) for c in range(len(m)))
    recall = tuple(_ratio(tp[c], m[c, :].sum()) for c in range(len(m)))
    f1 = tuple(_ratio(2 * p * r, p + r) for p, r in zip(precision, recall))
    return EvalReport(accuracy=_ratio(tp.sum(), n), precision=precision, recall=recall, f1=f1,
                      confusion=m, n=n)


def report_from_predictions(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int = 3) -> EvalReport:
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} labels but {len(y_pred)} predictions")
    if len(y_true) == 0:
        raise ValueError("empty dataset")
    return report_from_confusion(confusion_matrix(y_true, y_pred, n_classes))


def evaluate(params: ModelParams, cfg: ModelConfig, dataset: Sequence[SampleInput]) -> EvalReport:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    preds = [predict(params, cfg, s) for s in dataset]
    return report_from_predictions([s.label for s in dataset], preds, cfg.n_classes)


# -------------------------------------------------------------------- kappa


def cohen_kappa(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """(p_o - p_e) / (1 - p_e) for two annotators over the same items.

    When both annotators use a single identical category (p_e == 1) the
    result is 1 if they agree everywhere, else 0.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError(f"annotator lists differ in length: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise ValueError("need at least one item")
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    ca, cb = Counter(labels_a), Counter(labels_b)
    p_e = sum(ca[k] * cb.get(k, 0) for k in ca) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def binary_kappa_per_label(ann_a: Sequence[Iterable[str]], ann_b: Sequence[Iterable[str]], label: str) -> float:
    """Kappa on presence/absence of one flag in two annotators' flag sets."""
    if len(ann_a) != len(ann_b):
        raise ValueError(f"annotator lists differ in length: {len(ann_a)} vs {len(ann_b)}")
    return cohen_kappa([label in set(a) for a in ann_a], [label in set(b) for b in ann_b])


# ------------------------------------------------------------------ reports


def to_structured(report: EvalReport) -> dict:
    return {
        "schema": EVAL_SCHEMA,
        "classes": list(CLASS_NAMES),
        "n": report.n,
        "accuracy": report.accuracy,
        "precision": list(report.precision),
        "recall": list(report.recall),
        "f1": list(report.f1),
        "macro": {"precision": float(np.mean(report.precision)), "recall": float(np.mean(report.recall)),
                  "f1": report.macro_f1},
        "micro": dict(zip(("precision", "recall", "f1"), report.micro)),
        "confusion": report.confusion.tolist(),
    }


def parse_structured(text: str) -> EvalReport:
    obj = json.loads(text)
    if obj.get("schema") != EVAL_SCHEMA:
        raise ValueError(f"schema {obj.get('schema')!r}, expected {EVAL_SCHEMA!r}")
    return EvalReport(accuracy=obj["accuracy"], precision=tuple(obj["precision"]), recall=tuple(obj["recall"]),
                      f1=tuple(obj["f1"]), confusion=np.array(obj["confusion"], dtype=np.int64), n=obj["n"])


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def text_table(report: EvalReport, title: str = "Model") -> str:
    """Per-class table (Pre./Rec./F1 in percent) followed by accuracy and the confusion matrix."""
    col = 20
    head1 = f"{'Experiment':<{col}}" + "".join(f"{name:^21}" for name in CLASS_NAMES)
    head2 = f"{'':<{col}}" + "".join(f"{'Pre.':>7}{'Rec.':>7}{'F1':>7}" for _ in CLASS_NAMES)
    row = f"{title:<{col}}" + "".join(
        f"{_pct(p):>7}{_pct(r):>7}{_pct(f):>7}" for p, r, f in zip(report.precision, report.recall, report.f1))
    lines = [head1, head2, row, "", f"Accuracy: {_pct(report.accuracy)}% (n={report.n})", "",
             "Confusion matrix (rows = true, columns = predicted):"]
    width = max(len(str(int(report.confusion.max()))), 6)
    abbrev = ("LoS", "Photo", "Others")
    lines.append(f"{'':<8}" + "".join(f"{a:>{width + 1}}" for a in abbrev))
    for a, counts in zip(abbrev, report.confusion):
        lines.append(f"{a:<8}" + "".join(f"{int(c):>{width + 1}d}" for c in counts))
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, fmt: str = "text_table", title: str = "Model") -> str:
    if fmt == "text_table":
        return text_table(report, title)
    if fmt == "structured":
        return json.dumps(to_structured(report), indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")
