"""Evaluation metrics and machine-readable reports.

Zero-denominator metrics surface as explicit ``undefined`` flags instead of
silent zeros; class-imbalance discussions need per-class support, so every
classification report carries it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure, LengthMismatch


@dataclass
class RegressionReport:
    mae: float
    r2: float | None  # None when truth is constant (flagged undefined)
    n: int
    pairs: list[tuple[float, float, str]]  # (truth, pred, id)
    r2_undefined: bool = False
    class_tags: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "kind": "regression",
            "mae": self.mae,
            "r2": self.r2,
            "r2_undefined": self.r2_undefined,
            "n": self.n,
        }


@dataclass
class ClassificationReport:
    confusion: list[list[int]]  # confusion[actual][predicted], classes (0=unstable, 1=stable)
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    support: dict[str, int]
    n: int
    pairs: list[tuple[int, int, str]]
    undefined: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "kind": "classification",
            "confusion": self.confusion,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "undefined": self.undefined,
            "n": self.n,
        }


def regression_metrics(truth, pred, ids: list[str] | None = None,
                       class_tags: list[str] | None = None) -> RegressionReport:
    """MAE and R^2 = 1 - SSres/SStot; R^2 is undefined for constant truth."""
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    if t.size < 2:
        raise LengthMismatch("need at least 2 pairs")
    ids = ids if ids is not None else [str(i) for i in range(t.size)]
    mae = float(np.mean(np.abs(t - p)))
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2, undefined = None, True
    else:
        r2, undefined = 1.0 - float(((t - p) ** 2).sum()) / ss_tot, False
    return RegressionReport(
        mae=mae,
        r2=r2,
        n=int(t.size),
        pairs=[(float(a), float(b), i) for a, b, i in zip(t, p, ids)],
        r2_undefined=undefined,
        class_tags=list(class_tags) if class_tags else [],
    )


def classification_metrics(truth, pred, positive_class: int = 1,
                           ids: list[str] | None = None) -> ClassificationReport:
    """Accuracy, precision, recall, F1 and the 2x2 confusion matrix."""
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape:
        raise LengthMismatch(f"{t.shape} vs {p.shape}")
    if not set(np.unique(t)).issubset({0, 1}) or not set(np.unique(p)).issubset({0, 1}):
        raise ValueError("labels must be 0/1")
    ids = ids if ids is not None else [str(i) for i in range(t.size)]
    pos = positive_class
    neg = 1 - pos
    tp = int(((t == pos) & (p == pos)).sum())
    tn = int(((t == neg) & (p == neg)).sum())
    fp = int(((t == neg) & (p == pos)).sum())
    fn = int(((t == pos) & (p == neg)).sum())
    confusion = [[0, 0], [0, 0]]
    for a, b in zip(t.tolist(), p.tolist()):
        confusion[a][b] += 1
    undefined = []
    accuracy = (tp + tn) / t.size
    if tp + fp == 0:
        precision = None
        undefined.append("precision")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = None
        undefined.append("recall")
    else:
        recall = tp / (tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
        undefined.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    support = {"0": int((t == 0).sum()), "1": int((t == 1).sum())}
    return ClassificationReport(
        confusion=confusion,
        accuracy=float(accuracy),
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        n=int(t.size),
        pairs=[(int(a), int(b), i) for a, b, i in zip(t, p, ids)],
        undefined=undefined,
    )


def emit_report(report, directory: str | Path, stem: str) -> dict[str, Path]:
    """Write {stem}.json (metrics) and {stem}.csv (parity / prediction rows).

    Parity rows are (truth, pred, id, class_tag), enough to redraw
    truth-vs-prediction scatter plots or confusion matrices.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f"{stem}.json"
        csv_path = directory / f"{stem}.csv"
        json_path.write_text(
            json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n", "utf-8"
        )
        if isinstance(report, RegressionReport):
            tags = report.class_tags or [""] * len(report.pairs)
            lines = ["truth,pred,id,class_tag"]
            for (t, p, i), tag in zip(report.pairs, tags):
                lines.append(f"{t!r},{p!r},{i.replace(',', ';')},{tag}")
        else:
            lines = ["truth,pred,id,class_tag"]
            for t, p, i in report.pairs:
                lines.append(f"{t},{p},{i.replace(',', ';')},")
        csv_path.write_text("\n".join(lines) + "\n", "utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return {"json": json_path, "csv": csv_path}


def report_stem(task: str, target_cycle: int | None, model: str, seed: int) -> str:
    cycle = target_cycle if target_cycle is not None else "na"
    return f"{task}_{cycle}_{model}_{seed}"
