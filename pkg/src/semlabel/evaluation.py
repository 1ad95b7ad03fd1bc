"""Confusion matrices, per-class/weighted F1 and the leave-one-project-out driver."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, SemlabelError
from .graph_data import FoldSpec, make_folds
from .label_encoding import EncodingTable
from .training import TrainConfig, TrainedModel, train

log = logging.getLogger(__name__)


def confusion_matrix(truth, pred, n_classes: int) -> np.ndarray:
    """Counts with rows = true label, columns = predicted label."""
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if t.shape != p.shape:
        raise EvaluationError("truth and prediction lengths differ")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass(frozen=True)
class ClassScore:
    label_id: int
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassScore, ...]
    weighted_f1: float
    macro_f1: float
    n_evaluated: int

    @property
    def f1(self) -> np.ndarray:
        return np.array([c.f1 for c in self.per_class])

    def to_dict(self) -> dict:
        return {
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "n_evaluated": self.n_evaluated,
            "per_class": [vars(c) for c in self.per_class],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(tuple(ClassScore(**c) for c in d["per_class"]),
                   d["weighted_f1"], d["macro_f1"], d["n_evaluated"])


def report_from_confusion(cm: np.ndarray) -> EvalReport:
    """Per-class precision/recall/F1 (0 on zero denominators) and their averages.

    ``weighted_f1`` weights each class by its support; ``macro_f1`` averages
    over classes that occur in the truth or the predictions.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    scores = []
    for i in range(cm.shape[0]):
        t, s, pr = int(tp[i]), int(support[i]), int(predicted[i])
        precision = t / pr if pr else 0.0
        recall = t / s if s else 0.0
        # 2PR/(P+R) rewritten on counts; 0 when P+R = 0
        f1 = 2 * t / (s + pr) if t else 0.0
        scores.append(ClassScore(i, precision, recall, f1, s, pr))
    n = int(support.sum())
    weighted = math.fsum(c.support * c.f1 for c in scores) / n if n else 0.0
    present = [c.f1 for c in scores if c.support or c.predicted]
    macro = math.fsum(present) / len(present) if present else 0.0
    return EvalReport(tuple(scores), weighted, macro, n)


def evaluate_predictions(truth, pred, n_classes: int) -> EvalReport:
    if len(truth) == 0:
        raise EvaluationError("cannot evaluate an empty test set", code="empty_test_set")
    return report_from_confusion(confusion_matrix(truth, pred, n_classes))


def evaluate(trained: TrainedModel, ds, test_ids) -> EvalReport:
    ids = np.asarray(test_ids, dtype=np.int64)
    if ids.size == 0:
        raise EvaluationError("cannot evaluate an empty test set", code="empty_test_set")
    pred = trained.predict(ds, ids)
    return evaluate_predictions(ds.labels[ids], pred, len(ds.vocabulary))


@dataclass(frozen=True)
class FoldResult:
    fold_index: int
    test_project: int
    report: EvalReport
    confusion: np.ndarray
    final_train_loss: float


@dataclass(frozen=True)
class CrossValReport:
    name: str
    dimensions: int
    labels: tuple[str, ...]
    folds: tuple[FoldResult, ...]
    per_class_mean_f1: np.ndarray
    weighted_f1: float
    config: dict

    def to_json(self) -> str:
        doc = {
            "encoding": self.name,
            "dimensions": self.dimensions,
            "labels": list(self.labels),
            "weighted_f1": self.weighted_f1,
            "per_class_mean_f1": self.per_class_mean_f1.tolist(),
            "folds": [
                {
                    "fold_index": f.fold_index,
                    "test_project": f.test_project,
                    "final_train_loss": f.final_train_loss,
                    "report": f.report.to_dict(),
                    "confusion": f.confusion.tolist(),
                }
                for f in self.folds
            ],
            "config": self.config,
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, data) -> "CrossValReport":
        doc = json.loads(data) if isinstance(data, (str, bytes, bytearray)) else data
        try:
            folds = tuple(
                FoldResult(f["fold_index"], f["test_project"], EvalReport.from_dict(f["report"]),
                           np.asarray(f["confusion"], dtype=np.int64), f["final_train_loss"])
                for f in doc["folds"]
            )
            return cls(doc["encoding"], doc["dimensions"], tuple(doc["labels"]), folds,
                       np.asarray(doc["per_class_mean_f1"], dtype=np.float64),
                       doc["weighted_f1"], doc.get("config", {}))
        except (KeyError, TypeError) as exc:
            raise EvaluationError(f"malformed cross-validation report: {exc}", code="bad_report") from exc


def per_class_mean_f1(fold_reports, n_classes: int) -> np.ndarray:
    """Mean F1 of each class over the folds in which it occurs.

    A class "occurs" in a fold when it has test support or was predicted;
    classes that never occur get 0.
    """
    means = np.zeros(n_classes)
    for i in range(n_classes):
        vals = [r.per_class[i].f1 for r in fold_reports
                if r.per_class[i].support or r.per_class[i].predicted]
        means[i] = math.fsum(vals) / len(vals) if vals else 0.0
    return means


def _run_fold(ds, fold: FoldSpec, table, cfg: TrainConfig) -> FoldResult:
    fold_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed + fold.fold_index})
    try:
        trained, history = train(ds, fold.train_node_ids, table, fold_cfg)
        test_ids = np.asarray(fold.test_node_ids, dtype=np.int64)
        pred = trained.predict(ds, test_ids)
    except (SemlabelError, ValueError) as exc:
        raise EvaluationError(f"fold {fold.fold_index} (test project {fold.test_project}): {exc}",
                              code=getattr(exc, "code", "fold_failed")) from exc
    cm = confusion_matrix(ds.labels[test_ids], pred, len(ds.vocabulary))
    log.info("fold %d: weighted F1 %.4f", fold.fold_index, report_from_confusion(cm).weighted_f1)
    return FoldResult(fold.fold_index, fold.test_project, report_from_confusion(cm), cm, history[-1])


def cross_validate(ds, table: EncodingTable | None, cfg: TrainConfig, name: str = "encoding",
                   workers: int = 1) -> CrossValReport:
    """Leave-one-project-out: train on all other projects, test on each in turn.

    Fold ``k`` trains with seed ``cfg.seed + k``. ``workers > 1`` runs folds
    in a thread pool; results are collected by fold index, so the report
    does not depend on completion order.
    """
    folds = make_folds(ds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda f: _run_fold(ds, f, table, cfg), folds))
    else:
        results = [_run_fold(ds, f, table, cfg) for f in folds]
    results.sort(key=lambda r: r.fold_index)

    n_classes = len(ds.vocabulary)
    pooled = report_from_confusion(sum(r.confusion for r in results))
    dims = table.dim if (table is not None and cfg.loss_kind.uses_table) else n_classes
    return CrossValReport(
        name=name,
        dimensions=dims,
        labels=ds.vocabulary.labels,
        folds=tuple(results),
        per_class_mean_f1=per_class_mean_f1([r.report for r in results], n_classes),
        weighted_f1=pooled.weighted_f1,
        config=cfg.to_dict(),
    )


def collect_paired_scores(a: CrossValReport, b: CrossValReport) -> tuple[np.ndarray, np.ndarray]:
    """Per-class mean F1 vectors of two reports over the same vocabulary."""
    if tuple(a.labels) != tuple(b.labels):
        raise EvaluationError("reports were produced over different vocabularies",
                              code="vocabulary_mismatch")
    return np.asarray(a.per_class_mean_f1, dtype=np.float64), np.asarray(b.per_class_mean_f1, dtype=np.float64)


def summary_csv(reports) -> str:
    """``encoding,dimensions,weighted_f1`` rows, one per report, in the given order."""
    lines = ["encoding,dimensions,weighted_f1"]
    lines += [f"{r.name},{r.dimensions},{r.weighted_f1:.6f}" for r in reports]
    return "\n".join(lines) + "\n"
