"""Pooled confusion matrices, per-class prediction quality, cross-validation,
and the talent-weighted best-model selection rule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from scoutcv.dataset import ALL_CLASSES, NUM_CLASSES, QualityClass, assign_folds
from scoutcv.errors import TrainingDiverged
from scoutcv.head import HeadConfig, HeadModel, TrainConfig, init_head, predict, train


class ConfusionMatrix:
    """5x5 count matrix; rows are true classes, columns are predictions."""

    def __init__(self, counts: np.ndarray | Sequence[Sequence[int]]) -> None:
        arr = np.asarray(counts, dtype=np.int64)
        if arr.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"expected a {NUM_CLASSES}x{NUM_CLASSES} matrix, got {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion counts must be non-negative")
        self.counts = arr

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def trace(self) -> int:
        return int(np.trace(self.counts))

    def column_sum(self, c: QualityClass | int) -> int:
        return int(self.counts[:, int(c)].sum())

    def row_sum(self, c: QualityClass | int) -> int:
        return int(self.counts[int(c), :].sum())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and bool(
            np.array_equal(self.counts, other.counts)
        )

    def __repr__(self) -> str:
        return f"ConfusionMatrix(total={self.total})"


def confusion_from_predictions(
    true_labels: Sequence[int] | np.ndarray, predicted: Sequence[int] | np.ndarray
) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("true/predicted length mismatch")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def confusion(model: HeadModel, features: np.ndarray, labels: np.ndarray) -> ConfusionMatrix:
    """Evaluate a model on a labeled set and tally the confusion matrix."""
    if len(features) == 0:
        raise ValueError("empty evaluation set")
    classes, _ = predict(model, features)
    return confusion_from_predictions(labels, classes)


def cpq(cm: ConfusionMatrix, c: QualityClass | int) -> float | None:
    """Per-class prediction quality: percent correct among all predictions
    issued for the class (its confusion column). None when the class was
    never predicted; never a silent zero."""
    denom = cm.column_sum(c)
    if denom == 0:
        return None
    return 100.0 * cm.counts[int(c), int(c)] / denom


def accuracy(cm: ConfusionMatrix) -> float:
    """Overall percent correct."""
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return 100.0 * cm.trace() / cm.total


@dataclass(frozen=True)
class ClassStats:
    name: str
    code: int
    predictions: int
    correct: int
    cpq_percent: float | None


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    accuracy_percent: float
    classes: tuple[ClassStats, ...]
    config_id: str = ""
    k: int = 0
    fold_accuracies: tuple[float, ...] = ()

    def class_stats(self, c: QualityClass | int) -> ClassStats:
        return self.classes[int(c)]

    def min_focus_cpq(self, focus: Sequence[QualityClass]) -> float | None:
        values = [self.class_stats(c).cpq_percent for c in focus]
        if any(v is None for v in values):
            return None
        return min(values)  # type: ignore[arg-type]


def report_from_confusion(
    cm: ConfusionMatrix,
    config_id: str = "",
    k: int = 0,
    fold_accuracies: Sequence[float] = (),
) -> EvaluationReport:
    stats = tuple(
        ClassStats(
            name=c.display_name,
            code=c.value,
            predictions=cm.column_sum(c),
            correct=int(cm.counts[c.value, c.value]),
            cpq_percent=cpq(cm, c),
        )
        for c in ALL_CLASSES
    )
    return EvaluationReport(
        confusion=cm,
        accuracy_percent=accuracy(cm),
        classes=stats,
        config_id=config_id,
        k=k,
        fold_accuracies=tuple(fold_accuracies),
    )


def derive_seed(*parts: int) -> int:
    """Deterministic, platform-stable child seed from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def cross_validate(
    head_cfg: HeadConfig,
    train_cfg: TrainConfig,
    features: np.ndarray,
    labels: np.ndarray,
    k: int = 10,
    fold_seed: int = 0,
    stratified: bool = True,
    config_id: str = "",
) -> EvaluationReport:
    """k-fold cross-validation with one pooled confusion matrix.

    Every fold trains a fresh head (seeds derived from the fold index) on
    the other k-1 folds and predicts its own fold once, so the pooled
    matrix counts each record exactly one time.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    folds = assign_folds(y, k, fold_seed, stratified)
    pooled_true: list[np.ndarray] = []
    pooled_pred: list[np.ndarray] = []
    fold_accuracies: list[float] = []
    for i in range(k):
        test = folds == i
        fold_head_cfg = HeadConfig(
            input_dim=head_cfg.input_dim,
            hidden_layers=head_cfg.hidden_layers,
            output_classes=head_cfg.output_classes,
            init_seed=derive_seed(head_cfg.init_seed, i),
        )
        fold_train_cfg = TrainConfig(
            epochs=train_cfg.epochs,
            batch_size=min(train_cfg.batch_size, int((~test).sum())),
            learning_rate=train_cfg.learning_rate,
            optimizer=train_cfg.optimizer,
            loss=train_cfg.loss,
            shuffle_seed=derive_seed(train_cfg.shuffle_seed, i, 1),
            dropout_seed=derive_seed(train_cfg.dropout_seed, i, 2),
        )
        model = init_head(fold_head_cfg)
        try:
            trained, _ = train(model, x[~test], y[~test], fold_train_cfg)
        except TrainingDiverged as exc:
            raise TrainingDiverged(epoch=exc.epoch, step=exc.step, fold=i) from None
        classes, _ = predict(trained, x[test])
        pooled_true.append(y[test])
        pooled_pred.append(classes)
        fold_accuracies.append(float((classes == y[test]).mean()) * 100.0)
    cm = confusion_from_predictions(np.concatenate(pooled_true), np.concatenate(pooled_pred))
    return report_from_confusion(cm, config_id=config_id, k=k, fold_accuracies=fold_accuracies)


# ---------------------------------------------------------------------------
# best-model selection


@dataclass(frozen=True)
class SelectionPolicy:
    """Selection favors the weakest focus-class prediction quality.

    A result is eligible only when every focus class received at least
    ``min_predictions`` predictions (small counts make the percentage
    unreliable); ineligible fields fall back to overall accuracy.
    """

    focus_classes: tuple[QualityClass, ...] = (QualityClass.VERY_GOOD, QualityClass.EXCELLENT)
    min_predictions: int = 20

    def __post_init__(self) -> None:
        if not self.focus_classes:
            raise ValueError("focus_classes must be nonempty")
        if self.min_predictions < 1:
            raise ValueError("min_predictions must be >= 1")


@dataclass(frozen=True)
class SelectionJustification:
    selected_index: int
    fallback: bool
    reason: str
    candidates: tuple[dict, ...] = field(default_factory=tuple)


def _candidate_row(index: int, report: EvaluationReport, policy: SelectionPolicy) -> dict:
    stats = [report.class_stats(c) for c in policy.focus_classes]
    eligible = all(
        s.predictions >= policy.min_predictions and s.cpq_percent is not None for s in stats
    )
    return {
        "index": index,
        "eligible": eligible,
        "min_focus_cpq": report.min_focus_cpq(policy.focus_classes),
        "accuracy_percent": report.accuracy_percent,
        "focus_predictions": {s.name: s.predictions for s in stats},
    }


def select_best(
    results: Sequence[tuple[object, EvaluationReport]],
    policy: SelectionPolicy = SelectionPolicy(),
) -> tuple[int, SelectionJustification]:
    """Pick the result with the best worst focus-class prediction quality.

    Ties break on overall accuracy, then on the lower index. When no result
    is eligible, the highest overall accuracy wins and the justification is
    flagged as a fallback.
    """
    if not results:
        raise ValueError("select_best needs at least one result")
    rows = [_candidate_row(i, report, policy) for i, (_, report) in enumerate(results)]
    eligible = [r for r in rows if r["eligible"]]
    if eligible:
        best = max(eligible, key=lambda r: (r["min_focus_cpq"], r["accuracy_percent"], -r["index"]))
        reason = (
            f"highest minimum focus-class prediction quality "
            f"({best['min_focus_cpq']:.2f}%) among {len(eligible)} eligible result(s)"
        )
        return best["index"], SelectionJustification(
            selected_index=best["index"], fallback=False, reason=reason, candidates=tuple(rows)
        )
    best = max(rows, key=lambda r: (r["accuracy_percent"], -r["index"]))
    reason = (
        "no result met the focus-class prediction minimum "
        f"({policy.min_predictions}); fell back to overall accuracy"
    )
    return best["index"], SelectionJustification(
        selected_index=best["index"], fallback=True, reason=reason, candidates=tuple(rows)
    )


# ---------------------------------------------------------------------------
# rendering


def report_to_dict(report: EvaluationReport) -> dict:
    """The documented JSON shape of an evaluation report."""
    out = {
        "config_id": report.config_id,
        "k": report.k,
        "pooled": True,
        "accuracy_percent": report.accuracy_percent,
        "classes": [
            {
                "name": s.name,
                "code": s.code,
                "predictions": s.predictions,
                "correct": s.correct,
                "cpq_percent": s.cpq_percent,
            }
            for s in report.classes
        ],
        "confusion": report.confusion.counts.tolist(),
        "orientation": "rows=true",
    }
    if report.fold_accuracies:
        out["fold_accuracies"] = list(report.fold_accuracies)
    return out


def report_from_dict(data: dict) -> EvaluationReport:
    cm = ConfusionMatrix(data["confusion"])
    return report_from_confusion(
        cm,
        config_id=data.get("config_id", ""),
        k=data.get("k", 0),
        fold_accuracies=data.get("fold_accuracies", ()),
    )


def render_confusion(cm: ConfusionMatrix) -> str:
    """Labeled text grid; rows are true classes, columns predictions."""
    names = [c.display_name for c in ALL_CLASSES]
    width = max(max(len(n) for n in names), 6)
    cell = max(max(len(str(v)) for v in cm.counts.ravel()), 5)
    header = " " * (width + 2) + "  ".join(f"{n[:cell]:>{cell}}" for n in names)
    lines = ["rows = true class, columns = predicted class", header]
    for c in ALL_CLASSES:
        row = "  ".join(f"{cm.counts[c.value, j]:>{cell}d}" for j in range(NUM_CLASSES))
        lines.append(f"{names[c.value]:<{width}}  {row}")
    return "\n".join(lines)


def render_report(report: EvaluationReport) -> str:
    lines = [render_confusion(report.confusion), ""]
    lines.append(f"overall accuracy: {report.accuracy_percent:.2f}%  (n={report.confusion.total})")
    for s in report.classes:
        q = "N/A" if s.cpq_percent is None else f"{s.cpq_percent:.2f}%"
        lines.append(
            f"  {s.name:<12} predictions={s.predictions:<5d} correct={s.correct:<5d} quality={q}"
        )
    return "\n".join(lines)
