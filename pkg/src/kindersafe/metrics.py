"""Detection-quality evaluation: confusion counts, Recall, FPR, and sweeps.

All ratios are computed with exact rational arithmetic and only converted to
floats (or 1-decimal percent strings) at presentation time, so golden tests
never drift. Undefined ratios (zero denominators) stay ``None``, never NaN.

A quarantined verdict counts as a positive prediction throughout: a sample
the pipeline could not decide is treated as flagged, consistent with the
removal default.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import UnknownGroundTruthError
from .manifest import ChildPresence, DatasetManifest

if TYPE_CHECKING:
    from .detector import DecisionRecord


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def scaled(self, k: int) -> "ConfusionCounts":
        return ConfusionCounts(tp=self.tp * k, fp=self.fp * k, tn=self.tn * k, fn=self.fn * k)


@dataclass(frozen=True)
class MetricsReport:
    """Derived metrics for one run configuration.

    recall = tp / (tp + fn), fpr = fp / (fp + tn),
    precision = tp / (tp + fp),
    balanced_accuracy = (recall + (1 - fpr)) / 2.
    Each field is an exact Fraction, or None when its denominator is zero.
    """

    counts: ConfusionCounts
    recall: Fraction | None
    fpr: Fraction | None
    precision: Fraction | None
    balanced_accuracy: Fraction | None
    model_name: str = ""
    category: str = ""
    prompt_index: int | None = None

    def as_dict(self) -> dict:
        def f(v: Fraction | None) -> float | None:
            return None if v is None else float(v)

        return {
            "model_name": self.model_name,
            "category": self.category,
            "prompt_index": self.prompt_index,
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "tn": self.counts.tn, "fn": self.counts.fn},
            "recall": f(self.recall),
            "fpr": f(self.fpr),
            "precision": f(self.precision),
            "balanced_accuracy": f(self.balanced_accuracy),
        }


def percent(value: Fraction | None, digits: int = 1) -> str:
    """Table-style percent formatting: ``Fraction(694, 701)`` -> ``'99.0'``."""
    if value is None:
        return "-"
    return f"{float(value) * 100:.{digits}f}"


def confusion(
    records: Iterable["DecisionRecord"],
    truth: DatasetManifest | Mapping[str, ChildPresence],
) -> ConfusionCounts:
    """Count TP/FP/TN/FN for a record set against ground truth.

    Every record's sample must have known ground truth; offenders are
    collected and reported together. Quarantined verdicts count as positive
    predictions.
    """
    truth_map = truth.ground_truth_map() if isinstance(truth, DatasetManifest) else truth
    unknown: list[str] = []
    tp = fp = tn = fn = 0
    for record in records:
        gt = truth_map.get(record.sample_id, ChildPresence.UNKNOWN)
        if gt is ChildPresence.UNKNOWN:
            unknown.append(record.sample_id)
            continue
        predicted_positive = record.predicted_positive()
        if gt is ChildPresence.POSITIVE:
            if predicted_positive:
                tp += 1
            else:
                fn += 1
        else:
            if predicted_positive:
                fp += 1
            else:
                tn += 1
    if unknown:
        raise UnknownGroundTruthError(unknown)
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def metrics_from_counts(
    counts: ConfusionCounts,
    model_name: str = "",
    category: str = "",
    prompt_index: int | None = None,
) -> MetricsReport:
    recall = Fraction(counts.tp, counts.positives) if counts.positives else None
    fpr = Fraction(counts.fp, counts.negatives) if counts.negatives else None
    predicted_pos = counts.tp + counts.fp
    precision = Fraction(counts.tp, predicted_pos) if predicted_pos else None
    balanced = (recall + (1 - fpr)) / 2 if recall is not None and fpr is not None else None
    return MetricsReport(
        counts=counts,
        recall=recall,
        fpr=fpr,
        precision=precision,
        balanced_accuracy=balanced,
        model_name=model_name,
        category=category,
        prompt_index=prompt_index,
    )


def evaluate(
    records: Iterable["DecisionRecord"],
    truth: DatasetManifest | Mapping[str, ChildPresence],
    model_name: str = "",
    category: str = "",
    prompt_index: int | None = None,
) -> MetricsReport:
    return metrics_from_counts(
        confusion(records, truth),
        model_name=model_name,
        category=category,
        prompt_index=prompt_index,
    )


@dataclass(frozen=True)
class SweepTable:
    """Model x prompt comparison grid.

    ``rows`` are (model_name, category) pairs; ``cells`` maps
    (row, prompt_index) to a MetricsReport; ``best_by_prompt`` flags the
    highest-recall row per prompt column (FPR ascending breaks ties).
    """

    rows: tuple[tuple[str, str], ...]
    prompt_indices: tuple[int, ...]
    cells: Mapping[tuple[tuple[str, str], int], MetricsReport]
    best_by_prompt: Mapping[int, tuple[str, str]]

    def to_markdown(self) -> str:
        header = ["Model", "Category"]
        for p in self.prompt_indices:
            header += [f"prompt #{p} Recall (%)", f"prompt #{p} FPR (%)"]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for row in self.rows:
            model, category = row
            cols = [model, category]
            for p in self.prompt_indices:
                report = self.cells.get((row, p))
                if report is None:
                    cols += ["-", "-"]
                    continue
                rec = percent(report.recall)
                if self.best_by_prompt.get(p) == row:
                    rec = f"**{rec}**"
                cols += [rec, percent(report.fpr)]
            lines.append("| " + " | ".join(cols) + " |")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "prompt_indices": list(self.prompt_indices),
            "rows": [
                {
                    "model_name": model,
                    "category": category,
                    "cells": {
                        str(p): self.cells[((model, category), p)].as_dict()
                        for p in self.prompt_indices
                        if ((model, category), p) in self.cells
                    },
                }
                for model, category in self.rows
            ],
            "best_by_prompt": {str(p): list(row) for p, row in self.best_by_prompt.items()},
        }


def sweep_report(reports: Iterable[MetricsReport]) -> SweepTable:
    """Arrange per-run reports into a comparison table.

    Rows are sorted recall-first (best recall across prompts descending, then
    FPR ascending) to keep the detection-priority reading order.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("sweep_report needs at least one run")
    cells: dict[tuple[tuple[str, str], int], MetricsReport] = {}
    prompt_indices: list[int] = []
    row_order: list[tuple[str, str]] = []
    for report in reports:
        row = (report.model_name, report.category)
        p = report.prompt_index if report.prompt_index is not None else 0
        if p not in prompt_indices:
            prompt_indices.append(p)
        if row not in row_order:
            row_order.append(row)
        cells[(row, p)] = report

    def row_sort_key(row: tuple[str, str]):
        recalls = [cells[(row, p)].recall for p in prompt_indices if (row, p) in cells]
        fprs = [cells[(row, p)].fpr for p in prompt_indices if (row, p) in cells]
        best_recall = max((r for r in recalls if r is not None), default=Fraction(-1))
        best_fpr = min((f for f in fprs if f is not None), default=Fraction(2))
        return (-best_recall, best_fpr)

    rows = tuple(sorted(row_order, key=row_sort_key))
    prompt_indices_t = tuple(sorted(prompt_indices))

    best_by_prompt: dict[int, tuple[str, str]] = {}
    for p in prompt_indices_t:
        candidates = [
            (row, cells[(row, p)]) for row in rows if (row, p) in cells and cells[(row, p)].recall is not None
        ]
        if candidates:
            best_row, _ = max(
                candidates,
                key=lambda rc: (rc[1].recall, -(rc[1].fpr if rc[1].fpr is not None else Fraction(2))),
            )
            best_by_prompt[p] = best_row
    return SweepTable(
        rows=rows,
        prompt_indices=prompt_indices_t,
        cells=cells,
        best_by_prompt=best_by_prompt,
    )
