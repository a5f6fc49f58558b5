"""Annotation-consistency audits over box-annotated manifests.

Four advisory checks: the same individual boxed under both a child and an
adult class (IoU pairing), samples the detector flagged that carry no child
label at all, depiction-marked child boxes leaking into subsets built to
exclude them, and child labels contradicted by a negative machine verdict.
Findings never mutate the manifest; a human decides what to do with them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from .manifest import AnnotationBox, DatasetManifest, Sample

if TYPE_CHECKING:
    from .detector import DecisionRecord

DEFAULT_CHILD_CLASSES = frozenset({"Boy", "Girl"})
DEFAULT_ADULT_CLASSES = frozenset({"Man", "Woman"})


class AuditKind(str, Enum):
    DOUBLE_ANNOTATION = "double_annotation"
    MISSING_CHILD_LABEL_CANDIDATE = "missing_child_label_candidate"
    DEPICTION_LEAK = "depiction_leak"
    MISLABELED_ADULT_CHILD_CONFLICT = "mislabeled_adult_child_conflict"


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


@dataclass(frozen=True)
class AuditFinding:
    kind: AuditKind
    sample_id: str
    evidence: Mapping
    severity: Severity = Severity.WARNING

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("finding evidence must be nonempty")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sample_id": self.sample_id,
            "severity": self.severity.value,
            "evidence": dict(self.evidence),
        }


@dataclass(frozen=True)
class AuditConfig:
    iou_threshold: float = 0.5
    child_classes: frozenset[str] = DEFAULT_CHILD_CLASSES
    adult_classes: frozenset[str] = DEFAULT_ADULT_CLASSES

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.child_classes & self.adult_classes:
            raise ValueError("child and adult class sets must be disjoint")


def iou(a: AnnotationBox, b: AnnotationBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix_min = max(a.x_min, b.x_min)
    iy_min = max(a.y_min, b.y_min)
    ix_max = min(a.x_max, b.x_max)
    iy_max = min(a.y_max, b.y_max)
    if ix_min >= ix_max or iy_min >= iy_max:
        return 0.0
    intersection = (ix_max - ix_min) * (iy_max - iy_min)
    union = a.area + b.area - intersection
    return intersection / union


def find_double_annotations(sample: Sample, config: AuditConfig | None = None) -> list[AuditFinding]:
    """One finding per overlapping (child box, adult box) pair.

    Overlap at or above the IoU threshold stands in for "same individual".
    Group boxes are skipped: crowds overlap everything. A Girl/Woman pair is
    critical; that conflict direction is where mislabeling concentrates.
    """
    config = config or AuditConfig()
    findings: list[AuditFinding] = []
    child_boxes = [b for b in sample.boxes if b.class_name in config.child_classes and not b.is_group]
    adult_boxes = [b for b in sample.boxes if b.class_name in config.adult_classes and not b.is_group]
    for cb in child_boxes:
        for ab in adult_boxes:
            overlap = iou(cb, ab)
            if overlap >= config.iou_threshold:
                critical = {cb.class_name, ab.class_name} == {"Girl", "Woman"}
                findings.append(
                    AuditFinding(
                        kind=AuditKind.DOUBLE_ANNOTATION,
                        sample_id=sample.id,
                        severity=Severity.CRITICAL if critical else Severity.WARNING,
                        evidence={
                            "child_box": cb.to_dict(),
                            "adult_box": ab.to_dict(),
                            "iou": overlap,
                        },
                    )
                )
    return findings


def find_missing_child_labels(
    sample: Sample, decision: "DecisionRecord", config: AuditConfig | None = None
) -> AuditFinding | None:
    """Positive machine verdict but no child class anywhere in the annotations.

    A candidate for human review only; the auditor never adds labels itself.
    """
    from .detector import Verdict

    config = config or AuditConfig()
    if decision.sample_id != sample.id:
        raise ValueError(f"decision {decision.sample_id!r} does not belong to sample {sample.id!r}")
    if decision.verdict is not Verdict.POSITIVE:
        return None
    classes = sample.label_classes()
    if classes & config.child_classes:
        return None
    return AuditFinding(
        kind=AuditKind.MISSING_CHILD_LABEL_CANDIDATE,
        sample_id=sample.id,
        severity=Severity.WARNING,
        evidence={"verdict": decision.verdict.value, "label_classes": sorted(classes)},
    )


def find_depiction_leaks(sample: Sample, config: AuditConfig | None = None) -> AuditFinding | None:
    """Child-class boxes marked as depictions inside a subset meant to exclude them."""
    config = config or AuditConfig()
    leaks = [b for b in sample.boxes if b.class_name in config.child_classes and b.is_depiction]
    if not leaks:
        return None
    return AuditFinding(
        kind=AuditKind.DEPICTION_LEAK,
        sample_id=sample.id,
        severity=Severity.WARNING,
        evidence={"boxes": [b.to_dict() for b in leaks]},
    )


def find_label_verdict_conflicts(
    sample: Sample, decision: "DecisionRecord", config: AuditConfig | None = None
) -> AuditFinding | None:
    """Child label present but the model saw no child: possible adult mislabeled as child."""
    from .detector import Verdict

    config = config or AuditConfig()
    if decision.sample_id != sample.id:
        raise ValueError(f"decision {decision.sample_id!r} does not belong to sample {sample.id!r}")
    if decision.verdict is not Verdict.NEGATIVE:
        return None
    child_classes = sample.label_classes() & config.child_classes
    if not child_classes:
        return None
    return AuditFinding(
        kind=AuditKind.MISLABELED_ADULT_CHILD_CONFLICT,
        sample_id=sample.id,
        severity=Severity.WARNING,
        evidence={"verdict": decision.verdict.value, "child_classes": sorted(child_classes)},
    )


@dataclass
class AuditReport:
    findings: list[AuditFinding] = field(default_factory=list)

    def by_kind(self, kind: AuditKind) -> list[AuditFinding]:
        return [f for f in self.findings if f.kind is kind]

    def save_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for finding in self.findings:
                fh.write(json.dumps(finding.to_dict(), ensure_ascii=False) + "\n")


def audit_manifest(
    manifest: DatasetManifest,
    decisions: Mapping[str, "DecisionRecord"] | Iterable["DecisionRecord"] | None = None,
    config: AuditConfig | None = None,
) -> AuditReport:
    """Run every applicable check over a manifest.

    Verdict-dependent checks are skipped for samples without a decision
    record. The input manifest is never modified.
    """
    config = config or AuditConfig()
    if decisions is not None and not isinstance(decisions, Mapping):
        decisions = {d.sample_id: d for d in decisions}
    report = AuditReport()
    for sample in manifest:
        report.findings.extend(find_double_annotations(sample, config))
        leak = find_depiction_leaks(sample, config)
        if leak:
            report.findings.append(leak)
        if decisions and sample.id in decisions:
            decision = decisions[sample.id]
            missing = find_missing_child_labels(sample, decision, config)
            if missing:
                report.findings.append(missing)
            conflict = find_label_verdict_conflicts(sample, decision, config)
            if conflict:
                report.findings.append(conflict)
    return report
