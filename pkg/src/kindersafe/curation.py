"""Benchmark-construction samplers.

Keyword-stratified sampling picks per-category subsets from caption text;
balanced sampling builds a half-child half-adult subset from detection
labels. Both draw without replacement using keyed-hash ranking (BLAKE2b over
seed, namespace, and sample id): the selected id set depends only on the
seed and the eligible pool, never on input order, platform, or interpreter
version. The review-batch exporter pages flagged samples into a queue file
for human adjudication.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping

from .errors import InsufficientPoolError
from .manifest import ChildPresence, DatasetManifest, Sample

if TYPE_CHECKING:
    from .auditor import AuditFinding
    from .detector import DecisionRecord

logger = logging.getLogger(__name__)

DEFAULT_CHILD_CLASSES = frozenset({"Boy", "Girl"})
DEFAULT_ADULT_CLASSES = frozenset({"Man", "Woman"})


@dataclass
class KeywordPlan:
    """Per-category keyword lists; declaration order resolves overlaps."""

    categories: dict[str, list[str]]
    per_category: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.per_category < 1:
            raise ValueError("per_category must be >= 1")
        for name, keywords in self.categories.items():
            if not keywords:
                raise ValueError(f"category {name!r} has an empty keyword list")

    @classmethod
    def from_file(cls, path: str | Path, seed: int | None = None) -> "KeywordPlan":
        with Path(path).open("r", encoding="utf-8") as fh:
            raw = json.load(fh)
        plan = cls(
            categories={str(k): [str(w) for w in v] for k, v in raw["categories"].items()},
            per_category=int(raw.get("per_category", 500)),
            seed=int(raw.get("seed", 0)),
        )
        if seed is not None:
            plan.seed = seed
        return plan

    @classmethod
    def default(cls, seed: int = 0) -> "KeywordPlan":
        """The editable Portuguese keyword plan shipped with the package."""
        from importlib import resources

        raw = json.loads(resources.files("kindersafe.data").joinpath("keyword_plan.json").read_text("utf-8"))
        return cls(
            categories={str(k): [str(w) for w in v] for k, v in raw["categories"].items()},
            per_category=int(raw.get("per_category", 500)),
            seed=seed,
        )


@dataclass
class BalancedPlan:
    positive_count: int = 50_000
    negative_count: int = 50_000
    seed: int = 0
    child_classes: frozenset[str] = DEFAULT_CHILD_CLASSES
    adult_classes: frozenset[str] = DEFAULT_ADULT_CLASSES

    def __post_init__(self):
        if self.positive_count < 1 or self.negative_count < 1:
            raise ValueError("counts must be >= 1")


def _norm_text(text: str) -> str:
    return unicodedata.normalize("NFKC", text).casefold()


def _rank(seed: int, namespace: str, sample_id: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{namespace}:{sample_id}".encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "big")


def _draw(pool: Iterable[str], n: int, seed: int, namespace: str) -> set[str]:
    """Without-replacement draw: the n smallest keyed-hash ranks win."""
    ranked = sorted(pool, key=lambda sid: (_rank(seed, namespace, sid), sid))
    return set(ranked[:n])


def keyword_sample(manifest: DatasetManifest, plan: KeywordPlan) -> DatasetManifest:
    """Per category, sample up to ``per_category`` caption-matching samples.

    Matching is case-insensitive substring search over caption plus visual
    description after NFKC normalization. Captionless samples are ineligible.
    A sample matching several categories belongs to the first one declared.
    An empty category logs a warning and contributes nothing.
    """
    pools: dict[str, list[str]] = {name: [] for name in plan.categories}
    normalized_keywords = {
        name: [_norm_text(k) for k in keywords] for name, keywords in plan.categories.items()
    }
    for sample in manifest:
        if not sample.caption:
            continue
        text = _norm_text(sample.caption + " " + (sample.visual_description or ""))
        for name in plan.categories:
            if any(k in text for k in normalized_keywords[name]):
                pools[name].append(sample.id)
                break

    selected: set[str] = set()
    for name in plan.categories:
        pool = pools[name]
        if not pool:
            logger.warning("keyword category %r matched no eligible samples", name)
            continue
        if len(pool) <= plan.per_category:
            selected.update(pool)
        else:
            selected.update(_draw(pool, plan.per_category, plan.seed, f"kw:{name}"))
    return manifest.restrict(selected, source_name=f"{manifest.source_name}:keywords")


def balanced_sample(manifest: DatasetManifest, plan: BalancedPlan) -> DatasetManifest:
    """Draw a child/adult balanced subset from detection labels.

    Positives carry a non-depiction child-class detection box. Negatives have
    a man or woman asserted and no child class anywhere, depiction or not.
    Ground truth is set on the output accordingly. Raises
    :class:`InsufficientPoolError` with the available counts when either pool
    is too small.
    """
    pos_pool: list[str] = []
    neg_pool: list[str] = []
    for sample in manifest:
        classes = sample.label_classes()
        has_real_child_box = any(
            b.class_name in plan.child_classes and not b.is_depiction for b in sample.boxes
        )
        if has_real_child_box:
            pos_pool.append(sample.id)
        elif not (classes & plan.child_classes) and (classes & plan.adult_classes):
            neg_pool.append(sample.id)

    if len(pos_pool) < plan.positive_count or len(neg_pool) < plan.negative_count:
        raise InsufficientPoolError(
            plan.positive_count, len(pos_pool), plan.negative_count, len(neg_pool)
        )

    pos = _draw(pos_pool, plan.positive_count, plan.seed, "balanced:pos")
    neg = _draw(neg_pool, plan.negative_count, plan.seed, "balanced:neg")

    samples = []
    for sample in manifest:
        if sample.id in pos:
            samples.append(sample.with_ground_truth(ChildPresence.POSITIVE))
        elif sample.id in neg:
            samples.append(sample.with_ground_truth(ChildPresence.NEGATIVE))
    return DatasetManifest(
        samples=tuple(samples),
        source_name=f"{manifest.source_name}:balanced",
        schema_version=manifest.schema_version,
    )


# --- review queue export ---------------------------------------------------

@dataclass
class ReviewQueue:
    """Paged queue of samples awaiting human adjudication.

    Items deliberately exclude ground truth so reviewers stay blind to it.
    """

    items: list[dict] = field(default_factory=list)
    batch_size: int = 100

    @property
    def page_count(self) -> int:
        return math.ceil(len(self.items) / self.batch_size) if self.items else 0

    def page(self, n: int) -> list[dict]:
        start = n * self.batch_size
        return self.items[start:start + self.batch_size]

    def save(self, path: str | Path) -> None:
        payload = {"batch_size": self.batch_size, "items": self.items}
        Path(path).write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "ReviewQueue":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(items=list(raw["items"]), batch_size=int(raw["batch_size"]))


def export_review_batch(
    manifest: DatasetManifest,
    batch_size: int,
    decisions: Mapping[str, "DecisionRecord"] | None = None,
    findings: Iterable["AuditFinding"] | None = None,
) -> ReviewQueue:
    """Build the adjudication queue with the disambiguation aids attached.

    Captions and visual descriptions ride along because they are what lets a
    reviewer resolve ambiguous cases; machine verdicts and audit findings are
    attached when available.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    findings_by_id: dict[str, list[dict]] = {}
    for finding in findings or []:
        findings_by_id.setdefault(finding.sample_id, []).append(finding.to_dict())
    items = []
    for sample in manifest:
        decision = decisions.get(sample.id) if decisions else None
        items.append(
            {
                "sample_id": sample.id,
                "image_ref": sample.image_ref,
                "caption": sample.caption,
                "visual_description": sample.visual_description,
                "machine_verdict": decision.verdict.value if decision else None,
                "parse_path": decision.parse_path.value if decision and decision.parse_path else None,
                "findings": findings_by_id.get(sample.id, []),
            }
        )
    return ReviewQueue(items=items, batch_size=batch_size)
