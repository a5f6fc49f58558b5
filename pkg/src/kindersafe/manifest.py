"""Canonical dataset model and ingestion.

Two source shapes are supported: JSONL manifests (one sample per line,
preceded by a header record carrying ``schema_version``) and Open-Images-style
CSV pairs (an image-level label file plus a detection box file, joined on
image id). Loaded manifests are immutable and safe to share across workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

from .errors import DuplicateIdError, InvalidBoxError, SchemaError, UnknownClassError

SCHEMA_VERSION = 1

JSONL_FORMAT = "jsonl"
OPENIMAGES_FORMAT = "openimages-csv"

#: Conventional file names when an Open Images source is given as a directory.
OPENIMAGES_LABELS_FILENAME = "labels.csv"
OPENIMAGES_BOXES_FILENAME = "boxes.csv"
OPENIMAGES_HIERARCHY_FILENAME = "hierarchy.json"


class ChildPresence(str, Enum):
    """Ground-truth presence of a child in a sample."""

    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNKNOWN = "unknown"


class LabelLevel(str, Enum):
    IMAGE = "image"
    DETECTION = "detection"


@dataclass(frozen=True)
class LabelAssertion:
    """One source annotation asserting a class is present in an image."""

    class_name: str
    level: LabelLevel = LabelLevel.IMAGE
    is_depiction: bool = False

    def to_dict(self) -> dict:
        return {
            "class_name": self.class_name,
            "level": self.level.value,
            "is_depiction": self.is_depiction,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelAssertion":
        return cls(
            class_name=str(d["class_name"]),
            level=LabelLevel(d.get("level", "image")),
            is_depiction=bool(d.get("is_depiction", False)),
        )


@dataclass(frozen=True)
class AnnotationBox:
    """A detection box with normalized corner coordinates.

    Coordinates live in [0, 1] with strict ordering; violating boxes are
    rejected at construction so downstream geometry never sees them.
    """

    class_name: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    is_depiction: bool = False
    is_group: bool = False

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidBoxError(f"{name}={v} outside [0, 1]")
        if not self.x_min < self.x_max:
            raise InvalidBoxError(f"x_min={self.x_min} must be < x_max={self.x_max}")
        if not self.y_min < self.y_max:
            raise InvalidBoxError(f"y_min={self.y_min} must be < y_max={self.y_max}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def to_dict(self) -> dict:
        return {
            "class_name": self.class_name,
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "is_depiction": self.is_depiction,
            "is_group": self.is_group,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AnnotationBox":
        return cls(
            class_name=str(d["class_name"]),
            x_min=float(d["x_min"]),
            y_min=float(d["y_min"]),
            x_max=float(d["x_max"]),
            y_max=float(d["y_max"]),
            is_depiction=bool(d.get("is_depiction", False)),
            is_group=bool(d.get("is_group", False)),
        )


@dataclass(frozen=True)
class Sample:
    """One dataset record: an image reference plus its annotations.

    ``ground_truth`` defaults to UNKNOWN and is only ever set by curation or
    an explicit manifest field; ingestion never invents it. ``extra`` holds
    source metadata fields the schema does not model.
    """

    id: str
    image_ref: str
    caption: str | None = None
    visual_description: str | None = None
    source_labels: frozenset[LabelAssertion] = frozenset()
    boxes: tuple[AnnotationBox, ...] = ()
    ground_truth: ChildPresence = ChildPresence.UNKNOWN
    extra: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("sample id must be nonempty")
        if not self.image_ref:
            raise ValueError(f"sample {self.id!r}: image_ref must be nonempty")

    def with_ground_truth(self, truth: ChildPresence) -> "Sample":
        return replace(self, ground_truth=truth)

    def label_classes(self) -> set[str]:
        """All class names asserted anywhere on this sample (labels or boxes)."""
        names = {a.class_name for a in self.source_labels}
        names.update(b.class_name for b in self.boxes)
        return names

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "image_ref": self.image_ref}
        if self.caption is not None:
            d["caption"] = self.caption
        if self.visual_description is not None:
            d["visual_description"] = self.visual_description
        if self.source_labels:
            d["labels"] = sorted(
                (a.to_dict() for a in self.source_labels),
                key=lambda a: (a["class_name"], a["level"], a["is_depiction"]),
            )
        if self.boxes:
            d["boxes"] = [b.to_dict() for b in self.boxes]
        if self.ground_truth is not ChildPresence.UNKNOWN:
            d["ground_truth"] = self.ground_truth.value
        if self.extra:
            d["extra"] = dict(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Sample":
        if "id" not in d:
            raise ValueError("missing required field 'id'")
        if "image_ref" not in d:
            raise ValueError("missing required field 'image_ref'")
        return cls(
            id=str(d["id"]),
            image_ref=str(d["image_ref"]),
            caption=d.get("caption"),
            visual_description=d.get("visual_description"),
            source_labels=frozenset(LabelAssertion.from_dict(a) for a in d.get("labels", [])),
            boxes=tuple(AnnotationBox.from_dict(b) for b in d.get("boxes", [])),
            ground_truth=ChildPresence(d.get("ground_truth", "unknown")),
            extra=dict(d.get("extra", {})),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered, id-unique collection of samples.

    Immutable after construction; order is stable across load/save round
    trips.
    """

    samples: tuple[Sample, ...]
    source_name: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                raise DuplicateIdError(s.id)
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def get(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def by_id(self) -> dict[str, Sample]:
        return {s.id: s for s in self.samples}

    def ground_truth_map(self) -> dict[str, ChildPresence]:
        return {s.id: s.ground_truth for s in self.samples}

    def restrict(self, ids: set[str], source_name: str | None = None) -> "DatasetManifest":
        """Sub-manifest keeping only ``ids``, in the original order."""
        return DatasetManifest(
            samples=tuple(s for s in self.samples if s.id in ids),
            source_name=source_name if source_name is not None else self.source_name,
            schema_version=self.schema_version,
        )

    def digest(self) -> str:
        """SHA-256 over the canonical serialization; identifies content + order."""
        h = hashlib.sha256()
        h.update(_header_line(self).encode("utf-8"))
        for s in self.samples:
            h.update(_sample_line(s).encode("utf-8"))
        return h.hexdigest()


def _header_line(manifest: DatasetManifest) -> str:
    header = {"schema_version": manifest.schema_version, "source_name": manifest.source_name}
    return json.dumps(header, ensure_ascii=False, sort_keys=True) + "\n"


def _sample_line(sample: Sample) -> str:
    return json.dumps(sample.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as UTF-8 JSONL: one header line, then one sample per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header_line(manifest))
        for s in manifest.samples:
            fh.write(_sample_line(s))


def load_manifest(path: str | Path, format: str = JSONL_FORMAT) -> DatasetManifest:
    """Load a manifest, materializing every record.

    Malformed lines are all collected and reported in a single
    :class:`SchemaError` (line number plus reason each); nothing is silently
    dropped. Raises :class:`FileNotFoundError` when the source is missing and
    :class:`DuplicateIdError` on id collisions.
    """
    path = Path(path)
    if format == JSONL_FORMAT:
        return _load_jsonl(path)
    if format == OPENIMAGES_FORMAT:
        if not path.is_dir():
            raise SchemaError(
                f"{path}: openimages-csv source must be a directory containing "
                f"{OPENIMAGES_LABELS_FILENAME} and {OPENIMAGES_BOXES_FILENAME}"
            )
        hierarchy_path = path / OPENIMAGES_HIERARCHY_FILENAME
        hierarchy = ClassHierarchy.from_json_file(hierarchy_path) if hierarchy_path.exists() else None
        return load_open_images_csv(
            path / OPENIMAGES_LABELS_FILENAME,
            path / OPENIMAGES_BOXES_FILENAME,
            hierarchy=hierarchy,
            source_name=path.name,
        )
    raise ValueError(f"unknown manifest format: {format!r}")


def _load_jsonl(path: Path) -> DatasetManifest:
    if not path.exists():
        raise FileNotFoundError(path)
    samples: list[Sample] = []
    errors: list[tuple[int, str]] = []
    seen: set[str] = set()
    header: dict | None = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append((lineno, f"invalid JSON ({exc.msg})"))
                continue
            if header is None:
                if not isinstance(record, dict) or "schema_version" not in record:
                    raise SchemaError(f"{path}: first line must be a header with 'schema_version'")
                header = record
                continue
            try:
                sample = Sample.from_dict(record)
            except (ValueError, InvalidBoxError, KeyError, TypeError) as exc:
                errors.append((lineno, str(exc)))
                continue
            if sample.id in seen:
                raise DuplicateIdError(sample.id)
            seen.add(sample.id)
            samples.append(sample)
    if header is None:
        raise SchemaError(f"{path}: empty manifest file (header line required)")
    if errors:
        raise SchemaError(f"{path}: {len(errors)} malformed line(s)", errors)
    return DatasetManifest(
        samples=tuple(samples),
        source_name=str(header.get("source_name", "")),
        schema_version=int(header["schema_version"]),
    )


# --- Open Images CSV ingestion -------------------------------------------

_TRUTHY = {"1", "true", "yes"}


def _csv_flag(value: str | None) -> bool:
    return (value or "").strip().lower() in _TRUTHY


def load_open_images_csv(
    labels_path: str | Path,
    boxes_path: str | Path,
    hierarchy: "ClassHierarchy | None" = None,
    source_name: str = "open-images",
    image_root: str = "",
) -> DatasetManifest:
    """Join an image-level label CSV and a detection box CSV into a manifest.

    Label rows need columns ImageID, LabelName, Confidence (only confidence
    > 0 rows are kept: zero means human-verified absent). Box rows need
    ImageID, LabelName, XMin, XMax, YMin, YMax, IsDepiction, IsGroupOf.
    Classes absent from ``hierarchy`` are retained verbatim and flagged under
    ``extra["unknown_classes"]`` so audits can see them. Ground truth is never
    set here.
    """
    labels_path = Path(labels_path)
    boxes_path = Path(boxes_path)
    for p in (labels_path, boxes_path):
        if not p.exists():
            raise FileNotFoundError(p)

    errors: list[tuple[int, str]] = []
    labels_by_image: dict[str, set[LabelAssertion]] = {}
    boxes_by_image: dict[str, list[AnnotationBox]] = {}
    order: list[str] = []
    known = set(hierarchy.class_names()) if hierarchy is not None else None
    unknown_by_image: dict[str, set[str]] = {}

    def note_image(image_id: str) -> None:
        if image_id not in labels_by_image and image_id not in boxes_by_image:
            order.append(image_id)

    with labels_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, labels_path, ["ImageID", "LabelName", "Confidence"])
        for lineno, row in enumerate(reader, start=2):
            image_id = (row.get("ImageID") or "").strip()
            label = (row.get("LabelName") or "").strip()
            if not image_id or not label:
                errors.append((lineno, f"{labels_path.name}: missing ImageID or LabelName"))
                continue
            try:
                confidence = float(row.get("Confidence") or 0)
            except ValueError:
                errors.append((lineno, f"{labels_path.name}: bad Confidence {row.get('Confidence')!r}"))
                continue
            if confidence <= 0:
                continue
            note_image(image_id)
            labels_by_image.setdefault(image_id, set()).add(
                LabelAssertion(class_name=label, level=LabelLevel.IMAGE)
            )
            if known is not None and label not in known:
                unknown_by_image.setdefault(image_id, set()).add(label)

    with boxes_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(
            reader, boxes_path,
            ["ImageID", "LabelName", "XMin", "XMax", "YMin", "YMax", "IsDepiction", "IsGroupOf"],
        )
        for lineno, row in enumerate(reader, start=2):
            image_id = (row.get("ImageID") or "").strip()
            label = (row.get("LabelName") or "").strip()
            if not image_id or not label:
                errors.append((lineno, f"{boxes_path.name}: missing ImageID or LabelName"))
                continue
            try:
                box = AnnotationBox(
                    class_name=label,
                    x_min=float(row["XMin"]),
                    y_min=float(row["YMin"]),
                    x_max=float(row["XMax"]),
                    y_max=float(row["YMax"]),
                    is_depiction=_csv_flag(row.get("IsDepiction")),
                    is_group=_csv_flag(row.get("IsGroupOf")),
                )
            except (InvalidBoxError, ValueError, KeyError) as exc:
                errors.append((lineno, f"{boxes_path.name}: {exc}"))
                continue
            note_image(image_id)
            boxes_by_image.setdefault(image_id, []).append(box)
            labels_by_image.setdefault(image_id, set()).add(
                LabelAssertion(class_name=label, level=LabelLevel.DETECTION, is_depiction=box.is_depiction)
            )
            if known is not None and label not in known:
                unknown_by_image.setdefault(image_id, set()).add(label)

    if errors:
        raise SchemaError(f"{labels_path.parent}: {len(errors)} malformed CSV row(s)", errors)

    samples = []
    for image_id in order:
        extra: dict = {}
        if image_id in unknown_by_image:
            extra["unknown_classes"] = sorted(unknown_by_image[image_id])
        ref = f"{image_id}.jpg"
        if image_root:
            ref = f"{image_root.rstrip('/')}/{ref}"
        samples.append(
            Sample(
                id=image_id,
                image_ref=ref,
                source_labels=frozenset(labels_by_image.get(image_id, set())),
                boxes=tuple(boxes_by_image.get(image_id, [])),
                extra=extra,
            )
        )
    return DatasetManifest(samples=tuple(samples), source_name=source_name)


def _require_columns(reader: csv.DictReader, path: Path, required: list[str]) -> None:
    have = set(reader.fieldnames or [])
    missing = [c for c in required if c not in have]
    if missing:
        raise SchemaError(f"{path}: missing CSV column(s): {', '.join(missing)}")


# --- class hierarchy -------------------------------------------------------

class ClassHierarchy:
    """Class tree loaded from a JSON document of nested {name, children} nodes."""

    def __init__(self, root: Mapping):
        self._children: dict[str, list[str]] = {}
        self._walk(root)

    def _walk(self, node: Mapping) -> None:
        name = node["name"]
        kids = node.get("children", [])
        self._children[name] = [k["name"] for k in kids]
        for k in kids:
            self._walk(k)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ClassHierarchy":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    @classmethod
    def default(cls) -> "ClassHierarchy":
        """The person-class tree shipped with the package."""
        from importlib import resources

        data = resources.files("kindersafe.data").joinpath("openimages_hierarchy.json").read_text("utf-8")
        return cls(json.loads(data))

    def class_names(self) -> set[str]:
        return set(self._children)

    def subordinates(self, class_name: str) -> set[str]:
        """All strict descendants of ``class_name``."""
        if class_name not in self._children:
            raise UnknownClassError(class_name)
        out: set[str] = set()
        stack = list(self._children[class_name])
        while stack:
            name = stack.pop()
            out.add(name)
            stack.extend(self._children.get(name, []))
        return out


def hierarchy_subordinates(class_name: str, hierarchy: ClassHierarchy) -> set[str]:
    """All classes below ``class_name`` in the tree (e.g. Person covers Boy, Girl, Man, Woman)."""
    return hierarchy.subordinates(class_name)
