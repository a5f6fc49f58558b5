from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from kindersafe.manifest import AnnotationBox, ChildPresence, DatasetManifest, LabelAssertion, LabelLevel, Sample


def make_sample(
    sample_id: str,
    ground_truth: ChildPresence = ChildPresence.UNKNOWN,
    caption: str | None = None,
    visual_description: str | None = None,
    labels: frozenset[LabelAssertion] = frozenset(),
    boxes: tuple[AnnotationBox, ...] = (),
    image_ref: str | None = None,
    extra: dict | None = None,
) -> Sample:
    return Sample(
        id=sample_id,
        image_ref=image_ref or f"{sample_id}.jpg",
        caption=caption,
        visual_description=visual_description,
        source_labels=labels,
        boxes=boxes,
        ground_truth=ground_truth,
        extra=extra or {},
    )


def make_manifest(samples, source_name="test") -> DatasetManifest:
    return DatasetManifest(samples=tuple(samples), source_name=source_name)


def truth_manifest(n_pos: int, n_neg: int, source_name="synthetic") -> DatasetManifest:
    """Standard fixture: ids pos-000000.., neg-000000.. with ground truth set."""
    samples = [
        make_sample(f"pos-{i:06d}", ChildPresence.POSITIVE) for i in range(n_pos)
    ] + [
        make_sample(f"neg-{i:06d}", ChildPresence.NEGATIVE) for i in range(n_neg)
    ]
    return make_manifest(samples, source_name=source_name)


def png_bytes(seed: int, size: int = 64, invert_corner: int = 0) -> bytes:
    """Deterministic synthetic image; invert_corner flips a small patch."""
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    if invert_corner:
        arr = arr.copy()
        arr[:invert_corner, :invert_corner] = 255 - arr[:invert_corner, :invert_corner]
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, "PNG")
    return buf.getvalue()


@pytest.fixture
def image_dir(tmp_path):
    """Directory with three images: a, a copy of a, and an unrelated b."""
    root = tmp_path / "images"
    root.mkdir()
    (root / "a.png").write_bytes(png_bytes(1))
    (root / "a_copy.png").write_bytes(png_bytes(1))
    (root / "b.png").write_bytes(png_bytes(2))
    return root


def box(class_name: str, x0=0.0, y0=0.0, x1=1.0, y1=1.0, depiction=False, group=False) -> AnnotationBox:
    return AnnotationBox(
        class_name=class_name,
        x_min=x0, y_min=y0, x_max=x1, y_max=y1,
        is_depiction=depiction, is_group=group,
    )


def image_label(class_name: str, depiction=False) -> LabelAssertion:
    return LabelAssertion(class_name=class_name, level=LabelLevel.IMAGE, is_depiction=depiction)
