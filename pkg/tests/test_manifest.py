from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from kindersafe.errors import DuplicateIdError, InvalidBoxError, SchemaError, UnknownClassError
from kindersafe.manifest import (
    AnnotationBox,
    ChildPresence,
    ClassHierarchy,
    DatasetManifest,
    LabelLevel,
    Sample,
    hierarchy_subordinates,
    load_manifest,
    load_open_images_csv,
    save_manifest,
)

from .conftest import make_manifest, make_sample


def write_jsonl(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


HEADER = json.dumps({"schema_version": 1, "source_name": "t"})


class TestJsonlLoad:
    def test_two_valid_lines(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [
            HEADER,
            json.dumps({"id": "a", "image_ref": "a.jpg"}),
            json.dumps({"id": "b", "image_ref": "b.jpg", "caption": "hi"}),
        ])
        m = load_manifest(p)
        assert len(m) == 2
        assert m.ids() == ["a", "b"]
        assert m.get("b").caption == "hi"

    def test_missing_id_names_the_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [
            HEADER,
            json.dumps({"id": "a", "image_ref": "a.jpg"}),
            json.dumps({"image_ref": "broken.jpg"}),
        ])
        with pytest.raises(SchemaError) as exc:
            load_manifest(p)
        assert exc.value.line_errors
        assert exc.value.line_errors[0][0] == 3
        assert "id" in exc.value.line_errors[0][1]

    def test_all_bad_lines_collected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [
            HEADER,
            "{not json",
            json.dumps({"id": "a", "image_ref": "a.jpg"}),
            json.dumps({"id": "b"}),
        ])
        with pytest.raises(SchemaError) as exc:
            load_manifest(p)
        assert [n for n, _ in exc.value.line_errors] == [2, 4]

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [
            HEADER,
            json.dumps({"id": "a", "image_ref": "a.jpg"}),
            json.dumps({"id": "a", "image_ref": "other.jpg"}),
        ])
        with pytest.raises(DuplicateIdError):
            load_manifest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "absent.jsonl")

    def test_missing_header(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [json.dumps({"id": "a", "image_ref": "a.jpg"})])
        with pytest.raises(SchemaError):
            load_manifest(p)

    def test_ground_truth_never_invented(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_jsonl(p, [HEADER, json.dumps({"id": "a", "image_ref": "a.jpg"})])
        assert load_manifest(p).get("a").ground_truth is ChildPresence.UNKNOWN


class TestRoundTrip:
    def test_empty_manifest_header_only(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        save_manifest(make_manifest([], source_name="void"), p)
        lines = p.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["schema_version"] == 1
        loaded = load_manifest(p)
        assert len(loaded) == 0
        assert loaded.source_name == "void"

    def test_thousand_sample_round_trip(self, tmp_path):
        samples = [make_sample(f"s{i:04d}", caption=f"caption {i}") for i in range(1000)]
        m = make_manifest(samples)
        p = tmp_path / "m.jsonl"
        save_manifest(m, p)
        assert load_manifest(p) == m

    def test_non_ascii_byte_exact(self, tmp_path):
        m = make_manifest([
            make_sample("pt-1", caption="uma criança na praia", visual_description="menina sorrindo"),
        ])
        p1 = tmp_path / "a.jsonl"
        p2 = tmp_path / "b.jsonl"
        save_manifest(m, p1)
        loaded = load_manifest(p1)
        assert loaded.get("pt-1").caption == "uma criança na praia"
        save_manifest(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_full_fields_round_trip(self, tmp_path):
        from .conftest import box, image_label

        m = make_manifest([
            make_sample(
                "rich",
                ground_truth=ChildPresence.POSITIVE,
                caption="c",
                visual_description="v",
                labels=frozenset({image_label("Boy"), image_label("Person")}),
                boxes=(box("Boy", 0.1, 0.1, 0.5, 0.5, depiction=True, group=True),),
                extra={"origin": "unit-test"},
            )
        ])
        p = tmp_path / "m.jsonl"
        save_manifest(m, p)
        assert load_manifest(p) == m


class TestBoxInvariants:
    def test_valid_box(self):
        b = AnnotationBox("Boy", 0.0, 0.0, 0.5, 0.5)
        assert b.area == pytest.approx(0.25)

    @pytest.mark.parametrize("coords", [
        (0.5, 0.0, 0.5, 1.0),   # x_min == x_max
        (0.0, 0.7, 1.0, 0.2),   # y_min > y_max
        (-0.1, 0.0, 1.0, 1.0),  # below range
        (0.0, 0.0, 1.2, 1.0),   # above range
    ])
    def test_invalid_boxes_rejected(self, coords):
        with pytest.raises(InvalidBoxError):
            AnnotationBox("Boy", *coords)

    @given(
        x0=st.floats(0, 1), y0=st.floats(0, 1),
        x1=st.floats(0, 1), y1=st.floats(0, 1),
    )
    def test_construction_accepts_iff_ordered(self, x0, y0, x1, y1):
        valid = x0 < x1 and y0 < y1
        if valid:
            AnnotationBox("Boy", x0, y0, x1, y1)
        else:
            with pytest.raises(InvalidBoxError):
                AnnotationBox("Boy", x0, y0, x1, y1)


class TestOpenImagesCsv:
    LABELS = (
        "ImageID,LabelName,Confidence\n"
        "img1,Person,1\n"
        "img1,Man,1\n"
        "img2,Person,1\n"
        "img2,Woman,0\n"
        "img3,Person,1\n"
    )
    BOXES = (
        "ImageID,LabelName,XMin,XMax,YMin,YMax,IsDepiction,IsGroupOf\n"
        "img1,Man,0.1,0.9,0.1,0.9,0,0\n"
        "img2,Boy,0.2,0.6,0.2,0.6,1,0\n"
        "img3,Girl,0.3,0.7,0.3,0.7,0,1\n"
    )

    def _write(self, tmp_path):
        (tmp_path / "labels.csv").write_text(self.LABELS, encoding="utf-8")
        (tmp_path / "boxes.csv").write_text(self.BOXES, encoding="utf-8")

    def test_three_row_fixture(self, tmp_path):
        # hand-built fixture: img2's Boy box is marked depiction, img3's Girl box is a group
        self._write(tmp_path)
        m = load_open_images_csv(tmp_path / "labels.csv", tmp_path / "boxes.csv")
        assert len(m) == 3
        img2 = m.get("img2")
        assert len(img2.boxes) == 1
        assert img2.boxes[0].class_name == "Boy"
        assert img2.boxes[0].is_depiction is True
        img3 = m.get("img3")
        assert img3.boxes[0].is_group is True
        # confidence-0 labels are omitted
        assert "Woman" not in {a.class_name for a in img2.source_labels}
        # detection assertions are synthesized from boxes
        levels = {(a.class_name, a.level) for a in img2.source_labels}
        assert ("Boy", LabelLevel.DETECTION) in levels

    def test_ground_truth_stays_unknown(self, tmp_path):
        self._write(tmp_path)
        m = load_open_images_csv(tmp_path / "labels.csv", tmp_path / "boxes.csv")
        assert all(s.ground_truth is ChildPresence.UNKNOWN for s in m)

    def test_unknown_classes_flagged_not_dropped(self, tmp_path):
        (tmp_path / "labels.csv").write_text(
            "ImageID,LabelName,Confidence\nimg1,Unicorn,1\n", encoding="utf-8"
        )
        (tmp_path / "boxes.csv").write_text(
            "ImageID,LabelName,XMin,XMax,YMin,YMax,IsDepiction,IsGroupOf\n", encoding="utf-8"
        )
        m = load_open_images_csv(
            tmp_path / "labels.csv", tmp_path / "boxes.csv", hierarchy=ClassHierarchy.default()
        )
        s = m.get("img1")
        assert {a.class_name for a in s.source_labels} == {"Unicorn"}
        assert s.extra["unknown_classes"] == ["Unicorn"]

    def test_malformed_box_row_collected(self, tmp_path):
        (tmp_path / "labels.csv").write_text("ImageID,LabelName,Confidence\n", encoding="utf-8")
        (tmp_path / "boxes.csv").write_text(
            "ImageID,LabelName,XMin,XMax,YMin,YMax,IsDepiction,IsGroupOf\n"
            "img1,Boy,0.9,0.1,0.1,0.9,0,0\n",
            encoding="utf-8",
        )
        with pytest.raises(SchemaError) as exc:
            load_open_images_csv(tmp_path / "labels.csv", tmp_path / "boxes.csv")
        assert exc.value.line_errors[0][0] == 2

    def test_directory_form(self, tmp_path):
        self._write(tmp_path)
        m = load_manifest(tmp_path, format="openimages-csv")
        assert len(m) == 3

    def test_convert_round_trip(self, tmp_path):
        self._write(tmp_path)
        m = load_open_images_csv(tmp_path / "labels.csv", tmp_path / "boxes.csv")
        out = tmp_path / "converted.jsonl"
        save_manifest(m, out)
        assert load_manifest(out) == m


class TestHierarchy:
    def test_person_descendants(self):
        h = ClassHierarchy.default()
        assert hierarchy_subordinates("Person", h) == {"Man", "Woman", "Boy", "Girl"}

    def test_leaf_has_no_descendants(self):
        assert hierarchy_subordinates("Boy", ClassHierarchy.default()) == set()

    def test_unknown_class(self):
        with pytest.raises(UnknownClassError):
            hierarchy_subordinates("Robot", ClassHierarchy.default())

    def test_nested_tree(self):
        h = ClassHierarchy({
            "name": "Entity",
            "children": [
                {"name": "Person", "children": [{"name": "Boy", "children": [{"name": "Toddler"}]}]},
            ],
        })
        assert h.subordinates("Entity") == {"Person", "Boy", "Toddler"}
        assert h.subordinates("Person") == {"Boy", "Toddler"}


class TestManifestInvariants:
    def test_duplicate_ids_rejected_at_construction(self):
        with pytest.raises(DuplicateIdError):
            make_manifest([make_sample("x"), make_sample("x")])

    def test_empty_id_rejected(self):
        with pytest.raises(ValueError):
            Sample(id="", image_ref="a.jpg")

    def test_empty_image_ref_rejected(self):
        with pytest.raises(ValueError):
            Sample(id="a", image_ref="")

    def test_digest_tracks_content_and_order(self):
        m1 = make_manifest([make_sample("a"), make_sample("b")])
        m2 = make_manifest([make_sample("b"), make_sample("a")])
        m3 = make_manifest([make_sample("a"), make_sample("b")])
        assert m1.digest() == m3.digest()
        assert m1.digest() != m2.digest()
