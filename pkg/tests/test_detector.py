from __future__ import annotations

import json

import pytest

from kindersafe.backend import MockBackendConfig, MockVqaBackend, VqaAnswer
from kindersafe.detector import (
    DECISIONS_FILENAME,
    DecisionRecord,
    RemovalManifest,
    RunConfig,
    Verdict,
    build_removal_manifest,
    classify_manifest,
    compute_run_id,
    read_decision_log,
)
from kindersafe.errors import BackendDownError, DanglingOverrideError, RunLockedError, TransportError
from kindersafe.manifest import ChildPresence
from kindersafe.review import ReviewDecision, ReviewDecisionKind

from .conftest import make_manifest, make_sample, truth_manifest


def zero_error_backend(seed=0):
    return MockVqaBackend(MockBackendConfig(seed=seed))


class _GarbageBackend:
    """Answers with unparseable text for chosen ids."""

    model_name = "garbage"
    category = "detail"

    def __init__(self, garbage_ids, seed=0):
        self.garbage_ids = set(garbage_ids)
        self.inner = MockVqaBackend(MockBackendConfig(seed=seed))

    def fingerprint(self):
        return {"backend": "garbage", "ids": sorted(self.garbage_ids)}

    def ask(self, sample, prompt):
        if sample.id in self.garbage_ids:
            return VqaAnswer(raw_text="the weather is lovely", latency_ms=0)
        return self.inner.ask(sample, prompt)


class _FlakyBackend:
    """Delegates to a mock but dies with a transport error after N answers."""

    def __init__(self, inner, die_after: int):
        self.inner = inner
        self.die_after = die_after
        self.calls = 0
        self.model_name = inner.model_name
        self.category = inner.category
        import threading

        self._lock = threading.Lock()

    def fingerprint(self):
        return self.inner.fingerprint()

    def ask(self, sample, prompt):
        with self._lock:
            self.calls += 1
            if self.calls > self.die_after:
                raise TransportError("injected outage")
        return self.inner.ask(sample, prompt)


class TestClassify:
    def test_all_positive_zero_rates(self, tmp_path):
        manifest = truth_manifest(10, 0)
        records = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        assert len(records) == 10
        assert all(r.verdict is Verdict.POSITIVE for r in records)
        assert all(r.prompt_index == 3 for r in records)

    def test_proportion_mirrors_ground_truth(self, tmp_path):
        manifest = truth_manifest(154, 846)
        records = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        positives = [r for r in records if r.verdict is Verdict.POSITIVE]
        assert len(positives) == 154
        assert len(positives) / len(records) == pytest.approx(0.154)

    def test_one_record_per_sample_in_manifest_order(self, tmp_path):
        manifest = truth_manifest(5, 5)
        records = classify_manifest(
            manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path, concurrency=4)
        )
        assert [r.sample_id for r in records] == manifest.ids()

    def test_records_durably_appended(self, tmp_path):
        manifest = truth_manifest(4, 4)
        classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        logged = read_decision_log(tmp_path / DECISIONS_FILENAME)
        assert {r.sample_id for r in logged} == set(manifest.ids())

    def test_garbage_answers_quarantined_not_fatal(self, tmp_path):
        manifest = truth_manifest(3, 3)
        backend = _GarbageBackend({"pos-000001", "neg-000002"})
        records = classify_manifest(manifest, 3, backend, RunConfig(out_dir=tmp_path))
        by_id = {r.sample_id: r for r in records}
        assert by_id["pos-000001"].verdict is Verdict.QUARANTINED
        assert by_id["neg-000002"].verdict is Verdict.QUARANTINED
        assert by_id["pos-000001"].raw_answer == "the weather is lovely"
        assert sum(1 for r in records if r.verdict is Verdict.QUARANTINED) == 2

    def test_interrupted_run_resumes_to_identical_record_set(self, tmp_path):
        manifest = truth_manifest(154, 846)
        config_a = RunConfig(out_dir=tmp_path / "interrupted", concurrency=4)
        flaky = _FlakyBackend(MockVqaBackend(MockBackendConfig(seed=5)), die_after=500)
        with pytest.raises(BackendDownError):
            classify_manifest(manifest, 3, flaky, config_a)
        partial = read_decision_log(tmp_path / "interrupted" / DECISIONS_FILENAME)
        assert 0 < len(partial) < 1000

        resumed = classify_manifest(
            manifest, 3, MockVqaBackend(MockBackendConfig(seed=5)), config_a
        )
        single = classify_manifest(
            manifest, 3, MockVqaBackend(MockBackendConfig(seed=5)),
            RunConfig(out_dir=tmp_path / "single", concurrency=4),
        )
        as_set = lambda records: {(r.sample_id, r.verdict) for r in records}
        assert as_set(resumed) == as_set(single)
        # resume did not redo completed work
        log = read_decision_log(tmp_path / "interrupted" / DECISIONS_FILENAME)
        assert len(log) == 1000
        assert len({r.sample_id for r in log}) == 1000

    def test_resume_skips_nothing_for_fresh_config(self, tmp_path):
        manifest = truth_manifest(3, 0)
        run1 = classify_manifest(manifest, 3, zero_error_backend(1), RunConfig(out_dir=tmp_path))
        # different seed -> different run id -> full reclassification appends
        run2 = classify_manifest(manifest, 3, zero_error_backend(2), RunConfig(out_dir=tmp_path))
        log = read_decision_log(tmp_path / DECISIONS_FILENAME)
        assert len(log) == 6
        assert {r.run_id for r in log} == {run1[0].run_id, run2[0].run_id}

    def test_rerun_of_complete_run_is_a_noop(self, tmp_path):
        manifest = truth_manifest(5, 0)
        first = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        again = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        assert [r.sample_id for r in again] == [r.sample_id for r in first]
        assert len(read_decision_log(tmp_path / DECISIONS_FILENAME)) == 5

    def test_torn_final_line_tolerated_on_resume(self, tmp_path):
        manifest = truth_manifest(4, 0)
        run_id = compute_run_id(manifest, 3, zero_error_backend().fingerprint())
        log_path = tmp_path / DECISIONS_FILENAME
        record = DecisionRecord(
            sample_id="pos-000000", verdict=Verdict.POSITIVE, prompt_index=3,
            model_name="mock", category="detail", raw_answer="Yes", parse_path=None,
            latency_ms=0, timestamp="", run_id=run_id,
        )
        log_path.write_text(json.dumps(record.to_dict()) + "\n" + '{"sample_id": "pos-0000', encoding="utf-8")
        records = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        assert {r.sample_id for r in records} == set(manifest.ids())

    def test_lockfile_blocks_concurrent_same_run(self, tmp_path):
        manifest = truth_manifest(2, 0)
        (tmp_path / "run.lock").write_text(str(__import__("os").getpid()))
        with pytest.raises(RunLockedError):
            classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))

    def test_stale_lock_is_reclaimed(self, tmp_path):
        manifest = truth_manifest(2, 0)
        (tmp_path / "run.lock").write_text("999999999")
        records = classify_manifest(manifest, 3, zero_error_backend(), RunConfig(out_dir=tmp_path))
        assert len(records) == 2
        assert not (tmp_path / "run.lock").exists()

    def test_run_id_depends_on_inputs(self):
        m1, m2 = truth_manifest(2, 0), truth_manifest(3, 0)
        fp = {"backend": "mock", "seed": 1}
        assert compute_run_id(m1, 3, fp) != compute_run_id(m2, 3, fp)
        assert compute_run_id(m1, 3, fp) != compute_run_id(m1, 2, fp)
        assert compute_run_id(m1, 3, fp) == compute_run_id(m1, 3, dict(fp))


def _record(sample_id, verdict, run_id="r") -> DecisionRecord:
    return DecisionRecord(
        sample_id=sample_id, verdict=verdict, prompt_index=3, model_name="m",
        category="detail", raw_answer="", parse_path=None, latency_ms=0,
        timestamp="", run_id=run_id,
    )


def _adjudication(sample_id, kind, reviewer="rev1") -> ReviewDecision:
    return ReviewDecision(
        sample_id=sample_id, decision=kind, reviewer_id=reviewer, timestamp="2026-01-01T00:00:00Z"
    )


class TestRemovalManifest:
    def test_simple_partition(self):
        records = [_record(f"p{i}", Verdict.POSITIVE) for i in range(5)]
        records += [_record(f"n{i}", Verdict.NEGATIVE) for i in range(5)]
        removal = build_removal_manifest(records)
        assert len(removal.remove_ids) == 5
        assert len(removal.keep_ids) == 5
        assert set(removal.remove_ids) == {f"p{i}" for i in range(5)}

    def test_positive_adjudicated_keep_moves_to_keep(self):
        records = [_record("a", Verdict.POSITIVE), _record("b", Verdict.POSITIVE)]
        removal = build_removal_manifest(records, [_adjudication("a", ReviewDecisionKind.KEEP)])
        assert "a" in removal.keep_ids
        assert "b" in removal.remove_ids
        assert removal.overrides_applied[0]["sample_id"] == "a"
        assert removal.overrides_applied[0]["reviewer_id"] == "rev1"

    def test_negative_adjudicated_remove(self):
        records = [_record("a", Verdict.NEGATIVE)]
        removal = build_removal_manifest(records, [_adjudication("a", ReviewDecisionKind.REMOVE)])
        assert removal.remove_ids == ("a",)

    def test_quarantined_defaults_to_remove(self):
        removal = build_removal_manifest([_record("q", Verdict.QUARANTINED)])
        assert removal.remove_ids == ("q",)

    def test_quarantine_keep_policy(self):
        removal = build_removal_manifest(
            [_record("q", Verdict.QUARANTINED)], quarantine_policy="keep"
        )
        assert removal.keep_ids == ("q",)

    def test_uncertain_never_flips_the_default(self):
        records = [_record("p", Verdict.POSITIVE), _record("n", Verdict.NEGATIVE)]
        removal = build_removal_manifest(records, [
            _adjudication("p", ReviewDecisionKind.UNCERTAIN),
            _adjudication("n", ReviewDecisionKind.UNCERTAIN),
        ])
        assert "p" in removal.remove_ids
        assert "n" in removal.keep_ids
        assert removal.overrides_applied == ()

    def test_dangling_override_rejected(self):
        with pytest.raises(DanglingOverrideError):
            build_removal_manifest([_record("a", Verdict.POSITIVE)],
                                   [_adjudication("ghost", ReviewDecisionKind.KEEP)])

    def test_partition_covers_every_sample(self):
        import random

        rng = random.Random(3)
        records = [
            _record(f"s{i}", rng.choice([Verdict.POSITIVE, Verdict.NEGATIVE, Verdict.QUARANTINED]))
            for i in range(300)
        ]
        removal = build_removal_manifest(records)
        assert set(removal.remove_ids) | set(removal.keep_ids) == {r.sample_id for r in records}
        assert not set(removal.remove_ids) & set(removal.keep_ids)

    def test_monotone_safety_without_adjudications(self):
        records = [_record("p", Verdict.POSITIVE), _record("q", Verdict.QUARANTINED),
                   _record("n", Verdict.NEGATIVE)]
        removal = build_removal_manifest(records, quarantine_policy="keep")
        positives = {r.sample_id for r in records if r.verdict is Verdict.POSITIVE}
        assert positives <= set(removal.remove_ids)

    def test_round_trips_through_json(self, tmp_path):
        removal = build_removal_manifest([_record("a", Verdict.POSITIVE), _record("b", Verdict.NEGATIVE)])
        path = tmp_path / "removal.json"
        removal.save(path)
        assert RemovalManifest.load(path) == removal

    def test_overlapping_partition_rejected(self):
        with pytest.raises(ValueError):
            RemovalManifest(remove_ids=("a",), keep_ids=("a",))
