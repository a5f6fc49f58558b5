"""Whole-manifest classification with durable, resumable progress.

The decision log (``decisions.jsonl``) is the checkpoint: records append as
they are produced, one writer, flushed per line. Re-running with the same
configuration and manifest resumes where the log left off because the run id
is derived from both. Per-sample failures quarantine that sample and keep
going; backend-level failures pause the run with everything written so far
intact.

The final artifact is a removal manifest partitioning every sample into
remove or keep, with human adjudications overriding machine verdicts
unconditionally.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Protocol

from .backend import ParsePath, VqaAnswer, parse_binary
from .errors import (
    BackendDownError,
    BackendRejectionError,
    DanglingOverrideError,
    ImageUnreadableError,
    RunLockedError,
    TransportError,
    UnparseableAnswerError,
    VqaTimeoutError,
)
from .manifest import ChildPresence, DatasetManifest, Sample
from .prompts import DEFAULT_REGISTRY, PromptRegistry, PromptTemplate

if TYPE_CHECKING:
    from .review import ReviewDecision

DECISIONS_FILENAME = "decisions.jsonl"
RUN_META_FILENAME = "run.json"
REMOVAL_FILENAME = "removal.json"
LOCK_FILENAME = "run.lock"

QUARANTINE_REMOVE = "remove"
QUARANTINE_KEEP = "keep"


class Verdict(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    QUARANTINED = "quarantined"


class VqaBackend(Protocol):
    model_name: str
    category: str

    def ask(self, sample: Sample, prompt: PromptTemplate) -> VqaAnswer: ...

    def fingerprint(self) -> dict: ...


@dataclass(frozen=True)
class DecisionRecord:
    sample_id: str
    verdict: Verdict
    prompt_index: int
    model_name: str
    category: str
    raw_answer: str
    parse_path: ParsePath | None
    latency_ms: int
    timestamp: str
    run_id: str

    def predicted_positive(self) -> bool:
        """Quarantined counts as positive: an undecidable sample stays flagged."""
        return self.verdict in (Verdict.POSITIVE, Verdict.QUARANTINED)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict.value,
            "prompt_index": self.prompt_index,
            "model_name": self.model_name,
            "category": self.category,
            "raw_answer": self.raw_answer,
            "parse_path": self.parse_path.value if self.parse_path else None,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
            "run_id": self.run_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        return cls(
            sample_id=d["sample_id"],
            verdict=Verdict(d["verdict"]),
            prompt_index=int(d["prompt_index"]),
            model_name=d.get("model_name", ""),
            category=d.get("category", ""),
            raw_answer=d.get("raw_answer", ""),
            parse_path=ParsePath(d["parse_path"]) if d.get("parse_path") else None,
            latency_ms=int(d.get("latency_ms", 0)),
            timestamp=d.get("timestamp", ""),
            run_id=d.get("run_id", ""),
        )


@dataclass
class RunConfig:
    out_dir: str | Path
    prompt_index: int = 3
    concurrency: int = 4
    quarantine_policy: str = QUARANTINE_REMOVE

    def __post_init__(self):
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.quarantine_policy not in (QUARANTINE_REMOVE, QUARANTINE_KEEP):
            raise ValueError("quarantine_policy must be 'remove' or 'keep'")


def compute_run_id(manifest: DatasetManifest, prompt_index: int, backend_fingerprint: dict) -> str:
    """Stable id from what determines the decisions: manifest, prompt, backend."""
    import hashlib

    payload = json.dumps(
        {
            "manifest_digest": manifest.digest(),
            "prompt_index": prompt_index,
            "backend": backend_fingerprint,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunState:
    """Resumable view of one run, rebuilt from the append-only log."""

    run_id: str
    completed: dict[str, DecisionRecord] = field(default_factory=dict)
    pending: list[str] = field(default_factory=list)

    @classmethod
    def resume(cls, run_dir: Path, run_id: str, manifest: DatasetManifest) -> "RunState":
        completed: dict[str, DecisionRecord] = {}
        log_path = run_dir / DECISIONS_FILENAME
        if log_path.exists():
            for record in read_decision_log(log_path):
                if record.run_id == run_id:
                    completed[record.sample_id] = record
        pending = [s.id for s in manifest if s.id not in completed]
        return cls(run_id=run_id, completed=completed, pending=pending)


def read_decision_log(path: str | Path) -> list[DecisionRecord]:
    """Replay a decision log; a torn final line (crash mid-write) is skipped."""
    records: list[DecisionRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(DecisionRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError):
            if i == len(lines) - 1:
                continue
            raise
    return records


class _RunLock:
    """PID lockfile: one live process per run directory."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_FILENAME

    def acquire(self) -> None:
        if self.path.exists():
            try:
                pid = int(self.path.read_text().strip())
            except ValueError:
                pid = -1
            if pid > 0 and _pid_alive(pid):
                raise RunLockedError(f"run directory locked by live pid {pid}: {self.path}")
        self.path.write_text(str(os.getpid()))

    def release(self) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def classify_manifest(
    manifest: DatasetManifest,
    prompt_index: int,
    backend: VqaBackend,
    run_config: RunConfig,
    registry: PromptRegistry | None = None,
) -> list[DecisionRecord]:
    """Classify every sample, appending records durably as they complete.

    Returns one record per sample, in manifest order. Per-sample failures
    (image unreadable, request rejected, answer unparseable) become
    quarantined records. Transport-level failures raise
    :class:`BackendDownError` after flushing whatever finished; re-running
    the same configuration resumes from the log.
    """
    registry = registry or DEFAULT_REGISTRY
    prompt = registry.get_prompt(prompt_index)
    run_dir = Path(run_config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = compute_run_id(manifest, prompt_index, backend.fingerprint())

    lock = _RunLock(run_dir)
    lock.acquire()
    try:
        state = RunState.resume(run_dir, run_id, manifest)
        _write_run_meta(run_dir, run_id, manifest, prompt_index, backend, run_config)
        by_id = manifest.by_id()
        pending = [by_id[sid] for sid in state.pending]

        log_path = run_dir / DECISIONS_FILENAME
        backend_down: BackendDownError | None = None
        with log_path.open("a", encoding="utf-8") as log:
            with ThreadPoolExecutor(max_workers=run_config.concurrency) as pool:
                futures = {pool.submit(backend.ask, s, prompt): s for s in pending}
                for future in as_completed(futures):
                    sample = futures[future]
                    if future.cancelled():
                        continue
                    try:
                        answer = future.result()
                    except (ImageUnreadableError, BackendRejectionError) as exc:
                        record = _quarantine_record(sample, prompt_index, backend, run_id, reason=str(exc))
                    except (TransportError, VqaTimeoutError) as exc:
                        # The service itself is failing: stop submitting, keep
                        # whatever still completes, and pause resumably.
                        if backend_down is None:
                            backend_down = BackendDownError(
                                f"backend unavailable at sample {sample.id!r}: {exc}"
                            )
                            for f in futures:
                                f.cancel()
                        continue
                    except Exception:
                        for f in futures:
                            f.cancel()
                        raise
                    else:
                        record = _record_from_answer(sample, answer, prompt_index, backend, run_id)
                    state.completed[sample.id] = record
                    log.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
                    log.flush()
        if backend_down is not None:
            raise backend_down
        return [state.completed[s.id] for s in manifest]
    finally:
        lock.release()


def _record_from_answer(
    sample: Sample, answer: VqaAnswer, prompt_index: int, backend: VqaBackend, run_id: str
) -> DecisionRecord:
    try:
        verdict_value = parse_binary(answer)
        verdict = Verdict.POSITIVE if verdict_value.value is ChildPresence.POSITIVE else Verdict.NEGATIVE
        parse_path: ParsePath | None = verdict_value.parse_path
    except UnparseableAnswerError:
        verdict = Verdict.QUARANTINED
        parse_path = None
    return DecisionRecord(
        sample_id=sample.id,
        verdict=verdict,
        prompt_index=prompt_index,
        model_name=backend.model_name,
        category=backend.category,
        raw_answer=answer.raw_text,
        parse_path=parse_path,
        latency_ms=answer.latency_ms,
        timestamp=_utc_now(),
        run_id=run_id,
    )


def _quarantine_record(
    sample: Sample, prompt_index: int, backend: VqaBackend, run_id: str, reason: str
) -> DecisionRecord:
    return DecisionRecord(
        sample_id=sample.id,
        verdict=Verdict.QUARANTINED,
        prompt_index=prompt_index,
        model_name=backend.model_name,
        category=backend.category,
        raw_answer=f"<error: {reason}>",
        parse_path=None,
        latency_ms=0,
        timestamp=_utc_now(),
        run_id=run_id,
    )


def _write_run_meta(
    run_dir: Path,
    run_id: str,
    manifest: DatasetManifest,
    prompt_index: int,
    backend: VqaBackend,
    run_config: RunConfig,
) -> None:
    meta = {
        "run_id": run_id,
        "created": _utc_now(),
        "manifest_digest": manifest.digest(),
        "manifest_size": len(manifest),
        "prompt_index": prompt_index,
        "backend": backend.fingerprint(),
        "concurrency": run_config.concurrency,
        "quarantine_policy": run_config.quarantine_policy,
    }
    (run_dir / RUN_META_FILENAME).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


# --- removal manifest ------------------------------------------------------

@dataclass(frozen=True)
class RemovalManifest:
    """Final partition of a classified manifest into remove and keep sets."""

    remove_ids: tuple[str, ...]
    keep_ids: tuple[str, ...]
    overrides_applied: tuple[dict, ...] = ()

    def __post_init__(self):
        overlap = set(self.remove_ids) & set(self.keep_ids)
        if overlap:
            raise ValueError(f"remove/keep overlap: {sorted(overlap)[:5]}")

    def to_dict(self) -> dict:
        return {
            "remove_ids": list(self.remove_ids),
            "keep_ids": list(self.keep_ids),
            "overrides_applied": [dict(o) for o in self.overrides_applied],
            "remove_count": len(self.remove_ids),
            "keep_count": len(self.keep_ids),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RemovalManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            remove_ids=tuple(d["remove_ids"]),
            keep_ids=tuple(d["keep_ids"]),
            overrides_applied=tuple(d.get("overrides_applied", [])),
        )


def build_removal_manifest(
    records: Iterable[DecisionRecord],
    adjudications: Iterable["ReviewDecision"] = (),
    quarantine_policy: str = QUARANTINE_REMOVE,
) -> RemovalManifest:
    """Partition records into remove/keep, applying human overrides last.

    Machine defaults: positive and quarantined verdicts are removed (the
    quarantine default is configurable), negative verdicts kept. A human
    keep or remove decision wins unconditionally; an uncertain decision
    never flips the fail-safe default.
    """
    from .review import ReviewDecisionKind

    records = list(records)
    known = {r.sample_id for r in records}
    remove: set[str] = set()
    for record in records:
        if record.verdict is Verdict.POSITIVE:
            remove.add(record.sample_id)
        elif record.verdict is Verdict.QUARANTINED and quarantine_policy == QUARANTINE_REMOVE:
            remove.add(record.sample_id)

    overrides_applied: list[dict] = []
    latest: dict[str, "ReviewDecision"] = {}
    for decision in adjudications:
        if decision.sample_id not in known:
            raise DanglingOverrideError(decision.sample_id)
        latest[decision.sample_id] = decision
    for sample_id in sorted(latest):
        decision = latest[sample_id]
        if decision.decision is ReviewDecisionKind.KEEP:
            remove.discard(sample_id)
        elif decision.decision is ReviewDecisionKind.REMOVE:
            remove.add(sample_id)
        else:
            continue  # uncertain: fail-safe default stands
        overrides_applied.append(
            {
                "sample_id": sample_id,
                "decision": decision.decision.value,
                "reviewer_id": decision.reviewer_id,
                "timestamp": decision.timestamp,
            }
        )

    ordered_ids = [r.sample_id for r in records]
    return RemovalManifest(
        remove_ids=tuple(i for i in ordered_ids if i in remove),
        keep_ids=tuple(i for i in ordered_ids if i not in remove),
        overrides_applied=tuple(overrides_applied),
    )
