"""Human adjudication service.

A small loopback HTTP service that pages out flagged samples with their
captions and machine verdicts, records keep/remove/uncertain decisions to an
append-only log, and exports the latest decision per sample for the removal
manifest. Decision history is never rewritten: restarts replay the log, and
the latest human decision always wins over any machine verdict.

Privacy posture: binds to loopback by default, serves image bytes only for
local references (remote URLs are surfaced as links, never proxied), and
never writes image bytes to logs. A shared token can be required via the
``KINDERSAFE_REVIEW_TOKEN`` environment variable.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .curation import ReviewQueue
from .errors import BindError

AUTH_TOKEN_ENV = "KINDERSAFE_REVIEW_TOKEN"
DEFAULT_BIND = "127.0.0.1:8787"
DECISIONS_LOG_FILENAME = "review_decisions.jsonl"


class ReviewDecisionKind(str, Enum):
    KEEP = "keep"
    REMOVE = "remove"
    UNCERTAIN = "uncertain"


@dataclass(frozen=True)
class ReviewDecision:
    sample_id: str
    decision: ReviewDecisionKind
    reviewer_id: str
    timestamp: str
    note: str | None = None

    def to_dict(self) -> dict:
        d = {
            "sample_id": self.sample_id,
            "decision": self.decision.value,
            "reviewer_id": self.reviewer_id,
            "timestamp": self.timestamp,
        }
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewDecision":
        return cls(
            sample_id=str(d["sample_id"]),
            decision=ReviewDecisionKind(d["decision"]),
            reviewer_id=str(d.get("reviewer_id", "")),
            timestamp=str(d.get("timestamp", "")),
            note=d.get("note"),
        )


class DecisionStore:
    """Append-only decision log with last-writer-wins reads.

    Every decision ever made is retained; ``latest`` and ``export`` expose
    the most recent one per sample. Writes are serialized; the file is the
    source of truth across restarts.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._history: list[ReviewDecision] = []
        self._latest: dict[str, ReviewDecision] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    decision = ReviewDecision.from_dict(json.loads(line))
                    self._history.append(decision)
                    self._latest[decision.sample_id] = decision

    def append(self, decision: ReviewDecision) -> None:
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(decision.to_dict(), ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._history.append(decision)
            self._latest[decision.sample_id] = decision

    def latest(self, sample_id: str) -> ReviewDecision | None:
        with self._lock:
            return self._latest.get(sample_id)

    def history(self, sample_id: str | None = None) -> list[ReviewDecision]:
        with self._lock:
            if sample_id is None:
                return list(self._history)
            return [d for d in self._history if d.sample_id == sample_id]

    def export(self) -> list[ReviewDecision]:
        """Latest decision per sample, deterministically ordered by sample id."""
        with self._lock:
            return [self._latest[sid] for sid in sorted(self._latest)]

    def decided_ids(self) -> set[str]:
        with self._lock:
            return set(self._latest)


def export_decisions(store: DecisionStore) -> list[ReviewDecision]:
    return store.export()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class ReviewService(ThreadingHTTPServer):
    """HTTP server wiring a queue file, a decision store, and static UI assets."""

    daemon_threads = True

    def __init__(
        self,
        bind: str,
        queue: ReviewQueue,
        store: DecisionStore,
        image_root: str | Path | None = None,
        static_dir: str | Path | None = None,
        auth_token: str | None = None,
    ):
        host, _, port = bind.partition(":")
        self.queue = queue
        self.store = store
        self.image_root = Path(image_root) if image_root else Path(".")
        self.static_dir = Path(static_dir) if static_dir else None
        self.auth_token = auth_token if auth_token is not None else os.environ.get(AUTH_TOKEN_ENV)
        self.items_by_id = {item["sample_id"]: item for item in queue.items}
        try:
            super().__init__((host, int(port or 0)), _ReviewHandler)
        except OSError as exc:
            raise BindError(f"cannot bind {bind}: {exc}") from exc

    @property
    def bound_address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    # --- views used by the handler ---

    def pending_items(self) -> list[dict]:
        decided = self.store.decided_ids()
        return [i for i in self.queue.items if i["sample_id"] not in decided]

    def uncertain_items(self) -> list[dict]:
        out = []
        for item in self.queue.items:
            latest = self.store.latest(item["sample_id"])
            if latest is not None and latest.decision is ReviewDecisionKind.UNCERTAIN:
                out.append(item)
        return out

    def progress(self) -> dict:
        total = len(self.queue.items)
        decided = sum(1 for i in self.queue.items if self.store.latest(i["sample_id"]) is not None)
        uncertain = len(self.uncertain_items())
        return {
            "total": total,
            "decided": decided,
            "pending": total - decided,
            "uncertain": uncertain,
        }


class _ReviewHandler(BaseHTTPRequestHandler):
    server: ReviewService
    protocol_version = "HTTP/1.1"

    # Image bytes and decision bodies must never reach the log; only method + path do.
    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    def _authorized(self) -> bool:
        token = self.server.auth_token
        if not token:
            return True
        header = self.headers.get("Authorization", "")
        return header == f"Bearer {token}"

    def _send_json(self, payload, status: int = 200) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json({"error": message}, status=status)

    def do_GET(self):
        if not self._authorized():
            self._send_error_json(401, "missing or invalid token")
            return
        parsed = urlparse(self.path)
        route = parsed.path
        if route == "/queue":
            self._handle_queue(parse_qs(parsed.query))
        elif route.startswith("/image/"):
            self._handle_image(unquote(route[len("/image/"):]))
        elif route == "/progress":
            self._send_json(self.server.progress())
        elif route == "/export":
            self._handle_export()
        else:
            self._handle_static(route)

    def do_POST(self):
        if not self._authorized():
            self._send_error_json(401, "missing or invalid token")
            return
        route = urlparse(self.path).path
        if route != "/decision":
            self._send_error_json(404, f"no such endpoint: {route}")
            return
        length = int(self.headers.get("Content-Length", 0))
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            self._send_error_json(400, "body must be JSON")
            return
        sample_id = payload.get("sample_id")
        if not sample_id or sample_id not in self.server.items_by_id:
            self._send_error_json(404, f"unknown sample id: {sample_id!r}")
            return
        try:
            kind = ReviewDecisionKind(payload.get("decision"))
        except ValueError:
            self._send_error_json(400, "decision must be keep, remove, or uncertain")
            return
        reviewer = str(payload.get("reviewer_id") or "").strip()
        if not reviewer:
            self._send_error_json(400, "reviewer_id is required")
            return
        decision = ReviewDecision(
            sample_id=sample_id,
            decision=kind,
            reviewer_id=reviewer,
            timestamp=_utc_now(),
            note=payload.get("note"),
        )
        self.server.store.append(decision)
        self._send_json({"ok": True, "sample_id": sample_id, "decision": kind.value})

    # --- route handlers ---

    def _handle_queue(self, query: dict) -> None:
        page = int(query.get("page", ["0"])[0])
        tab = query.get("filter", ["pending"])[0]
        if tab == "uncertain":
            items = self.server.uncertain_items()
        else:
            items = self.server.pending_items()
        size = self.server.queue.batch_size
        total_pages = (len(items) + size - 1) // size if items else 0
        window = items[page * size:(page + 1) * size]
        self._send_json(
            {
                "page": page,
                "page_size": size,
                "total_pages": total_pages,
                "total_items": len(items),
                "filter": tab,
                "items": [self._public_item(i) for i in window],
            }
        )

    def _public_item(self, item: dict) -> dict:
        """Whitelist the documented fields; nothing else (never ground truth)."""
        ref = item.get("image_ref", "")
        is_remote = ref.startswith("http://") or ref.startswith("https://")
        return {
            "sample_id": item["sample_id"],
            "image_ref": ref,
            "image_url": None if is_remote else f"/image/{item['sample_id']}",
            "caption": item.get("caption"),
            "visual_description": item.get("visual_description"),
            "machine_verdict": item.get("machine_verdict"),
            "parse_path": item.get("parse_path"),
            "findings": item.get("findings", []),
        }

    def _handle_image(self, sample_id: str) -> None:
        item = self.server.items_by_id.get(sample_id)
        if item is None:
            self._send_error_json(404, f"unknown sample id: {sample_id!r}")
            return
        ref = item.get("image_ref", "")
        if ref.startswith("http://") or ref.startswith("https://"):
            self._send_error_json(404, "remote image refs are not proxied")
            return
        path = Path(ref)
        if not path.is_absolute():
            path = self.server.image_root / path
        root = self.server.image_root.resolve()
        resolved = path.resolve()
        if not resolved.is_relative_to(root) and not Path(ref).is_absolute():
            self._send_error_json(403, "image path escapes the image root")
            return
        try:
            data = resolved.read_bytes()
        except OSError:
            self._send_error_json(404, "image not readable")
            return
        ctype = mimetypes.guess_type(resolved.name)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _handle_export(self) -> None:
        lines = [json.dumps(d.to_dict(), ensure_ascii=False) for d in self.server.store.export()]
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _handle_static(self, route: str) -> None:
        static = self.server.static_dir
        if static is None:
            if route == "/":
                self._send_json({"service": "kindersafe-review", "endpoints": [
                    "/queue", "/image/{id}", "/decision", "/progress", "/export"]})
            else:
                self._send_error_json(404, f"no such endpoint: {route}")
            return
        rel = route.lstrip("/") or "index.html"
        path = (static / rel).resolve()
        if not path.is_relative_to(static.resolve()) or not path.is_file():
            self._send_error_json(404, "not found")
            return
        data = path.read_bytes()
        ctype = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def serve(
    queue_path: str | Path,
    store_path: str | Path,
    bind: str = DEFAULT_BIND,
    image_root: str | Path | None = None,
    static_dir: str | Path | None = None,
) -> ReviewService:
    """Construct the running service; the caller drives ``serve_forever``."""
    queue = ReviewQueue.load(queue_path)
    store = DecisionStore(store_path)
    return ReviewService(
        bind=bind,
        queue=queue,
        store=store,
        image_root=image_root,
        static_dir=static_dir,
    )
