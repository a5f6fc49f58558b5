"""Vision-chat backend clients and answer parsing.

The HTTP client speaks a minimal JSON protocol (documented in
docs/wire_protocol.md): POST the prompt text plus the image as base64, get
generated text back. Transient failures retry with exponential backoff and
jitter; 4xx responses never retry. An in-process semaphore caps concurrent
requests at ``max_concurrency``.

The mock backend stands in for real model serving at desk scale: it answers
from ground truth, flipped at configured miss / false-alarm rates using a
per-sample keyed hash, so results are reproducible and independent of
traversal order or thread interleaving.

Parsing maps raw answers to binary verdicts along three recorded paths
(exact token, leading token, verbose heuristic); anything else raises
``UnparseableAnswerError`` and must be quarantined, never read as negative.
"""

from __future__ import annotations

import base64
import hashlib
import os
import random
import re
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from urllib.parse import urlparse

import requests

from .errors import (
    BackendRejectionError,
    ImageUnreadableError,
    TransportError,
    UnknownGroundTruthError,
    UnparseableAnswerError,
    VqaTimeoutError,
)
from .manifest import ChildPresence, Sample
from .prompts import PromptTemplate

AUTH_TOKEN_ENV = "KINDERSAFE_VQA_TOKEN"

#: Operational categories passed through to the backend as opaque selectors.
CATEGORIES = ("complex", "conv", "detail")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    category: str = "detail"
    timeout_ms: int = 30_000
    max_retries: int = 3
    max_concurrency: int = 4
    auth_token: str | None = None

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def resolved_token(self) -> str | None:
        return self.auth_token or os.environ.get(AUTH_TOKEN_ENV)


@dataclass(frozen=True)
class VqaAnswer:
    raw_text: str
    latency_ms: int = 0
    attempt_count: int = 1

    def __post_init__(self):
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")


class ParsePath(str, Enum):
    EXACT_TOKEN = "exact_token"
    LEADING_TOKEN = "leading_token"
    VERBOSE_HEURISTIC = "verbose_heuristic"


@dataclass(frozen=True)
class BinaryVerdict:
    value: ChildPresence  # POSITIVE or NEGATIVE only
    parse_path: ParsePath


_EDGE_PUNCT = " \t\r\n.,;:!?\"'`´“”‘’()[]{}<>*-_~"
_FIRST_WORD = re.compile(r"^([a-z]+)")

# Word-bounded cues for verbose answers. A verdict is only produced when
# exactly one side matches; ambiguous or silent text is unparseable.
_AFFIRMATIVE = [
    re.compile(r"\byes\b"),
    re.compile(r"\bthere (?:is|are) (?:a |an |one |some )?(?:child|children|kid|kids|baby|babies|toddler|toddlers)\b"),
    re.compile(r"\bcontains? (?:a |an |some )?(?:child|children|kid|kids)\b"),
    re.compile(r"\b(?:child|children|kid|kids) (?:is|are) (?:present|visible)\b"),
]
_NEGATIVE = [
    re.compile(r"\bno\b"),
    re.compile(r"\b(?:does not|doesn't|do not|don't) (?:contain|show|include|feature)\b"),
    re.compile(r"\bwithout (?:any )?(?:child|children|kid|kids)\b"),
]


def parse_binary(answer: VqaAnswer | str) -> BinaryVerdict:
    """Map a raw answer to a binary verdict, recording how it was read.

    Normalization is case-insensitive and strips edge whitespace and
    punctuation. In order: the whole text equal to yes/no (exact token), a
    yes/no first word (leading token), then a verbose heuristic requiring the
    affirmative or negative cue lexicon to match exclusively.
    """
    raw = answer.raw_text if isinstance(answer, VqaAnswer) else answer
    text = raw.casefold().strip(_EDGE_PUNCT)
    if text == "yes":
        return BinaryVerdict(ChildPresence.POSITIVE, ParsePath.EXACT_TOKEN)
    if text == "no":
        return BinaryVerdict(ChildPresence.NEGATIVE, ParsePath.EXACT_TOKEN)
    first = _FIRST_WORD.match(text)
    if first:
        word = first.group(1)
        if word == "yes":
            return BinaryVerdict(ChildPresence.POSITIVE, ParsePath.LEADING_TOKEN)
        if word == "no":
            return BinaryVerdict(ChildPresence.NEGATIVE, ParsePath.LEADING_TOKEN)
    affirmative = any(p.search(text) for p in _AFFIRMATIVE)
    negative = any(p.search(text) for p in _NEGATIVE)
    if affirmative and not negative:
        return BinaryVerdict(ChildPresence.POSITIVE, ParsePath.VERBOSE_HEURISTIC)
    if negative and not affirmative:
        return BinaryVerdict(ChildPresence.NEGATIVE, ParsePath.VERBOSE_HEURISTIC)
    raise UnparseableAnswerError(raw)


# --- HTTP backend ----------------------------------------------------------

_RETRYABLE_STATUS = range(500, 600)
_BACKOFF_BASE_S = 0.25
_BACKOFF_CAP_S = 8.0


def ask(
    image: bytes,
    prompt: PromptTemplate,
    config: EndpointConfig,
    session: requests.Session | None = None,
    sleep=time.sleep,
) -> VqaAnswer:
    """One inference call: POST image + prompt, return the generated text.

    Retries timeouts and 5xx responses up to ``max_retries`` times with
    exponential backoff plus jitter; 4xx responses raise immediately with the
    body captured. Exactly one answer is returned per successful call.
    """
    session = session or requests.Session()
    url = f"{config.base_url.rstrip('/')}/v1/vqa"
    payload = {
        "model": config.model_name,
        "category": config.category,
        "prompt": prompt.text,
        "image_base64": base64.b64encode(image).decode("ascii"),
    }
    headers = {}
    token = config.resolved_token()
    if token:
        headers["Authorization"] = f"Bearer {token}"

    started = time.monotonic()
    attempts = config.max_retries + 1
    last_error: Exception | None = None
    rng = random.Random()
    for attempt in range(1, attempts + 1):
        try:
            resp = session.post(url, json=payload, headers=headers, timeout=config.timeout_ms / 1000.0)
        except requests.Timeout as exc:
            last_error = VqaTimeoutError(f"no answer within {config.timeout_ms} ms (attempt {attempt})")
            last_error.__cause__ = exc
        except requests.RequestException as exc:
            last_error = TransportError(f"request failed: {exc}")
            last_error.__cause__ = exc
        else:
            if 400 <= resp.status_code < 500:
                raise BackendRejectionError(resp.status_code, resp.text)
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = TransportError(f"HTTP {resp.status_code} from backend")
            else:
                try:
                    text = resp.json()["answer"]
                except (ValueError, KeyError) as exc:
                    raise BackendRejectionError(resp.status_code, resp.text[:2048]) from exc
                latency_ms = int((time.monotonic() - started) * 1000)
                return VqaAnswer(raw_text=str(text), latency_ms=latency_ms, attempt_count=attempt)
        if attempt < attempts:
            backoff = min(_BACKOFF_BASE_S * 2 ** (attempt - 1), _BACKOFF_CAP_S)
            sleep(backoff + rng.uniform(0, backoff / 4))
    assert last_error is not None
    raise last_error


class HttpVqaBackend:
    """Thread-safe client wrapper used by the detector.

    Resolves sample image references against ``image_root`` (local files
    only; remote references raise ``ImageUnreadableError`` since nothing in
    this pipeline crawls URLs) and admits at most ``max_concurrency``
    requests at a time.
    """

    def __init__(self, config: EndpointConfig, image_root: str | Path | None = None):
        import threading

        self.config = config
        self.image_root = Path(image_root) if image_root else None
        self._session = requests.Session()
        self._limiter = threading.BoundedSemaphore(config.max_concurrency)

    @property
    def model_name(self) -> str:
        return self.config.model_name

    @property
    def category(self) -> str:
        return self.config.category

    def fingerprint(self) -> dict:
        return {
            "backend": "http",
            "base_url": self.config.base_url,
            "model_name": self.config.model_name,
            "category": self.config.category,
        }

    def _read_image(self, sample: Sample) -> bytes:
        parsed = urlparse(sample.image_ref)
        if parsed.scheme in ("http", "https"):
            raise ImageUnreadableError(
                f"{sample.id}: remote image refs are not fetched ({sample.image_ref})"
            )
        ref = Path(sample.image_ref)
        if self.image_root is not None and not ref.is_absolute():
            ref = self.image_root / ref
        try:
            return ref.read_bytes()
        except OSError as exc:
            raise ImageUnreadableError(f"{sample.id}: cannot read {ref}: {exc}") from exc

    def ask(self, sample: Sample, prompt: PromptTemplate) -> VqaAnswer:
        image = self._read_image(sample)
        with self._limiter:
            return ask(image, prompt, self.config, session=self._session)


# --- deterministic mock ----------------------------------------------------

VERBOSE_POSITIVE = "Yes, there is a child in the picture, specifically a baby or a toddler."
VERBOSE_NEGATIVE = "No, there are not any children in the picture."


@dataclass(frozen=True)
class MockBackendConfig:
    miss_rate: float = 0.0
    false_alarm_rate: float = 0.0
    seed: int = 0
    verbose_fraction: float = 0.0

    def __post_init__(self):
        for name in ("miss_rate", "false_alarm_rate", "verbose_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def _unit_hash(seed: int, namespace: str, sample_id: str) -> float:
    """Uniform [0, 1) value keyed on (seed, namespace, id); order-independent."""
    digest = hashlib.blake2b(f"{seed}:{namespace}:{sample_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def mock_ask(sample: Sample, prompt: PromptTemplate, config: MockBackendConfig) -> VqaAnswer:
    """Answer from ground truth, flipped at the configured error rates.

    Flips are decided by a per-sample keyed hash rather than a shared PRNG
    stream, so the answer multiset is identical for any traversal order or
    concurrency level.
    """
    if sample.ground_truth is ChildPresence.UNKNOWN:
        raise UnknownGroundTruthError([sample.id])
    if sample.ground_truth is ChildPresence.POSITIVE:
        answer_positive = _unit_hash(config.seed, "miss", sample.id) >= config.miss_rate
    else:
        answer_positive = _unit_hash(config.seed, "false-alarm", sample.id) < config.false_alarm_rate
    verbose = _unit_hash(config.seed, "verbose", sample.id) < config.verbose_fraction
    if verbose:
        text = VERBOSE_POSITIVE if answer_positive else VERBOSE_NEGATIVE
    else:
        text = "Yes" if answer_positive else "No"
    return VqaAnswer(raw_text=text, latency_ms=0, attempt_count=1)


class MockVqaBackend:
    """Detector-compatible wrapper around :func:`mock_ask`."""

    def __init__(self, config: MockBackendConfig, model_name: str = "mock", category: str = "detail"):
        self.config = config
        self.model_name = model_name
        self.category = category

    def fingerprint(self) -> dict:
        return {
            "backend": "mock",
            "model_name": self.model_name,
            "category": self.category,
            "miss_rate": self.config.miss_rate,
            "false_alarm_rate": self.config.false_alarm_rate,
            "seed": self.config.seed,
            "verbose_fraction": self.config.verbose_fraction,
        }

    def ask(self, sample: Sample, prompt: PromptTemplate) -> VqaAnswer:
        return mock_ask(sample, prompt, self.config)
