"""Pre-filtering of noisy datasets before detection runs.

Two passes: near-duplicate removal via 64-bit perceptual hashes clustered by
Hamming distance (union-find over pairwise comparisons), and image-text
similarity filtering that drops samples whose caption does not describe the
image (score strictly below the threshold). Unreadable images are quarantined
loudly, never dropped silently.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from PIL import Image
from scipy.fft import dct

from .errors import ImageUnreadableError, ScorerUnavailableError
from .manifest import DatasetManifest, Sample

_HASH_BITS = 64
_DCT_SIZE = 32
_LOWFREQ = 8


@dataclass(frozen=True)
class PerceptualHash:
    """64-bit luminance pHash; equal byte-images always hash equal."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << _HASH_BITS):
            raise ValueError("hash must fit in 64 bits")

    def distance(self, other: "PerceptualHash") -> int:
        return (self.bits ^ other.bits).bit_count()

    def __str__(self) -> str:
        return f"{self.bits:016x}"


def phash_image(image: Image.Image) -> PerceptualHash:
    """DCT perceptual hash: 32x32 luminance, low-frequency 8x8 vs. median."""
    gray = image.convert("L").resize((_DCT_SIZE, _DCT_SIZE), Image.LANCZOS)
    pixels = np.asarray(gray, dtype=np.float64)
    freq = dct(dct(pixels, axis=0), axis=1)
    low = freq[:_LOWFREQ, :_LOWFREQ]
    median = np.median(low)
    bits = 0
    for flag in (low > median).flatten():
        bits = (bits << 1) | int(flag)
    return PerceptualHash(bits)


def phash_bytes(data: bytes) -> PerceptualHash:
    try:
        with Image.open(io.BytesIO(data)) as img:
            return phash_image(img)
    except Exception as exc:
        raise ImageUnreadableError(f"cannot decode image bytes: {exc}") from exc


def phash_file(path: str | Path) -> PerceptualHash:
    path = Path(path)
    try:
        with Image.open(path) as img:
            return phash_image(img)
    except FileNotFoundError as exc:
        raise ImageUnreadableError(f"image not found: {path}") from exc
    except Exception as exc:
        raise ImageUnreadableError(f"cannot decode {path}: {exc}") from exc


class FileHasher:
    """Default hasher: resolves ``image_ref`` against a root directory."""

    def __init__(self, image_root: str | Path | None = None):
        self.image_root = Path(image_root) if image_root else None

    def __call__(self, sample: Sample) -> PerceptualHash:
        ref = Path(sample.image_ref)
        if self.image_root is not None and not ref.is_absolute():
            ref = self.image_root / ref
        return phash_file(ref)


Hasher = Callable[[Sample], PerceptualHash]


class SimilarityScorer(Protocol):
    def __call__(self, sample: Sample) -> float: ...


@dataclass
class CleaningConfig:
    similarity_threshold: float = 0.2
    hamming_threshold: int = 8
    embedding_backend: object | None = None  # backend.EndpointConfig when HTTP scoring is used

    def __post_init__(self):
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in [0, 1]")
        if not 0 <= self.hamming_threshold <= _HASH_BITS:
            raise ValueError("hamming_threshold must be in [0, 64]")


@dataclass
class CleaningReport:
    """Accounting for one cleaning pass.

    Every input id lands in exactly one of: the kept manifest, a duplicate
    removal, a low-similarity removal, or the quarantine list.
    """

    removed_duplicates: list[tuple[str, list[str]]] = field(default_factory=list)
    removed_low_similarity: list[tuple[str, float]] = field(default_factory=list)
    quarantined: list[str] = field(default_factory=list)
    flagged_captionless: list[str] = field(default_factory=list)
    kept_count: int = 0
    removed_count: int = 0

    def as_dict(self) -> dict:
        return {
            "kept_count": self.kept_count,
            "removed_count": self.removed_count,
            "removed_duplicates": [
                {"kept_id": kept, "removed_ids": removed} for kept, removed in self.removed_duplicates
            ],
            "removed_low_similarity": [
                {"id": sid, "score": score} for sid, score in self.removed_low_similarity
            ],
            "quarantined": list(self.quarantined),
            "flagged_captionless": list(self.flagged_captionless),
        }


class _DisjointSet:
    def __init__(self, items):
        self._parent = {i: i for i in items}

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self._parent[rb] = ra

    def components(self) -> dict:
        groups: dict = {}
        for item in self._parent:
            groups.setdefault(self.find(item), []).append(item)
        return groups


def dedup(
    manifest: DatasetManifest,
    config: CleaningConfig,
    hasher: Hasher | None = None,
    max_workers: int = 8,
) -> tuple[DatasetManifest, CleaningReport]:
    """Remove near-duplicates, keeping one representative per cluster.

    Clusters are connected components of the pairwise Hamming-distance graph
    at ``config.hamming_threshold``; the lexicographically smallest id in each
    cluster survives, which makes the kept set independent of input order.
    Unreadable images go to the quarantine list and are excluded from the
    kept manifest (never silently dropped: the report names them).
    """
    hasher = hasher or FileHasher()
    report = CleaningReport()

    hashes: dict[str, PerceptualHash] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = pool.map(lambda s: (s.id, _try_hash(hasher, s)), manifest.samples)
    for sample_id, value in results:
        if value is None:
            report.quarantined.append(sample_id)
        else:
            hashes[sample_id] = value

    ids = sorted(hashes)
    ds = _DisjointSet(ids)
    for i, a in enumerate(ids):
        ha = hashes[a]
        for b in ids[i + 1:]:
            if ha.distance(hashes[b]) <= config.hamming_threshold:
                ds.union(a, b)

    keep: set[str] = set()
    for members in ds.components().values():
        members.sort()
        keep.add(members[0])
        if len(members) > 1:
            report.removed_duplicates.append((members[0], members[1:]))
    report.removed_duplicates.sort(key=lambda pair: pair[0])

    kept = manifest.restrict(keep)
    report.kept_count = len(kept)
    report.removed_count = len(manifest) - len(kept)
    return kept, report


def _try_hash(hasher: Hasher, sample: Sample) -> PerceptualHash | None:
    try:
        return hasher(sample)
    except ImageUnreadableError:
        return None


def similarity_filter(
    manifest: DatasetManifest,
    config: CleaningConfig,
    scorer: SimilarityScorer,
) -> tuple[DatasetManifest, CleaningReport]:
    """Drop samples whose image-text similarity is strictly below the threshold.

    Boundary semantics are strict less-than: a score exactly at the threshold
    is kept. Captionless samples cannot be scored; they are kept and flagged.
    """
    report = CleaningReport()
    keep: set[str] = set()
    for sample in manifest:
        if not sample.caption:
            keep.add(sample.id)
            report.flagged_captionless.append(sample.id)
            continue
        score = scorer(sample)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"scorer returned {score} for {sample.id!r}; scores must be in [0, 1]")
        if score < config.similarity_threshold:
            report.removed_low_similarity.append((sample.id, score))
        else:
            keep.add(sample.id)
    kept = manifest.restrict(keep)
    report.kept_count = len(kept)
    report.removed_count = len(manifest) - len(kept)
    return kept, report


class MockSimilarityScorer:
    """Deterministic scorer for tests and dry runs.

    Scores come from a fixed map when given, otherwise from a keyed hash of
    the sample id (stable across runs and platforms).
    """

    def __init__(self, scores: dict[str, float] | None = None, constant: float | None = None, seed: int = 0):
        self.scores = scores or {}
        self.constant = constant
        self.seed = seed

    def __call__(self, sample: Sample) -> float:
        if sample.id in self.scores:
            return self.scores[sample.id]
        if self.constant is not None:
            return self.constant
        digest = hashlib.blake2b(f"{self.seed}:sim:{sample.id}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") / 2**64


class HttpSimilarityScorer:
    """Scores image-caption pairs through an embedding endpoint.

    POSTs ``{"image_base64": ..., "text": ...}`` to ``{base_url}/v1/similarity``
    and expects ``{"score": s}`` with s in [0, 1]. The endpoint owns the
    mapping from embedding distance to the unit interval.
    """

    def __init__(self, endpoint_config, image_root: str | Path | None = None, session=None):
        import requests

        self.config = endpoint_config
        self.image_root = Path(image_root) if image_root else None
        self._session = session or requests.Session()

    def __call__(self, sample: Sample) -> float:
        import requests

        ref = Path(sample.image_ref)
        if self.image_root is not None and not ref.is_absolute():
            ref = self.image_root / ref
        try:
            payload = {
                "image_base64": base64.b64encode(ref.read_bytes()).decode("ascii"),
                "text": sample.caption or "",
            }
        except OSError as exc:
            raise ImageUnreadableError(f"cannot read {ref}: {exc}") from exc
        try:
            resp = self._session.post(
                f"{self.config.base_url.rstrip('/')}/v1/similarity",
                json=payload,
                timeout=self.config.timeout_ms / 1000.0,
            )
            resp.raise_for_status()
            return float(resp.json()["score"])
        except (requests.RequestException, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ScorerUnavailableError(f"similarity endpoint failed: {exc}") from exc
