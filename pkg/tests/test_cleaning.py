from __future__ import annotations

import random

import pytest

from kindersafe.cleaning import (
    CleaningConfig,
    FileHasher,
    HttpSimilarityScorer,
    MockSimilarityScorer,
    PerceptualHash,
    dedup,
    phash_bytes,
    phash_file,
    similarity_filter,
)
from kindersafe.errors import ImageUnreadableError, ScorerUnavailableError
from kindersafe.manifest import DatasetManifest

from .conftest import make_manifest, make_sample, png_bytes


def oracle_clusters(hashes: dict[str, int], threshold: int) -> list[set[str]]:
    """Independent oracle: BFS connected components over brute-force pairwise distances."""
    ids = sorted(hashes)
    adjacency = {i: set() for i in ids}
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if bin(hashes[a] ^ hashes[b]).count("1") <= threshold:
                adjacency[a].add(b)
                adjacency[b].add(a)
    seen, clusters = set(), []
    for start in ids:
        if start in seen:
            continue
        component, frontier = set(), [start]
        while frontier:
            node = frontier.pop()
            if node in component:
                continue
            component.add(node)
            frontier.extend(adjacency[node] - component)
        seen |= component
        clusters.append(component)
    return clusters


def fake_hasher(hashes: dict[str, int]):
    def hash_sample(sample):
        return PerceptualHash(hashes[sample.id])
    return hash_sample


class TestPerceptualHash:
    def test_identical_bytes_identical_hash(self):
        assert phash_bytes(png_bytes(5)) == phash_bytes(png_bytes(5))

    def test_deterministic_across_calls(self, image_dir):
        assert phash_file(image_dir / "a.png") == phash_file(image_dir / "a.png")

    def test_distance_is_popcount(self):
        assert PerceptualHash(0).distance(PerceptualHash(2**64 - 1)) == 64
        assert PerceptualHash(0b1010).distance(PerceptualHash(0b0110)) == 2

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ImageUnreadableError):
            phash_file(tmp_path / "nope.png")
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not an image")
        with pytest.raises(ImageUnreadableError):
            phash_file(bad)


class TestDedup:
    def test_byte_identical_images_collapse(self, image_dir):
        manifest = make_manifest([
            make_sample("a", image_ref=str(image_dir / "a.png")),
            make_sample("a2", image_ref=str(image_dir / "a_copy.png")),
            make_sample("b", image_ref=str(image_dir / "b.png")),
        ])
        kept, report = dedup(manifest, CleaningConfig(), hasher=FileHasher())
        assert kept.ids() == ["a", "b"]
        assert report.removed_duplicates == [("a", ["a2"])]

    def test_distance_64_keeps_both(self):
        manifest = make_manifest([make_sample("a"), make_sample("b")])
        kept, report = dedup(
            manifest, CleaningConfig(hamming_threshold=8),
            hasher=fake_hasher({"a": 0, "b": 2**64 - 1}),
        )
        assert kept.ids() == ["a", "b"]
        assert report.removed_duplicates == []

    def test_transitive_chain_forms_one_cluster(self):
        # A~B and B~C are within threshold 8 but A-C is not; connectivity is
        # transitive so all three land in one cluster and A (smallest id) stays.
        hashes = {
            "A": 0,
            "B": 0b11111,            # d(A,B) = 5
            "C": 0b11111 ^ (0b11111 << 5),  # d(B,C) = 5, d(A,C) = 10
        }
        assert bin(hashes["A"] ^ hashes["B"]).count("1") == 5
        assert bin(hashes["B"] ^ hashes["C"]).count("1") == 5
        assert bin(hashes["A"] ^ hashes["C"]).count("1") == 10
        manifest = make_manifest([make_sample(i) for i in "ABC"])
        config = CleaningConfig(hamming_threshold=8)
        kept, report = dedup(manifest, config, hasher=fake_hasher(hashes))
        oracle = oracle_clusters(hashes, 8)
        assert len(oracle) == 1
        assert kept.ids() == ["A"]
        assert report.removed_duplicates == [("A", ["B", "C"])]

    def test_unreadable_goes_to_quarantine_not_silence(self, image_dir):
        manifest = make_manifest([
            make_sample("good", image_ref=str(image_dir / "a.png")),
            make_sample("gone", image_ref=str(image_dir / "missing.png")),
        ])
        kept, report = dedup(manifest, CleaningConfig(), hasher=FileHasher())
        assert kept.ids() == ["good"]
        assert report.quarantined == ["gone"]
        assert report.kept_count + report.removed_count == 2

    def test_matches_oracle_on_random_fixtures(self):
        rng = random.Random(1234)
        for trial in range(30):
            n = rng.randint(2, 24)
            # low-entropy hashes force plenty of collisions
            hashes = {f"s{i:02d}": rng.getrandbits(10) for i in range(n)}
            threshold = rng.randint(0, 6)
            manifest = make_manifest([make_sample(i) for i in sorted(hashes)])
            kept, report = dedup(
                manifest, CleaningConfig(hamming_threshold=threshold), hasher=fake_hasher(hashes)
            )
            expected_keep = {min(c) for c in oracle_clusters(hashes, threshold)}
            assert set(kept.ids()) == expected_keep, f"trial {trial}"

    def test_idempotence(self):
        rng = random.Random(99)
        hashes = {f"s{i:02d}": rng.getrandbits(12) for i in range(20)}
        manifest = make_manifest([make_sample(i) for i in sorted(hashes)])
        config = CleaningConfig(hamming_threshold=4)
        once, _ = dedup(manifest, config, hasher=fake_hasher(hashes))
        twice, report = dedup(once, config, hasher=fake_hasher(hashes))
        assert twice.ids() == once.ids()
        assert report.removed_duplicates == []

    def test_permutation_stability_of_keep_set(self):
        rng = random.Random(7)
        hashes = {f"s{i:02d}": rng.getrandbits(10) for i in range(16)}
        ids = sorted(hashes)
        manifest = make_manifest([make_sample(i) for i in ids])
        shuffled_ids = ids[:]
        rng.shuffle(shuffled_ids)
        shuffled = make_manifest([make_sample(i) for i in shuffled_ids])
        config = CleaningConfig(hamming_threshold=5)
        kept_a, _ = dedup(manifest, config, hasher=fake_hasher(hashes))
        kept_b, _ = dedup(shuffled, config, hasher=fake_hasher(hashes))
        assert set(kept_a.ids()) == set(kept_b.ids())

    def test_output_preserves_input_order(self):
        hashes = {"z": 0, "m": 1 << 40, "a": 1 << 20}
        manifest = make_manifest([make_sample(i) for i in ["z", "m", "a"]])
        kept, _ = dedup(manifest, CleaningConfig(hamming_threshold=0), hasher=fake_hasher(hashes))
        assert kept.ids() == ["z", "m", "a"]


class TestSimilarityFilter:
    def test_score_below_threshold_removed(self):
        manifest = make_manifest([make_sample("x", caption="praia")])
        _, report = similarity_filter(
            manifest, CleaningConfig(similarity_threshold=0.2),
            MockSimilarityScorer(scores={"x": 0.19}),
        )
        assert report.removed_low_similarity == [("x", 0.19)]

    def test_score_at_threshold_kept(self):
        manifest = make_manifest([make_sample("x", caption="praia")])
        kept, report = similarity_filter(
            manifest, CleaningConfig(similarity_threshold=0.2),
            MockSimilarityScorer(scores={"x": 0.20}),
        )
        assert kept.ids() == ["x"]
        assert report.removed_low_similarity == []

    def test_constant_scorer_keeps_everything(self):
        manifest = make_manifest([make_sample(f"s{i}", caption="c") for i in range(100)])
        kept, _ = similarity_filter(manifest, CleaningConfig(), MockSimilarityScorer(constant=1.0))
        assert len(kept) == 100

    def test_captionless_kept_and_flagged(self):
        manifest = make_manifest([make_sample("mute"), make_sample("talks", caption="oi")])
        kept, report = similarity_filter(
            manifest, CleaningConfig(), MockSimilarityScorer(constant=0.0)
        )
        assert kept.ids() == ["mute"]
        assert report.flagged_captionless == ["mute"]
        assert report.removed_low_similarity == [("talks", 0.0)]

    def test_out_of_range_score_rejected(self):
        manifest = make_manifest([make_sample("x", caption="c")])
        with pytest.raises(ValueError):
            similarity_filter(manifest, CleaningConfig(), MockSimilarityScorer(constant=1.5))

    def test_idempotent_for_fixed_scorer(self):
        scorer = MockSimilarityScorer(seed=3)
        manifest = make_manifest([make_sample(f"s{i}", caption="c") for i in range(50)])
        config = CleaningConfig(similarity_threshold=0.5)
        once, _ = similarity_filter(manifest, config, scorer)
        twice, report = similarity_filter(once, config, scorer)
        assert twice.ids() == once.ids()
        assert report.removed_low_similarity == []

    def test_unreachable_scorer_aborts_resumably(self, tmp_path):
        from kindersafe.backend import EndpointConfig

        (tmp_path / "x.png").write_bytes(png_bytes(1))
        manifest = make_manifest([make_sample("x", caption="c", image_ref=str(tmp_path / "x.png"))])
        scorer = HttpSimilarityScorer(
            EndpointConfig(base_url="http://127.0.0.1:9", model_name="sim", timeout_ms=300, max_retries=0)
        )
        with pytest.raises(ScorerUnavailableError):
            similarity_filter(manifest, CleaningConfig(), scorer)

    def test_removal_set_order_independent(self):
        scorer = MockSimilarityScorer(seed=11)
        ids = [f"s{i}" for i in range(40)]
        manifest = make_manifest([make_sample(i, caption="c") for i in ids])
        reversed_manifest = make_manifest([make_sample(i, caption="c") for i in reversed(ids)])
        config = CleaningConfig(similarity_threshold=0.5)
        kept_a, _ = similarity_filter(manifest, config, scorer)
        kept_b, _ = similarity_filter(reversed_manifest, config, scorer)
        assert set(kept_a.ids()) == set(kept_b.ids())


class TestConservation:
    def test_every_id_lands_in_exactly_one_bucket(self):
        rng = random.Random(5)
        for _ in range(20):
            n = rng.randint(1, 30)
            hashes = {f"s{i:02d}": rng.getrandbits(8) for i in range(n)}
            manifest = make_manifest([
                make_sample(i, caption="c" if rng.random() < 0.8 else None) for i in sorted(hashes)
            ])
            config = CleaningConfig(hamming_threshold=3, similarity_threshold=0.3)
            deduped, dedup_report = dedup(manifest, config, hasher=fake_hasher(hashes))
            cleaned, sim_report = similarity_filter(deduped, config, MockSimilarityScorer(seed=1))
            dup_removed = {rid for _, removed in dedup_report.removed_duplicates for rid in removed}
            sim_removed = {sid for sid, _ in sim_report.removed_low_similarity}
            kept = set(cleaned.ids())
            buckets = [kept, dup_removed, sim_removed, set(dedup_report.quarantined)]
            union = set().union(*buckets)
            assert union == set(manifest.ids())
            assert sum(len(b) for b in buckets) == len(manifest)

    def test_report_counts_balance(self):
        manifest = make_manifest([make_sample(f"s{i}", caption="c") for i in range(10)])
        hashes = {f"s{i}": i for i in range(10)}  # distances < 4 collapse neighbours
        kept, report = dedup(manifest, CleaningConfig(hamming_threshold=1), hasher=fake_hasher(hashes))
        assert report.kept_count == len(kept)
        assert report.kept_count + report.removed_count == 10


class TestConfigValidation:
    def test_threshold_ranges(self):
        with pytest.raises(ValueError):
            CleaningConfig(similarity_threshold=1.5)
        with pytest.raises(ValueError):
            CleaningConfig(hamming_threshold=65)
