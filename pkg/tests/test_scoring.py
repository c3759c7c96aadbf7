import numpy as np
import pytest
from hypothesis import given, strategies as st

from refeval.assemble import assemble_triplets
from refeval.clients import (
    ClientBundle,
    MockDetectClient,
    MockEmbedClient,
    OracleInferenceClient,
    TokenDist,
)
from refeval.core import BBox, DomainError, ScorePair
from refeval.pairgen import PairRecord
from refeval.promptgen import PromptRecord, wrap_subject
from refeval.scoring import (
    NO_DETECTION_FLOOR,
    ScoreError,
    batch_score,
    build_registry,
    cosine_score,
    crop_ir_score,
    extract_scores,
    format_input,
    read_scores,
    strip_markup,
    write_scores,
)

from conftest import random_image


def dists(p0_a, p1_a, p0_b, p1_b, extra=0.0):
    return [
        TokenDist(0, {"0": p0_a, "1": p1_a, "2": extra}),
        TokenDist(1, {"0": p0_b, "1": p1_b}),
    ]


class TestExtractScores:
    def test_renormalizes_over_binary_tokens(self):
        pair = extract_scores(dists(0.2, 0.6, 0.3, 0.3, extra=0.2))
        assert pair.ta == pytest.approx(0.75)
        assert pair.sp == pytest.approx(0.5)

    def test_certain_one(self):
        pair = extract_scores(dists(0.0, 0.4, 0.4, 0.0))
        assert pair.ta == 1.0
        assert pair.sp == 0.0

    def test_positions_map_to_axes(self):
        pair = extract_scores(dists(0.9, 0.1, 0.1, 0.9))
        assert pair.ta < 0.5 < pair.sp

    def test_zero_denominator_raises(self):
        with pytest.raises(ScoreError):
            extract_scores(dists(0.0, 0.0, 0.5, 0.5))

    def test_single_position_rejected(self):
        with pytest.raises(DomainError):
            extract_scores([TokenDist(0, {"0": 0.5, "1": 0.5})])

    @given(
        p0=st.floats(min_value=0.01, max_value=1.0),
        p1=st.floats(min_value=0.0, max_value=1.0),
        bump=st.floats(min_value=0.01, max_value=1.0),
    )
    def test_monotone_in_p1(self, p0, p1, bump):
        low = extract_scores(dists(p0, p1, 0.5, 0.5)).ta
        high = extract_scores(dists(p0, p1 + bump, 0.5, 0.5)).ta
        assert high > low


class TestCosine:
    def test_matches_summation_oracle(self, rng):
        a, b = rng.normal(size=12), rng.normal(size=12)
        num = sum(float(x) * float(y) for x, y in zip(a, b))
        den = (sum(float(x) ** 2 for x in a) ** 0.5
               * sum(float(y) ** 2 for y in b) ** 0.5)
        assert cosine_score(a, b) == pytest.approx(num / den, abs=1e-12)

    def test_parallel_and_orthogonal(self):
        assert cosine_score(np.array([2.0, 0.0]), np.array([5.0, 0.0])) == pytest.approx(1.0)
        assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(DomainError):
            cosine_score(np.zeros(4), np.ones(4))


class TestCropIr:
    def test_identity_crop_scores_one(self, store, rng):
        tgt = store.put(random_image(rng, 32, 32))
        detect = MockDetectClient({(tgt.content_hash, "dog"): [(BBox(0, 0, 32, 32), 0.9)]})
        # reference equals the full-frame crop, so cosine is exactly 1
        score = crop_ir_score(tgt, tgt, "dog", detect, MockEmbedClient(), store)
        assert score == pytest.approx(1.0)

    def test_no_detection_floor(self, store, rng):
        ref = store.put(random_image(rng))
        tgt = store.put(random_image(rng))
        score = crop_ir_score(ref, tgt, "dog", MockDetectClient({}),
                              MockEmbedClient(), store)
        assert score == NO_DETECTION_FLOOR

    def test_uses_highest_confidence_box(self, store, rng):
        ref = store.put(random_image(rng, 32, 32))
        tgt = store.put(random_image(rng, 32, 32))
        best = BBox(4, 4, 8, 8)
        detect = MockDetectClient({(tgt.content_hash, "dog"): [
            (BBox(0, 0, 32, 32), 0.2), (best, 0.9)]})
        embed = MockEmbedClient()
        from refeval.core import crop

        expected = cosine_score(embed.embed(ref), embed.embed(crop(tgt, best, store)))
        got = crop_ir_score(ref, tgt, "dog", detect, embed, store)
        assert got == pytest.approx(expected)


def make_triplets(store, rng, n=4):
    triplets = []
    for i in range(n):
        ref = store.put(random_image(rng, 16, 16))
        tgt = store.put(random_image(rng, 24, 24))
        pair = PairRecord(ref, tgt, 1, "dog", "intra_scene")
        text, span = wrap_subject("A dog sits on a mat.", 2, 5)
        prompt = PromptRecord(f"p{i}", text, span, 1, "positive", tgt)
        triplets.extend(assemble_triplets([pair], [prompt])[0])
    return triplets


class TestFormatInput:
    def test_passes_images_separately(self, store, rng):
        triplet = make_triplets(store, rng, 1)[0]
        ref, tgt, prompt = format_input(triplet)
        assert ref.content_hash == triplet.image_ref.content_hash
        assert tgt.content_hash == triplet.image_tgt.content_hash
        assert "<u>dog</u>" in prompt

    def test_merged_mode_unsupported(self, store, rng):
        triplet = make_triplets(store, rng, 1)[0]
        with pytest.raises(NotImplementedError):
            format_input(triplet, concatenate_images=True)

    def test_strip_markup(self):
        assert strip_markup("A <u>dog</u> runs.") == "A dog runs."


def oracle_bundle(store, triplets, labels=(1, 1)):
    gold = {}
    for t in triplets:
        key = OracleInferenceClient.triplet_key(t.image_ref, t.image_tgt, t.prompt.text)
        gold[key] = labels
    return ClientBundle(
        caption=None, perturb=None, inpaint=None,
        detect=MockDetectClient({}), embed=MockEmbedClient(),
        quality=None, inference=OracleInferenceClient(gold),
    )


class TestBatchScore:
    def test_two_token_end_to_end(self, store, rng):
        triplets = make_triplets(store, rng)
        bundle = oracle_bundle(store, triplets, labels=(1, 0))
        registry = build_registry(bundle, store)
        records = batch_score(triplets, "two-token", registry.get("two-token"))
        assert [r.instance_id for r in records] == [t.instance_id for t in triplets]
        for r in records:
            assert r.error is None
            assert r.scores.ta > 0.5 > r.scores.sp

    def test_failures_are_isolated(self, store, rng):
        triplets = make_triplets(store, rng, 4)

        calls = []

        def flaky(triplet):
            calls.append(triplet.instance_id)
            if len(calls) == 2:
                raise RuntimeError("transient")
            return ScorePair(0.5, 0.5)

        records = batch_score(triplets, "flaky", flaky)
        errors = [r for r in records if r.error is not None]
        assert len(records) == 4 and len(errors) == 1
        assert errors[0].to_dict()["ta"] is None

    def test_failure_rate_cap(self, store, rng):
        triplets = make_triplets(store, rng, 4)

        def broken(triplet):
            raise RuntimeError("down")

        with pytest.raises(ScoreError):
            batch_score(triplets, "broken", broken)

    def test_concurrent_matches_serial(self, store, rng):
        triplets = make_triplets(store, rng, 8)
        bundle = oracle_bundle(store, triplets)
        registry = build_registry(bundle, store)
        fn = registry.get("two-token")
        serial = batch_score(triplets, "two-token", fn, concurrency=1)
        parallel = batch_score(triplets, "two-token", fn, concurrency=4)
        assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]

    def test_embedding_metric_deterministic(self, store, rng):
        triplets = make_triplets(store, rng, 3)
        bundle = oracle_bundle(store, triplets)
        registry = build_registry(bundle, store)
        a = batch_score(triplets, "embedding", registry.get("embedding"))
        b = batch_score(triplets, "embedding", registry.get("embedding"))
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


class TestScoreIO:
    def test_round_trip(self, store, rng, tmp_path):
        triplets = make_triplets(store, rng, 3)
        bundle = oracle_bundle(store, triplets)
        registry = build_registry(bundle, store)
        records = batch_score(triplets, "two-token", registry.get("two-token"))
        path = tmp_path / "scores.jsonl"
        write_scores(records, path)
        loaded = read_scores(path)
        assert loaded == [r.to_dict() for r in records]
