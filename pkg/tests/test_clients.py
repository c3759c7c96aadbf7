import numpy as np
import pytest

from refeval.clients import (
    ClientConfig,
    ClientError,
    InpaintParams,
    MockCaptionClient,
    MockDetectClient,
    MockEmbedClient,
    MockInpaintClient,
    MockPerturbClient,
    MockQualityClient,
    OracleInferenceClient,
    ResponseCache,
    TokenDist,
)
from refeval.clients.http import HttpCaptionClient, HttpTransport
from refeval.core import BBox, DomainError, load_ref

from conftest import make_subject, random_image, rect_mask


class TestClientConfig:
    def test_validation(self):
        with pytest.raises(DomainError):
            ClientConfig(timeout=0)
        with pytest.raises(DomainError):
            ClientConfig(retries=-1)


class TestTokenDist:
    def test_requires_binary_keys(self):
        with pytest.raises(DomainError):
            TokenDist(0, {"0": 0.5})
        with pytest.raises(DomainError):
            TokenDist(0, {"0": -0.1, "1": 0.5})
        TokenDist(0, {"0": 0.4, "1": 0.6})


class TestCaptionMock:
    def test_contains_entity_and_is_stable(self, store, rng):
        client = MockCaptionClient()
        subject = make_subject(store, rng, "dog")
        text = client.caption(subject.frame, subject)
        assert "dog" in text
        assert client.caption(subject.frame, subject) == text

    def test_different_images_differ(self, store, rng):
        client = MockCaptionClient()
        s1 = make_subject(store, rng, "dog")
        s2 = make_subject(store, rng, "dog")
        # hash-derived props make collisions unlikely at this scale
        assert client.caption(s1.frame, s1) != client.caption(s2.frame, s2)


class TestPerturbMock:
    def test_swaps_first_known_noun_outside_span(self):
        client = MockPerturbClient()
        out = client.perturb_caption("A <u>dog</u> is sitting on a rock near a tree.")
        assert "<swap>rock</swap><branch>" in out

    def test_missing_span_rejected(self):
        with pytest.raises(DomainError):
            MockPerturbClient().perturb_caption("A dog on a rock.")


class TestInpaintMock:
    def test_outside_mask_unchanged(self, store, rng):
        client = MockInpaintClient(store)
        ref = store.put(random_image(rng, 16, 16))
        mask = rect_mask(16, 16, 4, 8, 4, 8)
        out = client.inpaint(ref, mask, InpaintParams(), seed=1)
        a, b = load_ref(ref), load_ref(out)
        assert (a[~mask] == b[~mask]).all()
        assert (a[mask] != b[mask]).any()

    def test_empty_mask_returns_input(self, store, rng):
        client = MockInpaintClient(store)
        ref = store.put(random_image(rng, 16, 16))
        out = client.inpaint(ref, np.zeros((16, 16), dtype=bool), InpaintParams())
        assert out.content_hash == ref.content_hash

    def test_deterministic_given_seed(self, store, rng):
        client = MockInpaintClient(store)
        ref = store.put(random_image(rng, 16, 16))
        mask = rect_mask(16, 16, 2, 10, 2, 10)
        a = client.inpaint(ref, mask, InpaintParams(), seed=3)
        b = client.inpaint(ref, mask, InpaintParams(), seed=3)
        assert a.content_hash == b.content_hash


class TestDetectMock:
    def test_fixture_table(self, store, rng):
        ref = store.put(random_image(rng, 32, 32))
        fixtures = {(ref.content_hash, "dog"): [(BBox(1, 1, 5, 5), 0.4),
                                                (BBox(2, 2, 6, 6), 0.9)]}
        client = MockDetectClient(fixtures)
        hits = client.detect(ref, "dog")
        assert [conf for _, conf in hits] == [0.9, 0.4]
        assert all(box.fits_inside(32, 32) for box, _ in hits)

    def test_unknown_key_empty(self, store, rng):
        ref = store.put(random_image(rng, 32, 32))
        assert MockDetectClient({}).detect(ref, "cat") == []


class TestEmbedMock:
    def test_unit_norm_and_determinism(self, store, rng):
        client = MockEmbedClient(dim=16)
        ref = store.put(random_image(rng))
        v1, v2 = client.embed(ref), client.embed(ref)
        assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-6)
        assert (v1 == v2).all()
        assert not np.allclose(v1, client.embed("some text"))


class TestQualityMock:
    def test_fixture_verdicts_and_fail_closed_default(self, store, rng):
        blurry = store.put(random_image(rng))
        clear = store.put(random_image(rng))
        unknown = store.put(random_image(rng))
        client = MockQualityClient({blurry.content_hash: False, clear.content_hash: True})
        assert client.judge_quality(blurry, "sharp?") is False
        assert client.judge_quality(clear, "sharp?") is True
        assert client.judge_quality(unknown, "sharp?") is False


class TestOracleInference:
    def test_emits_gold_consistent_distributions(self, store, rng):
        ref = store.put(random_image(rng))
        tgt = store.put(random_image(rng))
        prompt = "A <u>dog</u> on a rock."
        key = OracleInferenceClient.triplet_key(ref, tgt, prompt)
        client = OracleInferenceClient({key: (1, 0)})
        dists = client.infer_tokens(ref, tgt, prompt)
        assert dists[0].probs["1"] == pytest.approx(0.95)
        assert dists[1].probs["1"] == pytest.approx(0.05)
        for d in dists:
            assert set(d.probs) >= {"0", "1"}

    def test_noisy_variant_stays_consistent(self, store, rng):
        ref = store.put(random_image(rng))
        tgt = store.put(random_image(rng))
        prompt = "A <u>cat</u> near a tree."
        key = OracleInferenceClient.triplet_key(ref, tgt, prompt)
        client = OracleInferenceClient({key: (1, 1)}, noise=0.02, seed=5)
        d1 = client.infer_tokens(ref, tgt, prompt)
        d2 = client.infer_tokens(ref, tgt, prompt)
        assert d1[0].probs == d2[0].probs
        assert 0.9 < d1[0].probs["1"] < 1.0


class TestCaching:
    def test_repeat_request_hits_cache(self, store, rng):
        client = MockCaptionClient(cache=ResponseCache())
        subject = make_subject(store, rng)
        client.caption(subject.frame, subject)
        assert client.transport_calls == 1
        client.caption(subject.frame, subject)
        assert client.transport_calls == 1

    def test_cache_disabled_recomputes(self, store, rng):
        client = MockCaptionClient(ClientConfig(cache_enabled=False))
        subject = make_subject(store, rng)
        client.caption(subject.frame, subject)
        client.caption(subject.frame, subject)
        assert client.transport_calls == 2

    def test_disk_cache_survives_new_client(self, store, rng, tmp_path):
        cache_dir = tmp_path / "cache"
        subject = make_subject(store, rng)
        first = MockCaptionClient(cache=ResponseCache(cache_dir))
        text = first.caption(subject.frame, subject)
        second = MockCaptionClient(cache=ResponseCache(cache_dir))
        assert second.caption(subject.frame, subject) == text
        assert second.transport_calls == 0


class FailingTransport(HttpTransport):
    def __init__(self):
        super().__init__(backoff=0)
        self.attempts = 0

    def post(self, config, payload):
        # reuse the retry loop but fail every attempt
        class BoomSession:
            def post(inner, *a, **k):
                self.attempts += 1
                raise ConnectionError("unreachable")

        self.session = BoomSession()
        return super().post(config, payload)


class TestHttpRetries:
    def test_unreachable_endpoint_retried_then_error(self, store, rng):
        transport = FailingTransport()
        client = HttpCaptionClient(
            ClientConfig(endpoint="http://127.0.0.1:1/x", retries=2),
            transport=transport,
        )
        subject = make_subject(store, rng)
        with pytest.raises(ClientError):
            client.caption(subject.frame, subject)
        assert transport.attempts == 3  # initial try + 2 retries
