"""Deterministic in-repo mocks for every client contract.

All mocks are pure functions of (inputs, seed), so pipelines and tests run
offline and reproduce bit-identical outputs.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from ..core import BBox, DomainError, ImageRef, ImageStore, SubjectInstance, load_ref
from .base import (
    CaptionClient,
    ClientError,
    ClientConfig,
    DetectClient,
    EmbedClient,
    InferenceClient,
    InpaintClient,
    InpaintParams,
    PerturbClient,
    QualityClient,
    ResponseCache,
    TokenDist,
    cache_key,
    require_single_subject_span,
)

_PROPS = ["rock", "tree", "chair", "table", "fence", "river", "hill", "wall"]

# Fixed replacement dictionary used by the perturbation mock.
_SWAP_ALTERNATIVES = {
    "rock": "branch",
    "tree": "bush",
    "chair": "bench",
    "table": "desk",
    "fence": "hedge",
    "river": "pond",
    "hill": "dune",
    "wall": "gate",
    "red": "blue",
    "grass": "sand",
}


def _seed_from(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


class MockCaptionClient(CaptionClient):
    """Templated caption derived from the image hash; always mentions the entity."""

    def caption(self, img: ImageRef, subject: SubjectInstance) -> str:
        key = cache_key("caption", img, subject.entity)

        def compute():
            rng = np.random.default_rng(_seed_from(img.content_hash, subject.entity))
            p1, p2 = rng.choice(_PROPS, size=2, replace=False)
            return f"A {subject.entity} is sitting on a {p1} near a {p2}."

        text = self._cached(key, compute)
        if not text:
            raise ClientError("caption client returned empty text")
        return text


class MockPerturbClient(PerturbClient):
    """Swaps the first known noun outside the subject span for its fixed alternative."""

    def perturb_caption(self, caption: str) -> str:
        span = require_single_subject_span(caption)
        key = cache_key("perturb", caption)

        def compute():
            for m in re.finditer(r"[A-Za-z]+", caption):
                if span[0] <= m.start() < span[1]:
                    continue
                word = m.group(0).lower()
                if word in _SWAP_ALTERNATIVES:
                    replacement = _SWAP_ALTERNATIVES[word]
                    return (
                        caption[: m.start()]
                        + f"<swap>{m.group(0)}</swap><{replacement}>"
                        + caption[m.end() :]
                    )
            raise DomainError("no perturbable detail found in caption")

        return self._cached(key, compute)


class MockInpaintClient(InpaintClient):
    """Fills the masked region with seeded noise, compositing over the original."""

    def __init__(self, store: ImageStore, config: ClientConfig | None = None,
                 cache: ResponseCache | None = None):
        super().__init__(config, cache)
        self.store = store

    def inpaint(self, img: ImageRef, patch_mask: np.ndarray, params: InpaintParams,
                seed: int = 0) -> ImageRef:
        if patch_mask.shape != (img.height, img.width):
            raise DomainError(
                f"mask shape {patch_mask.shape} does not match image {img.height}x{img.width}"
            )
        pixels = load_ref(img)
        if not patch_mask.any():
            return self.store.put(pixels)

        key = cache_key("inpaint", img, patch_mask, params.eta, params.guidance_scale, seed)

        def compute():
            rng = np.random.default_rng(
                _seed_from(img.content_hash, hashlib.sha256(
                    np.ascontiguousarray(patch_mask).tobytes()).hexdigest(), seed)
            )
            out = pixels.copy()
            noise = rng.integers(0, 256, size=pixels.shape, dtype=np.uint8)
            region = patch_mask.astype(bool)
            out[region] = noise[region]
            ref = self.store.put(out)
            return ref.to_dict()

        return ImageRef.from_dict(self._cached(key, compute))


class MockDetectClient(DetectClient):
    """Fixture-table detector keyed by (image hash, entity)."""

    def __init__(self, fixtures: dict | None = None, config: ClientConfig | None = None,
                 cache: ResponseCache | None = None):
        super().__init__(config, cache)
        self.fixtures = fixtures or {}

    def detect(self, img: ImageRef, entity: str) -> list[tuple[BBox, float]]:
        key = cache_key("detect", img, entity)

        def compute():
            hits = self.fixtures.get((img.content_hash, entity), [])
            return [[list(box.as_list() if isinstance(box, BBox) else box), float(conf)]
                    for box, conf in hits]

        raw = self._cached(key, compute)
        results = [(BBox(*box), conf) for box, conf in raw]
        for box, _ in results:
            if not box.fits_inside(img.width, img.height):
                raise DomainError(f"fixture box {box} outside image bounds")
        return sorted(results, key=lambda r: -r[1])


class MockEmbedClient(EmbedClient):
    """Seeded hash-derived unit vectors; identical inputs embed identically."""

    def __init__(self, dim: int = 32, seed: int = 0, config: ClientConfig | None = None,
                 cache: ResponseCache | None = None):
        super().__init__(config, cache)
        self.dim = dim
        self.seed = seed

    def embed(self, payload: ImageRef | str) -> np.ndarray:
        token = payload.content_hash if isinstance(payload, ImageRef) else f"text:{payload}"
        key = cache_key("embed", token, self.dim, self.seed)

        def compute():
            rng = np.random.default_rng(_seed_from(token, self.seed))
            v = rng.standard_normal(self.dim)
            return (v / np.linalg.norm(v)).tolist()

        return np.array(self._cached(key, compute))


class MockQualityClient(QualityClient):
    """Fixture-keyed yes/no judgments; unknown images get the fail-closed default."""

    def __init__(self, verdicts: dict[str, bool] | None = None, default: bool = False,
                 config: ClientConfig | None = None, cache: ResponseCache | None = None):
        super().__init__(config, cache)
        self.verdicts = verdicts or {}
        self.default = default

    def judge_quality(self, img: ImageRef, question: str) -> bool:
        key = cache_key("judge", img, question)
        return bool(self._cached(
            key, lambda: self.verdicts.get(img.content_hash, self.default)))


class OracleInferenceClient(InferenceClient):
    """Emits near-certain token distributions matching gold (ta, sp) labels.

    `gold` maps triplet_key(ref, tgt, prompt) -> (ta, sp). With `noise` > 0 a
    seeded jitter of that amplitude is added to each probability.
    """

    def __init__(self, gold: dict[str, tuple[int, int]], p_hit: float = 0.95,
                 noise: float = 0.0, seed: int = 0,
                 config: ClientConfig | None = None, cache: ResponseCache | None = None):
        super().__init__(config, cache)
        self.gold = gold
        self.p_hit = p_hit
        self.noise = noise
        self.seed = seed

    @staticmethod
    def triplet_key(ref: ImageRef, tgt: ImageRef, marked_prompt: str) -> str:
        return hashlib.sha256(
            f"{ref.content_hash}|{tgt.content_hash}|{marked_prompt}".encode()
        ).hexdigest()

    def infer_tokens(self, ref: ImageRef, tgt: ImageRef, marked_prompt: str) -> list[TokenDist]:
        require_single_subject_span(marked_prompt)
        tkey = self.triplet_key(ref, tgt, marked_prompt)
        if tkey not in self.gold:
            raise DomainError("no gold label fixture for this triplet")
        ta, sp = self.gold[tkey]
        key = cache_key("infer", tkey, self.p_hit, self.noise, self.seed)

        def compute():
            rng = np.random.default_rng(_seed_from(tkey, self.seed))
            out = []
            for bit in (ta, sp):
                p1 = self.p_hit if bit == 1 else 1.0 - self.p_hit
                if self.noise:
                    p1 = float(np.clip(p1 + rng.uniform(-self.noise, self.noise), 1e-6, 1 - 1e-6))
                out.append({"0": 1.0 - p1, "1": p1})
            return out

        dists = self._cached(key, compute)
        return [TokenDist(i, d) for i, d in enumerate(dists)]
