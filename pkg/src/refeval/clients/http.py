"""HTTP-JSON live adapters for the client contracts.

Request schema is uniform: POST to the configured endpoint with a JSON body
carrying base64-encoded PNG payloads for images, UTF-8 text, and numeric
params. Responses are JSON. Endpoint and API key come from ClientConfig,
typically populated from a config file with environment-variable overrides.

Live inpaint output is re-composited against the source image so that
pixels outside the patch mask are bit-exact regardless of what the model
returns.
"""

from __future__ import annotations

import base64
import io
import time

import numpy as np
from PIL import Image

import requests

from ..core import BBox, DomainError, ImageRef, ImageStore, SubjectInstance, load_ref
from .base import (
    CaptionClient,
    ClientConfig,
    ClientError,
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


def encode_image(ref: ImageRef) -> str:
    buf = io.BytesIO()
    Image.fromarray(load_ref(ref), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def encode_mask(mask: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def decode_image(payload: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(payload))) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


class HttpTransport:
    """POSTs JSON with bounded retries. Swappable in tests."""

    def __init__(self, session=None, backoff: float = 0.5):
        self.session = session or requests.Session()
        self.backoff = backoff

    def post(self, config: ClientConfig, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        last_error = None
        for attempt in range(config.retries + 1):
            try:
                resp = self.session.post(
                    config.endpoint, json=payload, headers=headers, timeout=config.timeout
                )
                resp.raise_for_status()
                return resp.json()
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                last_error = exc
                if attempt < config.retries:
                    time.sleep(self.backoff * (attempt + 1))
        raise ClientError(f"request failed after {config.retries + 1} attempts: {last_error}")


class HttpCaptionClient(CaptionClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def caption(self, img: ImageRef, subject: SubjectInstance) -> str:
        key = cache_key("caption", img, subject.entity)

        def compute():
            body = {
                "op": "caption",
                "image": encode_image(img),
                "entity": subject.entity,
                "bbox": subject.bbox.as_list(),
            }
            return self.transport.post(self.config, body)["caption"]

        text = self._cached(key, compute)
        if not text:
            raise ClientError("caption endpoint returned empty text")
        return text


class HttpPerturbClient(PerturbClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def perturb_caption(self, caption: str) -> str:
        require_single_subject_span(caption)
        key = cache_key("perturb", caption)
        return self._cached(
            key,
            lambda: self.transport.post(
                self.config, {"op": "perturb", "caption": caption})["caption"],
        )


class HttpInpaintClient(InpaintClient):
    def __init__(self, config: ClientConfig, store: ImageStore,
                 cache: ResponseCache | None = None, transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.store = store
        self.transport = transport or HttpTransport()

    def inpaint(self, img: ImageRef, patch_mask: np.ndarray, params: InpaintParams,
                seed: int = 0) -> ImageRef:
        if patch_mask.shape != (img.height, img.width):
            raise DomainError("mask dimensions must match the image")
        source = load_ref(img)
        if not patch_mask.any():
            return self.store.put(source)
        key = cache_key("inpaint", img, patch_mask, params.eta, params.guidance_scale, seed)

        def compute():
            body = {
                "op": "inpaint",
                "image": encode_image(img),
                "mask": encode_mask(patch_mask),
                "eta": params.eta,
                "guidance_scale": params.guidance_scale,
                "seed": seed,
            }
            generated = decode_image(self.transport.post(self.config, body)["image"])
            if generated.shape != source.shape:
                raise ClientError("inpaint endpoint returned mismatched dimensions")
            composited = source.copy()
            region = patch_mask.astype(bool)
            composited[region] = generated[region]
            return self.store.put(composited).to_dict()

        return ImageRef.from_dict(self._cached(key, compute))


class HttpDetectClient(DetectClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def detect(self, img: ImageRef, entity: str) -> list[tuple[BBox, float]]:
        key = cache_key("detect", img, entity)

        def compute():
            body = {"op": "detect", "image": encode_image(img), "entity": entity}
            return self.transport.post(self.config, body)["detections"]

        raw = self._cached(key, compute)
        results = [(BBox(*d["bbox"]), float(d["confidence"])) for d in raw]
        for box, _ in results:
            if not box.fits_inside(img.width, img.height):
                raise ClientError(f"detector returned out-of-bounds box {box}")
        return sorted(results, key=lambda r: -r[1])


class HttpEmbedClient(EmbedClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def embed(self, payload: ImageRef | str) -> np.ndarray:
        if isinstance(payload, ImageRef):
            key = cache_key("embed", payload)
            body = {"op": "embed", "image": encode_image(payload)}
        else:
            key = cache_key("embed", f"text:{payload}")
            body = {"op": "embed", "text": payload}
        vec = np.array(self._cached(
            key, lambda: self.transport.post(self.config, body)["embedding"]))
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ClientError("embedding endpoint returned a zero vector")
        return vec / norm


class HttpQualityClient(QualityClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def judge_quality(self, img: ImageRef, question: str) -> bool:
        key = cache_key("judge", img, question)
        body = {"op": "judge", "image": encode_image(img), "question": question}
        return bool(self._cached(key, lambda: self.transport.post(self.config, body)["verdict"]))


class HttpInferenceClient(InferenceClient):
    def __init__(self, config: ClientConfig, cache: ResponseCache | None = None,
                 transport: HttpTransport | None = None):
        super().__init__(config, cache)
        self.transport = transport or HttpTransport()

    def infer_tokens(self, ref: ImageRef, tgt: ImageRef, marked_prompt: str) -> list[TokenDist]:
        require_single_subject_span(marked_prompt)
        key = cache_key("infer", ref, tgt, marked_prompt)

        def compute():
            body = {
                "op": "infer",
                "image_ref": encode_image(ref),
                "image_tgt": encode_image(tgt),
                "prompt": marked_prompt,
            }
            return self.transport.post(self.config, body)["token_dists"]

        raw = self._cached(key, compute)
        if len(raw) < 2:
            raise ClientError("inference endpoint returned fewer than two positions")
        return [TokenDist(i, d) for i, d in enumerate(raw)]
