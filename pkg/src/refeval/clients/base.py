"""Client contracts, configuration, and the content-addressed response cache.

Every external model the pipeline touches is reached through one of the
abstract contracts below, each shipped with an HTTP-JSON live adapter
(http.py) and a deterministic mock (mocks.py) so the toolkit runs offline.
"""

from __future__ import annotations

import hashlib
import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import BBox, DomainError, ImageRef, SubjectInstance


class ClientError(RuntimeError):
    """External model call failed after retries, or returned invalid output."""


@dataclass
class ClientConfig:
    endpoint: str = ""
    timeout: float = 30.0
    retries: int = 2
    cache_enabled: bool = True
    api_key: str = ""

    def __post_init__(self):
        if self.timeout <= 0:
            raise DomainError("timeout must be positive")
        if self.retries < 0:
            raise DomainError("retries must be non-negative")


@dataclass(frozen=True)
class TokenDist:
    """Distribution over output token strings at one generated position."""

    position: int
    probs: dict

    def __post_init__(self):
        if any(p < 0 for p in self.probs.values()):
            raise DomainError("token probabilities must be non-negative")
        for required in ("0", "1"):
            if required not in self.probs:
                raise DomainError(f"token distribution missing entry for {required!r}")


@dataclass(frozen=True)
class InpaintParams:
    eta: float = 1.0
    guidance_scale: float = 3.0

    def __post_init__(self):
        if self.guidance_scale <= 0:
            raise DomainError("guidance_scale must be positive")


def cache_key(op: str, *parts) -> str:
    """Digest of (operation name, content hashes / text / params / seed)."""
    h = hashlib.sha256()
    h.update(op.encode())
    for part in parts:
        h.update(b"\x00")
        if isinstance(part, ImageRef):
            h.update(part.content_hash.encode())
        elif isinstance(part, np.ndarray):
            h.update(hashlib.sha256(np.ascontiguousarray(part).tobytes()).hexdigest().encode())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
    return h.hexdigest()


class ResponseCache:
    """Thread-safe JSON payload cache keyed by request digest.

    With a directory it persists across runs (resumable batches); without one
    it is a plain in-memory dict.
    """

    def __init__(self, directory: str | Path | None = None):
        self._dir = Path(directory) if directory else None
        if self._dir:
            self._dir.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, str] = {}
        self._lock = threading.Lock()

    def get(self, key: str):
        with self._lock:
            if key in self._mem:
                return json.loads(self._mem[key])
            if self._dir:
                path = self._dir / f"{key}.json"
                if path.exists():
                    payload = path.read_text()
                    self._mem[key] = payload
                    return json.loads(payload)
        return None

    def put(self, key: str, payload) -> None:
        text = json.dumps(payload)
        with self._lock:
            self._mem[key] = text
            if self._dir:
                tmp = self._dir / f"{key}.json.tmp"
                tmp.write_text(text)
                tmp.replace(self._dir / f"{key}.json")


class BaseClient(ABC):
    """Shared caching and call accounting for all client implementations."""

    def __init__(self, config: ClientConfig | None = None, cache: ResponseCache | None = None):
        self.config = config or ClientConfig()
        self.cache = cache if cache is not None else ResponseCache()
        self.transport_calls = 0
        self._lock = threading.Lock()

    def _cached(self, key: str, compute):
        if self.config.cache_enabled:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        result = compute()
        with self._lock:
            self.transport_calls += 1
        if self.config.cache_enabled:
            self.cache.put(key, result)
        return result


class CaptionClient(BaseClient):
    @abstractmethod
    def caption(self, img: ImageRef, subject: SubjectInstance) -> str:
        """Describe `img` focusing on the boxed subject."""


class PerturbClient(BaseClient):
    @abstractmethod
    def perturb_caption(self, caption: str) -> str:
        """Corrupt one non-subject detail, marking it with swap tags."""


class InpaintClient(BaseClient):
    @abstractmethod
    def inpaint(self, img: ImageRef, patch_mask: np.ndarray, params: InpaintParams,
                seed: int = 0) -> ImageRef:
        """Regenerate the masked region; pixels outside it stay bit-identical."""


class DetectClient(BaseClient):
    @abstractmethod
    def detect(self, img: ImageRef, entity: str) -> list[tuple[BBox, float]]:
        """Locate `entity` in `img`; boxes sorted by descending confidence."""


class EmbedClient(BaseClient):
    @abstractmethod
    def embed(self, payload: ImageRef | str) -> np.ndarray:
        """Embed an image or a text into a unit vector."""


class QualityClient(BaseClient):
    @abstractmethod
    def judge_quality(self, img: ImageRef, question: str) -> bool:
        """Yes/no visual quality judgment; failures are treated as reject."""


class InferenceClient(BaseClient):
    @abstractmethod
    def infer_tokens(self, ref: ImageRef, tgt: ImageRef, marked_prompt: str) -> list[TokenDist]:
        """Per-position token distributions for the two-digit output protocol."""


@dataclass
class ClientBundle:
    """Everything the pipeline stages need, wired either to mocks or live adapters."""

    caption: CaptionClient
    perturb: PerturbClient
    inpaint: InpaintClient
    detect: DetectClient
    embed: EmbedClient
    quality: QualityClient
    inference: InferenceClient | None = None


def require_single_subject_span(text: str) -> tuple[int, int]:
    """Return (start, end) byte offsets of the single <u>...</u> span content."""
    import re

    spans = list(re.finditer(r"<u>(.*?)</u>", text, flags=re.DOTALL))
    if len(spans) != 1:
        raise DomainError(f"expected exactly one <u>...</u> span, found {len(spans)}")
    m = spans[0]
    if not m.group(1):
        raise DomainError("subject span is empty")
    return m.start(1), m.end(1)
