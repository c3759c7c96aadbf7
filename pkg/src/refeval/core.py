"""Shared domain types and pure image/score primitives.

Pixel model is 8-bit RGB throughout; alpha channels are dropped on load.
Content hashes are computed over decoded pixel bytes, not file bytes, so
they survive re-encoding.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image


class DomainError(ValueError):
    """Raised when an operation's preconditions are violated."""


class IntegrityError(RuntimeError):
    """Raised when stored content no longer matches its recorded hash."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box. (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DomainError(f"bbox must have positive size, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise DomainError(f"bbox origin must be non-negative, got ({self.x}, {self.y})")

    def fits_inside(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class ImageRef:
    """Pointer to image content: path plus dimensions and a pixel-content hash."""

    path: str
    width: int
    height: int
    content_hash: str

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(d["path"], d["width"], d["height"], d["content_hash"])


class CategoryTag(str, Enum):
    ANIMAL = "Animal"
    HUMAN = "Human"
    OBJECT = "Object"
    LANDMARK = "Landmark"
    MULTI_SUBJECT = "MultiSubject"


@dataclass(frozen=True)
class SubjectInstance:
    """A localized subject (entity + box) inside a specific frame."""

    frame: ImageRef
    entity: str
    bbox: BBox
    named_entity: bool = False
    mask_path: str | None = None

    def __post_init__(self):
        if not self.bbox.fits_inside(self.frame.width, self.frame.height):
            raise DomainError(
                f"bbox {self.bbox} does not fit inside {self.frame.width}x{self.frame.height} frame"
            )


@dataclass(frozen=True)
class ScorePair:
    """Per-instance (textual alignment, subject preservation) scores.

    Scale is metric-specific; ROC AUC only consumes the ranking, so baseline
    scores stay on their native scales.
    """

    ta: float
    sp: float
    scale: str = "unit"

    def __post_init__(self):
        if not (np.isfinite(self.ta) and np.isfinite(self.sp)):
            raise DomainError("scores must be finite")


def harmonic_mean(a: float, b: float) -> float:
    """Harmonic mean 2ab/(a+b) of two non-negative reals; 0 when both are 0."""
    if a < 0 or b < 0:
        raise DomainError(f"harmonic_mean needs non-negative inputs, got ({a}, {b})")
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def pixel_hash(pixels: np.ndarray) -> str:
    """sha256 over raw decoded RGB bytes plus shape, stable across re-encoding."""
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def load_pixels(path: str | Path) -> np.ndarray:
    """Load an image file as an HxWx3 uint8 RGB array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_mask(path: str | Path) -> np.ndarray:
    """Load a single-channel mask PNG as a boolean HxW array (nonzero = inside)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


class ImageStore:
    """Content-addressed PNG store: arrays in, ImageRefs out.

    Written files are named by pixel hash, so identical content dedupes and
    every ref can be verified on read.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, pixels: np.ndarray) -> ImageRef:
        pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
        digest = pixel_hash(pixels)
        path = self.root / f"{digest}.png"
        if not path.exists():
            Image.fromarray(pixels, mode="RGB").save(path)
        h, w = pixels.shape[:2]
        return ImageRef(str(path), w, h, digest)


def ref_for_file(path: str | Path) -> ImageRef:
    """Build an ImageRef for an existing image file."""
    pixels = load_pixels(path)
    h, w = pixels.shape[:2]
    return ImageRef(str(path), w, h, pixel_hash(pixels))


def load_ref(ref: ImageRef, verify: bool = False) -> np.ndarray:
    pixels = load_pixels(ref.path)
    if verify and pixel_hash(pixels) != ref.content_hash:
        raise IntegrityError(f"content hash mismatch for {ref.path}")
    return pixels


def crop(img: ImageRef, box: BBox, store: ImageStore) -> ImageRef:
    """Cut `box` out of `img`, bit-exact, and persist it in `store`."""
    if not box.fits_inside(img.width, img.height):
        raise DomainError(f"crop box {box} out of bounds for {img.width}x{img.height} image")
    pixels = load_ref(img)
    region = pixels[box.y : box.y + box.h, box.x : box.x + box.w]
    return store.put(region)


def crop_pixels(pixels: np.ndarray, box: BBox) -> np.ndarray:
    h, w = pixels.shape[:2]
    if not box.fits_inside(w, h):
        raise DomainError(f"crop box {box} out of bounds for {w}x{h} image")
    return pixels[box.y : box.y + box.h, box.x : box.x + box.w].copy()


def masked_mse(a: np.ndarray, b: np.ndarray, region: np.ndarray) -> float:
    """Mean squared per-channel difference over masked pixels, in 0-255 units.

    Channels are averaged: the denominator is (masked pixel count) x 3.
    """
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    if region.shape != a.shape[:2]:
        raise DomainError(f"mask shape {region.shape} does not match image {a.shape[:2]}")
    region = region.astype(bool)
    n = int(region.sum())
    if n == 0:
        raise DomainError("masked_mse needs a nonempty mask")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float((diff[region] ** 2).sum() / (n * a.shape[2]))


def masked_mse_refs(a: ImageRef, b: ImageRef, region: np.ndarray) -> float:
    return masked_mse(load_ref(a), load_ref(b), region)


DEFAULT_OUTLINE_COLOR = (255, 0, 0)
DEFAULT_OUTLINE_WIDTH = 3


def draw_bbox(
    img: ImageRef,
    box: BBox,
    store: ImageStore,
    color: tuple[int, int, int] = DEFAULT_OUTLINE_COLOR,
    width: int = DEFAULT_OUTLINE_WIDTH,
) -> ImageRef:
    """Return a copy of `img` with a rectangle outline around `box`.

    The outline is drawn inward from the box edge; pixels strictly inside it
    and everywhere outside the box are untouched, so drawing is idempotent.
    """
    if not box.fits_inside(img.width, img.height):
        raise DomainError(f"bbox {box} out of bounds for {img.width}x{img.height} image")
    pixels = load_ref(img).copy()
    c = np.array(color, dtype=np.uint8)
    w = min(width, box.w // 2 + box.w % 2, box.h // 2 + box.h % 2)
    x0, y0, x1, y1 = box.x, box.y, box.x + box.w, box.y + box.h
    pixels[y0 : y0 + w, x0:x1] = c
    pixels[y1 - w : y1, x0:x1] = c
    pixels[y0:y1, x0 : x0 + w] = c
    pixels[y0:y1, x1 - w : x1] = c
    return store.put(pixels)
