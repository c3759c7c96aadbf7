"""Identity-sensitive pair construction via masked inpainting.

For each subject with a gold segmentation mask: sample rectangular patches
inside the mask until they cover 30-50% of it, inpaint each patch set,
keep the variant whose altered region diverges most (MSE) from the
original, and emit one positive pair (original image) and one negative
pair (corrupted image) sharing the same unmodified subject crop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clients.base import InpaintParams
from .core import (
    BBox,
    CategoryTag,
    DomainError,
    ImageRef,
    ImageStore,
    crop,
    load_mask,
    load_ref,
    masked_mse,
    ref_for_file,
)

# Minimum subject mask area (pixels) per category.
MIN_MASK_AREA = {
    CategoryTag.OBJECT: 60_000,
    CategoryTag.ANIMAL: 60_000,
    CategoryTag.HUMAN: 20_000,
}

# A variant survives only if its patchwise MSE reaches the category cutoff.
MSE_CUTOFFS = {
    CategoryTag.OBJECT: 6_500.0,
    CategoryTag.ANIMAL: 5_400.0,
    CategoryTag.HUMAN: 20_000.0,
}


class SamplingError(RuntimeError):
    """Patch sampling could not reach the coverage band within the attempt budget."""


@dataclass(frozen=True)
class PatchConfig:
    """Controls the rectangular patch sampler.

    `unit` selects how `size_range` is read: "side" draws each rectangle's
    side lengths from the range, "area" draws its area from
    [low^2, high^2] with a random aspect ratio.
    """

    size_range: tuple[int, int] = (250, 300)
    unit: str = "side"  # side | area
    max_patches: int = 5
    coverage: tuple[float, float] = (0.30, 0.50)
    max_attempts: int = 50

    def __post_init__(self):
        if self.unit not in ("side", "area"):
            raise DomainError(f"unknown patch unit {self.unit!r}")
        if not (0 < self.coverage[0] < self.coverage[1] <= 1):
            raise DomainError("coverage band must satisfy 0 < low < high <= 1")


@dataclass
class SubjectMask:
    subject_id: str
    image: ImageRef
    mask: np.ndarray  # boolean HxW
    category: CategoryTag

    def __post_init__(self):
        if self.mask.shape != (self.image.height, self.image.width):
            raise DomainError("mask dimensions must match the image")
        self.area = int(self.mask.sum())
        if self.area == 0:
            raise DomainError("subject mask is empty")


@dataclass
class InpaintVariant:
    image: ImageRef
    patch_mask: np.ndarray
    mse: float


def _window_positions(mask: np.ndarray, w: int, h: int) -> np.ndarray:
    """Top-left corners where a w x h rectangle lies entirely inside the mask."""
    H, W = mask.shape
    if h > H or w > W:
        return np.empty((0, 2), dtype=np.int64)
    integral = np.zeros((H + 1, W + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(mask.astype(np.int64), axis=0), axis=1)
    sums = (
        integral[h:, w:]
        - integral[:-h, w:]
        - integral[h:, :-w]
        + integral[:-h, :-w]
    )
    ys, xs = np.nonzero(sums == w * h)
    return np.stack([ys, xs], axis=1)


def sample_patch_mask(subject: SubjectMask, rng_seed: int,
                      config: PatchConfig = PatchConfig(),
                      min_area_by_category: dict | None = None) -> np.ndarray:
    """Sample a union of rectangles inside the subject mask covering 30-50% of it.

    Deterministic given `rng_seed`. Patches are placed one at a time;
    placement stops as soon as cumulative coverage enters the band. An
    attempt that overshoots the band or runs out of patches is discarded
    and resampled, up to `config.max_attempts`.
    """
    min_area = (min_area_by_category or MIN_MASK_AREA).get(subject.category)
    if min_area is not None and subject.area < min_area:
        raise DomainError(
            f"subject area {subject.area} below the {subject.category.value} minimum {min_area}"
        )
    rng = np.random.default_rng(rng_seed)
    low, high = config.coverage
    lo, hi = config.size_range

    for _ in range(config.max_attempts):
        union = np.zeros_like(subject.mask, dtype=bool)
        ok = False
        for _ in range(config.max_patches):
            placed = False
            for _ in range(10):  # size retries when a rectangle cannot fit
                if config.unit == "side":
                    w = int(rng.integers(lo, hi + 1))
                    h = int(rng.integers(lo, hi + 1))
                else:
                    area = float(rng.uniform(lo * lo, hi * hi))
                    aspect = float(rng.uniform(0.5, 2.0))
                    w = max(1, int(round(np.sqrt(area * aspect))))
                    h = max(1, int(round(area / w)))
                positions = _window_positions(subject.mask, w, h)
                if len(positions):
                    y, x = positions[rng.integers(len(positions))]
                    union[y : y + h, x : x + w] = True
                    placed = True
                    break
            if not placed:
                break
            coverage = union.sum() / subject.area
            if coverage > high:
                break
            if coverage >= low:
                ok = True
                break
        if ok:
            return union
    raise SamplingError(
        f"could not reach coverage {config.coverage} for subject {subject.subject_id} "
        f"after {config.max_attempts} attempts"
    )


def generate_variants(
    subject: SubjectMask,
    inpaint_client,
    rng_seed: int,
    k: int = 5,
    config: PatchConfig = PatchConfig(),
    params: InpaintParams = InpaintParams(),
    min_area_by_category: dict | None = None,
) -> tuple[list[InpaintVariant], list[str]]:
    """Create k inpainted variants, each from an independently sampled patch set.

    Returns (variants, warnings); per-variant sampling or client failures
    become warnings rather than aborting, as long as at least one variant
    survives upstream handling.
    """
    original = load_ref(subject.image)
    variants: list[InpaintVariant] = []
    warnings: list[str] = []
    for i in range(k):
        try:
            patch_mask = sample_patch_mask(subject, rng_seed + i, config, min_area_by_category)
            inpainted = inpaint_client.inpaint(subject.image, patch_mask, params,
                                               seed=rng_seed + i)
            mse = masked_mse(original, load_ref(inpainted), patch_mask)
            variants.append(InpaintVariant(inpainted, patch_mask, mse))
        except DomainError:
            raise
        except Exception as exc:  # noqa: BLE001 - isolate per-variant failures
            warnings.append(f"variant {i}: {exc}")
    return variants, warnings


def select_max_mse(variants: list[InpaintVariant]) -> InpaintVariant:
    """The variant with maximal MSE; ties break to the lowest index."""
    if not variants:
        raise DomainError("no variants to select from")
    best = variants[0]
    for v in variants[1:]:
        if v.mse > best.mse:
            best = v
    return best


def apply_identity_filters(
    subject: SubjectMask,
    chosen: InpaintVariant,
    min_area_by_category: dict | None = None,
    mse_cutoffs_by_category: dict | None = None,
) -> tuple[bool, str]:
    """(keep, reason) per the category area minimums and MSE cutoffs.

    `chosen` is the max-MSE variant, so all variants fall below the cutoff
    exactly when it does. Comparisons are inclusive: a value at the cutoff
    keeps.
    """
    min_area = min_area_by_category or MIN_MASK_AREA
    cutoffs = mse_cutoffs_by_category or MSE_CUTOFFS
    if subject.category not in min_area or subject.category not in cutoffs:
        raise DomainError(f"no identity thresholds defined for {subject.category.value}")
    if subject.area < min_area[subject.category]:
        return False, "mask_too_small"
    if chosen.mse < cutoffs[subject.category]:
        return False, "mse_below_cutoff"
    return True, "ok"


def mask_tight_bbox(mask: np.ndarray) -> BBox:
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise DomainError("cannot bound an empty mask")
    return BBox(int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def emit_ident_pairs(subject: SubjectMask, chosen: InpaintVariant, store: ImageStore):
    """One positive (original) and one negative (corrupted) pair sharing a crop."""
    from .pairgen import PairRecord

    ref = crop(subject.image, mask_tight_bbox(subject.mask), store)
    positive = PairRecord(
        image_ref=ref, tgt=subject.image, sp_label=1,
        entity=subject.category.value.lower(), provenance="inpaint_positive",
        source_ids=[subject.subject_id],
    )
    negative = PairRecord(
        image_ref=ref, tgt=chosen.image, sp_label=0,
        entity=subject.category.value.lower(), provenance="inpaint_negative",
        source_ids=[subject.subject_id],
    )
    return positive, negative


def read_subject_manifest(path: str | Path, image_root: str | Path = ".") -> list[SubjectMask]:
    """Parse a subject manifest JSONL: {subject_id, image, mask, category}."""
    root = Path(image_root)
    subjects = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        subjects.append(
            SubjectMask(
                subject_id=d["subject_id"],
                image=ref_for_file(root / d["image"]),
                mask=load_mask(root / d["mask"]),
                category=CategoryTag(d["category"]),
            )
        )
    return subjects


@dataclass
class VariantAudit:
    subject_id: str
    mses: list[float]
    chosen_index: int | None
    verdict: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "mses": self.mses,
            "chosen_index": self.chosen_index,
            "verdict": self.verdict,
            "warnings": self.warnings,
        }


def build_ident_pairs(
    subjects: list[SubjectMask],
    inpaint_client,
    store: ImageStore,
    run_seed: int,
    k: int = 5,
    config: PatchConfig = PatchConfig(),
    params: InpaintParams = InpaintParams(),
    min_area: dict | None = None,
    mse_cutoffs: dict | None = None,
) -> tuple[list, list[VariantAudit]]:
    """Full identity-pair stage over a subject manifest.

    Threshold dicts (category name -> value) override the published defaults
    so desk-scale fixtures can run the same code path.
    """
    area_by_cat = dict(MIN_MASK_AREA)
    if min_area:
        area_by_cat.update({CategoryTag(name): v for name, v in min_area.items()})
    mse_by_cat = dict(MSE_CUTOFFS)
    if mse_cutoffs:
        mse_by_cat.update({CategoryTag(name): v for name, v in mse_cutoffs.items()})

    pairs, audits = [], []
    for subject in subjects:
        seed = _subject_seed(run_seed, subject.subject_id)
        try:
            variants, warnings = generate_variants(
                subject, inpaint_client, seed, k=k, config=config, params=params,
                min_area_by_category=area_by_cat,
            )
        except DomainError as exc:
            audits.append(VariantAudit(subject.subject_id, [], None, f"drop:{exc}"))
            continue
        if not variants:
            audits.append(VariantAudit(subject.subject_id, [], None,
                                       "drop:no_variants", warnings))
            continue
        chosen = select_max_mse(variants)
        chosen_index = variants.index(chosen)
        keep, reason = apply_identity_filters(subject, chosen, area_by_cat, mse_by_cat)
        audits.append(VariantAudit(
            subject.subject_id, [v.mse for v in variants], chosen_index,
            "keep" if keep else f"drop:{reason}", warnings,
        ))
        if keep:
            pos, neg = emit_ident_pairs(subject, chosen, store)
            pairs.extend([pos, neg])
    return pairs, audits


def _subject_seed(run_seed: int, subject_id: str) -> int:
    import hashlib

    h = hashlib.sha256(f"{run_seed}|{subject_id}".encode()).digest()
    return int.from_bytes(h[:8], "big")
