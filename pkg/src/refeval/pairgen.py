"""Subject-preservation pair construction from video-frame scene metadata.

Scenes hold frames of one subject identity. Intra-scene ordered frame pairs
become positives (crop from one frame, full other frame); cross-scene pairs
of distinct same-entity subjects become negatives. Named-entity scenes that
share an identity yield cross-scene positives instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    BBox,
    DomainError,
    ImageRef,
    ImageStore,
    SubjectInstance,
    crop,
    load_ref,
    ref_for_file,
)

DEFAULT_BLUR_THRESHOLD = 100.0

SUBJECT_PRESENT_QUESTION = "Is the image sharp and does it clearly show the subject?"
NO_SUBTITLES_QUESTION = "Is the image free of subtitles and credits overlays?"


@dataclass
class Scene:
    scene_id: str
    source: str  # Mementos | TVQAplus | fixture
    entity: str
    frames: list[SubjectInstance]
    named_entity: bool = False
    identity: str | None = None

    def __post_init__(self):
        if not self.frames:
            raise DomainError(f"scene {self.scene_id} has no frames")
        for f in self.frames:
            if f.entity != self.entity:
                raise DomainError(
                    f"scene {self.scene_id}: frame entity {f.entity!r} != scene entity {self.entity!r}"
                )


@dataclass
class PairRecord:
    image_ref: ImageRef  # subject crop
    tgt: ImageRef  # full frame
    sp_label: int
    entity: str
    provenance: str  # intra_scene | cross_scene_negative | named_entity_positive | inpaint_positive | inpaint_negative
    source_ids: list[str] = field(default_factory=list)

    POSITIVE_PROVENANCES = {"intra_scene", "named_entity_positive", "inpaint_positive"}

    def __post_init__(self):
        if self.sp_label not in (0, 1):
            raise DomainError("sp_label must be 0 or 1")
        expected = 1 if self.provenance in self.POSITIVE_PROVENANCES else 0
        if self.sp_label != expected:
            raise DomainError(
                f"provenance {self.provenance!r} implies sp_label {expected}, got {self.sp_label}"
            )

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref.to_dict(),
            "tgt": self.tgt.to_dict(),
            "sp_label": self.sp_label,
            "entity": self.entity,
            "provenance": self.provenance,
            "source_ids": self.source_ids,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairRecord":
        return cls(
            ImageRef.from_dict(d["image_ref"]),
            ImageRef.from_dict(d["tgt"]),
            d["sp_label"],
            d["entity"],
            d["provenance"],
            list(d.get("source_ids", [])),
        )


def build_intra_scene_positives(scene: Scene, store: ImageStore) -> list[PairRecord]:
    """One positive per ordered frame pair: crop of frame i vs full frame j."""
    records = []
    for i, fi in enumerate(scene.frames):
        for j, fj in enumerate(scene.frames):
            if i == j:
                continue
            records.append(
                PairRecord(
                    image_ref=crop(fi.frame, fi.bbox, store),
                    tgt=fj.frame,
                    sp_label=1,
                    entity=scene.entity,
                    provenance="intra_scene",
                    source_ids=[f"{scene.scene_id}:{i}", f"{scene.scene_id}:{j}"],
                )
            )
    return records


def _cross_pairs(a: Scene, b: Scene, store: ImageStore, sp_label: int, provenance: str):
    records = []
    for src, other in ((a, b), (b, a)):
        for i, fi in enumerate(src.frames):
            ref = crop(fi.frame, fi.bbox, store)
            for j, fj in enumerate(other.frames):
                records.append(
                    PairRecord(
                        image_ref=ref,
                        tgt=fj.frame,
                        sp_label=sp_label,
                        entity=src.entity,
                        provenance=provenance,
                        source_ids=[f"{src.scene_id}:{i}", f"{other.scene_id}:{j}"],
                    )
                )
    return records


def build_cross_scene_negatives(a: Scene, b: Scene, store: ImageStore) -> list[PairRecord]:
    """Every crop of one scene against every full frame of the other, label 0."""
    if a.entity != b.entity:
        raise DomainError(f"entity mismatch: {a.entity!r} vs {b.entity!r}")
    if a.scene_id == b.scene_id:
        raise DomainError("cross-scene negatives need two distinct scenes")
    return _cross_pairs(a, b, store, sp_label=0, provenance="cross_scene_negative")


def build_named_entity_positives(a: Scene, b: Scene, store: ImageStore) -> list[PairRecord]:
    """Cross-scene positives for scenes sharing one named-entity identity."""
    if not (a.named_entity and b.named_entity):
        raise DomainError("both scenes must be tagged named_entity")
    if a.identity is None or a.identity != b.identity:
        raise DomainError(f"identity mismatch: {a.identity!r} vs {b.identity!r}")
    if a.scene_id == b.scene_id:
        raise DomainError("self-pairing of a scene is not allowed")
    return _cross_pairs(a, b, store, sp_label=1, provenance="named_entity_positive")


def enumerate_canonical(a: Scene, b: Scene, store: ImageStore) -> tuple[list[PairRecord], list[PairRecord]]:
    """Canonical two-scene, two-frame enumeration: 4 positives + 8 negatives."""
    if len(a.frames) != 2 or len(b.frames) != 2:
        raise DomainError("canonical enumeration expects exactly 2 frames per scene")
    positives = build_intra_scene_positives(a, store) + build_intra_scene_positives(b, store)
    negatives = build_cross_scene_negatives(a, b, store)
    return positives, negatives


def blur_score(pixels: np.ndarray) -> float:
    """Variance of a 3x3 high-pass (Laplacian) response on 0-255 grayscale."""
    gray = pixels.astype(np.float64).mean(axis=2)
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        return 0.0
    lap = (
        -4.0 * gray[1:-1, 1:-1]
        + gray[:-2, 1:-1]
        + gray[2:, 1:-1]
        + gray[1:-1, :-2]
        + gray[1:-1, 2:]
    )
    return float(lap.var())


@dataclass
class Rejection:
    source_id: str
    reason: str  # blur | subject_missing | subtitles | client_error | missing_bbox


def filter_frames(
    frames: list[tuple[str, SubjectInstance]],
    quality_client,
    blur_threshold: float = DEFAULT_BLUR_THRESHOLD,
    tvqa_source: bool = False,
) -> tuple[list[tuple[str, SubjectInstance]], list[Rejection]]:
    """Keep frames that pass the blur filter and the quality-client checks.

    `frames` is a list of (source_id, SubjectInstance). TVQA+-sourced frames
    additionally require the no-subtitles check. Client failures reject the
    frame (fail closed) with reason "client_error".
    """
    kept, rejected = [], []
    for source_id, inst in frames:
        try:
            if blur_score(load_ref(inst.frame)) < blur_threshold:
                rejected.append(Rejection(source_id, "blur"))
                continue
            if not quality_client.judge_quality(inst.frame, SUBJECT_PRESENT_QUESTION):
                rejected.append(Rejection(source_id, "subject_missing"))
                continue
            if tvqa_source and not quality_client.judge_quality(inst.frame, NO_SUBTITLES_QUESTION):
                rejected.append(Rejection(source_id, "subtitles"))
                continue
        except Exception:  # noqa: BLE001 - any client failure fails closed
            rejected.append(Rejection(source_id, "client_error"))
            continue
        kept.append((source_id, inst))
    return kept, rejected


def read_scene_manifest(path: str | Path, image_root: str | Path = ".") -> list[Scene]:
    """Parse a scene manifest JSONL into Scene objects.

    Each line: {scene_id, source, entity, named_entity?, identity?,
    frames: [{image, bbox: [x, y, w, h]}]}.
    """
    root = Path(image_root)
    scenes = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        frames = []
        for f in d["frames"]:
            img = ref_for_file(root / f["image"])
            frames.append(
                SubjectInstance(
                    frame=img,
                    entity=d["entity"],
                    bbox=BBox(*f["bbox"]),
                    named_entity=bool(d.get("named_entity", False)),
                )
            )
        scenes.append(
            Scene(
                scene_id=d["scene_id"],
                source=d.get("source", "fixture"),
                entity=d["entity"],
                frames=frames,
                named_entity=bool(d.get("named_entity", False)),
                identity=d.get("identity"),
            )
        )
    return scenes


def build_pairs_from_scenes(
    scenes: list[Scene],
    store: ImageStore,
    quality_client=None,
    blur_threshold: float = DEFAULT_BLUR_THRESHOLD,
) -> tuple[list[PairRecord], list[Rejection], dict]:
    """Full pair-building stage over a scene list.

    Emits intra-scene positives per scene, cross-scene negatives for every
    distinct-subject scene pair sharing an entity, and named-entity positives
    for scene pairs sharing an identity. Returns (pairs, rejections, report).
    """
    rejections: list[Rejection] = []
    filtered_scenes: list[Scene] = []
    for scene in scenes:
        frames = [(f"{scene.scene_id}:{i}", inst) for i, inst in enumerate(scene.frames)]
        if quality_client is not None:
            frames, rejs = filter_frames(
                frames, quality_client, blur_threshold, tvqa_source=scene.source == "TVQAplus"
            )
            rejections.extend(rejs)
        if frames:
            filtered_scenes.append(
                Scene(
                    scene_id=scene.scene_id,
                    source=scene.source,
                    entity=scene.entity,
                    frames=[inst for _, inst in frames],
                    named_entity=scene.named_entity,
                    identity=scene.identity,
                )
            )

    pairs: list[PairRecord] = []
    for scene in filtered_scenes:
        if len(scene.frames) >= 2:
            pairs.extend(build_intra_scene_positives(scene, store))
    for i, a in enumerate(filtered_scenes):
        for b in filtered_scenes[i + 1 :]:
            if a.entity != b.entity:
                continue
            same_identity = (
                a.named_entity and b.named_entity
                and a.identity is not None and a.identity == b.identity
            )
            if same_identity:
                pairs.extend(build_named_entity_positives(a, b, store))
            else:
                pairs.extend(build_cross_scene_negatives(a, b, store))

    report = {
        "scenes_in": len(scenes),
        "scenes_kept": len(filtered_scenes),
        "pairs": len(pairs),
        "positives": sum(1 for p in pairs if p.sp_label == 1),
        "negatives": sum(1 for p in pairs if p.sp_label == 0),
        "rejections": _rejection_counts(rejections),
    }
    return pairs, rejections, report


def _rejection_counts(rejections: list[Rejection]) -> dict:
    counts: dict[str, int] = {}
    for r in rejections:
        counts[r.reason] = counts.get(r.reason, 0) + 1
    return counts


def write_pair_manifest(pairs: list[PairRecord], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_dict()) + "\n")


def read_pair_manifest(path: str | Path) -> list[PairRecord]:
    return [
        PairRecord.from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
