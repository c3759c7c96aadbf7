"""Join pair and prompt manifests into labeled triplets and persist them.

Labels are inherited independently: textual alignment from the prompt kind,
subject preservation from the pair provenance, giving the full {0,1}^2
label space. Balancing undersamples every present (ta, sp) class to the
smallest class size.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DomainError, ImageRef, IntegrityError, load_pixels, pixel_hash
from .pairgen import PairRecord
from .promptgen import PromptRecord

SCHEMA_VERSION = 1


@dataclass
class TripletRecord:
    image_ref: ImageRef
    prompt: PromptRecord
    image_tgt: ImageRef
    ta_label: int
    sp_label: int
    provenance: tuple[str, str]  # (pair provenance, prompt kind)

    def __post_init__(self):
        if self.ta_label != self.prompt.ta_label:
            raise DomainError("ta_label must match the prompt's label")
        if self.prompt.source_image.content_hash != self.image_tgt.content_hash:
            raise DomainError("prompt must be attached to the target image")

    @property
    def instance_id(self) -> str:
        return hashlib.sha256(
            f"{self.image_ref.content_hash}|{self.image_tgt.content_hash}|{self.prompt.text}".encode()
        ).hexdigest()[:16]

    @property
    def label_class(self) -> str:
        return f"{self.ta_label}{self.sp_label}"

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref.to_dict(),
            "prompt": self.prompt.to_dict(),
            "image_tgt": self.image_tgt.to_dict(),
            "ta_label": self.ta_label,
            "sp_label": self.sp_label,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TripletRecord":
        return cls(
            ImageRef.from_dict(d["image_ref"]),
            PromptRecord.from_dict(d["prompt"]),
            ImageRef.from_dict(d["image_tgt"]),
            d["ta_label"],
            d["sp_label"],
            tuple(d["provenance"]),
        )


@dataclass
class DatasetManifest:
    triplets: list[TripletRecord]
    run_seed: int = 0
    config_digest: str = ""
    warnings: list[str] = field(default_factory=list)

    @property
    def label_histogram(self) -> dict[str, int]:
        counts = {"00": 0, "01": 0, "10": 0, "11": 0}
        for t in self.triplets:
            counts[t.label_class] += 1
        return counts


def assemble_triplets(
    pairs: list[PairRecord], prompts: list[PromptRecord]
) -> tuple[list[TripletRecord], list[str]]:
    """Cross every pair with every prompt attached to its target image."""
    by_tgt: dict[str, list[PromptRecord]] = {}
    for p in prompts:
        by_tgt.setdefault(p.source_image.content_hash, []).append(p)

    triplets, warnings = [], []
    for pair in pairs:
        attached = by_tgt.get(pair.tgt.content_hash, [])
        if not attached:
            warnings.append(f"no prompts for target {pair.tgt.content_hash[:12]}; pair skipped")
            continue
        for prompt in attached:
            triplets.append(
                TripletRecord(
                    image_ref=pair.image_ref,
                    prompt=prompt,
                    image_tgt=pair.tgt,
                    ta_label=prompt.ta_label,
                    sp_label=pair.sp_label,
                    provenance=(pair.provenance, prompt.kind),
                )
            )
    return triplets, warnings


def balance_by_undersampling(
    triplets: list[TripletRecord], rng_seed: int
) -> tuple[list[TripletRecord], list[str]]:
    """Downsample every present (ta, sp) class to the smallest class size."""
    by_class: dict[str, list[TripletRecord]] = {}
    for t in triplets:
        by_class.setdefault(t.label_class, []).append(t)
    warnings = []
    absent = {"00", "01", "10", "11"} - set(by_class)
    if absent:
        warnings.append(f"label classes absent from input: {sorted(absent)}")
    if not by_class:
        return [], warnings
    target = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(rng_seed)
    balanced: list[TripletRecord] = []
    for cls in sorted(by_class):
        group = by_class[cls]
        idx = rng.choice(len(group), size=target, replace=False)
        balanced.extend(group[i] for i in sorted(idx))
    return balanced, warnings


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Newline-delimited JSON: a header line, then one triplet per line."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": SCHEMA_VERSION,
        "run_seed": manifest.run_seed,
        "config_digest": manifest.config_digest,
        "label_histogram": manifest.label_histogram,
        "n_triplets": len(manifest.triplets),
        "warnings": manifest.warnings,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in manifest.triplets:
            fh.write(json.dumps(t.to_dict()) + "\n")


def read_manifest(path: str | Path, verify_images: bool = True) -> DatasetManifest:
    """Read a manifest back; verifies recorded image hashes against disk."""
    lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
    if not lines:
        raise DomainError(f"manifest {path} is empty")
    header = json.loads(lines[0])
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(f"unsupported schema_version {header.get('schema_version')}")
    triplets = [TripletRecord.from_dict(json.loads(line)) for line in lines[1:]]
    if header.get("n_triplets") != len(triplets):
        raise IntegrityError("manifest header count does not match triplet lines")
    if verify_images:
        seen: dict[str, str] = {}
        for t in triplets:
            for ref in (t.image_ref, t.image_tgt):
                if ref.path not in seen:
                    seen[ref.path] = pixel_hash(load_pixels(ref.path))
                if seen[ref.path] != ref.content_hash:
                    raise IntegrityError(f"content hash mismatch for {ref.path}")
    return DatasetManifest(
        triplets=triplets,
        run_seed=header.get("run_seed", 0),
        config_digest=header.get("config_digest", ""),
        warnings=list(header.get("warnings", [])),
    )
