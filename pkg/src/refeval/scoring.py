"""Metric scoring: two-token protocol extraction plus baseline adapters.

The fine-tuned metric answers a two-digit string; the first position's
token distribution yields the textual-alignment score and the second the
subject-preservation score, each as P("1") / (P("0") + P("1")).
Baseline adapters (embedding cosine, detect-crop-embed) produce scores on
their native scales; ROC AUC downstream is rank-based, so no rescaling.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assemble import TripletRecord
from .clients.base import TokenDist
from .core import DomainError, ImageRef, ImageStore, ScorePair, crop
from .promptgen import PromptRecord


class ScoreError(RuntimeError):
    """A score could not be computed for an instance."""


@dataclass
class ScoreRecord:
    instance_id: str
    metric_name: str
    scores: ScorePair
    raw: dict | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "metric": self.metric_name,
            "ta": self.scores.ta if self.error is None else None,
            "sp": self.scores.sp if self.error is None else None,
            "raw": self.raw,
            "error": self.error,
        }


def format_input(triplet: TripletRecord,
                 concatenate_images: bool = False) -> tuple[ImageRef, ImageRef, str]:
    """Prepare the (ref, tgt, marked prompt) request for the two-token metric.

    Images are passed separately by default; `concatenate_images` exists only
    to replicate the known-worse merged-input ablation.
    """
    text = triplet.prompt.text
    if "<u>" not in text or "</u>" not in text:
        raise DomainError("prompt is missing its subject markup")
    if concatenate_images:
        raise NotImplementedError("merged-image input mode is not wired to any client")
    return triplet.image_ref, triplet.image_tgt, text


def extract_scores(dists: list[TokenDist]) -> ScorePair:
    """ta from position 0, sp from position 1, each P('1')/(P('0')+P('1'))."""
    if len(dists) < 2:
        raise DomainError("need distributions for at least two positions")
    values = []
    for d in dists[:2]:
        p0, p1 = d.probs["0"], d.probs["1"]
        if p0 + p1 <= 0:
            raise ScoreError(f"zero denominator at position {d.position}")
        values.append(p1 / (p0 + p1))
    return ScorePair(ta=values[0], sp=values[1])


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, normalized before the dot product."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("cosine needs nonzero vectors")
    return float(np.dot(a / na, b / nb))


NO_DETECTION_FLOOR = -1.0


def crop_ir_score(
    ref: ImageRef,
    tgt: ImageRef,
    entity: str,
    detect_client,
    embed_client,
    store: ImageStore,
) -> float:
    """Detect the entity in the target, crop the best box, compare embeddings.

    Returns the configured floor (-1) when nothing is detected.
    """
    detections = detect_client.detect(tgt, entity)
    if not detections:
        return NO_DETECTION_FLOOR
    box, _ = detections[0]
    cropped = crop(tgt, box, store)
    return cosine_score(embed_client.embed(ref), embed_client.embed(cropped))


def strip_markup(text: str) -> str:
    return text.replace("<u>", "").replace("</u>", "")


class MetricRegistry:
    """Named metric functions: triplet -> ScorePair."""

    def __init__(self):
        self._metrics: dict = {}

    def register(self, name: str, fn) -> None:
        self._metrics[name] = fn

    def get(self, name: str):
        if name not in self._metrics:
            raise DomainError(f"metric {name!r} is not registered; have {sorted(self._metrics)}")
        return self._metrics[name]

    def names(self) -> list[str]:
        return sorted(self._metrics)


def build_registry(clients, store: ImageStore) -> MetricRegistry:
    """Standard registry over a ClientBundle: two-token, embedding, crop-ir."""
    registry = MetricRegistry()

    if clients.inference is not None:
        def two_token(triplet: TripletRecord) -> ScorePair:
            ref, tgt, prompt = format_input(triplet)
            return extract_scores(clients.inference.infer_tokens(ref, tgt, prompt))

        registry.register("two-token", two_token)

    def embedding(triplet: TripletRecord) -> ScorePair:
        tgt_vec = clients.embed.embed(triplet.image_tgt)
        ta = cosine_score(clients.embed.embed(strip_markup(triplet.prompt.text)), tgt_vec)
        sp = cosine_score(clients.embed.embed(triplet.image_ref), tgt_vec)
        return ScorePair(ta=ta, sp=sp, scale="cosine")

    registry.register("embedding", embedding)

    def crop_ir(triplet: TripletRecord) -> ScorePair:
        ta = cosine_score(
            clients.embed.embed(strip_markup(triplet.prompt.text)),
            clients.embed.embed(triplet.image_tgt),
        )
        sp = crop_ir_score(
            triplet.image_ref, triplet.image_tgt, triplet.prompt.subject_text,
            clients.detect, clients.embed, store,
        )
        return ScorePair(ta=ta, sp=sp, scale="cosine")

    registry.register("crop-ir", crop_ir)
    return registry


def batch_score(
    triplets: list[TripletRecord],
    metric_name: str,
    metric_fn,
    concurrency: int = 1,
    max_failure_rate: float = 0.5,
) -> list[ScoreRecord]:
    """Score every triplet, isolating per-instance failures.

    Output order follows the input regardless of concurrency. Raises only
    when the failure rate exceeds `max_failure_rate`.
    """
    results: list[ScoreRecord | None] = [None] * len(triplets)
    lock = threading.Lock()

    def work(i: int, triplet: TripletRecord) -> None:
        try:
            scores = metric_fn(triplet)
            record = ScoreRecord(triplet.instance_id, metric_name, scores)
        except Exception as exc:  # noqa: BLE001 - failures become error records
            record = ScoreRecord(triplet.instance_id, metric_name,
                                 ScorePair(0.0, 0.0), error=str(exc))
        with lock:
            results[i] = record

    if concurrency <= 1:
        for i, t in enumerate(triplets):
            work(i, t)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            list(pool.map(lambda args: work(*args), enumerate(triplets)))

    records = [r for r in results if r is not None]
    failures = sum(1 for r in records if r.error is not None)
    if triplets and failures / len(triplets) > max_failure_rate:
        raise ScoreError(f"{failures}/{len(triplets)} instances failed scoring")
    return records


def write_scores(records: list[ScoreRecord], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_scores(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
