"""Prompt generation: positive captions, swap negatives, and hard negatives.

Positive prompts come from captioning the target image with the subject
boxed; the subject mention is wrapped in <u>...</u>. Swap negatives reuse a
positive caption of a different same-entity image verbatim. Hard negatives
corrupt exactly one non-subject detail, marked in the model output with
<swap>original</swap><replacement> tags.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .core import DomainError, ImageRef, ImageStore, SubjectInstance, draw_bbox


class ParseError(ValueError):
    """Swap-tag output does not follow the single-edit grammar."""


@dataclass
class SwapEdit:
    original: str
    replacement: str
    offset: int  # position of the edit in the clean original text

    def __post_init__(self):
        if self.original == self.replacement:
            raise DomainError("swap edit must change the text")


@dataclass
class PromptRecord:
    prompt_id: str
    text: str  # includes the <u>...</u> markup
    subject_span: tuple[int, int]  # offsets of the span content within text
    ta_label: int
    kind: str  # positive | swap_negative | hard_negative
    source_image: ImageRef
    derived_from: str | None = None

    def __post_init__(self):
        spans = list(re.finditer(r"<u>(.*?)</u>", self.text))
        if len(spans) != 1:
            raise DomainError(f"prompt must contain exactly one subject span, found {len(spans)}")
        if (spans[0].start(1), spans[0].end(1)) != tuple(self.subject_span):
            raise DomainError("subject_span does not match the <u>...</u> markup")
        if self.kind not in ("positive", "swap_negative", "hard_negative"):
            raise DomainError(f"unknown prompt kind {self.kind!r}")
        if (self.ta_label == 1) != (self.kind == "positive"):
            raise DomainError("ta_label must be 1 exactly for positive prompts")
        if self.kind == "hard_negative" and not self.derived_from:
            raise DomainError("hard negatives must record their source prompt")

    @property
    def subject_text(self) -> str:
        return self.text[self.subject_span[0] : self.subject_span[1]]

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "text": self.text,
            "subject_span": list(self.subject_span),
            "ta_label": self.ta_label,
            "kind": self.kind,
            "source_image": self.source_image.to_dict(),
            "derived_from": self.derived_from,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        return cls(
            d["prompt_id"],
            d["text"],
            tuple(d["subject_span"]),
            d["ta_label"],
            d["kind"],
            ImageRef.from_dict(d["source_image"]),
            d.get("derived_from"),
        )


@dataclass
class PromptRejection:
    source: str
    reason: str  # subject_missing | parse_error | subject_modified | multi_edit | no_change | client_error


def find_subject_mention(caption: str, entity: str) -> tuple[int, int] | None:
    """Locate the first case-insensitive mention of `entity` in `caption`.

    Multi-word entities match as phrases; a trailing s/es plural on the last
    word also matches. Returns (start, end) or None.
    """
    words = [re.escape(w) for w in entity.split()]
    if not words:
        return None
    words[-1] = words[-1] + r"(?:e?s)?"
    pattern = r"\b" + r"\s+".join(words) + r"\b"
    m = re.search(pattern, caption, flags=re.IGNORECASE)
    return (m.start(), m.end()) if m else None


def wrap_subject(caption: str, start: int, end: int) -> tuple[str, tuple[int, int]]:
    """Wrap caption[start:end] in <u>...</u>; returns (text, content span)."""
    text = caption[:start] + "<u>" + caption[start:end] + "</u>" + caption[end:]
    return text, (start + 3, end + 3)


def caption_positive(
    tgt: ImageRef,
    subject: SubjectInstance,
    caption_client,
    store: ImageStore,
    prompt_id: str,
) -> PromptRecord | PromptRejection:
    """Caption the target with the subject boxed and wrap the subject mention."""
    if not subject.bbox.fits_inside(tgt.width, tgt.height):
        raise DomainError("subject bbox must fit inside the target image")
    boxed = draw_bbox(tgt, subject.bbox, store)
    try:
        caption = caption_client.caption(boxed, subject)
    except Exception:  # noqa: BLE001
        return PromptRejection(prompt_id, "client_error")
    mention = find_subject_mention(caption, subject.entity)
    if mention is None:
        return PromptRejection(prompt_id, "subject_missing")
    text, span = wrap_subject(caption, *mention)
    return PromptRecord(prompt_id, text, span, 1, "positive", tgt)


def swap_negative(
    donor: PromptRecord,
    recipient_image: ImageRef,
    same_entity: bool,
    prompt_id: str,
) -> PromptRecord:
    """Reattach a positive caption of another same-entity image; ta flips to 0."""
    if donor.kind != "positive":
        raise DomainError("swap negatives must be derived from positive prompts")
    if not same_entity:
        raise DomainError("swap negatives require matching entity types")
    if donor.source_image.content_hash == recipient_image.content_hash:
        raise DomainError("cannot swap a prompt onto its own image")
    return PromptRecord(
        prompt_id, donor.text, donor.subject_span, 0, "swap_negative",
        recipient_image, derived_from=donor.prompt_id,
    )


_SWAP_GROUP = re.compile(
    r"<swap>(?P<orig>[^<>]+)</swap>(?:<(?P<brk>[^<>]+)>|(?P<bare>\w[\w-]*))"
)


def parse_swap_tags(tagged: str) -> tuple[str, str, SwapEdit]:
    """Extract the single swap group from a tagged caption.

    Returns (clean_original, clean_corrupted, edit). Accepts the replacement
    either bracketed (</swap><Y>) or bare (</swap>Y). All bytes outside the
    group pass through unchanged.
    """
    if "<swap>" not in tagged:
        raise ParseError("no swap group found")
    matches = list(_SWAP_GROUP.finditer(tagged))
    if len(matches) != 1 or tagged.count("<swap>") != 1 or tagged.count("</swap>") != 1:
        raise ParseError(f"expected exactly one swap group, found {tagged.count('<swap>')}")
    m = matches[0]
    original_detail = m.group("orig")
    replacement = m.group("brk") if m.group("brk") is not None else m.group("bare")
    clean_original = tagged[: m.start()] + original_detail + tagged[m.end() :]
    clean_corrupted = tagged[: m.start()] + replacement + tagged[m.end() :]
    edit = SwapEdit(original_detail, replacement, m.start())
    return clean_original, clean_corrupted, edit


def validate_perturbation(
    orig: PromptRecord, corrupted_text: str, edit: SwapEdit
) -> tuple[bool, str]:
    """Check the corruption is a single out-of-span replacement.

    True iff applying `edit` to the original text reproduces `corrupted_text`
    exactly, the subject span text is unchanged, and the edit region does not
    overlap the span.
    """
    text = orig.text
    if corrupted_text == text:
        return False, "no_change"
    start, end = edit.offset, edit.offset + len(edit.original)
    if text[start:end] != edit.original:
        return False, "multi_edit"
    span_start, span_end = orig.subject_span
    if start < span_end and end > span_start:
        return False, "subject_modified"
    if text[:start] + edit.replacement + text[end:] != corrupted_text:
        return False, "multi_edit"
    # Span text must survive verbatim at its (possibly shifted) location.
    shift = 0 if start >= span_end else len(edit.replacement) - len(edit.original)
    if corrupted_text[span_start + shift : span_end + shift] != orig.subject_text:
        return False, "subject_modified"
    return True, "ok"


def perturb_hard_negative(
    positive: PromptRecord, perturb_client, prompt_id: str
) -> PromptRecord | PromptRejection:
    """Corrupt one non-subject detail of a positive prompt via the perturb client."""
    if positive.kind != "positive":
        raise DomainError("hard negatives derive from positive prompts only")
    try:
        tagged = perturb_client.perturb_caption(positive.text)
    except Exception:  # noqa: BLE001
        return PromptRejection(prompt_id, "client_error")
    try:
        clean_original, clean_corrupted, edit = parse_swap_tags(tagged)
    except ParseError:
        return PromptRejection(prompt_id, "parse_error")
    if clean_original != positive.text:
        return PromptRejection(prompt_id, "multi_edit")
    ok, reason = validate_perturbation(positive, clean_corrupted, edit)
    if not ok:
        return PromptRejection(prompt_id, reason)
    span = _respan(clean_corrupted)
    return PromptRecord(
        prompt_id, clean_corrupted, span, 0, "hard_negative",
        positive.source_image, derived_from=positive.prompt_id,
    )


def _respan(text: str) -> tuple[int, int]:
    m = re.search(r"<u>(.*?)</u>", text)
    if m is None:
        raise DomainError("perturbed text lost its subject span")
    return m.start(1), m.end(1)


def generate_prompts(
    pairs,
    caption_client,
    perturb_client,
    store: ImageStore,
) -> tuple[list[PromptRecord], list[PromptRejection]]:
    """Full prompt stage: per distinct target image, one positive plus swap
    and hard negatives."""
    # Distinct targets with their entity and a representative bbox-less subject.
    targets: dict[str, tuple[ImageRef, str]] = {}
    for p in pairs:
        targets.setdefault(p.tgt.content_hash, (p.tgt, p.entity))

    records: list[PromptRecord] = []
    rejections: list[PromptRejection] = []
    positives: dict[str, PromptRecord] = {}

    from .core import BBox

    for n, (tgt, entity) in enumerate(targets.values()):
        # Captioning focuses on the full target; a full-frame box marks the
        # subject region when no tighter annotation is carried on the pair.
        subject = SubjectInstance(tgt, entity, BBox(0, 0, tgt.width, tgt.height))
        result = caption_positive(tgt, subject, caption_client, store, f"pos-{n}")
        if isinstance(result, PromptRejection):
            rejections.append(result)
            continue
        positives[tgt.content_hash] = result
        records.append(result)

    # Swap negatives: donate each positive to a different image of the same entity.
    by_entity: dict[str, list[str]] = {}
    for h, (tgt, entity) in targets.items():
        if h in positives:
            by_entity.setdefault(entity, []).append(h)
    n = 0
    for entity, hashes in by_entity.items():
        for i, h in enumerate(hashes):
            donor_hash = hashes[(i + 1) % len(hashes)]
            if donor_hash == h:
                continue
            records.append(
                swap_negative(positives[donor_hash], targets[h][0], True, f"swap-{n}")
            )
            n += 1

    for n, pos in enumerate(list(positives.values())):
        result = perturb_hard_negative(pos, perturb_client, f"hard-{n}")
        if isinstance(result, PromptRejection):
            rejections.append(result)
        else:
            records.append(result)

    return records, rejections


def write_prompt_manifest(records: list[PromptRecord], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_prompt_manifest(path: str | Path) -> list[PromptRecord]:
    return [
        PromptRecord.from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
