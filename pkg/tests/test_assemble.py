import json

import pytest
from PIL import Image

from refeval.assemble import (
    DatasetManifest,
    TripletRecord,
    assemble_triplets,
    balance_by_undersampling,
    read_manifest,
    write_manifest,
)
from refeval.core import DomainError, IntegrityError
from refeval.pairgen import PairRecord
from refeval.promptgen import PromptRecord, wrap_subject

from conftest import random_image


def make_prompt(tgt, kind, prompt_id, derived_from=None):
    text, span = wrap_subject("A dog sits on a mat.", 2, 5)
    return PromptRecord(prompt_id, text, span, 1 if kind == "positive" else 0,
                        kind, tgt, derived_from=derived_from)


def make_pair(store, rng, positive=True):
    ref = store.put(random_image(rng, 16, 16))
    tgt = store.put(random_image(rng, 24, 24))
    if positive:
        return PairRecord(ref, tgt, 1, "dog", "intra_scene")
    return PairRecord(ref, tgt, 0, "dog", "cross_scene_negative")


class TestLabelInheritance:
    def test_three_prompts_give_three_classes(self, store, rng):
        pair = make_pair(store, rng, positive=True)
        prompts = [
            make_prompt(pair.tgt, "positive", "p0"),
            make_prompt(pair.tgt, "swap_negative", "s0", derived_from="p0"),
            make_prompt(pair.tgt, "hard_negative", "h0", derived_from="p0"),
        ]
        triplets, warnings = assemble_triplets([pair], prompts)
        assert warnings == []
        assert [(t.ta_label, t.sp_label) for t in triplets] == [(1, 1), (0, 1), (0, 1)]
        assert [t.provenance for t in triplets] == [
            ("intra_scene", "positive"),
            ("intra_scene", "swap_negative"),
            ("intra_scene", "hard_negative"),
        ]

    def test_full_label_space_from_two_pairs(self, store, rng):
        pos_pair = make_pair(store, rng, positive=True)
        neg_pair = make_pair(store, rng, positive=False)
        prompts = []
        for n, pair in enumerate([pos_pair, neg_pair]):
            prompts.append(make_prompt(pair.tgt, "positive", f"p{n}"))
            prompts.append(make_prompt(pair.tgt, "hard_negative", f"h{n}",
                                       derived_from=f"p{n}"))
        triplets, _ = assemble_triplets([pos_pair, neg_pair], prompts)
        manifest = DatasetManifest(triplets)
        assert manifest.label_histogram == {"11": 1, "01": 1, "10": 1, "00": 1}

    def test_pair_without_prompts_warns(self, store, rng):
        pair = make_pair(store, rng)
        triplets, warnings = assemble_triplets([pair], [])
        assert triplets == []
        assert len(warnings) == 1 and "no prompts" in warnings[0]

    def test_mismatched_ta_rejected(self, store, rng):
        pair = make_pair(store, rng)
        prompt = make_prompt(pair.tgt, "positive", "p0")
        with pytest.raises(DomainError):
            TripletRecord(pair.image_ref, prompt, pair.tgt, 0, 1,
                          ("intra_scene", "positive"))

    def test_prompt_for_other_image_rejected(self, store, rng):
        pair = make_pair(store, rng)
        other = store.put(random_image(rng, 24, 24))
        prompt = make_prompt(other, "positive", "p0")
        with pytest.raises(DomainError):
            TripletRecord(pair.image_ref, prompt, pair.tgt, 1, 1,
                          ("intra_scene", "positive"))

    def test_instance_ids_unique(self, store, rng):
        pairs = [make_pair(store, rng) for _ in range(4)]
        prompts = [make_prompt(p.tgt, "positive", f"p{i}")
                   for i, p in enumerate(pairs)]
        triplets, _ = assemble_triplets(pairs, prompts)
        assert len({t.instance_id for t in triplets}) == len(triplets)


class TestBalancing:
    def build_skewed(self, store, rng, counts):
        """counts maps label class -> how many triplets to create."""
        triplets = []
        for cls, n in counts.items():
            ta, sp = int(cls[0]), int(cls[1])
            for _ in range(n):
                pair = make_pair(store, rng, positive=bool(sp))
                kind = "positive" if ta else "hard_negative"
                prompt = make_prompt(pair.tgt, kind, f"{cls}",
                                     derived_from=None if ta else "p")
                triplets.append(TripletRecord(pair.image_ref, prompt, pair.tgt,
                                              ta, sp, (pair.provenance, kind)))
        return triplets

    def test_all_classes_cut_to_minimum(self, store, rng):
        triplets = self.build_skewed(store, rng,
                                     {"11": 5, "10": 3, "01": 4, "00": 2})
        balanced, warnings = balance_by_undersampling(triplets, rng_seed=0)
        assert warnings == []
        hist = DatasetManifest(balanced).label_histogram
        assert hist == {"11": 2, "10": 2, "01": 2, "00": 2}

    def test_absent_class_warns(self, store, rng):
        triplets = self.build_skewed(store, rng, {"11": 3, "00": 3})
        balanced, warnings = balance_by_undersampling(triplets, rng_seed=0)
        assert len(balanced) == 6
        assert warnings and "01" in warnings[0] and "10" in warnings[0]

    def test_deterministic_given_seed(self, store, rng):
        triplets = self.build_skewed(store, rng, {"11": 6, "00": 2})
        a, _ = balance_by_undersampling(triplets, rng_seed=9)
        b, _ = balance_by_undersampling(triplets, rng_seed=9)
        assert [t.instance_id for t in a] == [t.instance_id for t in b]

    def test_subset_of_input(self, store, rng):
        triplets = self.build_skewed(store, rng, {"11": 6, "00": 2})
        balanced, _ = balance_by_undersampling(triplets, rng_seed=1)
        ids = {t.instance_id for t in triplets}
        assert all(t.instance_id in ids for t in balanced)

    def test_empty_input(self):
        balanced, warnings = balance_by_undersampling([], rng_seed=0)
        assert balanced == []
        assert len(warnings) == 1


class TestManifestIO:
    def make_manifest(self, store, rng):
        pair = make_pair(store, rng)
        prompt = make_prompt(pair.tgt, "positive", "p0")
        triplets, _ = assemble_triplets([pair], [prompt])
        return DatasetManifest(triplets, run_seed=7, config_digest="abc123")

    def test_round_trip(self, store, rng, tmp_path):
        manifest = self.make_manifest(store, rng)
        path = tmp_path / "dataset.jsonl"
        write_manifest(manifest, path)
        loaded = read_manifest(path)
        assert loaded.run_seed == 7
        assert loaded.config_digest == "abc123"
        assert [t.to_dict() for t in loaded.triplets] == [
            t.to_dict() for t in manifest.triplets]

    def test_header_records_histogram(self, store, rng, tmp_path):
        manifest = self.make_manifest(store, rng)
        path = tmp_path / "dataset.jsonl"
        write_manifest(manifest, path)
        header = json.loads(path.read_text().splitlines()[0])
        assert header["n_triplets"] == 1
        assert header["label_histogram"]["11"] == 1

    def test_tampered_image_detected(self, store, rng, tmp_path):
        manifest = self.make_manifest(store, rng)
        path = tmp_path / "dataset.jsonl"
        write_manifest(manifest, path)
        target_path = manifest.triplets[0].image_tgt.path
        pixels = random_image(rng, 24, 24)
        Image.fromarray(pixels).save(target_path)
        with pytest.raises(IntegrityError):
            read_manifest(path)
        # verification can be waived explicitly
        read_manifest(path, verify_images=False)

    def test_truncated_manifest_detected(self, store, rng, tmp_path):
        pair = make_pair(store, rng)
        prompts = [make_prompt(pair.tgt, "positive", "p0"),
                   make_prompt(pair.tgt, "hard_negative", "h0", derived_from="p0")]
        triplets, _ = assemble_triplets([pair], prompts)
        path = tmp_path / "dataset.jsonl"
        write_manifest(DatasetManifest(triplets), path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(IntegrityError):
            read_manifest(path)

    def test_unknown_schema_rejected(self, tmp_path):
        path = tmp_path / "dataset.jsonl"
        path.write_text(json.dumps({"schema_version": 99, "n_triplets": 0}) + "\n")
        with pytest.raises(DomainError):
            read_manifest(path)
