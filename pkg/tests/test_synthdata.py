from __future__ import annotations

import numpy as np
import pytest

from provg import lingparse as lp
from provg import synthdata as sd
from provg.geometry import mask_to_box


@pytest.fixture(scope="module")
def small_batch():
    return sd.generate(sd.SceneSpec(seed=7), 24)


def test_generation_is_deterministic():
    a = sd.generate(sd.SceneSpec(seed=7), 6)
    b = sd.generate(sd.SceneSpec(seed=7), 6)
    for sa, sb in zip(a, b):
        assert sa.expression == sb.expression
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.gt_mask, sb.gt_mask)
        assert sa.gt_box == sb.gt_box


def test_different_seeds_differ():
    a = sd.generate(sd.SceneSpec(seed=7), 4)
    b = sd.generate(sd.SceneSpec(seed=8), 4)
    assert any(not np.array_equal(sa.image, sb.image) for sa, sb in zip(a, b))


def test_gt_box_matches_mask(small_batch):
    for s in small_batch:
        assert s.gt_box == mask_to_box(s.gt_mask)


def test_referent_uniqueness_brute_force(small_batch):
    for s in small_batch:
        referents = [o for o in s.scene if s.parsed.matches(o, s.scene)]
        assert len(referents) == 1, s.expression


def test_cue_alignment(small_batch):
    for s in small_batch:
        cues = lp.decouple_expression(s.expression)
        attr_words = cues.attribute.words()
        assert s.parsed.category in attr_words, s.expression
        if s.template == "T1":
            assert cues.spatial.tokens == (lp.NULL_ID,), s.expression
        else:
            assert cues.spatial.tokens != (lp.NULL_ID,), s.expression


def test_template_mix_respected():
    spec = sd.SceneSpec(seed=3, template_mix=(0.0, 1.0, 0.0))
    samples = sd.generate(spec, 10)
    assert all(s.template == "T2" for s in samples)


def test_masks_nonempty_and_in_canvas(small_batch):
    for s in small_batch:
        assert s.gt_mask.any()
        assert s.image.shape == (64, 64, 3)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0


def test_objects_do_not_overlap(small_batch):
    for s in small_batch:
        union = np.zeros((64, 64), dtype=int)
        for obj in s.scene:
            union += sd.rasterize(obj).astype(int)
        assert union.max() <= 1


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        sd.SceneSpec(seed=1, min_objects=1)
    with pytest.raises(ValueError):
        sd.SceneSpec(seed=1, template_mix=(0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        sd.generate(sd.SceneSpec(seed=1), 0)


# -- file I/O -------------------------------------------------------------------

def test_roundtrip_dataset(tmp_path, small_batch):
    batch = small_batch[:10]
    sd.write_dataset(batch, tmp_path)
    sd.write_spec(sd.SceneSpec(seed=7), tmp_path)
    loaded = sd.read_dataset(tmp_path)
    assert len(loaded) == len(batch)
    for orig, back in zip(batch, loaded):
        assert back.expression == orig.expression
        assert back.gt_box == orig.gt_box
        assert np.array_equal(back.gt_mask, orig.gt_mask)
        assert np.max(np.abs(back.image - orig.image)) <= 1.0 / 255.0 + 1e-12
    spec = sd.SceneSpec.from_json(__import__("json").loads((tmp_path / "spec.json").read_text()))
    assert spec == sd.SceneSpec(seed=7)


def test_jsonl_line_count(tmp_path, small_batch):
    sd.write_dataset(small_batch[:5], tmp_path)
    lines = (tmp_path / "annotations.jsonl").read_text().strip().splitlines()
    assert len(lines) == 5


def test_missing_mask_file_names_sample(tmp_path, small_batch):
    sd.write_dataset(small_batch[:3], tmp_path)
    (tmp_path / "masks" / "s000001.pgm").unlink()
    with pytest.raises(ValueError, match="s000001"):
        sd.read_dataset(tmp_path)


def test_corrupt_header_errors(tmp_path, small_batch):
    sd.write_dataset(small_batch[:1], tmp_path)
    img = tmp_path / "images" / "s000000.ppm"
    img.write_text("P6\n2 2\n255\n0 0 0\n")
    with pytest.raises(ValueError, match="P3"):
        sd.read_dataset(tmp_path)


def test_dataset_files_byte_identical_on_regeneration(tmp_path):
    spec = sd.SceneSpec(seed=19)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    for d in (d1, d2):
        sd.write_dataset(sd.generate(spec, 4), d)
        sd.write_spec(spec, d)
    for rel in ["annotations.jsonl", "spec.json", "images/s000002.ppm", "masks/s000003.pgm"]:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()
