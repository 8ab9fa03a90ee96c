import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtpose.dataset import HandLandmarks, ImageBuffer, load_manifest
from mtpose.testgen import (
    TC_ORDER,
    GenerationConfig,
    Sample,
    TestCaseDescriptor,
    apply_descriptor,
    build_suite,
    gen_blur_tcs,
    gen_exposure_tcs,
    gen_finger_tcs,
    gen_tc1,
    generate_suite_dir,
    load_suite,
    mr_of,
    normalize_mrs,
)
from mtpose.transforms import occlude


@pytest.fixture
def sample(rng):
    img = ImageBuffer(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
    return Sample("s0", img, HandLandmarks(rng.uniform(0, 64, (21, 2))))


def occluded(case):
    return set(case.descriptor.params["indices"])


class TestBinding:
    @pytest.mark.parametrize("tc, mr", [("TC1_L1", "MR1"), ("TC1_L21", "MR1"), ("TC2", "MR2"), ("TC6", "MR2"),
                                        ("TC7", "MR3"), ("TC10", "MR3"), ("TC11", "MR4"), ("TC13", "MR4"),
                                        ("BASELINE", None)])
    def test_tc_to_mr(self, tc, mr):
        assert mr_of(tc) == mr

    def test_unknown_tc(self):
        with pytest.raises(ValueError):
            mr_of("TC14")

    def test_order_has_34_ids(self):
        assert len(TC_ORDER) == 34 and len(set(TC_ORDER)) == 34

    def test_normalize_mrs(self):
        assert normalize_mrs("mr3, MR1") == ("MR1", "MR3")
        assert normalize_mrs([]) == ()
        with pytest.raises(ValueError):
            normalize_mrs("MR5")


class TestGenerators:
    def test_tc1_levels(self, sample):
        cases = gen_tc1(sample)
        assert len(cases) == 21
        assert occluded(cases[0]) == {0}
        assert occluded(cases[4]) == {0, 1, 2, 3, 4}
        assert occluded(cases[20]) == set(range(21))
        for lower, upper in zip(cases, cases[1:]):
            assert occluded(lower) < occluded(upper)
        assert all(c.descriptor.params["radius"] == 10 and c.descriptor.params["color"] == 0 for c in cases)

    def test_tc1_image_matches_direct_occlusion(self, sample):
        case = gen_tc1(sample)[4]
        assert case.image == occlude(sample.image, sample.landmarks, range(5))

    def test_fingers(self, sample):
        cases = {c.descriptor.tc_id: occluded(c) for c in gen_finger_tcs(sample)}
        assert cases == {"TC2": {1, 2, 3, 4}, "TC3": {5, 6, 7, 8}, "TC4": {9, 10, 11, 12},
                         "TC5": {13, 14, 15, 16}, "TC6": {17, 18, 19, 20}}
        assert all(len(v) == 4 for v in cases.values())

    def test_exposure(self, sample):
        gammas = {c.descriptor.tc_id: c.descriptor.params["gamma"] for c in gen_exposure_tcs(sample)}
        assert gammas == {"TC7": 5, "TC8": 2, "TC9": 0.5, "TC10": 0.2}
        assert all(0 < g <= 5.5 for g in gammas.values())

    def test_blur(self, sample):
        cases = gen_blur_tcs(sample)
        assert [(c.descriptor.tc_id, c.descriptor.params["direction"]) for c in cases] == [
            ("TC11", "vertical"), ("TC12", "horizontal"), ("TC13", "diagonal")]
        assert all(c.descriptor.params["size"] == 20 for c in cases)

    def test_ground_truth_never_moves(self, sample):
        for gen in (gen_tc1, gen_finger_tcs, gen_exposure_tcs, gen_blur_tcs):
            for case in gen(sample):
                assert case.landmarks == sample.landmarks

    def test_descriptor_regenerates_image(self, sample):
        for gen in (gen_tc1, gen_finger_tcs, gen_exposure_tcs, gen_blur_tcs):
            for case in gen(sample):
                desc = TestCaseDescriptor.from_dict(json.loads(json.dumps(case.descriptor.to_dict())))
                assert desc == case.descriptor
                assert apply_descriptor(sample.image, sample.landmarks, desc) == case.image

    def test_descriptor_rejects_wrong_mr(self):
        with pytest.raises(ValueError):
            TestCaseDescriptor.from_dict({"tc_id": "TC7", "mr_id": "MR1", "source_id": "x", "params": {}})


class TestBuildSuite:
    def test_ten_samples_all_mrs(self, synthetic_manifest):
        suite = build_suite(load_manifest(synthetic_manifest(10)))
        assert len(suite) == 10 + 330
        assert sum(c.descriptor.tc_id == "BASELINE" for c in suite.cases) == 10

    def test_one_sample_mr3(self, synthetic_manifest):
        suite = build_suite(load_manifest(synthetic_manifest(1)), ["MR3"])
        assert [c.descriptor.tc_id for c in suite.cases] == ["BASELINE", "TC7", "TC8", "TC9", "TC10"]

    def test_no_mrs_is_baseline_only(self, synthetic_manifest):
        suite = build_suite(load_manifest(synthetic_manifest(2)), [])
        assert [c.descriptor.tc_id for c in suite.cases] == ["BASELINE", "BASELINE"]

    def test_with_object_samples_get_baseline_only(self, synthetic_manifest):
        manifest = load_manifest(synthetic_manifest(3, with_object=1))
        suite = build_suite(manifest)
        assert len(suite) == 2 * 34 + 1
        everything = build_suite(manifest, config=GenerationConfig(
            followup_categories=("with_object", "without_object")))
        assert len(everything) == 3 * 34

    def test_order_and_determinism(self, synthetic_manifest):
        manifest = load_manifest(synthetic_manifest(3))
        a = build_suite(manifest)
        b = build_suite(manifest, workers=3)
        ids = [c.case_id for c in a.cases]
        assert ids == [f"s{i:05d}__{tc}" for i in range(3) for tc in TC_ORDER]
        assert ids == [c.case_id for c in b.cases]
        assert all(x.image == y.image for x, y in zip(a.cases, b.cases))

    def test_preprocessing_resizes_and_crops(self, synthetic_manifest):
        manifest = load_manifest(synthetic_manifest(1))
        suite = build_suite(manifest, [], GenerationConfig(image_side=100, crop_scale=2.2))
        case = suite.cases[0]
        assert (case.image.width, case.image.height) == (100, 100)
        assert case.landmarks.points.min() >= 0 and case.landmarks.points.max() <= 100


def tree_digest(root: Path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.iterdir())}


class TestSuiteDir:
    def test_layout(self, synthetic_manifest, tmp_path):
        manifest = load_manifest(synthetic_manifest(2))
        out = tmp_path / "suite"
        assert generate_suite_dir(manifest, out)
        pngs = sorted(p.name for p in out.glob("*.png"))
        assert len(pngs) == 68
        assert "s00000__TC1_L5.png" in pngs
        records = json.loads((out / "suite.json").read_text())
        assert isinstance(records, list) and len(records) == 68
        rec = records[1]
        assert set(rec) == {"id", "tc_id", "mr_id", "source_id", "category", "params", "image", "keypoints"}

    def test_roundtrip_and_ground_truth(self, synthetic_manifest, tmp_path):
        manifest = load_manifest(synthetic_manifest(2))
        suite = build_suite(manifest)
        generate_suite_dir(manifest, tmp_path / "suite")
        entries = load_suite(tmp_path / "suite")
        assert [e.case_id for e in entries] == [c.case_id for c in suite.cases]
        for e, c in zip(entries, suite.cases):
            assert e.descriptor == c.descriptor
            assert e.landmarks == c.landmarks
            assert ImageBuffer.from_png(e.image_path) == c.image
        sources = {e.descriptor.source_id: e.landmarks for e in entries if e.tc_id == "BASELINE"}
        assert all(e.landmarks == sources[e.descriptor.source_id] for e in entries)

    def test_byte_identical_and_reuse(self, synthetic_manifest, tmp_path):
        manifest = load_manifest(synthetic_manifest(2))
        generate_suite_dir(manifest, tmp_path / "a")
        generate_suite_dir(manifest, tmp_path / "b", workers=2)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
        assert generate_suite_dir(manifest, tmp_path / "a") is False
        assert generate_suite_dir(manifest, tmp_path / "a", config=GenerationConfig(radius=5)) is True

    def test_unsafe_sample_id(self, write_manifest_file, tmp_path):
        entry = {"id": "a/b", "image": "img.png", "category": "without_object",
                 "keypoints": [[1.0, 1.0 + i] for i in range(21)]}
        manifest = load_manifest(write_manifest_file([entry]))
        with pytest.raises(ValueError):
            generate_suite_dir(manifest, tmp_path / "s", mrs=[], config=GenerationConfig(image_side=None))


@given(st.sampled_from(TC_ORDER[1:]), st.text(alphabet="abc123_-", min_size=1, max_size=8))
def test_descriptor_serialization_lossless(tc, source):
    params = {"indices": [1, 2], "radius": 10.0, "color": 0} if mr_of(tc) in ("MR1", "MR2") else {"gamma": 0.5}
    d = TestCaseDescriptor(tc, source, params)
    assert TestCaseDescriptor.from_dict(json.loads(json.dumps(d.to_dict()))) == d
