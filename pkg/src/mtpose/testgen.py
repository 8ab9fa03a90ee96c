"""Follow-up test case generation (TC1-TC13 plus baseline) and on-disk suite layout."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from mtpose.dataset import (
    FINGERS,
    NUM_KEYPOINTS,
    DatasetManifest,
    HandLandmarks,
    ImageBuffer,
    ManifestEntry,
    crop_square_patch,
    resize,
)
from mtpose.transforms import OcclusionArtifact, adjust_gamma, build_motion_kernel, correlate, occlude

log = logging.getLogger(__name__)

ALL_MRS = ("MR1", "MR2", "MR3", "MR4")
BASELINE = "BASELINE"
TC1_LEVELS = tuple(range(1, NUM_KEYPOINTS + 1))
FINGER_TCS = {"TC2": "thumb", "TC3": "index", "TC4": "middle", "TC5": "ring", "TC6": "pinky"}
EXPOSURE_TCS = {"TC7": 5.0, "TC8": 2.0, "TC9": 0.5, "TC10": 0.2}
BLUR_TCS = {"TC11": "vertical", "TC12": "horizontal", "TC13": "diagonal"}

MR_TCS = {
    "MR1": tuple(f"TC1_L{n}" for n in TC1_LEVELS),
    "MR2": tuple(FINGER_TCS),
    "MR3": tuple(EXPOSURE_TCS),
    "MR4": tuple(BLUR_TCS),
}
TC_ORDER = (BASELINE,) + MR_TCS["MR1"] + MR_TCS["MR2"] + MR_TCS["MR3"] + MR_TCS["MR4"]
_TC_RANK = {tc: i for i, tc in enumerate(TC_ORDER)}
_TC_MR = {tc: mr for mr, tcs in MR_TCS.items() for tc in tcs}

SUITE_INDEX = "suite.json"
SUITE_CONFIG = "config.json"


def mr_of(tc_id: str) -> str | None:
    """MR bound to a test case id; None for the baseline."""
    if tc_id == BASELINE:
        return None
    try:
        return _TC_MR[tc_id]
    except KeyError:
        raise ValueError(f"unknown test case id {tc_id!r}") from None


def tc_rank(tc_id: str) -> int:
    return _TC_RANK[tc_id]


def tc1_level(tc_id: str) -> int:
    if not tc_id.startswith("TC1_L"):
        raise ValueError(f"{tc_id!r} is not a TC1 level")
    return int(tc_id[len("TC1_L"):])


def normalize_mrs(mrs: Iterable[str] | str | None) -> tuple[str, ...]:
    if mrs is None:
        return ALL_MRS
    if isinstance(mrs, str):
        mrs = [m for m in mrs.replace(" ", "").split(",") if m]
    chosen = {m.upper() for m in mrs}
    unknown = chosen - set(ALL_MRS)
    if unknown:
        raise ValueError(f"unknown MR ids: {sorted(unknown)}")
    return tuple(m for m in ALL_MRS if m in chosen)


@dataclass(frozen=True)
class TestCaseDescriptor:
    tc_id: str
    source_id: str
    params: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        mr_of(self.tc_id)

    @property
    def mr_id(self) -> str | None:
        return mr_of(self.tc_id)

    @property
    def case_id(self) -> str:
        return f"{self.source_id}__{self.tc_id}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.case_id,
            "tc_id": self.tc_id,
            "mr_id": self.mr_id,
            "source_id": self.source_id,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> TestCaseDescriptor:
        desc = cls(raw["tc_id"], raw["source_id"], dict(raw.get("params", {})))
        if "mr_id" in raw and raw["mr_id"] != desc.mr_id:
            raise ValueError(f"{desc.case_id}: mr_id {raw['mr_id']!r} does not match {desc.tc_id}")
        return desc


@dataclass(frozen=True)
class GenerationConfig:
    radius: float = 10.0
    kernel_size: int = 20
    image_side: int | None = 244
    crop_scale: float | None = None
    followup_categories: tuple[str, ...] = ("without_object",)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["followup_categories"] = list(self.followup_categories)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> GenerationConfig:
        raw = dict(raw)
        raw["followup_categories"] = tuple(raw.get("followup_categories", ("without_object",)))
        return cls(**raw)


@dataclass(frozen=True)
class Sample:
    source_id: str
    image: ImageBuffer
    landmarks: HandLandmarks
    category: str = "without_object"


@dataclass(frozen=True)
class SuiteCase:
    descriptor: TestCaseDescriptor
    image: ImageBuffer
    landmarks: HandLandmarks
    category: str

    @property
    def case_id(self) -> str:
        return self.descriptor.case_id


@dataclass
class TestSuite:
    cases: list[SuiteCase]
    config: GenerationConfig
    mrs: tuple[str, ...]

    __test__ = False

    def __len__(self):
        return len(self.cases)


def apply_descriptor(image: ImageBuffer, landmarks: HandLandmarks,
                     descriptor: TestCaseDescriptor) -> ImageBuffer:
    """Re-derive a follow-up image from its source and the descriptor parameters."""
    p = descriptor.params
    mr = descriptor.mr_id
    if mr is None:
        return image.copy()
    if mr in ("MR1", "MR2"):
        artifact = OcclusionArtifact(radius=p["radius"], color=p.get("color", 0))
        return occlude(image, landmarks, p["indices"], artifact)
    if mr == "MR3":
        return adjust_gamma(image, p["gamma"])
    return correlate(image, build_motion_kernel(p["size"], p["direction"]))


def _case(sample: Sample, tc_id: str, params: dict) -> SuiteCase:
    desc = TestCaseDescriptor(tc_id, sample.source_id, params)
    return SuiteCase(desc, apply_descriptor(sample.image, sample.landmarks, desc),
                     sample.landmarks, sample.category)


def gen_baseline(sample: Sample) -> SuiteCase:
    return _case(sample, BASELINE, {})


def gen_tc1(sample: Sample, config: GenerationConfig = GenerationConfig()) -> list[SuiteCase]:
    """Occlusion levels 1..21; level n covers landmark indices 0..n-1."""
    return [_case(sample, f"TC1_L{n}",
                  {"indices": list(range(n)), "radius": config.radius, "color": 0})
            for n in TC1_LEVELS]


def gen_finger_tcs(sample: Sample, config: GenerationConfig = GenerationConfig()) -> list[SuiteCase]:
    return [_case(sample, tc, {"indices": list(FINGERS[finger]), "radius": config.radius, "color": 0})
            for tc, finger in FINGER_TCS.items()]


def gen_exposure_tcs(sample: Sample, config: GenerationConfig = GenerationConfig()) -> list[SuiteCase]:
    return [_case(sample, tc, {"gamma": gamma}) for tc, gamma in EXPOSURE_TCS.items()]


def gen_blur_tcs(sample: Sample, config: GenerationConfig = GenerationConfig()) -> list[SuiteCase]:
    return [_case(sample, tc, {"direction": direction, "size": config.kernel_size})
            for tc, direction in BLUR_TCS.items()]


_GENERATORS = {"MR1": gen_tc1, "MR2": gen_finger_tcs, "MR3": gen_exposure_tcs, "MR4": gen_blur_tcs}


def prepare_sample(entry: ManifestEntry, config: GenerationConfig) -> Sample:
    """Load a manifest entry and bring it to the configured input geometry."""
    image, landmarks = entry.load_image(), entry.landmarks
    if config.crop_scale is not None:
        image, landmarks = crop_square_patch(image, landmarks, config.crop_scale)
    if config.image_side is not None and (image.width, image.height) != (config.image_side,) * 2:
        image, landmarks = resize(image, landmarks, config.image_side)
    return Sample(entry.sample_id, image, landmarks, entry.category)


def cases_for_sample(sample: Sample, mrs: Sequence[str], config: GenerationConfig) -> list[SuiteCase]:
    cases = [gen_baseline(sample)]
    if sample.category in config.followup_categories:
        for mr in mrs:
            cases.extend(_GENERATORS[mr](sample, config))
    return cases


def _sample_cases(entry: ManifestEntry, mrs, config) -> list[SuiteCase]:
    return cases_for_sample(prepare_sample(entry, config), mrs, config)


def iter_cases(manifest: DatasetManifest, mrs=None, config: GenerationConfig = GenerationConfig(),
               workers: int = 1) -> Iterator[list[SuiteCase]]:
    """Yield each sample's cases in manifest order, generating on up to ``workers`` threads."""
    mrs = normalize_mrs(mrs)
    if workers <= 1:
        for entry in manifest:
            yield _sample_cases(entry, mrs, config)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves input order regardless of completion order
        yield from pool.map(lambda e: _sample_cases(e, mrs, config), manifest)


def build_suite(manifest: DatasetManifest, mrs=None, config: GenerationConfig = GenerationConfig(),
                workers: int = 1) -> TestSuite:
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    cases = [c for group in iter_cases(manifest, mrs, config, workers) for c in group]
    return TestSuite(cases, config, normalize_mrs(mrs))


# -- on-disk layout ---------------------------------------------------------

@dataclass(frozen=True)
class SuiteEntry:
    """One materialized case as read back from a suite directory."""

    descriptor: TestCaseDescriptor
    image_path: Path
    landmarks: HandLandmarks
    category: str

    @property
    def case_id(self) -> str:
        return self.descriptor.case_id

    @property
    def tc_id(self) -> str:
        return self.descriptor.tc_id


def case_filename(case_id: str) -> str:
    return f"{case_id}.png"


def _entry_record(case: SuiteCase) -> dict[str, Any]:
    rec = case.descriptor.to_dict()
    rec["category"] = case.category
    rec["image"] = case_filename(case.case_id)
    rec["keypoints"] = case.landmarks.to_list()
    return rec


def manifest_fingerprint(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    for e in manifest:
        h.update(json.dumps([e.sample_id, e.category, e.landmarks.to_list()]).encode())
        h.update(hashlib.sha256(e.image_path.read_bytes()).digest())
    return h.hexdigest()


def suite_identity(manifest: DatasetManifest, mrs, config: GenerationConfig) -> dict[str, Any]:
    return {
        "config": config.to_dict(),
        "mrs": list(normalize_mrs(mrs)),
        "manifest_sha256": manifest_fingerprint(manifest),
    }


def _check_id(sample_id: str):
    if "/" in sample_id or "\\" in sample_id or sample_id in (".", ".."):
        raise ValueError(f"sample id {sample_id!r} cannot be used in a file name")


def write_suite(out_dir: str | Path, groups: Iterable[Sequence[SuiteCase]],
                identity: dict[str, Any]) -> int:
    """Write PNGs, ``suite.json`` and ``config.json``; returns the case count."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for group in groups:
        for case in group:
            _check_id(case.descriptor.source_id)
            case.image.to_png(out_dir / case_filename(case.case_id))
            records.append(_entry_record(case))
    (out_dir / SUITE_INDEX).write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
    (out_dir / SUITE_CONFIG).write_text(json.dumps(identity, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return len(records)


def generate_suite_dir(manifest: DatasetManifest, out_dir: str | Path, mrs=None,
                       config: GenerationConfig = GenerationConfig(), workers: int = 1,
                       reuse: bool = True) -> bool:
    """Materialize a suite on disk.

    Returns False when an existing suite with the same identity was reused.
    """
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    out_dir = Path(out_dir)
    identity = suite_identity(manifest, mrs, config)
    cfg_path = out_dir / SUITE_CONFIG
    if reuse and cfg_path.is_file() and (out_dir / SUITE_INDEX).is_file():
        if json.loads(cfg_path.read_text(encoding="utf-8")) == identity:
            log.info("reusing suite at %s", out_dir)
            return False
    n = write_suite(out_dir, iter_cases(manifest, mrs, config, workers), identity)
    log.info("wrote %d cases to %s", n, out_dir)
    return True


def load_suite(suite_dir: str | Path) -> list[SuiteEntry]:
    suite_dir = Path(suite_dir).resolve()
    raw = json.loads((suite_dir / SUITE_INDEX).read_text(encoding="utf-8"))
    entries = []
    for rec in raw:
        desc = TestCaseDescriptor.from_dict(rec)
        if rec["id"] != desc.case_id:
            raise ValueError(f"suite entry id {rec['id']!r} does not match {desc.case_id!r}")
        entries.append(SuiteEntry(desc, suite_dir / rec["image"],
                                  HandLandmarks.from_list(rec["keypoints"]), rec["category"]))
    return entries


def load_suite_identity(suite_dir: str | Path) -> dict[str, Any]:
    path = Path(suite_dir) / SUITE_CONFIG
    return json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
