import json
import logging

import numpy as np
import pytest

from vehiclemae.data import (
    ManifestRecord,
    PretrainData,
    add_prompts,
    load_manifest,
    parse_record,
    synth_sample,
    write_manifest,
    write_synthetic_dataset,
)
from vehiclemae.exceptions import ParseError, ValidationError
from vehiclemae.geometry import AnnotationKind


def _lines(*records):
    return "".join(json.dumps(r) + "\n" for r in records)


def test_load_manifest_three_records(tmp_path):
    for name in ("a.png", "b.png", "c.png"):
        (tmp_path / name).write_bytes(b"")
    (tmp_path / "m.jsonl").write_text(
        _lines(
            {"image_path": "a.png"},
            {"image_path": "b.png", "box": [0, 0, 10, 10]},
            {"image_path": "c.png", "box": [0, 0, 10, 10], "angle": 45, "prompt": "hi", "has_pair": True},
        )
    )
    recs = load_manifest(tmp_path / "m.jsonl")
    assert [r.annotation.kind for r in recs] == [
        AnnotationKind.NONE,
        AnnotationKind.BOX_ONLY,
        AnnotationKind.BOX_AND_ANGLE,
    ]


def test_angle_without_box_reports_line(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    (tmp_path / "m.jsonl").write_text(_lines({"image_path": "a.png"}, {"image_path": "a.png", "angle": 30}))
    with pytest.raises(ParseError) as info:
        load_manifest(tmp_path / "m.jsonl")
    assert info.value.line == 2


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        "[1, 2]",
        '{"box": [0, 0, 1, 1]}',
        '{"image_path": "a.png", "colour": "red"}',
        '{"image_path": "a.png", "prompt": "x", "has_pair": false}',
        '{"image_path": "a.png", "box": [5, 5, 1, 1]}',
    ],
)
def test_parse_record_errors(line):
    with pytest.raises(ParseError):
        parse_record(line, 7)


def test_missing_image_is_skipped(tmp_path, caplog):
    (tmp_path / "a.png").write_bytes(b"")
    (tmp_path / "m.jsonl").write_text(_lines({"image_path": "a.png"}, {"image_path": "gone.png"}))
    with caplog.at_level(logging.WARNING):
        recs = load_manifest(tmp_path / "m.jsonl")
    assert [r.image_path for r in recs] == ["a.png"]
    assert "gone.png" in caplog.text


def test_manifest_round_trip_is_byte_stable(tmp_path):
    manifest = write_synthetic_dataset(tmp_path / "ds", 12, seed=3)
    first = manifest.read_bytes()
    records = load_manifest(manifest)
    assert len(records) == 12
    write_manifest(manifest, records)
    assert manifest.read_bytes() == first


def test_record_invariants():
    with pytest.raises(ValidationError):
        ManifestRecord("a.png", angle=10.0)
    with pytest.raises(ValidationError):
        ManifestRecord("a.png", prompt="x")
    rec = ManifestRecord("a.png", box=(1, 2, 3, 4))
    assert parse_record(rec.to_json()) == rec


def test_add_prompts(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, 20, seed=1)
    records = load_manifest(manifest)
    stripped = [ManifestRecord(r.image_path, r.contour_path, r.box, r.angle) for r in records]
    assert add_prompts(stripped, tmp_path) == records


def test_synth_determinism():
    a, b = synth_sample(11), synth_sample(11)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.contour, b.contour)
    assert a.annotation == b.annotation and a.prompt == b.prompt
    assert not np.array_equal(a.image, synth_sample(12).image)


@pytest.mark.parametrize("seed", range(10))
def test_vertical_sample_is_mirror_symmetric(seed):
    s = synth_sample(seed, angle=90.0, kind=AnnotationKind.BOX_AND_ANGLE)
    x0, y0, x1, y1 = (int(v) for v in s.true_box)
    inside = s.image[y0:y1, x0:x1]
    assert np.array_equal(inside, inside[:, ::-1])
    assert s.annotation.angle == 90.0


def test_kind_mixture_frequency():
    counts = {k: 0 for k in AnnotationKind}
    for seed in range(1000):
        counts[synth_sample(seed).kind] += 1
    # binomial standard deviations at n = 1000 are below 15
    assert abs(counts[AnnotationKind.NONE] - 100) < 45
    assert abs(counts[AnnotationKind.BOX_ONLY] - 200) < 45
    assert abs(counts[AnnotationKind.BOX_AND_ANGLE] - 700) < 45


def test_synth_prompt_follows_kind():
    for seed in range(50):
        s = synth_sample(seed)
        assert (s.prompt is None) == (s.kind is AnnotationKind.NONE)
        assert s.contour.shape == s.image.shape[:2]
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0


def test_pretrain_data_from_manifest_matches_memory(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, 8, seed=2)
    from_disk = PretrainData.from_manifest(manifest)
    in_memory = PretrainData.synthetic(8, seed=2)
    assert np.array_equal(from_disk.images, in_memory.images)
    assert np.array_equal(from_disk.contours, in_memory.contours)
    assert from_disk.annotations == in_memory.annotations
    assert from_disk.prompts == in_memory.prompts
    assert from_disk.corpus == in_memory.corpus
    assert sum(from_disk.kind_counts().values()) == 8
