import json

import pytest

from cod_harness.ingest import ManifestError, MediaError, load_manifest, resolve_media, write_manifest

from conftest import audio_sample, image_sample


def _write(path, header, records):
    lines = [json.dumps(header)] + [r if isinstance(r, str) else json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


HEADER = {"schema_version": 1, "dataset_name": "toy", "media_root": "media"}


def test_three_samples(tmp_path):
    samples = [audio_sample(i) for i in range(3)]
    path = tmp_path / "m.jsonl"
    write_manifest(path, "toy", samples, "media")
    m = load_manifest(path)
    assert m.samples == tuple(samples)
    assert m.dataset_name == "toy"
    assert m.media_root == tmp_path / "media"


def test_order_preserved_and_deterministic(tmp_path):
    samples = [image_sample(i) for i in (5, 1, 3, 2)]
    path = tmp_path / "m.jsonl"
    write_manifest(path, "toy", samples)
    assert [s.id for s in load_manifest(path).samples] == ["i005", "i001", "i003", "i002"]
    assert load_manifest(path) == load_manifest(path)


def test_missing_question_reports_line(tmp_path):
    rec = audio_sample().to_dict()
    del rec["question"]
    with pytest.raises(ManifestError, match=r"^line 2: missing field question$") as exc:
        load_manifest(_write(tmp_path / "m.jsonl", HEADER, [rec]))
    assert exc.value.line == 2


def test_malformed_line_carries_fragment(tmp_path):
    good = audio_sample(0).to_dict()
    with pytest.raises(ManifestError) as exc:
        load_manifest(_write(tmp_path / "m.jsonl", HEADER, [good, "{not json"]))
    assert exc.value.line == 3
    assert exc.value.fragment == "{not json"


def test_duplicate_id(tmp_path):
    rec = audio_sample(0).to_dict()
    with pytest.raises(ManifestError, match="duplicate id 'a000'"):
        load_manifest(_write(tmp_path / "m.jsonl", HEADER, [rec, rec]))


def test_unsupported_schema_version(tmp_path):
    with pytest.raises(ManifestError, match="unsupported schema_version 7 .supported: 1."):
        load_manifest(_write(tmp_path / "m.jsonl", {**HEADER, "schema_version": 7}, []))


def test_invalid_sample_fails_load(tmp_path):
    rec = image_sample(ground_truth_answer="Z").to_dict()
    with pytest.raises(ManifestError, match="ground truth not an option letter"):
        load_manifest(_write(tmp_path / "m.jsonl", HEADER, [rec]))


def test_airbench_sized_manifest(tmp_path):
    # converted AIR-Bench-Chat manifests hold 2,200 samples
    cats = ["Speech", "Sound", "Music", "Mixed"]
    samples = [audio_sample(i, id=f"air-{i:04d}", category=cats[i % 4]) for i in range(2200)]
    path = tmp_path / "air.jsonl"
    write_manifest(path, "AIR-Bench-Chat", samples)
    assert len(load_manifest(path).samples) == 2200


def test_media_root_override(tmp_path):
    path = tmp_path / "m.jsonl"
    write_manifest(path, "toy", [audio_sample()], "media")
    assert load_manifest(path, media_root=tmp_path / "elsewhere").media_root == tmp_path / "elsewhere"


def test_resolve_media_reads_exact_bytes(tmp_path):
    (tmp_path / "clip.wav").write_bytes(b"\x00\x01RIFF" * 100)
    payload = resolve_media(audio_sample(media_path="clip.wav"), tmp_path)
    assert len(payload.data) == 600
    assert payload.mime == "audio/wav"


def test_resolve_media_rejects_traversal(tmp_path):
    (tmp_path / "secret").write_text("x")
    root = tmp_path / "root"
    root.mkdir()
    with pytest.raises(MediaError, match="path traversal rejected"):
        resolve_media(audio_sample(media_path="../secret"), root)
    with pytest.raises(MediaError, match="path traversal rejected"):
        resolve_media(audio_sample(media_path=str(tmp_path / "secret")), root)


def test_resolve_media_missing_file_names_path(tmp_path):
    with pytest.raises(MediaError) as exc:
        resolve_media(image_sample(media_path="img.png"), tmp_path)
    assert str((tmp_path / "img.png").resolve()) in str(exc.value)
