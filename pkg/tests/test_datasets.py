import json
import logging

import numpy as np
import pytest
from PIL import Image

from groupreid.datasets import (CACHE_MAGIC, ManifestError, SynthConfig, generate_synthetic,
                                load_manifest, read_cache, save_task, task_from_manifest,
                                task_to_manifest, validate_manifest, write_cache)
from groupreid.features import DESCRIPTOR_DIM


def person(pid, center, desc=(0.5, 0.5)):
    return {"personId": pid, "center": list(center), "descriptor": list(desc)}


def manifest(**extra):
    doc = {
        "version": 1,
        "groups": [
            {"groupId": "a1", "camera": "A", "imageSize": [100, 50],
             "persons": [person("x", (10, 10)), person("y", (60, 20))]},
            {"groupId": "b1", "camera": "B", "imageSize": [100, 50],
             "persons": [person("u", (15, 12)), person("v", (70, 25))]},
        ],
        "pairs": [{"probeGroupId": "a1", "galleryGroupId": "b1",
                   "personCorrespondences": [["x", "u"], ["y", "v"]]}],
    }
    doc.update(extra)
    return doc


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(SynthConfig(n_pairs=4, distractor_count=2, size_max=5, dim=576, seed=7))


# -- manifest validation


def test_valid_manifest_loads():
    task = task_from_manifest(manifest())
    assert task.probe_ids == ["a1"] and task.gallery_ids == ["b1"]
    assert task.ground_truth == {"a1": "b1"}
    assert task.correspondences[("a1", "b1")] == [(0, 0), (1, 1)]


@pytest.mark.parametrize("mutate,pointer", [
    (lambda d: d.update(version=2), "/version"),
    (lambda d: d["groups"][0].update(camera="C"), "/groups/0/camera"),
    (lambda d: d["groups"][1]["persons"][0].pop("personId"), "/groups/1/persons/0"),
    (lambda d: d["groups"][0].update(groupId="b1"), "/groups/1/groupId"),
    (lambda d: d["pairs"][0].update(galleryGroupId="zz"), "/pairs/0/galleryGroupId"),
    (lambda d: d["pairs"][0].update(probeGroupId="b1"), "/pairs/0/probeGroupId"),
    (lambda d: d["pairs"][0]["personCorrespondences"].append(["x", "nobody"]),
     "/pairs/0/personCorrespondences/2"),
])
def test_manifest_errors_carry_json_pointer(mutate, pointer):
    doc = manifest()
    mutate(doc)
    with pytest.raises(ManifestError, match=pointer):
        validate_manifest(doc)


def test_box_and_center_bounds_checked():
    doc = manifest()
    doc["groups"][0]["persons"][0]["center"] = [500, 10]
    with pytest.raises(ManifestError, match="outside image bounds"):
        task_from_manifest(doc)
    doc = manifest()
    doc["groups"][0]["persons"][0]["box"] = [90, 0, 20, 10]
    with pytest.raises(ManifestError, match="outside image bounds"):
        task_from_manifest(doc)


def test_missing_descriptor_rejected():
    doc = manifest()
    del doc["groups"][0]["persons"][0]["descriptor"]
    with pytest.raises(ManifestError, match="needs center and descriptor"):
        task_from_manifest(doc)


def test_weak_group_overlap_warns(caplog):
    doc = manifest()
    doc["pairs"][0]["personCorrespondences"] = []
    with caplog.at_level(logging.WARNING):
        validate_manifest(doc)
    assert "one-quarter" in caplog.text


def test_limit_reads_first_groups():
    task = task_from_manifest(manifest(), limit=1)
    assert task.probe_ids == ["a1"] and task.galleries == [] and task.ground_truth == {}


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "nope.json")
    (tmp_path / "m.json").write_text(json.dumps(manifest(descriptorCache="gone.grpd")))
    with pytest.raises(FileNotFoundError, match="descriptor cache"):
        load_manifest(tmp_path / "m.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ManifestError, match="invalid JSON"):
        load_manifest(tmp_path / "bad.json")


# -- round trips


def test_save_and_load_round_trip(tmp_path, synth):
    save_task(synth, tmp_path / "t.json")
    back = load_manifest(tmp_path / "t.json")
    assert back.probe_ids == synth.probe_ids and back.gallery_ids == synth.gallery_ids
    assert back.ground_truth == synth.ground_truth
    assert back.correspondences == synth.correspondences
    for a, b in zip(synth.probes + synth.galleries, back.probes + back.galleries):
        np.testing.assert_array_equal(a.descriptors, b.descriptors)
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.reference_direction, b.reference_direction)
        np.testing.assert_array_equal(a.log_distance, b.log_distance)


def test_inline_manifest_round_trip(synth):
    back = task_from_manifest(json.loads(json.dumps(task_to_manifest(synth))))
    np.testing.assert_array_equal(back.probes[0].descriptors, synth.probes[0].descriptors)


def test_cache_bytes_are_stable(tmp_path, synth):
    graphs = synth.probes + synth.galleries
    cams = ["A"] * len(synth.probes) + ["B"] * len(synth.galleries)
    write_cache(tmp_path / "a.grpd", graphs, cams)
    back, cams_back = read_cache(tmp_path / "a.grpd")
    assert cams_back == cams
    write_cache(tmp_path / "b.grpd", back, cams_back)
    raw = (tmp_path / "a.grpd").read_bytes()
    assert raw == (tmp_path / "b.grpd").read_bytes()
    assert raw[:4] == CACHE_MAGIC


def test_corrupt_cache_rejected(tmp_path):
    (tmp_path / "x.grpd").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError, match="not a descriptor cache"):
        read_cache(tmp_path / "x.grpd")


# -- image mode


def test_image_mode_extracts_descriptors(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("a.png", "b.png"):
        Image.fromarray(rng.integers(0, 255, (120, 200, 3), dtype=np.uint8)).save(tmp_path / name)
    doc = {
        "version": 1,
        "groups": [
            {"groupId": "a", "camera": "A", "imagePath": "a.png",
             "persons": [{"personId": "p", "box": [10, 10, 30, 80]},
                         {"personId": "q", "box": [100, 5, 10, 10], "kind": "head"}]},
            {"groupId": "b", "camera": "B", "imagePath": "b.png",
             "persons": [{"personId": "r", "box": [50, 20, 40, 90]}]},
        ],
    }
    (tmp_path / "m.json").write_text(json.dumps(doc))
    task = load_manifest(tmp_path / "m.json")
    g = task.probes[0]
    assert g.descriptors.shape == (2, DESCRIPTOR_DIM)
    assert g.image_size == (200, 120)
    assert g.global_descriptor is not None
    np.testing.assert_allclose(g.centers[0], [25, 50])


def test_image_mode_missing_image(tmp_path):
    doc = {"version": 1, "groups": [{"groupId": "a", "camera": "A", "imagePath": "gone.png",
                                     "persons": [{"personId": "p", "box": [0, 0, 5, 5]}]}]}
    with pytest.raises(FileNotFoundError, match="missing image"):
        task_from_manifest(doc, tmp_path)


# -- synthetic generator


def test_synthetic_shape_and_labels(synth):
    cfg = SynthConfig(n_pairs=4, distractor_count=2, size_max=5, dim=576, seed=7)
    assert len(synth.probes) == cfg.n_pairs
    assert len(synth.galleries) == cfg.n_pairs + cfg.distractor_count
    for g in synth.probes:
        assert cfg.size_min <= g.n <= cfg.size_max
    for g in synth.probes + synth.galleries:
        # churn may shrink a gallery below the minimum, never to nothing
        assert 1 <= g.n <= cfg.size_max
        w, h = g.image_size
        assert np.all((g.centers >= 0) & (g.centers <= [w, h]))
    for (p, q), pairs in synth.correspondences.items():
        assert synth.ground_truth[p] == q
        assert len(pairs) >= 1


def test_synthetic_is_seeded():
    cfg = SynthConfig(n_pairs=3, distractor_count=1, dim=576, seed=11)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    for x, y in zip(a.probes + a.galleries, b.probes + b.galleries):
        np.testing.assert_array_equal(x.descriptors, y.descriptors)
        np.testing.assert_array_equal(x.centers, y.centers)
    c = generate_synthetic(SynthConfig(n_pairs=3, distractor_count=1, dim=576, seed=12))
    assert not np.array_equal(a.probes[0].centers, c.probes[0].centers)


@pytest.mark.parametrize("kw", [dict(churn_rate=1.5), dict(size_min=0), dict(size_max=2, size_min=3),
                                dict(view_change=(0.5, 0.2)), dict(layout_noise=-1.0), dict(dim=100)])
def test_synth_config_validation(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)
