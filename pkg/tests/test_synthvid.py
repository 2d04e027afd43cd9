import numpy as np
import pytest

from distilvad.exceptions import ConfigError, EmptyDatasetError, MapNotFoundError
from distilvad.synthvid import (
    SceneState,
    Sprite,
    anomaly_interval,
    generate_clip,
    generate_dataset,
    gt_anomaly_map,
    load_dataset,
    read_pgm,
    save_dataset,
    write_pgm,
)


def test_clips_are_reproducible(make_scene_cfg):
    cfg = make_scene_cfg()
    a, b = generate_clip(cfg, "test", 1), generate_clip(cfg, "test", 1)
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(a.masks, b.masks)
    assert a.video_id == "test_001"
    other = generate_clip(cfg, "distill", 1)
    assert not np.array_equal(a.frames, other.frames)


def test_train_clips_are_normal(make_scene_cfg):
    clip = generate_clip(make_scene_cfg(), "train", 0)
    assert clip.frames.shape == (16, 38, 38)
    assert clip.frames.dtype == np.uint8
    assert clip.labels.sum() == 0
    assert clip.masks.sum() == 0


@pytest.mark.parametrize("index", range(4))
def test_mixed_clip_has_one_anomalous_interval(make_scene_cfg, index):
    clip = generate_clip(make_scene_cfg(), "test", index)
    anomalous = np.flatnonzero(clip.labels)
    assert len(anomalous) == 6
    assert np.all(np.diff(anomalous) == 1)
    has_mask = clip.masks.reshape(len(clip), -1).max(axis=1) > 0
    np.testing.assert_array_equal(has_mask, clip.labels.astype(bool))


def test_anomaly_interval_bounds(make_scene_cfg):
    rng = np.random.default_rng(0)
    for _ in range(50):
        start, stop = anomaly_interval(make_scene_cfg(), rng)
        assert 0 <= start and stop <= 16 and stop - start == 6
    assert anomaly_interval(make_scene_cfg(anomaly_rate=0.0), rng) == (0, 0)


def test_dataset_does_not_depend_on_workers(make_scene_cfg):
    cfg = make_scene_cfg()
    one, many = generate_dataset(cfg, workers=1), generate_dataset(cfg, workers=3)
    for split in ("train", "distill", "test"):
        for a, b in zip(one.split(split), many.split(split)):
            assert a.video_id == b.video_id
            np.testing.assert_array_equal(a.frames, b.frames)
    assert one.frame_count("test") == 3 * 16
    assert len({c.video_id for s in ("train", "distill", "test") for c in one.split(s)}) == 7


def test_unknown_split(make_scene_cfg):
    with pytest.raises(ConfigError):
        generate_dataset(make_scene_cfg(), workers=1).split("validation")


def test_save_and_load(tmp_path, make_scene_cfg):
    dataset = generate_dataset(make_scene_cfg(), workers=2)
    save_dataset(dataset, str(tmp_path))
    loaded = load_dataset(str(tmp_path))
    for split in ("train", "distill", "test"):
        for a, b in zip(dataset.split(split), loaded.split(split)):
            assert a.video_id == b.video_id
            np.testing.assert_array_equal(a.frames, b.frames)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.masks, b.masks)
    only_test = load_dataset(str(tmp_path), splits=("test",))
    assert only_test.train == [] and len(only_test.test) == 3


def test_pgm_round_trip(tmp_path, rng):
    frame = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
    path = str(tmp_path / "f.pgm")
    write_pgm(path, frame)
    with open(path, "rb") as f:
        assert f.read(2) == b"P5"
    np.testing.assert_array_equal(read_pgm(path), frame)


def test_empty_directory(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_dataset(str(tmp_path))


def test_missing_mask(tmp_path, make_scene_cfg):
    dataset = generate_dataset(make_scene_cfg(), workers=1)
    save_dataset(dataset, str(tmp_path))
    clip = dataset.test[0]
    first = int(np.flatnonzero(clip.labels)[0])
    (tmp_path / "masks" / "test" / clip.video_id / f"{first}.amap").unlink()
    with pytest.raises(MapNotFoundError):
        load_dataset(str(tmp_path), splits=("test",))


@pytest.mark.parametrize("overrides,key", [
    (dict(fast_speed=(1.0, 2.0)), "scene.fast_speed"),
    (dict(oversized_size=(6, 10)), "scene.oversized_size"),
    (dict(oversized_size=(14, 40)), "scene.oversized_size"),
    (dict(anomaly_types=["teleport"]), "scene.anomaly_types"),
    (dict(anomaly_rate=1.5), "scene.anomaly_rate"),
])
def test_scene_validation(make_scene_cfg, overrides, key):
    with pytest.raises(ConfigError) as err:
        make_scene_cfg(**overrides).validate()
    assert err.value.key == key


def test_sprites_stay_on_screen(rng):
    sprite = Sprite(y=3.0, x=30.0, vy=4.7, vx=-4.9, size=8, intensity=200)
    for _ in range(500):
        sprite.step(38, 38)
        assert 0 <= sprite.y <= 30 and 0 <= sprite.x <= 30


def test_disc_is_smaller_than_box():
    box = Sprite(0, 0, 0, 0, size=8, intensity=200)
    disc = Sprite(0, 0, 0, 0, size=8, intensity=200, shape="disc")
    assert disc.area < box.area == 64


@pytest.mark.parametrize("shape,size,y,x", [("box", 6, 0.0, 0.0), ("box", 9, 12.4, 27.6),
                                            ("disc", 7, 3.5, 20.2), ("disc", 10, 28.0, 28.0)])
def test_mask_covers_exactly_the_anomalous_sprite(shape, size, y, x):
    anomalous = Sprite(y, x, 0, 0, size=size, intensity=200, shape=shape, anomalous=True)
    normal = Sprite(30 - y, 30 - x, 0, 0, size=8, intensity=180)
    state = SceneState(np.zeros((38, 38), dtype=np.uint8), [normal, anomalous])
    mask = gt_anomaly_map(state)
    assert mask.sum() == anomalous.area
    assert set(np.unique(mask)) <= {0.0, 1.0}
