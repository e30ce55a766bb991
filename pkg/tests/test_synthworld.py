"""
Tests for procedural scenes, renders and on-disk datasets.
"""
import math
import unittest

import numpy as np
import pytest

from crossnet.exceptions import ConfigError, DatasetFormatError, SceneRejectedError
from crossnet.models.config_models import MAN_MADE, ROAD, SKY, VEGETATION, WorldConfig
from crossnet.models.scene_models import Entity, SceneSpec
from crossnet.utils.helpers import directory_checksum
from crossnet.world.dataset import (load_dataset, make_dataset, make_pair, make_permutation_task,
                                    read_manifest, scene_seeds)
from crossnet.world.render import (GRASS, PAVEMENT, azimuths, elevations, flip_labels, ground_classes,
                                   pixel_centers, rasterize, render_aerial)
from crossnet.world.scene import generate_scene, is_asymmetric, road_span


def scene_of(*entities, seed=0, extent=64.0) -> SceneSpec:
    return SceneSpec(seed=seed, extent=extent, entities=list(entities))


def north_road(width=6.0) -> Entity:
    return Entity(kind="road", center=(0.0, 0.0), length=96.0, width=width, heading=0.0)


class TestGeometry(unittest.TestCase):
    """Pixel, elevation and azimuth conventions."""

    def setUp(self):
        self.cfg = WorldConfig()

    def test_pixel_centres_north_up(self):
        xs, ys = pixel_centers(64, self.cfg)
        self.assertAlmostEqual(xs[0, 0], -31.5)
        self.assertAlmostEqual(ys[0, 0], 31.5)
        self.assertAlmostEqual(xs[0, 63], 31.5)
        self.assertAlmostEqual(ys[63, 0], -31.5)

    def test_elevation_bands(self):
        np.testing.assert_allclose(np.degrees(elevations(self.cfg)), [37.5, 22.5, 7.5, -7.5])

    def test_north_column_azimuth(self):
        phi = azimuths(self.cfg)
        self.assertAlmostEqual(phi[self.cfg.north], 0.0)
        self.assertAlmostEqual(phi[self.cfg.north + 4], math.pi / 2)


class TestGroundRender(unittest.TestCase):

    def setUp(self):
        self.cfg = WorldConfig()

    def test_empty_scene(self):
        classes = ground_classes(scene_of(), self.cfg)
        self.assertTrue(np.all(classes[:3] == SKY))
        self.assertTrue(np.all(classes[3] == VEGETATION))
        _, labels = render_aerial(scene_of(), self.cfg)
        self.assertTrue(np.all(labels.argmax() == VEGETATION))

    def test_north_road_seen_north_and_south(self):
        classes = ground_classes(scene_of(north_road()), self.cfg)
        bottom = classes[-1]
        north = self.cfg.north
        self.assertEqual(bottom[north], ROAD)
        self.assertEqual(bottom[north - 8], ROAD)
        self.assertEqual(int(np.sum(bottom == ROAD)), 2)

    def test_building_occludes(self):
        building = Entity(kind="building", center=(0.0, 10.0), length=6.0, width=6.0, height=12.0)
        classes = ground_classes(scene_of(building), self.cfg)
        self.assertTrue(np.all(classes[:, self.cfg.north] == MAN_MADE))
        self.assertEqual(classes[0, self.cfg.north - 8], SKY)

    def test_camera_inside_building(self):
        building = Entity(kind="building", center=(0.0, 0.0), length=6.0, width=6.0, height=5.0)
        with self.assertRaises(SceneRejectedError):
            ground_classes(scene_of(building), self.cfg)

    def test_rotation_is_column_roll(self):
        scene = generate_scene(11, self.cfg)
        base = ground_classes(scene, self.cfg)
        for s in (1, 5, 15):
            rotated = ground_classes(scene, self.cfg, 2 * math.pi * s / self.cfg.w_g)
            np.testing.assert_array_equal(rotated, np.roll(base, -s, axis=1))

    def test_off_grid_rotation_casts_directly(self):
        scene = scene_of(north_road())
        classes = ground_classes(scene, self.cfg, math.pi / self.cfg.w_g)
        self.assertEqual(classes.shape, (self.cfg.h_g, self.cfg.w_g))


@pytest.mark.unit
def test_scene_determinism():
    cfg = WorldConfig()
    assert generate_scene(3, cfg) == generate_scene(3, cfg)
    assert generate_scene(3, cfg) != generate_scene(4, cfg)


@pytest.mark.unit
def test_generated_scenes_are_asymmetric():
    cfg = WorldConfig()
    for seed in range(6):
        assert is_asymmetric(ground_classes(generate_scene(seed, cfg), cfg))


@pytest.mark.unit
def test_symmetric_road_detected():
    classes = ground_classes(scene_of(north_road()), WorldConfig())
    assert not is_asymmetric(classes)


@pytest.mark.unit
def test_camera_clear_of_buildings():
    cfg = WorldConfig(max_buildings=4)
    for seed in range(10):
        scene = generate_scene(seed, cfg)
        assert not any(bool(b.contains(0.0, 0.0)) for b in scene.of_kind("building"))


@pytest.mark.unit
def test_aerial_render_range_and_shape():
    cfg = WorldConfig()
    image, labels = render_aerial(generate_scene(2, cfg), cfg)
    assert image.shape == (3, 64, 64) and image.dtype == np.float32
    assert image.min() >= 0.0 and image.max() <= 1.0
    assert labels.shape == (8, 8)


@pytest.mark.unit
def test_entity_counts_within_bounds():
    cfg = WorldConfig(min_roads=1, max_roads=2, max_vegetation=3, max_buildings=2)
    for seed in range(20):
        scene = generate_scene(seed, cfg)
        assert 1 <= len(scene.of_kind("road")) <= 2
        assert len(scene.of_kind("vegetation")) <= 3
        assert len(scene.of_kind("building")) <= 2


@pytest.mark.unit
def test_aerial_labels_follow_road_geometry():
    cfg = WorldConfig()
    heading = math.pi / 4
    road = Entity(kind="road", center=(0.0, 0.0), length=200.0, width=12.0, heading=heading)
    _, labels = render_aerial(scene_of(road), cfg)
    cols = (np.arange(cfg.w_a) + 0.5) * cfg.extent / cfg.w_a - cfg.extent / 2
    rows = cfg.extent / 2 - (np.arange(cfg.h_a) + 0.5) * cfg.extent / cfg.h_a
    xs, ys = np.meshgrid(cols, rows)
    across = np.abs(xs * math.cos(heading) - ys * math.sin(heading))
    expected = np.where(across <= 6.0, ROAD, VEGETATION)
    np.testing.assert_array_equal(labels.argmax(), expected)
    assert np.any(expected == ROAD) and np.any(expected == VEGETATION)


@pytest.mark.unit
def test_generated_roads_end_at_scene_edge():
    cfg = WorldConfig()
    half = cfg.extent / 2
    for seed in range(10):
        for road in generate_scene(seed, cfg).of_kind("road"):
            direction = np.array([math.sin(road.heading), math.cos(road.heading)])
            for sign in (-1, 1):
                end = np.array(road.center) + sign * road.length / 2 * direction
                assert np.max(np.abs(end)) == pytest.approx(half)


@pytest.mark.unit
def test_road_span_stays_inside_square():
    centre, length = road_span(3.0, 0.3, 32.0)
    assert 64.0 <= length <= 64.0 * math.sqrt(2)
    assert max(abs(c) for c in centre) < 32.0
    _, axis_length = road_span(0.0, 0.0, 32.0)
    assert axis_length == pytest.approx(64.0)


@pytest.mark.unit
def test_roads_clipped_to_scene_square():
    scene = scene_of(north_road())
    xs = np.array([0.0, 0.0, 0.0])
    ys = np.array([0.0, 31.0, 40.0])
    assert rasterize(scene, xs, ys).tolist() == [PAVEMENT, PAVEMENT, GRASS]


@pytest.mark.unit
def test_label_noise_flips_to_other_classes():
    classes = np.zeros((4, 16), dtype=np.int64)
    flipped = flip_labels(classes, 0.5, 4, np.random.default_rng(0))
    assert 0 < int(np.sum(flipped != 0)) < classes.size
    assert flipped.max() < 4
    assert np.array_equal(flip_labels(classes, 0.0, 4, np.random.default_rng(0)), classes)


@pytest.mark.unit
def test_pair_labels_normalized():
    pair = make_pair(9, WorldConfig())
    assert pair.aerial_labels.is_normalized() and pair.ground_labels.is_normalized()
    assert pair.meta_vector()[0] == 9


@pytest.mark.unit
def test_scene_seed_streams_independent_of_counts():
    short = scene_seeds(1, 2, 1)
    long = scene_seeds(1, 5, 3)
    assert long["train"][:2] == short["train"]
    assert long["test"][:1] == short["test"]
    assert all(s < 2 ** 53 for s in long["train"])


@pytest.mark.integration
def test_dataset_bytes_reproducible(tmp_path):
    cfg = WorldConfig()
    make_dataset(tmp_path / "a", 3, 1, seed=5, cfg=cfg)
    make_dataset(tmp_path / "b", 3, 1, seed=5, cfg=cfg, threads=2)
    assert directory_checksum(tmp_path / "a") == directory_checksum(tmp_path / "b")
    make_dataset(tmp_path / "c", 3, 1, seed=6, cfg=cfg)
    assert directory_checksum(tmp_path / "a") != directory_checksum(tmp_path / "c")


@pytest.mark.integration
def test_dataset_load(tmp_path):
    cfg = WorldConfig()
    make_dataset(tmp_path, 2, 1, seed=0, cfg=cfg)
    assert read_manifest(tmp_path)["train"] == "2"
    train = load_dataset(tmp_path, "train")
    assert len(train) == 2
    assert train.images.shape == (2, 3, 64, 64)
    assert train.ground_labels.shape == (2, 4, 16, 4)
    assert train.pair(1).scene_seed == scene_seeds(0, 2, 1)["train"][1]


@pytest.mark.integration
def test_dataset_covers_every_class(tmp_path):
    make_dataset(tmp_path, 16, 0, seed=1, cfg=WorldConfig())
    train = load_dataset(tmp_path, "train")
    ground = np.bincount(train.ground_labels.argmax(axis=-1).ravel(), minlength=4)
    aerial = np.bincount(train.aerial_labels.argmax(axis=-1).ravel(), minlength=4)
    assert np.all(ground > 0), ground
    assert aerial[SKY] == 0
    assert aerial[ROAD] > 0 and aerial[VEGETATION] > 0


@pytest.mark.integration
def test_empty_dataset(tmp_path):
    make_dataset(tmp_path, 0, 0, seed=0, cfg=WorldConfig())
    assert len(load_dataset(tmp_path, "train")) == 0


@pytest.mark.unit
def test_load_dataset_errors(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path, "train")
    with pytest.raises(ConfigError):
        load_dataset(tmp_path, "validation")


@pytest.mark.unit
def test_permutation_task_labels():
    dataset, permutation = make_permutation_task(3, seed=4)
    aerial = dataset.aerial_labels.reshape(3, 16, 4)
    ground = dataset.ground_labels.reshape(3, 16, 4)
    np.testing.assert_array_equal(ground, aerial[:, permutation])
    assert sorted(permutation.tolist()) == list(range(16))


@pytest.mark.unit
def test_permutation_task_cell_counts():
    with pytest.raises(ConfigError):
        make_permutation_task(1, seed=0, h_g=2, w_g=4)


if __name__ == '__main__':
    unittest.main()
