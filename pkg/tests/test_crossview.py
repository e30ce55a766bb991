"""
Tests for the cross-view network: transform rows, gradients, checkpoints.
"""
import json
import unittest

import numpy as np
import pytest

from crossnet.engine import functional as F
from crossnet.engine.gradcheck import check_gradient_groups
from crossnet.engine.tensor import Tensor, default_dtype, no_grad
from crossnet.exceptions import ConfigError, ContractError, ShapeError
from crossnet.models.config_models import ConvBackboneConfig, CrossViewConfig
from crossnet.network.crossview import (CrossViewModel, apply_transform, config_path_for,
                                        coordinate_features, load_model, normalize_indices,
                                        save_model)
from crossnet.services.verify import parameter_groups, random_images


def small_config(**overrides) -> CrossViewConfig:
    values = dict(h_a=4, w_a=4, h_g=2, w_g=8, num_classes=4, d_s=6,
                  backbone=ConvBackboneConfig(stage_channels=[4, 4, 4], input_size=16, convs_per_stage=1),
                  head_widths=[8], s_channels=[4, 4], f_widths=[8, 1])
    values.update(overrides)
    return CrossViewConfig(**values)


class TestIndexNormalization(unittest.TestCase):

    def setUp(self):
        self.config = CrossViewConfig(h_a=8, w_a=8, h_g=4, w_g=16)

    def test_known_indices(self):
        i, j, y, x = normalize_indices(17, 17, self.config)
        self.assertAlmostEqual(i, 0.25)
        self.assertAlmostEqual(j, 0.125)
        self.assertAlmostEqual(y, 0.25)
        self.assertAlmostEqual(x, 0.0625)
        _, _, y, x = normalize_indices(33, 0, self.config)
        self.assertAlmostEqual(y, 0.5)
        self.assertAlmostEqual(x, 0.0625)

    def test_wide_aerial_grid(self):
        config = CrossViewConfig(h_a=16, w_a=16, h_g=4, w_g=16)
        self.assertEqual(normalize_indices(0, 0, config), (0.0, 0.0, 0.0, 0.0))
        i, j, _, _ = normalize_indices(0, 17, config)
        self.assertAlmostEqual(i, 0.0625)
        self.assertAlmostEqual(j, 0.0625)

    def test_out_of_range(self):
        with self.assertRaises(ContractError):
            normalize_indices(self.config.ground_cells, 0, self.config)
        with self.assertRaises(ContractError):
            normalize_indices(0, -1, self.config)

    def test_coordinate_features_match_scalar_form(self):
        rows = np.array([0, 17, 63])
        coords = coordinate_features(rows, self.config)
        self.assertEqual(coords.shape, (3, 64, 4))
        np.testing.assert_allclose(coords[1, 17], normalize_indices(17, 17, self.config), rtol=1e-6)


class TestTransform(unittest.TestCase):
    """Row-stochastic rows and the convex-combination output."""

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_rows_are_distributions(self):
        worst = 0.0
        for seed in range(10):
            model = CrossViewModel(CrossViewConfig.tiny(seed=seed)).eval()
            matrix = model.full_transform_matrix(random_images(self.rng, 10, model.config.image_size))
            self.assertTrue(np.all(matrix >= 0))
            worst = max(worst, float(np.abs(matrix.sum(axis=-1) - 1).max()))
        self.assertLessEqual(worst, 1e-5)

    def test_sparse_rows_match_full_grid(self):
        with default_dtype("f64"):
            model = CrossViewModel(CrossViewConfig.tiny(seed=3)).eval()
            images = random_images(self.rng, 2, model.config.image_size)
            with no_grad():
                full = model.predict_ground(images).data
                sparse = model.predict_ground(images, [5, 1, 6]).data
        np.testing.assert_allclose(sparse, full[:, [5, 1, 6]], atol=1e-6)

    def test_sparse_rows_match_full_grid_in_train_mode(self):
        with default_dtype("f64"):
            model = CrossViewModel(CrossViewConfig.tiny(seed=3)).train()
            cfg = model.config
            images = random_images(self.rng, 2, cfg.image_size)
            targets = self.rng.dirichlet(np.ones(cfg.num_classes), size=6)
            rows = [0, 3, 6]
            with no_grad():
                full = model.predict_ground(images).data[:, rows]
                sparse = model.predict_ground(images, rows)
            full_loss = F.cross_entropy(Tensor(full).reshape(-1, cfg.num_classes), targets)
            sparse_loss = F.cross_entropy(sparse.reshape(-1, cfg.num_classes), targets)
        np.testing.assert_allclose(sparse.data, full, atol=1e-9)
        self.assertAlmostEqual(float(sparse_loss.data), float(full_loss.data), places=9)

    def test_zero_bias_stays_in_convex_hull(self):
        model = CrossViewModel(small_config()).eval()
        images = random_images(self.rng, 2, 16)
        with no_grad():
            f_a = model.aerial_features(images).data
            f_g = model.predict_ground(images).data
        self.assertTrue(np.all(f_g >= f_a.min(axis=1, keepdims=True) - 1e-4))
        self.assertTrue(np.all(f_g <= f_a.max(axis=1, keepdims=True) + 1e-4))

    def test_bias_reaches_sky(self):
        model = CrossViewModel(small_config()).eval()
        model.b.data[:8, 3] = 50.0
        labels = model.predict_ground_labels(random_images(self.rng, 1, 16)[0])[0]
        self.assertTrue(np.all(labels.argmax()[0] == 3))

    def test_apply_transform_shape_check(self):
        with self.assertRaises(ShapeError):
            apply_transform(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.zeros((2, 2))))

    def test_image_shape_checked(self):
        model = CrossViewModel(small_config())
        with self.assertRaises(ShapeError):
            model.predict_ground(np.zeros((1, 3, 8, 8)))

    def test_rows_checked(self):
        model = CrossViewModel(small_config())
        with self.assertRaises(ContractError):
            model.predict_ground(np.zeros((1, 3, 16, 16)), [16])

    def test_empty_point_set(self):
        model = CrossViewModel(small_config())
        out = model.aerial_features(np.zeros((2, 3, 16, 16)), np.zeros((0, 2)))
        self.assertEqual(out.shape, (2, 0, 4))


@pytest.mark.unit
def test_gradient_groups_tiny_f64():
    rng = np.random.default_rng(0)
    with default_dtype("f64"):
        model = CrossViewModel(CrossViewConfig.tiny())
        cfg = model.config
        images = Tensor(random_images(rng, 4, cfg.image_size))
        targets = rng.dirichlet(np.ones(cfg.num_classes), size=4 * cfg.ground_cells)

        def loss_fn():
            return F.cross_entropy(model.predict_ground(images).reshape(-1, cfg.num_classes), targets)

        results = check_gradient_groups(loss_fn, parameter_groups(model), rng=rng)
    assert set(results) == {"A", "S", "F", "b"}
    for name, result in results.items():
        assert result.analytic_norm > 0.0, f"{name}: gradient vanished"
        assert result.passed(1e-6), f"{name}: {result.rel_error:.3e}"


@pytest.mark.unit
def test_naive_mode_has_no_conditioning():
    model = CrossViewModel(small_config(naive=True))
    assert model.S is None
    with pytest.raises(ConfigError):
        model.conditioning_vector(np.zeros((1, 3, 16, 16)))
    matrix = model.full_transform_matrix(np.zeros((1, 3, 16, 16)))
    np.testing.assert_allclose(matrix, 1.0 / 16, rtol=1e-6)


@pytest.mark.unit
def test_conditioning_vector_depends_on_image():
    model = CrossViewModel(small_config()).eval()
    rng = np.random.default_rng(6)
    first, second = random_images(rng, 2, 16)
    with no_grad():
        s_first = model.conditioning_vector(first).data
        s_second = model.conditioning_vector(second).data
        s_zero = model.conditioning_vector(np.zeros((3, 16, 16))).data
    assert s_first.shape == (1, model.config.d_s)
    assert not np.allclose(s_first, s_second)
    np.testing.assert_array_equal(s_zero, 0.0)
    assert not np.allclose(model.full_transform_matrix(first), model.full_transform_matrix(second))


@pytest.mark.unit
def test_naive_mode_size_guard():
    with pytest.raises(ConfigError):
        CrossViewModel(small_config(naive=True, max_naive_entries=100))


@pytest.mark.unit
def test_naive_mode_is_input_independent():
    model = CrossViewModel(small_config(naive=True))
    model.F.table.data[...] = np.random.default_rng(1).normal(size=model.F.table.shape)
    rng = np.random.default_rng(2)
    a = model.full_transform_matrix(random_images(rng, 1, 16))
    b = model.full_transform_matrix(random_images(rng, 1, 16))
    np.testing.assert_array_equal(a, b)


@pytest.mark.unit
def test_with_ground_grid_shares_weights():
    model = CrossViewModel(small_config()).eval()
    wide = model.with_ground_grid(4, 16)
    assert wide.A is model.A and wide.F.mlp is model.F.mlp
    matrix = wide.full_transform_matrix(random_images(np.random.default_rng(0), 1, 16))
    assert matrix.shape == (1, 64, 16)
    np.testing.assert_allclose(matrix.sum(axis=-1), 1.0, atol=1e-5)


@pytest.mark.unit
def test_with_ground_grid_rejects_naive():
    with pytest.raises(ConfigError):
        CrossViewModel(small_config(naive=True)).with_ground_grid(4, 16)


@pytest.mark.unit
def test_full_scale_preset_validates():
    config = CrossViewConfig.full_scale()
    assert config.f_input_width == 293
    assert config.backbone.hypercolumn_width == 960


@pytest.mark.unit
def test_same_seed_same_parameters():
    a = CrossViewModel(small_config(seed=5)).state_dict()
    b = CrossViewModel(small_config(seed=5)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.integration
def test_checkpoint_round_trip(tmp_path):
    model = CrossViewModel(small_config()).eval()
    model.b.data[...] = np.random.default_rng(3).normal(size=model.b.shape)
    path = tmp_path / "model.ckpt"
    save_model(model, path)
    sidecar = json.loads(config_path_for(path).read_text())
    assert sidecar["h_g"] == 2
    loaded = load_model(path).eval()
    images = random_images(np.random.default_rng(4), 2, 16)
    with no_grad():
        np.testing.assert_array_equal(loaded.predict_ground(images).data, model.predict_ground(images).data)
    save_model(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


@pytest.mark.integration
def test_checkpoint_shape_mismatch(tmp_path):
    path = tmp_path / "model.ckpt"
    save_model(CrossViewModel(small_config()), path)
    with pytest.raises(ConfigError):
        load_model(path, expected=small_config(w_g=16))


@pytest.mark.integration
def test_checkpoint_missing_config(tmp_path):
    path = tmp_path / "model.ckpt"
    save_model(CrossViewModel(small_config()), path)
    config_path_for(path).unlink()
    with pytest.raises(ConfigError):
        load_model(path)


if __name__ == '__main__':
    unittest.main()
