"""
Unit tests for trainable blocks, the optimizer and the checkpoint container.
"""
import unittest

import numpy as np
import pytest

from crossnet.engine import functional as F
from crossnet.engine.tensor import Tensor, default_dtype
from crossnet.exceptions import ConfigError, ContractError, DatasetFormatError, ShapeError
from crossnet.models.config_models import ConvBackboneConfig
from crossnet.nn import (MLP, Adam, BatchNorm, ConvBackbone, Linear, Module, Parameter, cell_centers,
                         clip_grad_norm, hypercolumn)
from crossnet.nn.checkpoint import load_container, save_container


class Pair(Module):
    def __init__(self, rng):
        super().__init__()
        self.first = Linear(3, 4, rng)
        self.second = MLP([4, 5, 2], rng)
        self.extra = Parameter(np.zeros(2))


class TestModule(unittest.TestCase):
    """Parameter naming and state round trips."""

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_dotted_names(self):
        names = [name for name, _ in Pair(self.rng).named_parameters()]
        self.assertIn("first.weight", names)
        self.assertIn("second.layers.0.weight", names)
        self.assertIn("second.layers.1.bias", names)
        self.assertIn("extra", names)

    def test_state_dict_includes_running_statistics(self):
        state = Pair(self.rng).state_dict()
        self.assertIn("second.norms.0.running_mean", state)
        self.assertIn("second.norms.0.running_var", state)

    def test_load_state_dict_round_trip(self):
        source = Pair(np.random.default_rng(1))
        target = Pair(np.random.default_rng(2))
        target.load_state_dict({k: v.copy() for k, v in source.state_dict().items()})
        for key, value in source.state_dict().items():
            np.testing.assert_array_equal(target.state_dict()[key], value)

    def test_load_state_dict_rejects_shape_mismatch(self):
        model = Pair(self.rng)
        state = {k: v.copy() for k, v in model.state_dict().items()}
        state["first.weight"] = np.zeros((2, 2))
        with self.assertRaises(ShapeError):
            model.load_state_dict(state)

    def test_load_state_dict_rejects_missing_keys(self):
        model = Pair(self.rng)
        state = model.state_dict()
        state.pop("extra")
        with self.assertRaises(ShapeError):
            model.load_state_dict(state)

    def test_train_eval_propagates(self):
        model = Pair(self.rng).eval()
        self.assertFalse(any(m.training for _, m in model.named_modules()))
        model.train()
        self.assertTrue(all(m.training for _, m in model.named_modules()))


class TestLayers(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_linear_leading_axes(self):
        layer = Linear(3, 2, self.rng)
        self.assertEqual(layer(Tensor(np.ones((4, 5, 3)))).shape, (4, 5, 2))

    def test_linear_width_mismatch(self):
        with self.assertRaises(ShapeError):
            Linear(3, 2, self.rng)(Tensor(np.ones((4, 5))))

    def test_mlp_needs_two_widths(self):
        with self.assertRaises(ShapeError):
            MLP([4], self.rng)

    def test_zero_init_output(self):
        mlp = MLP([3, 4, 2], self.rng, zero_init_output=True)
        out = mlp(Tensor(self.rng.normal(size=(6, 3))))
        np.testing.assert_array_equal(out.data, np.zeros((6, 2)))

    def test_batch_norm_train_then_eval(self):
        bn = BatchNorm(2, channel_axis=-1, decay=0.0)
        x = self.rng.normal(loc=3.0, scale=2.0, size=(64, 2))
        out = bn(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-4)
        np.testing.assert_allclose(bn.running_mean, x.mean(axis=0), rtol=1e-4)
        bn.eval()
        np.testing.assert_allclose(bn(Tensor(x)).data, out, atol=1e-3)

    def test_batch_norm_group_axis_keeps_groups_separate(self):
        bn = BatchNorm(2, channel_axis=-1, decay=0.0, group_axis=1)
        x = self.rng.normal(size=(4, 3, 5, 2)) + np.array([0.0, 10.0, -5.0])[None, :, None, None]
        out = bn(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=(0, 2)), 0.0, atol=1e-4)
        alone = BatchNorm(2, channel_axis=-1, group_axis=1)(Tensor(x[:, 1:2])).data
        np.testing.assert_allclose(alone, out[:, 1:2], atol=1e-4)
        np.testing.assert_allclose(bn.running_mean, x.mean(axis=(0, 2)).mean(axis=0), rtol=1e-4, atol=1e-5)

    def test_batch_norm_eval_uses_running_estimates(self):
        bn = BatchNorm(3).eval()
        x = self.rng.normal(size=(2, 3, 4, 4))
        np.testing.assert_allclose(bn(Tensor(x)).data, x / np.sqrt(1 + bn.eps), rtol=1e-5)

    def test_backbone_tap_shapes(self):
        config = ConvBackboneConfig(stage_channels=[2, 3, 4], tap_points=[0, 2], input_size=16,
                                    convs_per_stage=1)
        outputs = ConvBackbone(config, self.rng)(Tensor(np.ones((2, 3, 16, 16))))
        self.assertEqual([o.shape for o in outputs], [(2, 2, 16, 16), (2, 4, 4, 4)])
        self.assertEqual(config.hypercolumn_width, 6)


@pytest.mark.unit
def test_cell_centers_row_major():
    centers = cell_centers(2, 4)
    np.testing.assert_allclose(centers[0], [0.125, 0.25])
    np.testing.assert_allclose(centers[5], [0.375, 0.75])


@pytest.mark.unit
def test_hypercolumn_concatenates_channels():
    maps = [Tensor(np.ones((2, 3, 8, 8))), Tensor(np.full((2, 5, 4, 4), 2.0))]
    out = hypercolumn(maps, cell_centers(2, 2))
    assert out.shape == (2, 4, 8)
    np.testing.assert_array_equal(out.data[0, 0], [1, 1, 1, 2, 2, 2, 2, 2])


@pytest.mark.unit
def test_hypercolumn_needs_maps():
    with pytest.raises(ConfigError):
        hypercolumn([], cell_centers(2, 2))


@pytest.mark.unit
def test_adam_zero_lr_leaves_parameters_unchanged():
    rng = np.random.default_rng(0)
    model = Pair(rng)
    before = {k: p.data.copy() for k, p in model.named_parameters()}
    optimizer = Adam(list(model.named_parameters()), lr=0.0)
    out = model.second(model.first(Tensor(rng.normal(size=(4, 3)))))
    F.sum(F.mul(out, out)).backward()
    optimizer.step()
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(p.data, before[name])


@pytest.mark.unit
def test_adam_first_step_moves_by_lr():
    with default_dtype("f64"):
        p = Parameter(np.array([1.0, -1.0]))
    optimizer = Adam([("p", p)], lr=0.1)
    F.sum(F.mul(p, Tensor(np.array([2.0, -3.0]), dtype=np.float64))).backward()
    optimizer.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9], atol=1e-6)


@pytest.mark.unit
def test_adam_step_before_backward():
    optimizer = Adam([("p", Parameter(np.zeros(2)))])
    with pytest.raises(ContractError):
        optimizer.step()


@pytest.mark.unit
def test_adam_state_validates_hyperparameters():
    p = Parameter(np.zeros(2))
    optimizer = Adam([("p", p)], lr=0.1)
    assert optimizer.state.model_dump(exclude={"m", "v"}) == {
        "lr": 0.1, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "step": 0}
    for kwargs in ({"lr": -1.0}, {"betas": (1.0, 0.999)}, {"eps": 0.0}):
        with pytest.raises(ConfigError):
            Adam([("p", p)], **kwargs)


@pytest.mark.unit
def test_clip_grad_norm_scales_globally():
    a = Parameter(np.zeros(2))
    b = Parameter(np.zeros(1))
    a.grad[...] = [3.0, 0.0]
    b.grad[...] = [4.0]
    norm = clip_grad_norm([a, b], 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(a.grad, [0.6, 0.0], rtol=1e-5)
    np.testing.assert_allclose(b.grad, [0.8], rtol=1e-5)


@pytest.mark.unit
def test_container_sorted_and_deterministic(tmp_path):
    arrays = {"b": np.ones(2, dtype=np.float32), "a": np.zeros((1, 2), dtype=np.float64)}
    save_container(tmp_path / "one.ckpt", arrays)
    save_container(tmp_path / "two.ckpt", dict(reversed(list(arrays.items()))))
    assert (tmp_path / "one.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
    loaded = load_container(tmp_path / "one.ckpt")
    assert list(loaded) == ["a", "b"]
    assert loaded["a"].dtype == np.float64


@pytest.mark.unit
def test_container_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(DatasetFormatError):
        load_container(path)


if __name__ == '__main__':
    unittest.main()
