"""
Unit tests for the tensor engine: ops, backward, gradient checks and TNSR blobs.
"""
import io
import struct
import threading
import unittest

import numpy as np
import pytest

from crossnet.engine import functional as F
from crossnet.engine.gradcheck import check_gradients, relative_error
from crossnet.engine.tensor import (ComputeGraph, Tensor, backward, default_dtype, get_default_dtype,
                                    is_grad_enabled, no_grad)
from crossnet.engine.tnsr import decode_tensor, encode_tensor, load_tensor, read_tensor, save_tensor
from crossnet.exceptions import (ContractError, DatasetFormatError, ShapeError,
                                 TargetValidationError)


def leaf(array):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True, dtype=np.float64)


class TestForward(unittest.TestCase):
    """Forward values of the primitive operations."""

    def test_add_broadcasts(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.arange(3.0))
        np.testing.assert_allclose(F.add(a, b).data, 1.0 + np.arange(3.0)[None, :].repeat(2, 0))

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_reshape_mismatch(self):
        with self.assertRaises(ShapeError):
            F.reshape(Tensor(np.ones(6)), (4, 2))

    def test_softmax_large_logits(self):
        x = Tensor(np.array([[1e3, -1e3, 0.0], [1e3, 1e3, 1e3]]))
        p = F.softmax(x).data
        self.assertTrue(np.all(np.isfinite(p)))
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
        np.testing.assert_allclose(p[1], 1.0 / 3, atol=1e-6)

    def test_cross_entropy_uniform_logits(self):
        logits = Tensor(np.zeros((5, 4)))
        target = np.eye(4)[[0, 1, 2, 3, 0]]
        self.assertAlmostEqual(F.cross_entropy(logits, target).item(), np.log(4), places=5)

    def test_cross_entropy_rejects_unnormalized_target(self):
        with self.assertRaises(TargetValidationError):
            F.cross_entropy(Tensor(np.zeros((2, 3))), np.full((2, 3), 0.5))

    def test_cross_entropy_confident_wrong_is_finite(self):
        logits = Tensor(np.array([[1e3, -1e3, -1e3]]))
        target = np.array([[1e-3, 1 - 2e-3, 1e-3]])
        self.assertTrue(np.isfinite(F.cross_entropy(logits, target).item()))

    def test_conv2d_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 5, 5))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = F.conv2d(Tensor(x), Tensor(w), padding=1).data
        np.testing.assert_allclose(out, x, rtol=1e-6)

    def test_conv2d_stride_output_size(self):
        out = F.conv2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((3, 2, 3, 3))), stride=2, padding=1)
        self.assertEqual(out.shape, (1, 3, 4, 4))

    def test_bilinear_sample_pixel_centres(self):
        fmap = np.arange(16.0).reshape(1, 1, 4, 4)
        points = np.array([[[0.125, 0.125], [0.875, 0.375], [0.5, 0.5]]])
        out = F.bilinear_sample(Tensor(fmap), points).data[0, :, 0]
        np.testing.assert_allclose(out, [0.0, 7.0, 7.5])


class TestBackward(unittest.TestCase):
    """Analytic gradients against central differences in f64."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def _check(self, loss_fn, tensors):
        results = check_gradients(loss_fn, tensors, rng=self.rng)
        for name, result in results.items():
            self.assertTrue(result.passed(1e-6), f"{name}: {result.rel_error:.3e}")

    def test_vanishing_gradient_fails_unless_allowed(self):
        used = leaf(self.rng.normal(size=3))
        unused = leaf(self.rng.normal(size=2))

        def loss_fn():
            return F.sum(F.mul(used, used))

        results = check_gradients(loss_fn, {"used": used, "unused": unused}, rng=self.rng)
        self.assertTrue(results["used"].passed(1e-6))
        self.assertEqual(results["unused"].analytic_norm, 0.0)
        self.assertFalse(results["unused"].passed(1e-6))
        allowed = check_gradients(loss_fn, {"unused": unused}, rng=self.rng, allow_zero={"unused"})
        self.assertTrue(allowed["unused"].passed(1e-6))

    def test_matmul_softmax_chain(self):
        a = leaf(self.rng.normal(size=(3, 4)))
        b = leaf(self.rng.normal(size=(4, 5)))
        weights = self.rng.normal(size=(3, 5))
        self._check(lambda: F.sum(F.mul(F.softmax(F.matmul(a, b)), Tensor(weights, dtype=np.float64))),
                    {"a": a, "b": b})

    def test_cross_entropy(self):
        logits = leaf(self.rng.normal(size=(6, 4)))
        target = self.rng.dirichlet(np.ones(4), size=6)
        self._check(lambda: F.cross_entropy(logits, target), {"logits": logits})

    def test_conv2d(self):
        x = leaf(self.rng.normal(size=(2, 2, 5, 5)))
        w = leaf(self.rng.normal(size=(3, 2, 3, 3)))
        b = leaf(self.rng.normal(size=3))
        self._check(lambda: F.sum(F.relu(F.conv2d(x, w, b, stride=2, padding=1))), {"x": x, "w": w, "b": b})

    def test_bilinear_sample(self):
        fmap = leaf(self.rng.normal(size=(2, 3, 4, 4)))
        points = self.rng.uniform(0.1, 0.9, size=(2, 5, 2))
        weights = Tensor(self.rng.normal(size=(2, 5, 3)), dtype=np.float64)
        self._check(lambda: F.sum(F.mul(F.bilinear_sample(fmap, points), weights)), {"fmap": fmap})

    def test_batch_norm_train(self):
        x = leaf(self.rng.normal(size=(4, 3, 2, 2)))
        gamma = leaf(self.rng.uniform(0.5, 1.5, size=3))
        beta = leaf(self.rng.normal(size=3))
        weights = Tensor(self.rng.normal(size=(4, 3, 2, 2)), dtype=np.float64)
        self._check(lambda: F.sum(F.mul(F.batch_norm_train(x, gamma, beta, axes=(0, 2, 3)), weights)),
                    {"x": x, "gamma": gamma, "beta": beta})

    def test_batch_norm_train_grouped(self):
        x = leaf(self.rng.normal(size=(3, 4, 5, 2)))
        gamma = leaf(self.rng.uniform(0.5, 1.5, size=2))
        beta = leaf(self.rng.normal(size=2))
        weights = Tensor(self.rng.normal(size=(3, 4, 5, 2)), dtype=np.float64)
        self._check(lambda: F.sum(F.mul(F.batch_norm_train(x, gamma, beta, axes=(0, 2), channel_axis=3),
                                        weights)),
                    {"x": x, "gamma": gamma, "beta": beta})

    def test_take_accumulates_repeated_indices(self):
        x = leaf(np.arange(6.0).reshape(3, 2))
        F.sum(F.take(x, [0, 0, 2], axis=0)).backward()
        np.testing.assert_array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])

    def test_shared_leaf_sums_branches(self):
        x = leaf([2.0, 3.0])
        F.sum(F.add(F.mul(x, x), x)).backward()
        np.testing.assert_allclose(x.grad, [5.0, 7.0])

    def test_gradients_accumulate_until_zeroed(self):
        x = leaf([1.0])
        F.sum(F.scale(x, 3.0)).backward()
        F.sum(F.scale(x, 3.0)).backward()
        np.testing.assert_allclose(x.grad, [6.0])
        x.zero_grad()
        np.testing.assert_allclose(x.grad, [0.0])

    def test_backward_needs_scalar(self):
        x = leaf([1.0, 2.0])
        y = F.scale(x, 2.0)
        with self.assertRaises(ContractError):
            backward(ComputeGraph.from_outputs(y), y)

    def test_backward_needs_tracked_input(self):
        y = F.sum(Tensor(np.ones(3)))
        with self.assertRaises(ContractError):
            y.backward()

    def test_graph_is_topological(self):
        x = leaf([1.0])
        y = F.scale(x, 2.0)
        z = F.sum(F.add(y, y))
        graph = ComputeGraph.from_outputs(z)
        order = [id(n) for n in graph.nodes]
        self.assertLess(order.index(id(x)), order.index(id(y)))
        self.assertLess(order.index(id(y)), order.index(id(z)))
        self.assertEqual(graph.leaves(), [x])


@pytest.mark.unit
def test_no_grad_records_nothing():
    x = leaf([1.0, 2.0])
    with no_grad():
        y = F.scale(x, 2.0)
        assert not is_grad_enabled()
    assert is_grad_enabled()
    assert y.creator is None
    assert not y.requires_grad


@pytest.mark.unit
def test_no_grad_is_thread_local():
    seen = []

    def worker():
        seen.append(is_grad_enabled())

    with no_grad():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen == [True]


@pytest.mark.unit
def test_default_dtype_context_restores():
    assert get_default_dtype() == np.float32
    with default_dtype("f64"):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


@pytest.mark.unit
def test_relative_error_of_identical_vectors():
    v = np.array([1.0, -2.0, 3.0])
    assert relative_error(v, v) == 0.0


# -- TNSR ------------------------------------------------------------------------

@pytest.mark.unit
def test_tnsr_header_layout():
    blob = encode_tensor(np.zeros((2, 3), dtype=np.float64))
    assert blob[:4] == b"CVTN"
    assert struct.unpack("<IIII", blob[4:20]) == (1, 2, 2, 3)
    assert blob[20] == 1
    assert len(blob) == 21 + 6 * 8


@pytest.mark.unit
def test_tnsr_preserves_dtype_and_values(tmp_path):
    array = np.random.default_rng(1).normal(size=(2, 3, 4)).astype(np.float32)
    save_tensor(tmp_path / "a.tnsr", array)
    loaded = load_tensor(tmp_path / "a.tnsr")
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, array)


@pytest.mark.unit
def test_tnsr_scalar():
    assert decode_tensor(encode_tensor(np.float64(2.5))).shape == ()


@pytest.mark.unit
@pytest.mark.parametrize("blob, reason", [
    (b"XXXX" + b"\x00" * 12, "magic"),
    (b"CVTN" + struct.pack("<II", 2, 0) + b"\x00", "version"),
    (b"CVTN" + struct.pack("<II", 1, 1) + struct.pack("<I", 4) + b"\x07", "dtype"),
    (b"CVTN" + struct.pack("<II", 1, 1) + struct.pack("<I", 4) + b"\x00" + b"\x00" * 8, "truncated"),
])
def test_tnsr_rejects_malformed(blob, reason):
    with pytest.raises(DatasetFormatError) as excinfo:
        read_tensor(io.BytesIO(blob), "blob")
    assert reason in str(excinfo.value)


@pytest.mark.unit
def test_tnsr_missing_file(tmp_path):
    with pytest.raises(DatasetFormatError):
        load_tensor(tmp_path / "missing.tnsr")


if __name__ == '__main__':
    unittest.main()
