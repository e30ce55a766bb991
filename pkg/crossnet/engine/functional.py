"""
Differentiable operations on `Tensor`.

Every operation is a `Function` subclass plus a thin public wrapper. Image
tensors are laid out NCHW; per-point features are (..., channels).
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from crossnet.engine.tensor import Function, Tensor
from crossnet.exceptions import ShapeError, TargetValidationError

logger = logging.getLogger(__name__)

TARGET_TOLERANCE = 1e-5


def _const(value, like: Tensor) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=like.dtype)


# -- elementwise ------------------------------------------------------------

class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return (self.unbroadcast(grad, self.shapes[0]),
                self.unbroadcast(grad, self.shapes[1]))


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (self.unbroadcast(grad * self.b, self.a.shape),
                self.unbroadcast(grad * self.a, self.b.shape))


class Scale(Function):
    def forward(self, x, factor: float = 1.0):
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad):
        return (grad * grad.dtype.type(self.factor),)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad):
        return (grad * self.mask,)


def add(a: Tensor, b: Union[Tensor, float]) -> Tensor:
    return Add.apply(a, _const(b, a))


def mul(a: Tensor, b: Union[Tensor, float]) -> Tensor:
    return Mul.apply(a, _const(b, a))


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


# -- shape ------------------------------------------------------------------

class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"cannot reshape {x.shape} into {tuple(shape)}") from e

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.ascontiguousarray(x.transpose(self.axes))

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.axes)),)


class BroadcastTo(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        try:
            return np.ascontiguousarray(np.broadcast_to(x, shape))
        except ValueError as e:
            raise ShapeError(f"cannot broadcast {x.shape} to {tuple(shape)}") from e

    def backward(self, grad):
        return (self.unbroadcast(grad, self.in_shape),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise ShapeError(f"cannot concatenate shapes {[a.shape for a in arrays]} on axis {axis}") from e

    def backward(self, grad):
        splits = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, splits, axis=self.axis))


class Take(Function):
    """Select entries along one axis; repeated indices accumulate in backward."""

    def forward(self, x, indices=None, axis=0):
        self.in_shape = x.shape
        self.indices = np.asarray(indices, dtype=np.int64)
        self.axis = axis
        return np.take(x, self.indices, axis=axis)

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        moved = np.moveaxis(out, self.axis, 0)
        np.add.at(moved, self.indices, np.moveaxis(grad, self.axis, 0))
        return (out,)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape = x.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=axes)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    return BroadcastTo.apply(x, shape=tuple(shape))


def concat(tensors: List[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    return Take.apply(x, indices=indices, axis=axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra ---------------------------------------------------------

class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        try:
            return a @ b
        except ValueError as e:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from e

    def backward(self, grad):
        ga = grad @ np.swapaxes(self.b, -1, -2)
        gb = np.swapaxes(self.a, -1, -2) @ grad
        return (self.unbroadcast(ga, self.a.shape), self.unbroadcast(gb, self.b.shape))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(a, b)


# -- normalisation and losses -----------------------------------------------

def _stable_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _stable_log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


class Softmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        self.y = _stable_softmax(x, axis)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        self.y = _stable_log_softmax(x, axis)
        return self.y

    def backward(self, grad):
        p = np.exp(self.y)
        return (grad - p * grad.sum(axis=self.axis, keepdims=True),)


class CrossEntropy(Function):
    """Mean over rows of -sum_k target * log softmax(pred)."""

    def forward(self, pred, target):
        self.log_p = _stable_log_softmax(pred, axis=-1)
        self.target = target
        n = pred.shape[0]
        return np.asarray(-(target * self.log_p).sum() / n, dtype=pred.dtype)

    def backward(self, grad):
        n = self.log_p.shape[0]
        return (grad * (np.exp(self.log_p) - self.target) / n, None)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def validate_target(target: np.ndarray, tolerance: float = TARGET_TOLERANCE) -> None:
    row_sums = target.sum(axis=-1)
    bad = np.abs(row_sums - 1.0) > tolerance
    if np.any(bad) or np.any(target < 0):
        first = int(np.argmax(bad)) if np.any(bad) else -1
        raise TargetValidationError(
            f"target rows must be distributions; row {first} sums to "
            f"{float(row_sums.reshape(-1)[max(first, 0)]):.6g}")


def cross_entropy(pred_logits: Tensor, target_probs: Union[Tensor, np.ndarray]) -> Tensor:
    """Cross-entropy between logits (n x K) and target distributions (n x K)."""
    target = target_probs.data if isinstance(target_probs, Tensor) else np.asarray(target_probs)
    if pred_logits.ndim != 2 or target.shape != pred_logits.shape:
        raise ShapeError(f"cross_entropy expects matching (n, K) shapes, got "
                         f"{pred_logits.shape} and {target.shape}")
    validate_target(target)
    return CrossEntropy.apply(pred_logits, Tensor(target, dtype=pred_logits.dtype))


# -- convolution and sampling -----------------------------------------------

class Conv2d(Function):
    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv2d expects NCHW input and OCkk weight with matching C, "
                             f"got {x.shape} and {w.shape}")
        batch, channels, height, width = x.shape
        out_ch, _, kh, kw = w.shape
        self.stride, self.padding = stride, padding
        self.x_shape, self.w_shape = x.shape, w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        self.out_hw = windows.shape[2:4]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(-1, channels * kh * kw)
        self.cols = cols
        self.w_mat = w.reshape(out_ch, -1)
        out = cols @ self.w_mat.T + b
        return np.ascontiguousarray(
            out.reshape(batch, self.out_hw[0], self.out_hw[1], out_ch).transpose(0, 3, 1, 2))

    def backward(self, grad):
        batch, channels, height, width = self.x_shape
        out_ch, _, kh, kw = self.w_shape
        ho, wo = self.out_hw
        s, p = self.stride, self.padding
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        dw = (g2.T @ self.cols).reshape(self.w_shape)
        db = g2.sum(axis=0)
        dcols = (g2 @ self.w_mat).reshape(batch, ho, wo, channels, kh, kw)
        dxp = np.zeros((batch, channels, height + 2 * p, width + 2 * p), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + height, p:p + width]
        return (np.ascontiguousarray(dx), dw, db)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    if bias is None:
        bias = Tensor(np.zeros(weight.shape[0]), dtype=weight.dtype)
    return Conv2d.apply(x, weight, bias, stride=stride, padding=padding)


def _bilinear_corners(points: np.ndarray, height: int, width: int):
    """Corner indices and weights for pixel-centre aligned sampling."""
    px = np.clip(points[..., 0] * width - 0.5, 0.0, width - 1)
    py = np.clip(points[..., 1] * height - 0.5, 0.0, height - 1)
    x0 = np.minimum(np.floor(px).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(py).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    wx = px - x0
    wy = py - y0
    return (y0, x0, y1, x1), ((1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx)


class BilinearSample(Function):
    """Sample an NCHW map at normalized (u, v) points, output (N, P, C)."""

    def forward(self, fmap, points=None):
        batch, channels, height, width = fmap.shape
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[0] != batch or pts.shape[2] != 2:
            raise ShapeError(f"bilinear_sample expects points of shape ({batch}, P, 2), got {pts.shape}")
        self.fmap_shape = fmap.shape
        (y0, x0, y1, x1), weights = _bilinear_corners(pts, height, width)
        bi = np.broadcast_to(np.arange(batch)[:, None], y0.shape)
        self.index = (bi, (y0, x0), (y0, x1), (y1, x0), (y1, x1))
        self.weights = [w.astype(fmap.dtype)[..., None] for w in weights]
        nhwc = fmap.transpose(0, 2, 3, 1)
        out = np.zeros((batch, pts.shape[1], channels), dtype=fmap.dtype)
        for (yy, xx), w in zip(self.index[1:], self.weights):
            out += w * nhwc[bi, yy, xx]
        return out

    def backward(self, grad):
        batch, channels, height, width = self.fmap_shape
        g_nhwc = np.zeros((batch, height, width, channels), dtype=grad.dtype)
        bi = self.index[0]
        for (yy, xx), w in zip(self.index[1:], self.weights):
            np.add.at(g_nhwc, (bi, yy, xx), w * grad)
        return (np.ascontiguousarray(g_nhwc.transpose(0, 3, 1, 2)),)


def bilinear_sample(fmap: Tensor, points: np.ndarray) -> Tensor:
    """
    Sample `fmap` (N, C, H, W) at normalized points (N, P, 2) given as (u, v)
    with u along the width. Coordinates outside [0, 1] clamp to the border.
    Differentiable with respect to the feature map only.
    """
    return BilinearSample.apply(fmap, points=points)


class BatchNormTrain(Function):
    """Batch normalization using the statistics of the current batch."""

    def forward(self, x, gamma, beta, axes=(0,), eps=1e-5, channel_axis=None):
        self.axes = tuple(a % x.ndim for a in axes)
        if channel_axis is None:
            channel_axis = [a for a in range(x.ndim) if a not in self.axes][0]
        channel_axis %= x.ndim
        # Axes outside `axes` other than the channel keep separate statistics.
        self.param_axes = tuple(a for a in range(x.ndim) if a != channel_axis)
        shape = [1] * x.ndim
        shape[channel_axis] = x.shape[channel_axis]
        self.param_shape = tuple(shape)
        self.mean = x.mean(axis=self.axes, keepdims=True)
        self.var = x.var(axis=self.axes, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(self.var + eps)
        self.x_hat = (x - self.mean) * self.inv_std
        self.gamma = gamma.reshape(shape)
        self.count = int(np.prod([x.shape[a] for a in self.axes]))
        return self.gamma * self.x_hat + beta.reshape(shape)

    def backward(self, grad):
        n = self.count
        dgamma = (grad * self.x_hat).sum(axis=self.param_axes)
        dbeta = grad.sum(axis=self.param_axes)
        dx_hat = grad * self.gamma
        dx = (self.inv_std / n) * (
            n * dx_hat
            - dx_hat.sum(axis=self.axes, keepdims=True)
            - self.x_hat * (dx_hat * self.x_hat).sum(axis=self.axes, keepdims=True))
        return (dx, dgamma.reshape(-1), dbeta.reshape(-1))


def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, axes: Tuple[int, ...],
                     eps: float = 1e-5, channel_axis: Optional[int] = None) -> Tensor:
    return BatchNormTrain.apply(x, gamma, beta, axes=axes, eps=eps, channel_axis=channel_axis)
