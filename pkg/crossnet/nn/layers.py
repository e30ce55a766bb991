"""Trainable blocks: linear and conv layers, batch norm, MLPs, conv backbone."""
import logging
from typing import List, Optional, Sequence

import numpy as np

from crossnet.engine import functional as F
from crossnet.engine.tensor import Tensor, get_default_dtype
from crossnet.exceptions import ShapeError
from crossnet.models.config_models import ConvBackboneConfig
from crossnet.nn.module import Module, Parameter

logger = logging.getLogger(__name__)

BN_DECAY = 0.9
BN_EPS = 1e-5


def xavier_uniform(shape: Sequence[int], fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            weight = np.zeros((in_features, out_features), dtype=get_default_dtype())
        else:
            weight = xavier_uniform((in_features, out_features), in_features, out_features, rng)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_features, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"linear layer expects width {self.in_features}, got input {x.shape}")
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.in_features) if x.ndim != 2 else x
        out = F.add(F.matmul(flat, self.weight), self.bias)
        return out.reshape(*lead, self.out_features) if x.ndim != 2 else out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: Optional[int] = None):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        k2 = kernel_size * kernel_size
        self.weight = Parameter(xavier_uniform((out_channels, in_channels, kernel_size, kernel_size),
                                               in_channels * k2, out_channels * k2, rng))
        self.bias = Parameter(np.zeros(out_channels, dtype=get_default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """
    Per-channel batch normalization.

    Train mode normalizes with batch statistics and folds them into the
    running estimates with `decay`; eval mode uses the running estimates only.
    With `group_axis` set, train-mode statistics are taken separately for
    every index along that axis and averaged into the running estimates.
    """

    def __init__(self, channels: int, channel_axis: int = 1, decay: float = BN_DECAY,
                 eps: float = BN_EPS, group_axis: Optional[int] = None):
        super().__init__()
        self.channel_axis = channel_axis
        self.group_axis = group_axis
        self.decay = decay
        self.eps = eps
        dtype = get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        channel_axis = self.channel_axis % x.ndim
        kept = {channel_axis}
        if self.group_axis is not None:
            kept.add(self.group_axis % x.ndim)
        axes = tuple(a for a in range(x.ndim) if a not in kept)
        shape = [1] * x.ndim
        shape[channel_axis] = x.shape[channel_axis]
        if self.training:
            out = F.batch_norm_train(x, self.gamma, self.beta, axes=axes, eps=self.eps,
                                     channel_axis=channel_axis)
            stats_axes = tuple(a for a in range(x.ndim) if a != channel_axis)
            mean = x.data.mean(axis=axes, keepdims=True).mean(axis=stats_axes)
            var = x.data.var(axis=axes, keepdims=True).mean(axis=stats_axes)
            d = self.decay
            self.set_buffer("running_mean", (d * self.running_mean + (1 - d) * mean).astype(x.dtype))
            self.set_buffer("running_var", (d * self.running_var + (1 - d) * var).astype(x.dtype))
            return out
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        centred = F.add(x, Tensor(-self.running_mean.reshape(shape), dtype=x.dtype))
        x_hat = F.mul(centred, Tensor(inv_std.reshape(shape), dtype=x.dtype))
        return F.add(F.mul(x_hat, self.gamma.reshape(shape)), self.beta.reshape(shape))


class MLP(Module):
    """
    Affine + activation chain over the last axis.

    `widths` lists the input width followed by every layer's output width.
    Hidden layers are Linear -> BatchNorm -> ReLU; the final layer is linear
    unless `final_activation` is set.
    """

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, batch_norm: bool = True,
                 final_activation: bool = False, zero_init_output: bool = False,
                 bn_decay: float = BN_DECAY, group_axis: Optional[int] = None):
        super().__init__()
        if len(widths) < 2:
            raise ShapeError(f"an MLP needs an input and at least one layer width, got {list(widths)}")
        self.widths = list(widths)
        self.batch_norm = batch_norm
        self.final_activation = final_activation
        n_layers = len(widths) - 1
        self.layers = [Linear(widths[i], widths[i + 1], rng,
                              zero_init=zero_init_output and i == n_layers - 1)
                       for i in range(n_layers)]
        if batch_norm and n_layers > 1:
            self.norms = [BatchNorm(widths[i + 1], channel_axis=-1, decay=bn_decay, group_axis=group_axis)
                          for i in range(n_layers - 1)]
        else:
            self.norms = []

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.widths[0]:
            raise ShapeError(f"MLP expects input width {self.widths[0]}, got input {x.shape}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last:
                if self.norms:
                    x = self.norms[i](x)
                x = F.relu(x)
            elif self.final_activation:
                x = F.relu(x)
        return x


class ConvStage(Module):
    def __init__(self, in_channels: int, out_channels: int, n_convs: int, stride: int,
                 rng: np.random.Generator, bn_decay: float = BN_DECAY):
        super().__init__()
        channels = [in_channels] + [out_channels] * n_convs
        for i in range(n_convs):
            setattr(self, f"conv{i}", Conv2d(channels[i], channels[i + 1], 3, rng,
                                             stride=stride if i == 0 else 1))
            setattr(self, f"bn{i}", BatchNorm(channels[i + 1], channel_axis=1, decay=bn_decay))
        self.n_convs = n_convs

    def forward(self, x: Tensor) -> Tensor:
        for i in range(self.n_convs):
            x = getattr(self, f"conv{i}")(x)
            x = getattr(self, f"bn{i}")(x)
            x = F.relu(x)
        return x


class ConvBackbone(Module):
    """3x3 conv stages, stride 2 between stages, every stage a hypercolumn candidate."""

    def __init__(self, config: ConvBackboneConfig, rng: np.random.Generator,
                 in_channels: int = 3, bn_decay: float = BN_DECAY):
        super().__init__()
        self.config = config
        previous = in_channels
        for k, channels in enumerate(config.stage_channels):
            setattr(self, f"stage{k + 1}", ConvStage(previous, channels, config.convs_per_stage,
                                                     stride=1 if k == 0 else 2, rng=rng,
                                                     bn_decay=bn_decay))
            previous = channels

    def forward(self, x: Tensor) -> List[Tensor]:
        outputs = []
        for k in range(len(self.config.stage_channels)):
            x = getattr(self, f"stage{k + 1}")(x)
            outputs.append(x)
        return [outputs[t] for t in self.config.tap_points]
