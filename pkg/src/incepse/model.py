"""The IncepSE network: SE-gated bottleneck, five-branch layer, stacked model.

One IncepSE layer maps ``s`` to::

    b0 = SE(conv_1(s))                      # bottleneck + channel attention
    b1 = conv_3(maxpool_3(s))
    b2, b3, b4 = conv_9(b0), conv_19(b0), conv_39(b0)
    out = relu(bn(concat(b1, b2, b3, b4))) + conv_3_skip(s)

The model stacks ``depth - 1`` standard layers and one final layer with
twice the branch width and stride 2, then dropout, global average pooling
and a linear head producing raw logits.

Parameters live in flat name -> array dicts (:class:`ModelParams`); a forward
pass binds them as tape leaves with :func:`bind` when gradients are needed.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tape, Tensor
from .layers import (
    BatchNormState,
    ConvParams,
    LinearParams,
    batchnorm1d,
    channel_scale,
    conv1d,
    dropout,
    global_avg_pool,
    linear,
    maxpool1d,
)

__all__ = [
    "IncepSEConfig",
    "SEParams",
    "LayerParams",
    "ModelParams",
    "layer_plan",
    "se_block",
    "incepse_layer",
    "init_params",
    "bind",
    "model_features",
    "model_forward",
    "count_parameters",
]


@dataclass(frozen=True)
class IncepSEConfig:
    input_channels: int = 12
    depth: int = 7
    branch_channels: int = 32
    bottleneck_channels: int = 32
    kernel_sizes: tuple[int, ...] = (9, 19, 39)
    pool_branch_kernel: int = 3
    skip_kernel: int = 3
    se_reduction: int = 8
    last_layer_multiplier: int = 2
    last_layer_stride: int = 2
    double_final_bottleneck: bool = False
    dropout_p: float = 0.0
    num_classes: int = 71

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        ints = {
            "input_channels": self.input_channels, "depth": self.depth,
            "branch_channels": self.branch_channels, "bottleneck_channels": self.bottleneck_channels,
            "pool_branch_kernel": self.pool_branch_kernel, "skip_kernel": self.skip_kernel,
            "se_reduction": self.se_reduction, "last_layer_multiplier": self.last_layer_multiplier,
            "last_layer_stride": self.last_layer_stride, "num_classes": self.num_classes,
        }
        for name, v in ints.items():
            if int(v) < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if len(self.kernel_sizes) != 3 or min(self.kernel_sizes) < 1:
            raise ValueError(f"kernel_sizes must be three positive sizes, got {self.kernel_sizes}")
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def final_channels(self) -> int:
        return 4 * self.branch_channels * self.last_layer_multiplier

    @property
    def min_length(self) -> int:
        return max(self.kernel_sizes)

    def replace(self, **changes) -> "IncepSEConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return IncepSEConfig(**values)


@dataclass(frozen=True)
class LayerShape:
    in_channels: int
    branch_channels: int
    bottleneck_channels: int
    stride: int

    @property
    def out_channels(self) -> int:
        return 4 * self.branch_channels


def layer_plan(config: IncepSEConfig) -> list[LayerShape]:
    """Channel widths and stride for each layer of the stack."""
    plan = []
    cin = config.input_channels
    for i in range(config.depth):
        final = i == config.depth - 1
        mult = config.last_layer_multiplier if final else 1
        bneck = config.bottleneck_channels * (mult if config.double_final_bottleneck else 1)
        shape = LayerShape(cin, config.branch_channels * mult, bneck,
                           config.last_layer_stride if final else 1)
        plan.append(shape)
        cin = shape.out_channels
    return plan


def se_hidden(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def parameter_shapes(config: IncepSEConfig) -> tuple[dict[str, tuple], dict[str, tuple]]:
    """Trainable parameter shapes and buffer shapes, keyed by name, in a fixed order."""
    params: dict[str, tuple] = {}
    buffers: dict[str, tuple] = {}
    for i, ls in enumerate(layer_plan(config)):
        p = f"layers.{i}."
        nb, nc, cin = ls.bottleneck_channels, ls.branch_channels, ls.in_channels
        hidden = se_hidden(nb, config.se_reduction)
        params[p + "bottleneck.weight"] = (nb, cin, 1)
        params[p + "bottleneck.bias"] = (nb,)
        params[p + "se.fc1.weight"] = (hidden, nb)
        params[p + "se.fc1.bias"] = (hidden,)
        params[p + "se.fc2.weight"] = (nb, hidden)
        params[p + "se.fc2.bias"] = (nb,)
        for j, k in enumerate(config.kernel_sizes):
            params[p + f"convs.{j}.weight"] = (nc, nb, k)
        params[p + "pool_conv.weight"] = (nc, cin, config.pool_branch_kernel)
        params[p + "skip.weight"] = (ls.out_channels, cin, config.skip_kernel)
        params[p + "skip.bias"] = (ls.out_channels,)
        params[p + "bn.gamma"] = (ls.out_channels,)
        params[p + "bn.beta"] = (ls.out_channels,)
        buffers[p + "bn.running_mean"] = (ls.out_channels,)
        buffers[p + "bn.running_var"] = (ls.out_channels,)
    params["head.weight"] = (config.num_classes, config.final_channels)
    params["head.bias"] = (config.num_classes,)
    return params, buffers


def count_parameters(config: IncepSEConfig) -> int:
    return sum(math.prod(s) for s in parameter_shapes(config)[0].values())


@dataclass
class ModelParams:
    config: IncepSEConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                           {k: v.astype(dtype) for k, v in self.buffers.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, dtype) -> np.ndarray:
    fan_in = math.prod(shape[1:])
    bound = math.sqrt(6.0 / fan_in)  # std = sqrt(2 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: IncepSEConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Kaiming-uniform weights (fan-in), zero biases, BN gamma 1 / beta 0."""
    rng = np.random.default_rng(seed)
    pshapes, bshapes = parameter_shapes(config)
    params = {}
    for name, shape in pshapes.items():
        if name.endswith(".bias") or name.endswith("bn.beta"):
            params[name] = np.zeros(shape, dtype=dtype)
        elif name.endswith("bn.gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = _kaiming_uniform(rng, shape, dtype)
    buffers = {name: (np.ones(s, dtype=dtype) if name.endswith("running_var") else np.zeros(s, dtype=dtype))
               for name, s in bshapes.items()}
    return ModelParams(config, params, buffers)


def bind(m: ModelParams, tape: Tape) -> dict[str, Tensor]:
    """Register every trainable parameter as a leaf of ``tape``."""
    return {name: tape.leaf(arr) for name, arr in m.params.items()}


@dataclass
class SEParams:
    fc1: LinearParams
    fc2: LinearParams


@dataclass
class LayerParams:
    bottleneck: ConvParams
    se: SEParams
    branch_convs: list[ConvParams]
    pool_conv: ConvParams
    skip_conv: ConvParams
    bn: BatchNormState
    pool_window: int = 3


def _layer_params(weights: Mapping[str, Tensor], buffers: Mapping[str, np.ndarray], i: int,
                  stride: int, mode: str, pool_window: int) -> LayerParams:
    p = f"layers.{i}."
    w = lambda name: weights[p + name]  # noqa: E731
    return LayerParams(
        bottleneck=ConvParams(w("bottleneck.weight"), w("bottleneck.bias")),
        se=SEParams(LinearParams(w("se.fc1.weight"), w("se.fc1.bias")),
                    LinearParams(w("se.fc2.weight"), w("se.fc2.bias"))),
        branch_convs=[ConvParams(w(f"convs.{j}.weight"), stride=stride) for j in range(3)],
        pool_conv=ConvParams(w("pool_conv.weight"), stride=stride),
        skip_conv=ConvParams(w("skip.weight"), w("skip.bias"), stride=stride),
        bn=BatchNormState(w("bn.gamma"), w("bn.beta"), buffers[p + "bn.running_mean"],
                          buffers[p + "bn.running_var"], mode=mode),
        pool_window=pool_window,
    )


def se_block(x: Tensor, p: SEParams) -> Tensor:
    """Squeeze (time average), excite (linear-relu-linear-sigmoid), rescale channels."""
    squeezed = global_avg_pool(x)
    gates = ad.sigmoid(linear(ad.relu(linear(squeezed, p.fc1)), p.fc2))
    return channel_scale(x, gates)


def incepse_layer(s: Tensor, p: LayerParams) -> Tensor:
    b0 = se_block(conv1d(s, p.bottleneck), p.se)
    b1 = conv1d(maxpool1d(s, p.pool_window, 1), p.pool_conv)
    b2, b3, b4 = (conv1d(b0, cp) for cp in p.branch_convs)
    branches = (b1, b2, b3, b4)
    ref = b1.shape
    for b in branches[1:]:
        if b.shape[0] != ref[0] or b.shape[2] != ref[2] or b.shape[1] != ref[1]:
            raise ShapeError(f"branch shapes disagree: {[t.shape for t in branches]} (stride misconfiguration?)")
    merged = ad.relu(batchnorm1d(ad.concat(branches, axis=1), p.bn))
    skip = conv1d(s, p.skip_conv)
    if skip.shape != merged.shape:
        raise ShapeError(f"skip path {skip.shape} does not match merged path {merged.shape}")
    return ad.add(merged, skip)


def _weights(m: ModelParams, weights: Mapping[str, Tensor] | None) -> Mapping[str, Tensor]:
    if weights is not None:
        return weights
    return {name: Tensor(arr) for name, arr in m.params.items()}


def model_features(x, m: ModelParams, mode: str = "eval",
                   weights: Mapping[str, Tensor] | None = None) -> Tensor:
    """Output of the final IncepSE layer, [B, final_channels, ceil(L / stride)]."""
    x = ad.as_tensor(x)
    cfg = m.config
    if x.values.ndim != 3 or x.shape[1] != cfg.input_channels:
        raise ShapeError(f"model expects [B, {cfg.input_channels}, L], got {x.shape}")
    if x.shape[2] < cfg.min_length:
        raise ShapeError(f"input length {x.shape[2]} shorter than largest kernel {cfg.min_length}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    weights = _weights(m, weights)
    h = x
    for i, ls in enumerate(layer_plan(cfg)):
        h = incepse_layer(h, _layer_params(weights, m.buffers, i, ls.stride, mode, cfg.pool_branch_kernel))
    return h


def model_forward(x, m: ModelParams, mode: str = "eval", rng: np.random.Generator | None = None,
                  weights: Mapping[str, Tensor] | None = None) -> Tensor:
    """Raw logits [B, num_classes]. Pass ``weights`` from :func:`bind` to differentiate."""
    weights = _weights(m, weights)
    h = model_features(x, m, mode, weights)
    h = dropout(h, m.config.dropout_p, mode, rng)
    return linear(global_avg_pool(h), LinearParams(weights["head.weight"], weights["head.bias"]))


def with_dropout(m: ModelParams, p: float) -> ModelParams:
    """Shallow view of ``m`` sharing arrays but with a different dropout rate."""
    out = copy.copy(m)
    out.config = m.config.replace(dropout_p=p)
    return out
