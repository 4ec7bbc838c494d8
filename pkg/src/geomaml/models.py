"""The classification CNN and the mini U-Net, as pure functions of a ParamSet.

Parameters live in a :class:`ParamSet` whose entry names encode the
architecture, so a forward pass needs nothing but the parameters themselves
(checkpoints carry no separate architecture record).
"""
from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    ParamSet,
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    linear,
    maxpool2d,
    relu,
    upsample2d,
)
from .core.tensor import as_tensor, reshape, transpose, add, matmul


class ConfigError(ValueError):
    """A model configuration violates its invariants."""


@dataclass(frozen=True)
class CnnConfig:
    in_channels: int = 3
    num_classes: int = 4
    input_size: int = 32
    width: int = 16
    depth: int = 5
    batchnorm: bool = True

    def validate(self):
        for name in ("in_channels", "num_classes", "input_size", "width", "depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"CnnConfig.{name} must be positive")
        if self.input_size != 2 ** self.depth:
            raise ConfigError(
                f"input_size {self.input_size} must equal 2**depth = {2 ** self.depth} "
                "so the last block collapses to a 1x1 feature")
        return self


@dataclass(frozen=True)
class UnetConfig:
    in_channels: int = 3
    num_classes: int = 4
    levels: int = 2
    base_width: int = 8
    input_size: int = 32

    def validate(self):
        for name in ("in_channels", "num_classes", "levels", "base_width", "input_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"UnetConfig.{name} must be positive")
        if self.input_size % (2 ** self.levels):
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by 2**levels = {2 ** self.levels}")
        return self


FULL_SCALE_CNN = CnnConfig(in_channels=15, num_classes=10, input_size=128, width=64, depth=7)
DESK_CNN = CnnConfig()
DESK_UNET = UnetConfig()


def _conv_init(rng, f, c):
    bound = np.sqrt(1.0 / (c * 9))
    return rng.uniform(-bound, bound, size=(f, c, 3, 3))


def _linear_init(rng, fan_in, fan_out):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _conv_entries(rng, prefix, c_in, c_out, batchnorm=True):
    out = [(f"{prefix}.conv.weight", _conv_init(rng, c_out, c_in)),
           (f"{prefix}.conv.bias", np.zeros(c_out))]
    if batchnorm:
        out += [(f"{prefix}.bn.gamma", np.ones(c_out)),
                (f"{prefix}.bn.beta", np.zeros(c_out))]
    return out


def build_cnn(cfg=DESK_CNN, seed=0):
    """Initial parameters of the stacked conv/batchnorm/relu/maxpool classifier."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    entries = []
    c_in = cfg.in_channels
    for i in range(cfg.depth):
        entries += _conv_entries(rng, f"block{i}", c_in, cfg.width, cfg.batchnorm)
        c_in = cfg.width
    entries += [("head.weight", _linear_init(rng, cfg.width, cfg.num_classes)),
                ("head.bias", np.zeros(cfg.num_classes))]
    return ParamSet([(n, Tensor(v)) for n, v in entries])


def cnn_param_count(cfg):
    """Closed-form parameter count of :func:`build_cnn`."""
    per_bn = 2 * cfg.width if cfg.batchnorm else 0
    first = cfg.in_channels * cfg.width * 9 + cfg.width
    rest = (cfg.depth - 1) * (cfg.width * cfg.width * 9 + cfg.width)
    return first + rest + cfg.depth * per_bn + cfg.width * cfg.num_classes + cfg.num_classes


def build_unet(cfg=DESK_UNET, seed=0):
    """Initial parameters of a U-Net with ``cfg.levels`` down/up stages.

    Encoder level ``l`` has ``base_width * 2**l`` channels; the bottleneck has
    ``base_width * 2**levels``. Each decoder stage upsamples (nearest x2),
    convolves to the skip width, concatenates the skip and convolves again.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    entries = []
    c_in = cfg.in_channels
    for lvl in range(cfg.levels):
        width = cfg.base_width * 2 ** lvl
        entries += _conv_entries(rng, f"enc{lvl}", c_in, width)
        c_in = width
    bottom = cfg.base_width * 2 ** cfg.levels
    entries += _conv_entries(rng, "mid", c_in, bottom)
    c_in = bottom
    for lvl in reversed(range(cfg.levels)):
        width = cfg.base_width * 2 ** lvl
        entries += _conv_entries(rng, f"up{lvl}", c_in, width, batchnorm=False)
        entries += _conv_entries(rng, f"dec{lvl}", 2 * width, width)
        c_in = width
    entries += [("head.weight", _linear_init(rng, c_in, cfg.num_classes)),
                ("head.bias", np.zeros(cfg.num_classes))]
    return ParamSet([(n, Tensor(v)) for n, v in entries])


def _block(params, prefix, x):
    x = conv2d(x, params[f"{prefix}.conv.weight"], params[f"{prefix}.conv.bias"])
    if f"{prefix}.bn.gamma" in params:
        x = batchnorm2d(x, params[f"{prefix}.bn.gamma"], params[f"{prefix}.bn.beta"])
    return relu(x)


def _check_input(params, x, first):
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"expected a [B,C,H,W] batch, got {x.shape}")
    want = params[first].shape[1]
    if x.shape[1] != want:
        raise DimensionError(f"batch {x.shape} has {x.shape[1]} channels, model expects {want}")
    return x


def cnn_depth(params):
    return sum(1 for n in params if n.endswith(".conv.weight") and n.startswith("block"))


def unet_levels(params):
    return sum(1 for n in params if n.startswith("enc") and n.endswith(".conv.weight"))


def forward_classify(params, batch):
    """Class logits ``[B, num_classes]`` of the CNN."""
    x = _check_input(params, batch, "block0.conv.weight")
    depth = cnn_depth(params)
    if x.shape[2] != 2 ** depth or x.shape[3] != 2 ** depth:
        raise DimensionError(f"batch {x.shape} does not match a depth-{depth} CNN "
                             f"({2 ** depth}x{2 ** depth} inputs)")
    for i in range(depth):
        x = maxpool2d(_block(params, f"block{i}", x))
    x = reshape(x, (x.shape[0], x.shape[1]))
    return linear(x, params["head.weight"], params["head.bias"])


def unet_features(params, batch):
    """Encoder feature maps per level (for inspection); last entry is the bottleneck."""
    x = _check_input(params, batch, "enc0.conv.weight")
    feats = []
    for lvl in range(unet_levels(params)):
        x = _block(params, f"enc{lvl}", x)
        feats.append(x)
        x = maxpool2d(x)
    feats.append(_block(params, "mid", x))
    return feats


def forward_segment(params, batch):
    """Per-pixel logits ``[B, num_classes, H, W]`` of the U-Net."""
    x = _check_input(params, batch, "enc0.conv.weight")
    levels = unet_levels(params)
    if x.shape[2] % 2 ** levels or x.shape[3] % 2 ** levels:
        raise DimensionError(f"spatial size {x.shape[2:]} not divisible by 2**{levels}")
    feats = unet_features(params, x)
    skips, x = feats[:-1], feats[-1]
    for lvl in reversed(range(levels)):
        up = upsample2d(x)
        up = conv2d(up, params[f"up{lvl}.conv.weight"], params[f"up{lvl}.conv.bias"])
        x = _block(params, f"dec{lvl}", concat([up, skips[lvl]], axis=1))
    B, C, H, W = x.shape
    flat = reshape(transpose(x, (0, 2, 3, 1)), (B * H * W, C))
    logits = add(matmul(flat, params["head.weight"]), reshape(params["head.bias"], (1, -1)))
    n = params["head.bias"].shape[0]
    return transpose(reshape(logits, (B, H, W, n)), (0, 3, 1, 2))


def is_segmentation(params):
    return "enc0.conv.weight" in params


def forward(params, batch):
    """Dispatch on the architecture encoded in the parameter names."""
    if is_segmentation(params):
        return forward_segment(params, batch)
    return forward_classify(params, batch)
