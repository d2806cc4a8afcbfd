"""The U-Net stereo disparity network and its bottleneck self-attention layer."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from . import ops
from .errors import ConfigurationError
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module
from .ops import ConvSpec
from .tensor import Tensor

ENCODER_CHANNELS = (64, 128, 256, 512, 1024)
DECODER_CHANNELS = (512, 256, 128, 64, 32)
DECODER_KERNELS = ((3, 3), (4, 4), (4, 4), (4, 4), (4, 3))
HEAD_CHANNELS = (64, 128, 1)

# decoder stage index -> encoder stage index whose output is added to it
SKIPS = {0: 3, 1: 2, 2: 1, 3: 0}

VARIANTS = {
    "baseline": (False, False),
    "attn": (False, True),
    "seg": (True, False),
    "seg-attn": (True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    use_segmentation: bool = True
    use_attention: bool = True
    input_height: int = 64
    input_width: int = 64
    # Divides every hidden width; 1 is the full-size network.
    width_divisor: int = 1
    leaky_slope: float = 0.01
    output_scale: float = 255.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        for name in ("input_height", "input_width"):
            value = getattr(self, name)
            if value <= 0 or value % 32:
                raise ConfigurationError(f"{name}={value} must be a positive multiple of 32 (five stride-2 stages)")
        if self.width_divisor < 1 or any(c % self.width_divisor for c in ENCODER_CHANNELS + DECODER_CHANNELS + HEAD_CHANNELS[:2]):
            raise ConfigurationError(f"width_divisor={self.width_divisor} must divide every layer width")
        if (ENCODER_CHANNELS[-1] // self.width_divisor) % 8:
            raise ConfigurationError("bottleneck width must be divisible by 8 for the attention projections")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "ModelConfig":
        if variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
        seg, attn = VARIANTS[variant]
        return cls(use_segmentation=seg, use_attention=attn, **kwargs)

    @property
    def variant(self) -> str:
        return next(k for k, v in VARIANTS.items() if v == (self.use_segmentation, self.use_attention))

    @property
    def in_channels(self) -> int:
        return 9 if self.use_segmentation else 6

    @property
    def encoder_channels(self) -> tuple:
        return tuple(c // self.width_divisor for c in ENCODER_CHANNELS)

    @property
    def decoder_channels(self) -> tuple:
        return tuple(c // self.width_divisor for c in DECODER_CHANNELS)

    @property
    def head_channels(self) -> tuple:
        return tuple(c // self.width_divisor for c in HEAD_CHANNELS[:2]) + (1,)

    def to_dict(self) -> dict:
        return asdict(self)


class ConvStage(Module):
    """conv (or transposed conv) -> leaky ReLU -> batch norm."""

    def __init__(self, conv: Module, slope: float, momentum: float, eps: float):
        super().__init__()
        self.conv = conv
        self.bn = BatchNorm2d(conv.spec.out_channels, momentum, eps)
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        return self.bn(ops.leaky_relu(self.conv(x), self.slope))


class SelfAttention(Module):
    """Softmax attention over all spatial positions with an unweighted residual add.

    Queries and keys are 1x1 projections to C/8 channels, values stay at C.
    Scores are the plain dot products (no temperature).
    """

    def __init__(self, channels: int):
        super().__init__()
        if channels % 8:
            raise ConfigurationError(f"attention channels {channels} not divisible by 8")
        self.channels = channels
        self.query_proj = Conv2d(ConvSpec(channels, channels // 8, 1, 1))
        self.key_proj = Conv2d(ConvSpec(channels, channels // 8, 1, 1))
        self.value_proj = Conv2d(ConvSpec(channels, channels, 1, 1))

    def attention_weights(self, x: Tensor) -> Tensor:
        """(B, N, N) row-stochastic matrix; row i holds the weights query i puts on every key."""
        b, _, h, w = x.shape
        n, ck = h * w, self.channels // 8
        q = ops.transpose(ops.reshape(self.query_proj(x), (b, ck, n)), (0, 2, 1))
        k = ops.reshape(self.key_proj(x), (b, ck, n))
        return ops.softmax(ops.batched_matmul(q, k), axis=-1)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        attn = self.attention_weights(x)
        v = ops.reshape(self.value_proj(x), (b, c, h * w))
        out = ops.batched_matmul(v, ops.transpose(attn, (0, 2, 1)))
        return ops.add(x, ops.reshape(out, (b, c, h, w)))


class UsamNet(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        object.__setattr__(self, "config", config)
        cfg = config
        slope, mom, eps = cfg.leaky_slope, cfg.bn_momentum, cfg.bn_eps
        cin = cfg.in_channels
        self.encoder = Module()
        for i, cout in enumerate(cfg.encoder_channels):
            setattr(self.encoder, f"stage{i + 1}", ConvStage(Conv2d(ConvSpec(cin, cout, 3, 3, 2, 1)), slope, mom, eps))
            cin = cout
        self.attention = SelfAttention(cin) if cfg.use_attention else None
        self.decoder = Module()
        for i, (cout, (kh, kw)) in enumerate(zip(cfg.decoder_channels, DECODER_KERNELS)):
            # output padding chosen so each stage exactly doubles H and W
            spec = ConvSpec(cin, cout, kh, kw, 2, 1, output_padding_h=kh % 2, output_padding_w=kw % 2)
            setattr(self.decoder, f"stage{i + 1}", ConvStage(ConvTranspose2d(spec), slope, mom, eps))
            cin = cout
        h1, h2, h3 = cfg.head_channels
        self.head = Module()
        self.head.conv1 = Conv2d(ConvSpec(cin, h1, 3, 3, 1, 1))
        self.head.conv2 = Conv2d(ConvSpec(h1, h2, 3, 3, 1, 1))
        self.head.conv3 = Conv2d(ConvSpec(h2, h3, 1, 1, 1, 0))

    @property
    def encoder_stages(self) -> list:
        return list(self.encoder._children.values())

    @property
    def decoder_stages(self) -> list:
        return list(self.decoder._children.values())

    def __call__(self, batch: Union[Tensor, np.ndarray], mode: Optional[str] = None) -> Tensor:
        return forward(self, batch, mode)


def forward(model: UsamNet, batch: Union[Tensor, np.ndarray], mode: Optional[str] = None) -> Tensor:
    """Run the network; ``mode`` ("train"/"eval") overrides the module's own flag for this call."""
    if mode is not None:
        if mode not in ("train", "eval"):
            raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
        model.train(mode == "train")
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = model.config
    if x.data.ndim != 4:
        raise ConfigurationError(f"batch must be (B, C, H, W), got {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ConfigurationError(
            f"batch has {x.shape[1]} channels but the {cfg.variant} model expects {cfg.in_channels}"
        )
    if x.shape[2:] != (cfg.input_height, cfg.input_width):
        raise ConfigurationError(
            f"batch spatial size {x.shape[2]}x{x.shape[3]} does not match model input {cfg.input_height}x{cfg.input_width}"
        )
    skips = []
    for stage in model.encoder_stages:
        x = stage(x)
        skips.append(x)
    if model.attention is not None:
        x = model.attention(x)
    for i, stage in enumerate(model.decoder_stages):
        x = stage(x)
        if i in SKIPS:
            skip = skips[SKIPS[i]]
            if skip.shape != x.shape:
                raise ConfigurationError(f"skip shape {skip.shape} != decoder stage {i + 1} shape {x.shape}")
            x = ops.add(x, skip)
    slope = cfg.leaky_slope
    x = ops.leaky_relu(model.head.conv1(x), slope)
    x = ops.leaky_relu(model.head.conv2(x), slope)
    return ops.sigmoid_scale(model.head.conv3(x), cfg.output_scale)


def init_weights(model: Module, seed: int) -> Module:
    """Kaiming-normal (fan-in, leaky-ReLU gain) conv weights, zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    gain_sq = 2.0 / (1.0 + 0.01**2)
    for m in model.modules():
        if isinstance(m, (Conv2d, ConvTranspose2d)):
            std = math.sqrt(gain_sq / m.fan_in)
            m.weight.data[...] = rng.standard_normal(m.weight.shape) * std
            m.bias.data[...] = 0.0
        elif isinstance(m, BatchNorm2d):
            m.gamma.data[...] = 1.0
            m.beta.data[...] = 0.0
            m.running_mean[...] = 0.0
            m.running_var[...] = 1.0
    return model


def build_model(config: ModelConfig, seed: int = 0) -> UsamNet:
    return init_weights(UsamNet(config), seed)


def param_count(model: Module) -> int:
    """Number of learnable scalars (running statistics excluded)."""
    return int(sum(p.size for p in model.parameters()))


def param_table(model: Module) -> list:
    """[(name, shape, count)] for every learnable tensor, in registration order."""
    return [(name, tuple(p.shape), int(p.size)) for name, p in model.named_parameters()]
