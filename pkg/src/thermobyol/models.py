"""Model construction: the 4-block conv encoder, projector/predictor MLP
heads, and the classification head.

Weight init is fan-in-scaled normal (Kaiming) for conv/dense weights, zero
biases, gamma=1 / beta=0 for batchnorm. The default final block width (336)
was tuned so the deployed encoder+classifier lands on the 0.526M-parameter
budget; see the closed-form count oracle in the tests.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, ShapeMismatch
from .layers import (
    BatchNormParams,
    Conv2dParams,
    DenseParams,
    batchnorm2d,
    conv2d,
    dense,
    global_avg_pool,
    maxpool2d,
    relu,
)
from .tensor import Parameter, Tensor

DEFAULT_BLOCK_CHANNELS = (32, 64, 128, 336)


@dataclass
class EncoderConfig:
    input_size: tuple = (224, 224, 3)
    block_channels: tuple = DEFAULT_BLOCK_CHANNELS
    kernel: int = 3

    def validate(self):
        if len(self.block_channels) < 1 or any(c < 1 for c in self.block_channels):
            raise ConfigInvalid(f"bad block_channels {self.block_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigInvalid("kernel must be a positive odd integer")
        h, w, c = self.input_size
        if min(h, w) < 2 ** len(self.block_channels):
            raise ConfigInvalid(
                f"input {h}x{w} too small for {len(self.block_channels)} pooling stages"
            )


@dataclass
class MLPHeadConfig:
    hidden_dim: int = 512
    output_dim: int = 256

    def validate(self):
        if self.hidden_dim < 1 or self.output_dim < 1:
            raise ConfigInvalid("MLP head dims must be positive")


@dataclass
class ClassifierConfig:
    num_classes: int = 11
    hidden_dims: tuple = (128,)

    def validate(self):
        if self.num_classes < 2:
            raise ConfigInvalid("need at least 2 classes")
        if any(d < 1 for d in self.hidden_dims):
            raise ConfigInvalid("classifier hidden dims must be positive")


def _kaiming(rng, shape, fan_in, dtype=np.float32):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class Module:
    """Minimal parameter container."""

    def __init__(self):
        self._params = {}

    def _register(self, name, param):
        self._params[name] = param
        return param

    def named_parameters(self):
        return dict(self._params)

    def parameters(self):
        return list(self._params.values())

    def trainable_parameters(self):
        return [p for p in self._params.values() if p.trainable]

    def copy_from(self, other):
        """Copy every parameter value (incl. running stats) from `other`."""
        for name, p in self._params.items():
            p.assign(other._params[name].data)

    def set_trainable(self, flag: bool):
        for name, p in self._params.items():
            if "running_" not in name:
                p.trainable = flag


class ConvEncoder(Module):
    """4 blocks of conv(3x3, pad 1) -> relu -> maxpool(2) -> batchnorm,
    then global average pooling down to a feature vector."""

    def __init__(self, cfg: EncoderConfig, rng, prefix="encoder", trainable=True):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.prefix = prefix
        self.blocks = []
        in_ch = cfg.input_size[2]
        k = cfg.kernel
        for bi, out_ch in enumerate(cfg.block_channels):
            base = f"{prefix}.block{bi}"
            conv = Conv2dParams(
                self._register(
                    f"{base}.conv.weight",
                    Parameter(
                        _kaiming(rng, (out_ch, in_ch, k, k), in_ch * k * k),
                        f"{base}.conv.weight",
                        trainable,
                    ),
                ),
                self._register(
                    f"{base}.conv.bias",
                    Parameter(np.zeros(out_ch, np.float32), f"{base}.conv.bias", trainable),
                ),
                stride=1,
                padding=k // 2,
            )
            bn = BatchNormParams(
                self._register(
                    f"{base}.bn.gamma",
                    Parameter(np.ones(out_ch, np.float32), f"{base}.bn.gamma", trainable),
                ),
                self._register(
                    f"{base}.bn.beta",
                    Parameter(np.zeros(out_ch, np.float32), f"{base}.bn.beta", trainable),
                ),
                self._register(
                    f"{base}.bn.running_mean",
                    Parameter(np.zeros(out_ch, np.float32), f"{base}.bn.running_mean", False),
                ),
                self._register(
                    f"{base}.bn.running_var",
                    Parameter(np.ones(out_ch, np.float32), f"{base}.bn.running_var", False),
                ),
            )
            self.blocks.append((conv, bn))
            in_ch = out_ch
        self.feature_dim = in_ch

    def forward(self, x: Tensor, mode: str = "eval") -> Tensor:
        if x.rank != 4 or x.shape[1] != self.cfg.input_size[2]:
            raise ShapeMismatch(
                f"encoder expects [N,{self.cfg.input_size[2]},H,W], got {x.shape}"
            )
        out = x
        for conv, bn in self.blocks:
            out = batchnorm2d(maxpool2d(relu(conv2d(out, conv)), k=2, stride=2), bn, mode)
        return global_avg_pool(out)


class MLPHead(Module):
    """dense -> relu -> dense; used for both the projector and predictor."""

    def __init__(self, cfg: MLPHeadConfig, in_dim: int, rng, prefix="head", trainable=True):
        super().__init__()
        cfg.validate()
        if in_dim < 1:
            raise ConfigInvalid("in_dim must be positive")
        self.cfg = cfg
        self.prefix = prefix
        self.in_dim = in_dim
        self.layers = []
        dims = [in_dim, cfg.hidden_dim, cfg.output_dim]
        for li in range(2):
            base = f"{prefix}.dense{li}"
            self.layers.append(
                DenseParams(
                    self._register(
                        f"{base}.weight",
                        Parameter(
                            _kaiming(rng, (dims[li], dims[li + 1]), dims[li]),
                            f"{base}.weight",
                            trainable,
                        ),
                    ),
                    self._register(
                        f"{base}.bias",
                        Parameter(np.zeros(dims[li + 1], np.float32), f"{base}.bias", trainable),
                    ),
                )
            )

    def forward(self, x: Tensor) -> Tensor:
        return dense(relu(dense(x, self.layers[0])), self.layers[1])


class ClassifierHead(Module):
    """Hidden dense layers with relu, then a logits layer (softmax applied
    at the loss / prediction site, not stored here)."""

    def __init__(self, cfg: ClassifierConfig, in_dim: int, rng, prefix="classifier"):
        super().__init__()
        cfg.validate()
        if in_dim < 1:
            raise ConfigInvalid("in_dim must be positive")
        self.cfg = cfg
        self.prefix = prefix
        self.in_dim = in_dim
        self.layers = []
        dims = [in_dim] + list(cfg.hidden_dims) + [cfg.num_classes]
        for li in range(len(dims) - 1):
            base = f"{prefix}.dense{li}"
            self.layers.append(
                DenseParams(
                    self._register(
                        f"{base}.weight",
                        Parameter(
                            _kaiming(rng, (dims[li], dims[li + 1]), dims[li]),
                            f"{base}.weight",
                        ),
                    ),
                    self._register(
                        f"{base}.bias",
                        Parameter(np.zeros(dims[li + 1], np.float32), f"{base}.bias"),
                    ),
                )
            )

    def forward(self, x: Tensor) -> Tensor:
        out = x
        for layer in self.layers[:-1]:
            out = relu(dense(out, layer))
        return dense(out, self.layers[-1])


@dataclass
class ClassifierModel:
    """Encoder + classifier head, the deployed artifact."""

    encoder: ConvEncoder
    head: ClassifierHead

    def forward(self, x: Tensor, mode: str = "eval") -> Tensor:
        return self.head.forward(self.encoder.forward(x, mode))

    def named_parameters(self):
        out = dict(self.encoder.named_parameters())
        out.update(self.head.named_parameters())
        return out

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters()

    def trainable_parameters(self):
        return self.encoder.trainable_parameters() + self.head.trainable_parameters()


def build_imnet_encoder(cfg: EncoderConfig, rng, prefix="encoder", trainable=True) -> ConvEncoder:
    return ConvEncoder(cfg, rng, prefix, trainable)


def build_mlp_head(cfg: MLPHeadConfig, in_dim, rng, prefix="head", trainable=True) -> MLPHead:
    return MLPHead(cfg, in_dim, rng, prefix, trainable)


def build_classifier(cfg: ClassifierConfig, in_dim, rng, prefix="classifier") -> ClassifierHead:
    return ClassifierHead(cfg, in_dim, rng, prefix)


def count_parameters(model) -> int:
    """Exact count of trainable scalars."""
    if hasattr(model, "trainable_parameters"):
        params = model.trainable_parameters()
    else:
        params = [p for p in model if p.trainable]
    return int(sum(p.size for p in params))
