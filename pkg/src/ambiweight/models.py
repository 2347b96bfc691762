"""Dilated-bottleneck network and a plain CNN, both emitting 2K head logits."""

from __future__ import annotations

import math
from typing import Iterator, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .tensor import functional as F
from .tensor.core import Tensor, no_grad


class ModelConfigError(ValueError):
    pass


# --- module plumbing --------------------------------------------------------


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True
        self.frozen = False
        self.rng = np.random.default_rng(0)

    def __setattr__(self, key, value):
        if isinstance(value, Module) and key not in ("_children",):
            self.__dict__.setdefault("_children", {})[key] = value
        object.__setattr__(self, key, value)

    def param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def buffer(self, name: str, data: np.ndarray) -> np.ndarray:
        self._buffers[name] = data
        return data

    def children(self) -> Iterator[tuple[str, "Module"]]:
        return iter(self._children.items())

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "", trainable_only: bool = False) -> Iterator[tuple[str, Tensor]]:
        if trainable_only and self.frozen:
            return
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.", trainable_only)

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self.children():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator) -> None:
        for m in self.modules():
            m.rng = rng

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        out.update({f"buffer:{name}": b.copy() for name, b in self.named_buffers()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | {f"buffer:{b}" for b in buffers}
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise ModelConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ModelConfigError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = state[name].astype(p.data.dtype).copy()
        for name, b in buffers.items():
            b[...] = state[f"buffer:{name}"]

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


def count_parameters(model: Module, trainable_only: bool = False) -> int:
    return sum(p.size for _, p in model.named_parameters(trainable_only=trainable_only))


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, dilation=1, bias=True, zero_init=False):
        super().__init__()
        self.stride, self.dilation = stride, dilation
        w = np.zeros((cout, cin, k, k), np.float32) if zero_init else _he(rng, (cout, cin, k, k), cin * k * k)
        self.weight = self.param("weight", w)
        self.bias = self.param("bias", np.zeros(cout, np.float32)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, dilation=self.dilation, padding="same")


class Dense(Module):
    def __init__(self, nin, nout, rng):
        super().__init__()
        limit = math.sqrt(6.0 / (nin + nout))
        self.weight = self.param("weight", rng.uniform(-limit, limit, (nin, nout)).astype(np.float32))
        self.bias = self.param("bias", np.zeros(nout, np.float32))

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = self.param("gamma", np.ones(c, np.float32))
        self.beta = self.param("beta", np.zeros(c, np.float32))
        self.running_mean = self.buffer("running_mean", np.zeros(c, np.float32))
        self.running_var = self.buffer("running_var", np.ones(c, np.float32))

    def forward(self, x):
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var, self.training, self.momentum, self.eps
        )


class PreAct(Module):
    """norm -> ReLU; the norm is skipped in batch-norm-free builds."""

    def __init__(self, c, use_norm: bool):
        super().__init__()
        self.norm = BatchNorm2d(c) if use_norm else None

    def forward(self, x):
        return F.relu(self.norm(x) if self.norm is not None else x)


# --- dilated bottleneck -----------------------------------------------------


class DilatedBottleneckConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    in_channels: int = Field(16, ge=1)
    bottleneck_channels: int = Field(8, ge=1)
    out_channels: int = Field(16, ge=1)
    dilations: list[int] = Field(default_factory=lambda: [1, 2], min_length=1)
    spatial_dropout_rate: float = Field(0.2, ge=0.0, lt=1.0)
    use_batch_norm: bool = True
    project_skip: bool = True
    zero_init_residual: bool = False

    @field_validator("dilations")
    @classmethod
    def _positive(cls, v):
        if any(d < 1 for d in v):
            raise ValueError("dilation rates must be >= 1")
        return v


class DilatedBottleneck(Module):
    """Pre-activation residual bottleneck with parallel dilated 3x3 convs.

    x -> [norm, relu, 1x1 reduce] -> [norm, relu, sum_d 3x3 conv(dilation d)]
      -> spatial dropout -> [norm, relu, 1x1 expand] -> + skip(x)
    """

    def __init__(self, cfg: DilatedBottleneckConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.in_channels != cfg.out_channels and not cfg.project_skip:
            raise ModelConfigError(
                f"block maps {cfg.in_channels} -> {cfg.out_channels} channels but skip projection is disabled"
            )
        self.cfg = cfg
        bn, b = cfg.use_batch_norm, cfg.bottleneck_channels
        self.act_in = PreAct(cfg.in_channels, bn)
        self.reduce = Conv2d(cfg.in_channels, b, 1, rng)
        self.act_mid = PreAct(b, bn)
        self.branches: list[Conv2d] = []
        for d in cfg.dilations:
            conv = Conv2d(b, b, 3, rng, dilation=d)
            setattr(self, f"dilated{d}", conv)
            self.branches.append(conv)
        self.act_out = PreAct(b, bn)
        self.expand = Conv2d(b, cfg.out_channels, 1, rng, zero_init=cfg.zero_init_residual)
        self.skip = Conv2d(cfg.in_channels, cfg.out_channels, 1, rng) if cfg.in_channels != cfg.out_channels else None

    def residual(self, x: Tensor) -> Tensor:
        h = self.reduce(self.act_in(x))
        h = self.act_mid(h)
        multi = self.branches[0](h)
        for conv in self.branches[1:]:
            multi = multi + conv(h)
        multi = F.spatial_dropout(multi, self.cfg.spatial_dropout_rate, self.rng, self.training)
        return self.expand(self.act_out(multi))

    def forward(self, x):
        shortcut = self.skip(x) if self.skip is not None else x
        return shortcut + self.residual(x)


def build_db_block(cfg: DilatedBottleneckConfig, rng: np.random.Generator | None = None) -> DilatedBottleneck:
    return DilatedBottleneck(cfg, rng if rng is not None else np.random.default_rng(0))


def db_block_parameter_count(cfg: DilatedBottleneckConfig) -> int:
    """Closed-form parameter count of one block (convs carry biases)."""
    cin, b, cout = cfg.in_channels, cfg.bottleneck_channels, cfg.out_channels
    norm = 2 * (cin + b + b) if cfg.use_batch_norm else 0
    convs = (cin * b + b) + len(cfg.dilations) * (9 * b * b + b) + (b * cout + cout)
    skip = cin * cout + cout if cin != cout else 0
    return norm + convs + skip


# --- full networks -----------------------------------------------------------


class CustomNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["dbnet"] = "dbnet"
    input_size: int = Field(32, ge=4)
    in_channels: int = Field(1, ge=1)
    stem_channels: int = Field(16, ge=1)
    block_channel_plan: list[tuple[int, int]] = Field(default_factory=lambda: [(2, 16), (2, 32)], min_length=1)
    bottleneck_ratio: float = Field(0.5, gt=0.0, le=1.0)
    dilations: list[int] = Field(default_factory=lambda: [1, 2])
    spatial_dropout_rate: float = Field(0.2, ge=0.0, lt=1.0)
    noise_stddev: float = Field(0.1, ge=0.0)
    head_count: int = Field(4, ge=2)
    final_dropout: float = Field(0.5, ge=0.0, lt=1.0)
    use_batch_norm: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.head_count % 2:
            raise ValueError("head_count must be even (positive and negated head per finding)")
        for blocks, ch in self.block_channel_plan:
            if blocks < 1 or ch < 1:
                raise ValueError("every stage needs >= 1 block and >= 1 channel")
        return self

    def final_size(self) -> int:
        size = self.input_size
        for _ in self.block_channel_plan[1:]:
            size = (size - 1) // 2 + 1
        return size


class CustomNet(Module):
    def __init__(self, cfg: CustomNetConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.final_size() < 2:
            raise ModelConfigError(
                f"input size {cfg.input_size} is too small for {len(cfg.block_channel_plan)} stages"
            )
        self.cfg = cfg
        self.stem = Conv2d(cfg.in_channels, cfg.stem_channels, 3, rng)
        self.blocks: list[Module] = []
        ch = cfg.stem_channels
        for s, (n_blocks, out_ch) in enumerate(cfg.block_channel_plan):
            if s > 0:
                down = Conv2d(ch, out_ch, 1, rng, stride=2)
                setattr(self, f"down{s}", down)
                self.blocks.append(down)
                ch = out_ch
            for i in range(n_blocks):
                bcfg = DilatedBottleneckConfig(
                    in_channels=ch,
                    bottleneck_channels=max(1, int(round(out_ch * cfg.bottleneck_ratio))),
                    out_channels=out_ch,
                    dilations=cfg.dilations,
                    spatial_dropout_rate=cfg.spatial_dropout_rate,
                    use_batch_norm=cfg.use_batch_norm,
                )
                block = DilatedBottleneck(bcfg, rng)
                setattr(self, f"stage{s}_block{i}", block)
                self.blocks.append(block)
                ch = out_ch
        self.act_final = PreAct(ch, cfg.use_batch_norm)
        self.head = Dense(ch, cfg.head_count, rng)

    def forward(self, x):
        h = F.gaussian_noise(x, self.cfg.noise_stddev, self.rng, self.training)
        h = self.stem(h)
        for block in self.blocks:
            h = block(h)
        h = F.global_avg_pool(self.act_final(h))
        h = F.dropout(h, self.cfg.final_dropout, self.rng, self.training)
        return self.head(h)


def build_custom_net(cfg: CustomNetConfig, rng: np.random.Generator | None = None) -> CustomNet:
    return CustomNet(cfg, rng if rng is not None else np.random.default_rng(0))


def custom_net_parameter_count(cfg: CustomNetConfig) -> int:
    total = cfg.in_channels * cfg.stem_channels * 9 + cfg.stem_channels
    ch = cfg.stem_channels
    for s, (n_blocks, out_ch) in enumerate(cfg.block_channel_plan):
        if s > 0:
            total += ch * out_ch + out_ch
            ch = out_ch
        b = max(1, int(round(out_ch * cfg.bottleneck_ratio)))
        for _ in range(n_blocks):
            total += db_block_parameter_count(
                DilatedBottleneckConfig(
                    in_channels=ch,
                    bottleneck_channels=b,
                    out_channels=out_ch,
                    dilations=cfg.dilations,
                    use_batch_norm=cfg.use_batch_norm,
                )
            )
    total += 2 * ch if cfg.use_batch_norm else 0
    return total + ch * cfg.head_count + cfg.head_count


class SimpleCNNConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["simplecnn"] = "simplecnn"
    input_size: int = Field(32, ge=4)
    in_channels: int = Field(1, ge=1)
    conv_stack: list[tuple[int, int]] = Field(
        default_factory=lambda: [(8, 1), (16, 2), (32, 2), (32, 2)], min_length=1
    )
    head_count: int = Field(4, ge=2)

    @model_validator(mode="after")
    def _check(self):
        if self.head_count % 2:
            raise ValueError("head_count must be even (positive and negated head per finding)")
        if any(c < 1 or s < 1 for c, s in self.conv_stack):
            raise ValueError("conv_stack entries need channels >= 1 and stride >= 1")
        return self


class SimpleCNN(Module):
    """conv3x3 + ReLU stack, global average pooling, dense head."""

    def __init__(self, cfg: SimpleCNNConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.convs: list[Conv2d] = []
        ch = cfg.in_channels
        for i, (out_ch, stride) in enumerate(cfg.conv_stack):
            conv = Conv2d(ch, out_ch, 3, rng, stride=stride)
            setattr(self, f"conv{i}", conv)
            self.convs.append(conv)
            ch = out_ch
        self.head = Dense(ch, cfg.head_count, rng)

    def forward(self, x):
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
        return self.head(F.global_avg_pool(h))


def build_model(cfg: CustomNetConfig | SimpleCNNConfig, seed: int = 0) -> Module:
    rng = np.random.default_rng(seed)
    if isinstance(cfg, CustomNetConfig):
        model = CustomNet(cfg, rng)
    else:
        model = SimpleCNN(cfg, rng)
    model.set_rng(np.random.default_rng([seed, 1]))
    return model


def predict_proba(model: Module, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Sigmoid head outputs in inference mode, N x 2K."""
    was_training = model.training
    model.eval()
    outs = []
    dtype = model.parameters()[0].dtype
    with no_grad():
        for i in range(0, len(images), batch_size):
            x = Tensor(np.asarray(images[i : i + batch_size], dtype=dtype))
            if x.ndim == 3:
                x = x.reshape(x.shape[0], 1, *x.shape[1:])
            outs.append(F.sigmoid(model(x)).data)
    model.train(was_training)
    if not outs:
        return np.zeros((0, model.cfg.head_count), dtype=dtype)
    return np.concatenate(outs)
