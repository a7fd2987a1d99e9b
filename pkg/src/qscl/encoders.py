"""Convolutional base encoder, gated-attention (STAA) encoder, projection and task heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

from .autodiff import checkpoint, ops
from .autodiff.tensor import ShapeError, Tensor, as_tensor

PARAMS_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    channels: int = 64
    pooled_len: int = 16
    kernel1: int = 3
    kernel2: int = 3
    kernel_staa: int = 3
    dilation: int = 2
    heads: int = 4
    proj_dim: int = 64
    proj_hidden: int = 128
    n_floors: int = 1
    n_buildings: int = 1
    head_input: str = "features"
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        sizes = ("input_dim", "channels", "pooled_len", "kernel1", "kernel2", "kernel_staa",
                 "dilation", "heads", "proj_dim", "proj_hidden", "n_floors", "n_buildings")
        for name in sizes:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.head_input not in ("features", "projection"):
            raise ConfigError(f"head_input must be 'features' or 'projection', got {self.head_input!r}")

    @property
    def feature_dim(self) -> int:
        return self.channels * self.pooled_len

    @property
    def head_dim(self) -> int:
        return self.feature_dim if self.head_input == "features" else self.proj_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    F, L = cfg.channels, cfg.pooled_len
    return {
        "conv1.weight": (F, 1, cfg.kernel1),
        "conv1.bias": (F,),
        "conv2.weight": (F, F, cfg.kernel2),
        "conv2.bias": (F,),
        "staa.conv.weight": (F, F, cfg.kernel_staa),
        "staa.conv.bias": (F,),
        "staa.attn.q.weight": (F, F),
        "staa.attn.q.bias": (F,),
        # no key bias: softmax is invariant to it
        "staa.attn.k.weight": (F, F),
        "staa.attn.v.weight": (F, F),
        "staa.attn.v.bias": (F,),
        "staa.attn.out.weight": (F, F),
        "staa.attn.out.bias": (F,),
        "staa.adapt.weight": (1, F),
        "staa.adapt.bias": (1,),
        "staa.norm.gain": (F,),
        "staa.norm.bias": (F,),
        "proj.fc1.weight": (cfg.proj_hidden, F * L),
        "proj.fc1.bias": (cfg.proj_hidden,),
        "proj.fc2.weight": (cfg.proj_dim, cfg.proj_hidden),
        "proj.fc2.bias": (cfg.proj_dim,),
        "head.position.weight": (2, cfg.head_dim),
        "head.position.bias": (2,),
        "head.floor.weight": (cfg.n_floors, cfg.head_dim),
        "head.floor.bias": (cfg.n_floors,),
        "head.building.weight": (cfg.n_buildings, cfg.head_dim),
        "head.building.bias": (cfg.n_buildings,),
    }


ENCODER_PREFIXES = ("conv1.", "conv2.", "staa.", "proj.")


def init_params(cfg: EncoderConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Uniform fan-in initialization; zero biases, unit layer-norm gain."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def _check_input(x: Tensor, cfg: EncoderConfig) -> None:
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"base_encode: expected (B, {cfg.input_dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("encoder input contains non-finite values")


def base_encode(x, params: Mapping[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """(B, I) RSSI matrix -> (B, F, L) pooled feature maps."""
    x = as_tensor(x)
    _check_input(x, cfg)
    h = ops.reshape(x, (x.shape[0], 1, cfg.input_dim))
    h = ops.relu(ops.conv1d(h, params["conv1.weight"], params["conv1.bias"]))
    h = ops.relu(ops.conv1d(h, params["conv2.weight"], params["conv2.bias"]))
    return ops.adaptive_max_pool1d(h, cfg.pooled_len)


@dataclass
class StaaTrace:
    """Intermediates of one STAA pass, for inspection and tests."""

    conv: Tensor
    attention: Tensor
    attention_weights: Tensor
    gate: Tensor


def staa_encode(x_cnn, params: Mapping[str, Tensor], cfg: EncoderConfig,
                trace: bool = False):
    """Dilated conv, self-attention over the L positions, scalar sigmoid gate, layer norm.

    Input and output are (B, F, L). With ``trace=True`` also returns a
    :class:`StaaTrace`.
    """
    x_cnn = as_tensor(x_cnn)
    F, L = cfg.channels, cfg.pooled_len
    if x_cnn.ndim != 3 or x_cnn.shape[1:] != (F, L):
        raise ShapeError(f"staa_encode: expected (B, {F}, {L}), got {x_cnn.shape}")
    conv = ops.conv1d(x_cnn, params["staa.conv.weight"], params["staa.conv.bias"], dilation=cfg.dilation)
    tokens = ops.transpose(conv, (0, 2, 1))
    q = ops.linear(tokens, params["staa.attn.q.weight"], params["staa.attn.q.bias"])
    k = ops.linear(tokens, params["staa.attn.k.weight"])
    v = ops.linear(tokens, params["staa.attn.v.weight"], params["staa.attn.v.bias"])
    attn, weights = ops.scaled_dot_attention(q, k, v, heads=cfg.heads)
    attn = ops.linear(attn, params["staa.attn.out.weight"], params["staa.attn.out.bias"])
    summary = ops.mean(conv, axis=2)
    gate = ops.sigmoid(ops.linear(summary, params["staa.adapt.weight"], params["staa.adapt.bias"]))
    mixed = ops.add(tokens, ops.mul(ops.reshape(gate, (-1, 1, 1)), attn))
    normed = ops.layer_norm(mixed, eps=cfg.ln_eps)
    normed = ops.add(ops.mul(normed, params["staa.norm.gain"]), params["staa.norm.bias"])
    out = ops.transpose(normed, (0, 2, 1))
    if trace:
        return out, StaaTrace(conv=conv, attention=attn, attention_weights=weights, gate=gate)
    return out


def flatten(x: Tensor) -> Tensor:
    return ops.reshape(x, (x.shape[0], -1))


def project(x, params: Mapping[str, Tensor]) -> Tensor:
    """(B, F, L) -> (B, D) rows on the unit sphere."""
    x = as_tensor(x)
    h = ops.relu(ops.linear(flatten(x), params["proj.fc1.weight"], params["proj.fc1.bias"]))
    return ops.l2_normalize(ops.linear(h, params["proj.fc2.weight"], params["proj.fc2.bias"]), eps=1e-12)


def heads(features, params: Mapping[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Position (B, 2), floor logits (B, n_floors), building logits (B, n_buildings)."""
    features = as_tensor(features)
    if features.ndim != 2:
        features = flatten(features)
    pos = ops.linear(features, params["head.position.weight"], params["head.position.bias"])
    floor = ops.linear(features, params["head.floor.weight"], params["head.floor.bias"])
    building = ops.linear(features, params["head.building.weight"], params["head.building.bias"])
    return pos, floor, building


class Network:
    """Parameters plus the forward passes that use them."""

    def __init__(self, cfg: EncoderConfig, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params
        expected = param_shapes(cfg)
        if set(self.params) != set(expected):
            raise ConfigError(f"parameter names do not match config: "
                              f"{sorted(set(self.params) ^ set(expected))}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.params[name].shape}")

    def encoder_params(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith(ENCODER_PREFIXES)]

    def head_params(self) -> list[Tensor]:
        return [t for n, t in self.params.items() if n.startswith("head.")]

    def encode(self, x) -> Tensor:
        return staa_encode(base_encode(x, self.params, self.cfg), self.params, self.cfg)

    def embed(self, x) -> Tensor:
        return project(self.encode(x), self.params)

    def predict(self, x) -> tuple[Tensor, Tensor, Tensor]:
        enc = self.encode(x)
        feats = flatten(enc) if self.cfg.head_input == "features" else project(enc, self.params)
        return heads(feats, self.params)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefixes: tuple[str, ...] | None = None) -> None:
        for name, arr in state.items():
            if prefixes is not None and not name.startswith(prefixes):
                continue
            if name not in self.params:
                raise checkpoint.CheckpointError(f"unexpected tensor {name!r} in checkpoint")
            if self.params[name].shape != tuple(arr.shape):
                raise checkpoint.CheckpointError(
                    f"{name}: checkpoint shape {tuple(arr.shape)} != model shape {self.params[name].shape}")
            self.params[name].data = np.array(arr, dtype=np.float64)

    def save(self, path, meta: Mapping | None = None) -> None:
        full = {"version": PARAMS_VERSION, "encoder_config": self.cfg.to_dict()}
        full.update(meta or {})
        checkpoint.save(path, self.state_dict(), full)

    @classmethod
    def load(cls, path) -> tuple["Network", dict]:
        arrays, meta = checkpoint.load(path)
        if meta.get("version") != PARAMS_VERSION:
            raise checkpoint.CheckpointError(f"unsupported parameter version {meta.get('version')!r}")
        net = cls(EncoderConfig.from_dict(meta["encoder_config"]))
        net.load_state_dict(arrays)
        return net, meta
