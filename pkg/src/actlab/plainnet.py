"""Normalization-free, residual-free VGG-style stacks ("PlainNet").

A PlainNet is a pure sequence of 3x3 same-padding convolutions, per-conv
activations, five 2x2 max pools, then a two-layer fully connected head
(Linear -> ReLU -> Dropout -> Linear). There is no normalization layer
and no skip junction anywhere, by construction; :func:`audit` walks a
built model and certifies that.

Depth 16 is the canonical configuration: conv channels
[64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512] with
pools after convs 2, 4, 7, 10 and 13. At width 1 and 100 classes it
counts 15,028,644 parameters, plus 12,672 activation parameters (3 per
conv channel) when zc_swish is selected. Depths 8 and 32 follow the same
five-stage convention but are this lab's own reconstructions; treat them
as "a shallower/deeper PlainNet", not as a pinned reference.

When zc_swish is selected, its parameter triples attach to conv
activation sites only; the head activation stays a plain ReLU.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from actlab.activations import ActivationKind, ZCSwishParams, apply_activation, relu
from actlab.tensor import DEFAULT_DTYPE, ShapeError, Tensor, dropout, linear, maxpool2, reshape
from actlab import tensor as T

__all__ = [
    "INPUT_CHANNELS",
    "INPUT_SIZE",
    "DEPTH_LAYOUTS",
    "PlainNetConfig",
    "PlainNet",
    "ParamCountReport",
    "build",
    "count_params",
    "audit",
    "save_checkpoint",
    "load_checkpoint",
]

INPUT_CHANNELS = 3
INPUT_SIZE = 32

# depth -> (conv output channels, 1-based conv indices followed by a pool).
# Five pools take 32x32 down to 1x1, so the flatten width equals the last
# conv's channel count.
DEPTH_LAYOUTS: dict[int, tuple[tuple[int, ...], frozenset[int]]] = {
    8: ((64, 128, 256, 256, 512, 512), frozenset({1, 2, 4, 5, 6})),
    16: (
        (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512),
        frozenset({2, 4, 7, 10, 13}),
    ),
    32: (
        (64,) * 4 + (128,) * 4 + (256,) * 6 + (512,) * 8 + (512,) * 8,
        frozenset({4, 8, 14, 22, 30}),
    ),
}

HEAD_WIDTH = 512


@dataclass
class PlainNetConfig:
    """Architecture knobs. channel_progression / pool_after default to the
    canonical layout for the chosen depth; width_divisor shrinks every
    channel count for desk-scale runs (1 = full scale)."""

    depth: int = 16
    width_divisor: int = 1
    activation: ActivationKind = ActivationKind.RELU
    num_classes: int = 100
    dropout_p: float = 0.5
    channel_progression: tuple[int, ...] | None = None
    pool_after: frozenset[int] | None = None

    def __post_init__(self):
        if isinstance(self.activation, str):
            self.activation = ActivationKind.parse(self.activation)
        if self.channel_progression is None or self.pool_after is None:
            if self.depth not in DEPTH_LAYOUTS:
                raise ValueError(f"depth must be one of {sorted(DEPTH_LAYOUTS)}, got {self.depth}")
            prog, pools = DEPTH_LAYOUTS[self.depth]
            if self.channel_progression is None:
                self.channel_progression = prog
            if self.pool_after is None:
                self.pool_after = pools
        self.channel_progression = tuple(int(c) for c in self.channel_progression)
        self.pool_after = frozenset(int(i) for i in self.pool_after)

    def scaled_channels(self) -> list[int]:
        w = self.width_divisor
        if w < 1:
            raise ValueError(f"width_divisor must be a positive integer, got {w}")
        for ch in (*self.channel_progression, HEAD_WIDTH):
            if ch % w != 0:
                raise ValueError(f"width_divisor {w} does not divide channel count {ch}")
        return [ch // w for ch in self.channel_progression]

    @property
    def head_width(self) -> int:
        return HEAD_WIDTH // self.width_divisor

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "width_divisor": self.width_divisor,
            "activation": self.activation.value,
            "num_classes": self.num_classes,
            "dropout_p": self.dropout_p,
            "channel_progression": list(self.channel_progression),
            "pool_after": sorted(self.pool_after),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlainNetConfig":
        return cls(
            depth=d["depth"],
            width_divisor=d["width_divisor"],
            activation=ActivationKind.parse(d["activation"]),
            num_classes=d["num_classes"],
            dropout_p=d["dropout_p"],
            channel_progression=tuple(d["channel_progression"]),
            pool_after=frozenset(d["pool_after"]),
        )


@dataclass
class ConvLayer:
    name: str
    weight: Tensor
    bias: Tensor
    kind: str = field(default="conv", init=False)


@dataclass
class LinearLayer:
    name: str
    weight: Tensor
    bias: Tensor
    kind: str = field(default="linear", init=False)


@dataclass
class ActivationSite:
    name: str
    activation: ActivationKind
    params: ZCSwishParams | None = None
    kind: str = field(default="activation", init=False)


@dataclass
class PoolLayer:
    name: str
    kind: str = field(default="maxpool", init=False)


@dataclass
class FlattenLayer:
    name: str
    kind: str = field(default="flatten", init=False)


@dataclass
class DropoutLayer:
    name: str
    p: float
    kind: str = field(default="dropout", init=False)


ALLOWED_LAYER_KINDS = {"conv", "linear", "activation", "maxpool", "flatten", "dropout"}


class PlainNet:
    """A built model: an ordered flat list of layers plus its config."""

    def __init__(self, config: PlainNetConfig, layers: list, dtype):
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(dtype)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in self.layers:
            if layer.kind in ("conv", "linear"):
                out.append((f"{layer.name}.weight", layer.weight))
                out.append((f"{layer.name}.bias", layer.bias))
            elif layer.kind == "activation" and layer.params is not None:
                out.append((f"{layer.name}.c", layer.params.c))
                out.append((f"{layer.name}.beta_raw", layer.params.beta_raw))
                out.append((f"{layer.name}.g", layer.params.g))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        probe: list | None = None,
    ) -> Tensor:
        """Run the stack. ``probe``, when given, collects
        (site_name, post-activation array copy) pairs without altering
        the computation. ``rng`` is only consumed by dropout in training
        mode."""
        if x.ndim != 4 or x.shape[1] != INPUT_CHANNELS or x.shape[2:] != (INPUT_SIZE, INPUT_SIZE):
            raise ShapeError(
                f"input must be [N,{INPUT_CHANNELS},{INPUT_SIZE},{INPUT_SIZE}], got shape {x.shape}"
            )
        h = x
        for layer in self.layers:
            if layer.kind == "conv":
                h = T.conv2d(h, layer.weight, layer.bias)
            elif layer.kind == "linear":
                h = linear(h, layer.weight, layer.bias)
            elif layer.kind == "activation":
                h = apply_activation(h, layer.activation, layer.params)
                if probe is not None:
                    probe.append((layer.name, h.data.copy()))
            elif layer.kind == "maxpool":
                h = maxpool2(h)
            elif layer.kind == "flatten":
                h = reshape(h, (h.shape[0], -1))
            elif layer.kind == "dropout":
                h = dropout(h, layer.p, training=training, rng=rng)
            else:  # pragma: no cover - construction never produces this
                raise ValueError(f"unknown layer kind {layer.kind!r}")
        if probe is not None:
            probe.append(("logits", h.data.copy()))
        return h

    def activation_sites(self) -> list[ActivationSite]:
        return [l for l in self.layers if l.kind == "activation"]

    def weight_layers(self) -> list:
        return [l for l in self.layers if l.kind in ("conv", "linear")]


def _uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    # default framework-style init: U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    # drawn in float64 then cast, so the stream is dtype-independent
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def build(config: PlainNetConfig, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> PlainNet:
    """Construct and initialize a PlainNet.

    Weights and biases are uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)]
    (fan_in = C_in*9 for conv, F_in for linear); zc_swish triples start
    at their documented defaults. Deterministic for a given generator
    state: draw order is layer by layer, weight then bias.
    """
    channels = config.scaled_channels()
    dtype = np.dtype(dtype)
    layers: list = []
    in_c = INPUT_CHANNELS
    spatial = INPUT_SIZE
    zc = config.activation is ActivationKind.ZCSWISH
    for i, out_c in enumerate(channels, start=1):
        name = f"conv{i}"
        layers.append(
            ConvLayer(
                name,
                weight=_uniform_fan_in(rng, (out_c, in_c, 3, 3), in_c * 9, dtype),
                bias=_uniform_fan_in(rng, (out_c,), in_c * 9, dtype),
            )
        )
        params = ZCSwishParams.initial(out_c, dtype=dtype) if zc else None
        layers.append(ActivationSite(f"act{i}", config.activation, params))
        if i in config.pool_after:
            layers.append(PoolLayer(f"pool{i}"))
            spatial //= 2
        in_c = out_c
    if spatial != 1:
        raise ValueError(
            f"pool placement leaves a {spatial}x{spatial} map; expected 1x1 before the head"
        )
    layers.append(FlattenLayer("flatten"))
    hw = config.head_width
    if in_c != hw:
        raise ValueError(f"last conv width {in_c} must match head width {hw}")
    layers.append(
        LinearLayer("fc1", weight=_uniform_fan_in(rng, (hw, hw), hw, dtype), bias=_uniform_fan_in(rng, (hw,), hw, dtype))
    )
    layers.append(ActivationSite("act_fc1", ActivationKind.RELU, None))
    layers.append(DropoutLayer("drop_fc1", config.dropout_p))
    layers.append(
        LinearLayer(
            "fc2",
            weight=_uniform_fan_in(rng, (config.num_classes, hw), hw, dtype),
            bias=_uniform_fan_in(rng, (config.num_classes,), hw, dtype),
        )
    )
    return PlainNet(config, layers, dtype)


@dataclass
class ParamCountReport:
    total: int
    activation_params: int
    per_layer: list[tuple[str, int]]

    @property
    def overhead_ratio(self) -> float:
        return self.activation_params / self.total if self.total else 0.0

    def format_table(self) -> str:
        lines = [f"{'layer':<16}{'params':>12}"]
        for name, n in self.per_layer:
            lines.append(f"{name:<16}{n:>12,}")
        lines.append(f"{'total':<16}{self.total:>12,}")
        lines.append(f"{'activation':<16}{self.activation_params:>12,}")
        lines.append(f"{'overhead':<16}{self.overhead_ratio * 100:>11.3f}%")
        return "\n".join(lines)


def count_params(model: PlainNet) -> ParamCountReport:
    """Exact integer parameter counts, grouped by layer."""
    per_layer: dict[str, int] = {}
    activation = 0
    for name, t in model.named_parameters():
        layer_name = name.rsplit(".", 1)[0]
        per_layer[layer_name] = per_layer.get(layer_name, 0) + t.size
        if layer_name.startswith("act"):
            activation += t.size
    total = sum(per_layer.values())
    return ParamCountReport(total=total, activation_params=activation, per_layer=list(per_layer.items()))


def audit(model: PlainNet) -> dict:
    """Walk the model and certify its structure.

    Confirms that every layer is one of the allowed plain kinds (so there
    is no normalization of any sort) and that the graph is a single
    sequential chain (so there is no additive skip junction). Raises on
    violation, returns a summary otherwise.
    """
    kind_counts: dict[str, int] = {}
    for layer in model.layers:
        if layer.kind not in ALLOWED_LAYER_KINDS:
            raise ValueError(f"forbidden layer kind {layer.kind!r} in model")
        kind_counts[layer.kind] = kind_counts.get(layer.kind, 0) + 1
    return {
        "layer_kinds": kind_counts,
        "normalization_layers": 0,
        "skip_connections": 0,
        "sequential_chain": True,
        "activation_sites": len(model.activation_sites()),
    }


CHECKPOINT_VERSION = 1
_MAGIC = b"PNET"


def save_checkpoint(model: PlainNet, path):
    """Binary checkpoint: magic, version, JSON header, then every
    parameter array raw little-endian in named_parameters order."""
    header = {
        "config": model.config.to_dict(),
        "dtype": model.dtype.name,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in model.named_parameters()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, t in model.named_parameters():
            f.write(np.ascontiguousarray(t.data, dtype=f"<{model.dtype.str[1:]}").tobytes())


def load_checkpoint(path) -> PlainNet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a PlainNet checkpoint: bad magic {magic!r}")
        version, blob_len = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        header = json.loads(f.read(blob_len).decode("utf-8"))
        config = PlainNetConfig.from_dict(header["config"])
        dtype = np.dtype(header["dtype"])
        model = build(config, rng=np.random.default_rng(0), dtype=dtype)
        manifest = header["params"]
        named = model.named_parameters()
        if [m["name"] for m in manifest] != [n for n, _ in named]:
            raise ValueError("checkpoint parameter manifest does not match rebuilt model")
        for meta, (_, t) in zip(manifest, named):
            shape = tuple(meta["shape"])
            n_bytes = int(np.prod(shape)) * dtype.itemsize
            raw = f.read(n_bytes)
            if len(raw) != n_bytes:
                raise ValueError(f"checkpoint truncated while reading {meta['name']}")
            t.data = np.frombuffer(raw, dtype=f"<{dtype.str[1:]}").reshape(shape).astype(dtype)
        trailing = f.read(1)
        if trailing:
            raise ValueError("checkpoint has trailing bytes after the last parameter")
    return model
