"""Siamese 3D-CNN backbone, spatial max pooling, and channel heads.

The backbone is a configurable stack of conv3d+relu stages whose weights
are shared by both branches of the training pipeline (sharing is free
here: both branches simply call the same forward with the same parameter
nodes).  Features of shape C',T',H',W' are reduced to C'×T' descriptors
by a parameter-free spatial max pool, and two independent learnable
heads collapse the temporal axis into per-channel logits.

Checkpoints are a flat little-endian record stream; see
:func:`save_checkpoint` for the exact layout.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DimensionError, FormatError

CHECKPOINT_MAGIC = b"STCR"
CHECKPOINT_VERSION = 1


def conv_output_dim(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


@dataclass(frozen=True)
class BackboneConfig:
    """Shape and wiring of the backbone plus head options.

    ``channels_per_stage`` and ``strides_per_stage`` must have equal
    length; every stage uses the same kernel extents and padding.  The
    resulting feature grid must be square (so quarter-turn rotations stay
    shape-preserving) and keep at least two temporal steps.
    """

    input_shape: tuple[int, int, int, int]
    channels_per_stage: tuple[int, ...]
    kernel: tuple[int, int, int] = (3, 3, 3)
    strides_per_stage: tuple[tuple[int, int, int], ...] = ()
    padding: tuple[int, int, int] = (1, 1, 1)
    tie_heads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(
            self, "channels_per_stage", tuple(int(c) for c in self.channels_per_stage)
        )
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        strides = self.strides_per_stage or tuple(
            (1, 1, 1) for _ in self.channels_per_stage
        )
        object.__setattr__(
            self, "strides_per_stage", tuple(tuple(int(s) for s in st) for st in strides)
        )
        object.__setattr__(self, "padding", tuple(int(p) for p in self.padding))
        self._validate()

    def _validate(self):
        if len(self.input_shape) != 4 or any(v < 1 for v in self.input_shape):
            raise ConfigError(f"bad input shape {self.input_shape}")
        if not self.channels_per_stage:
            raise ConfigError("need at least one stage")
        if len(self.strides_per_stage) != len(self.channels_per_stage):
            raise ConfigError(
                f"{len(self.channels_per_stage)} stages but "
                f"{len(self.strides_per_stage)} stride entries"
            )
        if len(self.kernel) != 3 or any(k < 1 for k in self.kernel):
            raise ConfigError(f"bad kernel {self.kernel}")
        if len(self.padding) != 3 or any(p < 0 for p in self.padding):
            raise ConfigError(f"bad padding {self.padding}")
        for st in self.strides_per_stage:
            if len(st) != 3 or any(s < 1 for s in st):
                raise ConfigError(f"bad stride entry {st}")
        c, t, h, w = self.feature_shape
        if h != w:
            raise ConfigError(f"feature grid must be square, got H'={h} W'={w}")
        if t < 2:
            raise ConfigError(f"feature grid needs T' >= 2, got T'={t}")

    @property
    def feature_shape(self) -> tuple[int, int, int, int]:
        """C',T',H',W' after the final stage."""
        _, t, h, w = self.input_shape
        c = self.input_shape[0]
        for c_out, stride in zip(self.channels_per_stage, self.strides_per_stage):
            kt, kh, kw = self.kernel
            pt, ph, pw = self.padding
            t = conv_output_dim(t, kt, stride[0], pt)
            h = conv_output_dim(h, kh, stride[1], ph)
            w = conv_output_dim(w, kw, stride[2], pw)
            if t < 1 or h < 1 or w < 1:
                raise ConfigError(f"stage with stride {stride} shrinks the grid to nothing")
            c = c_out
        return (c, t, h, w)

    @property
    def head_hidden(self) -> int:
        """Hidden width of the channel heads (at least 4)."""
        return max(self.feature_shape[1], 4)


@dataclass
class HeadParams:
    """Two-layer per-channel map collapsing T' to a single logit."""

    w1: Node
    b1: Node
    w2: Node
    b2: Node

    def nodes(self) -> tuple[tuple[str, Node], ...]:
        return (("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2))


@dataclass
class ModelParams:
    """All trainable leaves: backbone stages plus the two channel heads.

    Both siamese branches read the same ``stages`` nodes, which is what
    makes the weight sharing exact.  ``head_1`` and ``head_2`` are
    distinct storage unless the config ties them, in which case they are
    literally the same nodes and receive summed gradients.
    """

    config: BackboneConfig
    stages: tuple[tuple[Node, Node], ...]
    head_1: HeadParams
    head_2: HeadParams

    def named_parameters(self) -> list[tuple[str, Node]]:
        out = []
        for i, (kernel, bias) in enumerate(self.stages):
            out.append((f"stage{i}.kernel", kernel))
            out.append((f"stage{i}.bias", bias))
        for name, node in self.head_1.nodes():
            out.append((f"head1.{name}", node))
        for name, node in self.head_2.nodes():
            out.append((f"head2.{name}", node))
        return out

    def unique_parameters(self) -> list[Node]:
        """Parameter nodes deduplicated by identity (tied heads count once)."""
        seen: set[int] = set()
        out = []
        for _, node in self.named_parameters():
            if id(node) not in seen:
                seen.add(id(node))
                out.append(node)
        return out


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def _param_specs(config: BackboneConfig):
    """(name, shape, fan_in, fan_out) for every logical parameter, in order."""
    specs = []
    kt, kh, kw = config.kernel
    c_in = config.input_shape[0]
    for i, c_out in enumerate(config.channels_per_stage):
        k_elems = kt * kh * kw
        specs.append((f"stage{i}.kernel", (c_out, c_in, kt, kh, kw), c_in * k_elems, c_out * k_elems))
        specs.append((f"stage{i}.bias", (c_out,), 0, 0))
        c_in = c_out
    t_prime = config.feature_shape[1]
    hidden = config.head_hidden
    for head in ("head1", "head2"):
        specs.append((f"{head}.w1", (hidden, t_prime), t_prime, hidden))
        specs.append((f"{head}.b1", (hidden,), 0, 0))
        specs.append((f"{head}.w2", (1, hidden), hidden, 1))
        specs.append((f"{head}.b2", (1,), 0, 0))
    return specs


def _assemble(config: BackboneConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    def node(name):
        return ad.leaf(arrays[name], requires_grad=True)

    stages = []
    for i in range(len(config.channels_per_stage)):
        stages.append((node(f"stage{i}.kernel"), node(f"stage{i}.bias")))
    head_1 = HeadParams(node("head1.w1"), node("head1.b1"), node("head1.w2"), node("head1.b2"))
    if config.tie_heads:
        head_2 = head_1
    else:
        head_2 = HeadParams(
            node("head2.w1"), node("head2.b1"), node("head2.w2"), node("head2.b2")
        )
    return ModelParams(config, tuple(stages), head_1, head_2)


def init_params(config: BackboneConfig, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases, drawn in a fixed order."""
    arrays: dict[str, np.ndarray] = {}
    for name, shape, fan_in, fan_out in _param_specs(config):
        if fan_in == 0:  # bias
            arrays[name] = np.zeros(shape)
        elif config.tie_heads and name.startswith("head2."):
            # tied heads share head1's storage; no extra draws
            continue
        else:
            arrays[name] = _xavier(rng, shape, fan_in, fan_out)
    if config.tie_heads:
        for suffix in ("w1", "b1", "w2", "b2"):
            arrays[f"head2.{suffix}"] = arrays[f"head1.{suffix}"]
    return _assemble(config, arrays)


def backbone_forward(params: ModelParams, clip) -> Node:
    """Run the conv3d+relu stack; returns the C',T',H',W' feature node."""
    x = ad.as_node(clip)
    if x.shape != params.config.input_shape:
        raise DimensionError(
            f"clip shape {x.shape} does not match configured input {params.config.input_shape}"
        )
    for (kernel, bias), stride in zip(params.stages, params.config.strides_per_stage):
        x = ad.relu(ad.conv3d(x, kernel, bias, stride, params.config.padding))
    return x


def spatial_max_pool(feature: Node) -> Node:
    """Parameter-free reduction C',T',H',W' -> C',T' by spatial max.

    Invariant to any spatial permutation of the grid, which is the
    property the temporal-consistency loss leans on.
    """
    if feature.value.ndim != 4:
        raise DimensionError(f"expected a 4-D feature node, got {feature.shape}")
    return ad.reduce_max(feature, (2, 3))


def channel_head(head: HeadParams, descriptor: Node) -> Node:
    """Collapse a C'×T' descriptor to C' logits.

    The same two-layer map (relu between) is applied to every channel
    row; normalization of the logits happens inside the loss.
    """
    if descriptor.value.ndim != 2:
        raise DimensionError(f"expected a C'xT' descriptor, got {descriptor.shape}")
    if descriptor.shape[1] != head.w1.shape[1]:
        raise DimensionError(
            f"descriptor temporal length {descriptor.shape[1]} does not match "
            f"head input width {head.w1.shape[1]}"
        )
    hidden = ad.relu(ad.linear(descriptor, head.w1, head.b1))
    out = ad.linear(hidden, head.w2, head.b2)  # C' x 1
    return ad.reshape(out, (descriptor.shape[0],))


# ---------------------------------------------------------------------------
# flat-vector packing (used by the end-to-end gradient check)


def pack_values(params: ModelParams) -> np.ndarray:
    """Concatenate every logical parameter (tied heads repeat) into one vector."""
    return np.concatenate([n.value.ravel() for _, n in params.named_parameters()])


def params_from_vector(config: BackboneConfig, vec: Node) -> ModelParams:
    """Rebuild ModelParams out of slices of one flat parameter node.

    Keeps the whole model differentiable with respect to a single leaf,
    which is what lets :func:`stcreg.autodiff.finite_diff_check` probe the
    full pipeline coordinate by coordinate.
    """
    specs = _param_specs(config)
    total = sum(int(np.prod(shape)) for _, shape, _, _ in specs)
    if vec.size != total:
        raise DimensionError(f"parameter vector has {vec.size} entries, expected {total}")
    nodes: dict[str, Node] = {}
    offset = 0
    for name, shape, _, _ in specs:
        n = int(np.prod(shape))
        nodes[name] = ad.reshape(ad.vector_slice(vec, offset, offset + n), shape)
        offset += n
    stages = tuple(
        (nodes[f"stage{i}.kernel"], nodes[f"stage{i}.bias"])
        for i in range(len(config.channels_per_stage))
    )
    head_1 = HeadParams(nodes["head1.w1"], nodes["head1.b1"], nodes["head1.w2"], nodes["head1.b2"])
    if config.tie_heads:
        head_2 = head_1
    else:
        head_2 = HeadParams(
            nodes["head2.w1"], nodes["head2.b1"], nodes["head2.w2"], nodes["head2.b2"]
        )
    return ModelParams(config, stages, head_1, head_2)


# ---------------------------------------------------------------------------
# checkpoint format


def save_checkpoint(path, params: ModelParams) -> None:
    """Write all parameters as a flat record stream.

    Layout: magic "STCR", version u32, then per parameter a record of
    (name-length u32, name bytes, rank u32, dims u32 each, float64
    little-endian data).  Tied heads are written twice so the layout is
    independent of the tie flag.
    """
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    for name, node in params.named_parameters():
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(node.value, dtype="<f8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float64 array mapping."""
    data = Path(path).read_bytes()

    def need(offset, count, what):
        if offset + count > len(data):
            raise FormatError(f"checkpoint truncated reading {what} at byte offset {offset}")
        return data[offset : offset + count]

    if need(0, 4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic at byte offset 0")
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at byte offset 4")
    arrays: dict[str, np.ndarray] = {}
    offset = 8
    while offset < len(data):
        (name_len,) = struct.unpack("<I", need(offset, 4, "name length"))
        offset += 4
        name = need(offset, name_len, "name").decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack("<I", need(offset, 4, "rank"))
        offset += 4
        dims = struct.unpack(f"<{rank}I", need(offset, 4 * rank, "dims"))
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        raw = need(offset, 8 * count, f"data for {name!r}")
        offset += 8 * count
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    return arrays


def params_from_arrays(config: BackboneConfig, arrays: dict[str, np.ndarray]) -> ModelParams:
    """Build ModelParams from checkpoint arrays, validating names and shapes."""
    specs = _param_specs(config)
    expected = {name for name, _, _, _ in specs}
    missing = expected - arrays.keys()
    if missing:
        raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)}")
    extra = arrays.keys() - expected
    if extra:
        raise ConfigError(f"checkpoint has unexpected parameters: {sorted(extra)}")
    for name, shape, _, _ in specs:
        if arrays[name].shape != shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape {arrays[name].shape}, expected {shape}"
            )
    if config.tie_heads:
        for suffix in ("w1", "b1", "w2", "b2"):
            if not np.array_equal(arrays[f"head1.{suffix}"], arrays[f"head2.{suffix}"]):
                raise ConfigError(
                    "config ties the heads but checkpoint heads differ; "
                    "load with tie_heads=false instead"
                )
    return _assemble(config, dict(arrays))
