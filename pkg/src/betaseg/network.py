"""A small configurable encoder-decoder segmenter with explicit backprop.

Topology for depth d and base width w, all convs 3x3 stride 1 padding 1
unless noted:

    enc[i], i = 0..d-1:  conv+relu, conv+relu at w * 2**i channels,
                         then 2x2 max-pool down to the next level
    bottleneck:          conv+relu, conv+relu at w * 2**d channels
    dec[i], i = d-1..0:  2x nearest upsample, channel-concat with enc[i]
                         output, conv+relu, conv+relu at w * 2**i channels
    final:               1x1 conv (no relu) projecting to num_classes

Parameters are named "<block>.conv<j>.kernel" / ".bias" plus
"final.kernel" / "final.bias"; their shapes are a pure function of the
NetworkSpec, which is what checkpoint loading validates against.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from . import tensor_ops as T

CHECKPOINT_MAGIC = b"RSEGCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 1
    num_classes: int = 9
    base_width: int = 16
    depth: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.in_channels < 1 or self.base_width < 1:
            raise ConfigError("in_channels and base_width must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit int, got {self.seed}")


@dataclass
class ParameterSet:
    """Ordered named tensors; order and shapes derive from the spec."""
    spec: NetworkSpec
    tensors: dict  # name -> float32 ndarray, insertion-ordered

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, {k: v.copy() for k, v in self.tensors.items()})


def parameter_shapes(spec: NetworkSpec) -> list:
    """(name, shape) pairs in canonical order for the given spec."""
    def block(name, cin, cout):
        return [(f"{name}.conv1.kernel", (cout, cin, 3, 3)), (f"{name}.conv1.bias", (cout,)),
                (f"{name}.conv2.kernel", (cout, cout, 3, 3)), (f"{name}.conv2.bias", (cout,))]

    shapes = []
    ch = spec.in_channels
    for i in range(spec.depth):
        width = spec.base_width << i
        shapes += block(f"enc{i}", ch, width)
        ch = width
    shapes += block("bottleneck", ch, spec.base_width << spec.depth)
    for i in reversed(range(spec.depth)):
        width = spec.base_width << i
        shapes += block(f"dec{i}", (spec.base_width << (i + 1)) + width, width)
    shapes += [("final.kernel", (spec.num_classes, spec.base_width, 1, 1)),
               ("final.bias", (spec.num_classes,))]
    return shapes


def build_and_init(spec: NetworkSpec) -> ParameterSet:
    """Kaiming-style fan-in init for kernels, zero biases, seeded by spec.seed."""
    rng = np.random.default_rng(spec.seed)
    tensors = {}
    for name, shape in parameter_shapes(spec):
        if name.endswith(".kernel"):
            fan_in = int(np.prod(shape[1:]))
            std = np.float32(math.sqrt(2.0 / fan_in))
            tensors[name] = rng.standard_normal(shape, dtype=np.float32) * std
        else:
            tensors[name] = np.zeros(shape, dtype=np.float32)
    return ParameterSet(spec, tensors)


def _check_images(spec: NetworkSpec, images: np.ndarray) -> None:
    if images.ndim != 4 or images.shape[1] != spec.in_channels:
        raise ShapeError(f"images must be (N,{spec.in_channels},H,W), got {images.shape}")
    h, w = images.shape[2:]
    div = 1 << spec.depth
    if h % div or w % div:
        raise ShapeError(f"input {h}x{w} not divisible by 2**depth = {div}")


def _conv_block_forward(p, name, x, cache):
    k1, b1 = p[f"{name}.conv1.kernel"], p[f"{name}.conv1.bias"]
    k2, b2 = p[f"{name}.conv2.kernel"], p[f"{name}.conv2.bias"]
    cache[f"{name}.in"] = x
    z1 = T.conv2d_forward(x, k1, b1, stride=1, padding=1)
    a1 = T.relu_forward(z1)
    z2 = T.conv2d_forward(a1, k2, b2, stride=1, padding=1)
    a2 = T.relu_forward(z2)
    cache[f"{name}.z1"], cache[f"{name}.a1"], cache[f"{name}.z2"] = z1, a1, z2
    return a2


def _conv_block_backward(p, name, grad, cache, grads):
    k1 = p[f"{name}.conv1.kernel"]
    k2 = p[f"{name}.conv2.kernel"]
    g = T.relu_backward(cache[f"{name}.z2"], grad)
    g, gk2, gb2 = T.conv2d_backward(cache[f"{name}.a1"], k2, g, stride=1, padding=1)
    g = T.relu_backward(cache[f"{name}.z1"], g)
    g, gk1, gb1 = T.conv2d_backward(cache[f"{name}.in"], k1, g, stride=1, padding=1)
    grads[f"{name}.conv1.kernel"], grads[f"{name}.conv1.bias"] = gk1, gb1
    grads[f"{name}.conv2.kernel"], grads[f"{name}.conv2.bias"] = gk2, gb2
    return g


def forward_cached(params: ParameterSet, images: np.ndarray):
    """Forward pass returning (logits, activation cache) for backward reuse."""
    spec = params.spec
    _check_images(spec, images)
    p = params.tensors
    cache = {}
    x = images
    for i in range(spec.depth):
        tap = _conv_block_forward(p, f"enc{i}", x, cache)
        cache[f"enc{i}.tap"] = tap
        x = T.downsample2x(tap)
    x = _conv_block_forward(p, "bottleneck", x, cache)
    for i in reversed(range(spec.depth)):
        up = T.upsample2x(x)
        x = np.concatenate([up, cache[f"enc{i}.tap"]], axis=1)
        x = _conv_block_forward(p, f"dec{i}", x, cache)
    cache["final.in"] = x
    logits = T.conv2d_forward(x, p["final.kernel"], p["final.bias"], stride=1, padding=0)
    return logits, cache


def forward(params: ParameterSet, images: np.ndarray) -> np.ndarray:
    """Logits at full input resolution, shape (N, num_classes, H, W)."""
    return forward_cached(params, images)[0]


def backward_cached(params: ParameterSet, cache: dict, grad_logits: np.ndarray) -> dict:
    """Parameter gradients given the cache of a matching forward_cached call."""
    spec = params.spec
    p = params.tensors
    if grad_logits.shape != (cache["final.in"].shape[0], spec.num_classes) + cache["final.in"].shape[2:]:
        raise ShapeError(f"grad_logits shape {grad_logits.shape} does not match forward output")
    grads = {}
    g, gk, gb = T.conv2d_backward(cache["final.in"], p["final.kernel"], grad_logits,
                                  stride=1, padding=0)
    grads["final.kernel"], grads["final.bias"] = gk, gb
    skip_grads = {}
    for i in range(spec.depth):  # shallowest decoder level first
        g = _conv_block_backward(p, f"dec{i}", g, cache, grads)
        ch_up = params.spec.base_width << (i + 1)
        skip_grads[i] = g[:, ch_up:]
        g = T.upsample2x_backward(np.ascontiguousarray(g[:, :ch_up]))
    g = _conv_block_backward(p, "bottleneck", g, cache, grads)
    for i in reversed(range(spec.depth)):
        g = T.downsample2x_backward(cache[f"enc{i}.tap"], g) + skip_grads[i]
        g = _conv_block_backward(p, f"enc{i}", g, cache, grads)
    return {name: grads[name] for name in params.tensors}


def backward(params: ParameterSet, images: np.ndarray, grad_logits: np.ndarray) -> dict:
    """Gradient of sum(logits * grad_logits) wrt every named parameter."""
    _, cache = forward_cached(params, images)
    return backward_cached(params, cache, grad_logits)


def save_checkpoint(params: ParameterSet, path) -> None:
    """Write magic, format version, NetworkSpec, then named tensor records."""
    spec = params.spec
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<IIIIQ", spec.in_channels, spec.num_classes,
                       spec.base_width, spec.depth, spec.seed)
    buf += struct.pack("<I", len(params.tensors))
    for name, arr in params.tensors.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected_spec: NetworkSpec | None = None) -> ParameterSet:
    """Read a checkpoint; rejects corrupt files and spec mismatches whole."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    in_ch, k, bw, depth = (r.u32() for _ in range(4))
    seed = struct.unpack("<Q", r.take(8))[0]
    try:
        spec = NetworkSpec(in_ch, k, bw, depth, seed)
    except ConfigError as e:
        raise FormatError(f"checkpoint carries an invalid network spec: {e}") from e
    if expected_spec is not None and spec != expected_spec:
        raise FormatError(f"checkpoint spec {spec} does not match expected {expected_spec}")

    count = r.u32()
    tensors = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        n_elem = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(4 * n_elem)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after last tensor record")
    expected_shapes = parameter_shapes(spec)
    got = [(name, arr.shape) for name, arr in tensors.items()]
    if got != expected_shapes:
        raise FormatError("checkpoint tensors do not match the topology of its network spec")
    return ParameterSet(spec, tensors)
