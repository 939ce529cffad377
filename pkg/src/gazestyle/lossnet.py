"""Fixed VGG-topology feature extractor and its binary weight container."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOSSNET_MAGIC = b"RSLW"
FORMAT_VERSION = 1
IMAGENET_MEANS = (0.485, 0.456, 0.406)

_VGG16_LAYOUT = [
    ("conv1_1", 64), ("conv1_2", 64), ("pool1", 0),
    ("conv2_1", 128), ("conv2_2", 128), ("pool2", 0),
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), ("pool3", 0),
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), ("pool4", 0),
    ("conv5_1", 512), ("conv5_2", 512), ("conv5_3", 512),
]  # fmt: skip


class WeightFileError(ValueError):
    """A weight container is malformed, corrupt, or does not match the expected layers."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" or "pool"
    out_channels: int = 0


@dataclass(frozen=True)
class LossNetSpec:
    """Ordered layers of the loss network. Convolutions are 3x3, stride 1, padding 1, followed by ReLU."""

    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown layer {name!r}") from None

    def conv_layers(self) -> list[tuple[str, int, int]]:
        """(name, in_channels, out_channels) for every convolution."""
        out, c = [], 3
        for layer in self.layers:
            if layer.kind == "conv":
                out.append((layer.name, c, layer.out_channels))
                c = layer.out_channels
        return out

    def pools_before(self, name: str) -> int:
        idx = self.index(name)
        return sum(1 for layer in self.layers[:idx] if layer.kind == "pool")

    def channels(self, name: str) -> int:
        c = 3
        for layer in self.layers[: self.index(name) + 1]:
            if layer.kind == "conv":
                c = layer.out_channels
        return c

    @property
    def min_size(self) -> int:
        n_pools = sum(1 for layer in self.layers if layer.kind == "pool")
        return 2 ** (n_pools + 1)


def vgg16_spec(width: float = 1.0) -> LossNetSpec:
    """16-layer VGG topology up to conv5_3; ``width`` scales every channel count."""
    return LossNetSpec(
        tuple(
            LayerSpec(name, "pool") if name.startswith("pool") else LayerSpec(name, "conv", max(1, round(c * width)))
            for name, c in _VGG16_LAYOUT
        )
    )


def small_spec(channels: tuple[int, int] = (4, 6)) -> LossNetSpec:
    """Two-convolution test network: conv1_1, pool1, conv2_1."""
    return LossNetSpec(
        (LayerSpec("conv1_1", "conv", channels[0]), LayerSpec("pool1", "pool"), LayerSpec("conv2_1", "conv", channels[1]))
    )


@dataclass(frozen=True)
class TapSet:
    local_content: str = "conv4_2"
    local_style: tuple[str, ...] = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
    global_content: str = "conv3_2"
    global_style: tuple[str, ...] = ("conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3")

    def all_layers(self) -> list[str]:
        seen: dict[str, None] = {}
        for name in (self.global_content, self.local_content, *self.global_style, *self.local_style):
            seen[name] = None
        return list(seen)

    def validate(self, spec: LossNetSpec) -> None:
        for name in self.all_layers():
            spec.index(name)


def small_taps() -> TapSet:
    return TapSet(
        local_content="conv2_1",
        local_style=("conv1_1", "conv2_1"),
        global_content="conv1_1",
        global_style=("conv1_1", "conv2_1"),
    )


@dataclass
class FeatureBundle:
    """Tapped activations, keyed by layer name."""

    features: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.features[name]

    def __contains__(self, name: str) -> bool:
        return name in self.features

    def layers(self) -> list[str]:
        return list(self.features)

    def n(self, name: str) -> int:
        return self.features[name].shape[1]

    def m(self, name: str) -> int:
        _, _, h, w = self.features[name].shape
        return h * w


class LossNet:
    """Loaded loss network. Weights are never trained."""

    def __init__(self, spec: LossNetSpec, weights: dict[str, tuple[np.ndarray, np.ndarray]], means=IMAGENET_MEANS):
        self.spec = spec
        self.means = tuple(float(m) for m in means)
        for name, cin, cout in spec.conv_layers():
            if name not in weights:
                raise WeightFileError(f"missing weights for layer {name!r}")
            k, b = weights[name]
            if k.shape != (cout, cin, 3, 3) or b.shape != (cout,):
                raise WeightFileError(
                    f"layer {name!r}: expected kernel {(cout, cin, 3, 3)} and bias {(cout,)}, got {k.shape} and {b.shape}"
                )
        self.weights = {name: (Tensor(k), Tensor(b)) for name, (k, b) in weights.items()}

    @classmethod
    def random(cls, spec: LossNetSpec, seed: int = 0, means=IMAGENET_MEANS) -> "LossNet":
        """He-initialised weights with zero biases, fully determined by ``seed``."""
        rng = np.random.default_rng(seed)
        weights = {}
        for name, cin, cout in spec.conv_layers():
            std = np.sqrt(2.0 / (cin * 9))
            weights[name] = (rng.normal(0.0, std, (cout, cin, 3, 3)).astype(np.float32), np.zeros(cout, np.float32))
        return cls(spec, weights, means)

    def astype(self, dtype) -> "LossNet":
        weights = {n: (k.data.astype(dtype), b.data.astype(dtype)) for n, (k, b) in self.weights.items()}
        return LossNet(self.spec, weights, self.means)

    def preprocess(self, image: Tensor) -> Tensor:
        means = np.asarray(self.means, dtype=image.dtype).reshape(1, 3, 1, 1)
        return ad.sub(ad.mul(image, 1.0 / 255.0), means)

    def extract_features(self, image: Tensor, taps: TapSet | list[str]) -> FeatureBundle:
        """Run the network on a 1x3xHxW image in [0, 255] and collect post-ReLU activations at the taps."""
        wanted = taps.all_layers() if isinstance(taps, TapSet) else list(taps)
        if image.data.ndim != 4 or image.shape[:2] != (1, 3):
            raise ValueError(f"expected a 1x3xHxW image, got {image.shape}")
        h, w = image.shape[2:]
        if min(h, w) < self.spec.min_size:
            raise ValueError(f"image {h}x{w} is smaller than the {self.spec.min_size}px this network needs")
        last = max(self.spec.index(name) for name in wanted)
        bundle = FeatureBundle()
        x = self.preprocess(image)
        for layer in self.spec.layers[: last + 1]:
            if layer.kind == "pool":
                x = ad.max_pool2d(x, 2, 2)
            else:
                k, b = self.weights[layer.name]
                x = ad.relu(ad.conv2d(x, k, b, stride=1, padding=1))
            if layer.name in wanted:
                bundle.features[layer.name] = x
        return bundle

    def downsample_mask(self, mask, target_layer: str):
        """Average-pool a 1xCxHxW region map to the spatial size of ``target_layer``."""
        n_pools = self.spec.pools_before(target_layer)
        x = mask if isinstance(mask, Tensor) else Tensor(mask)
        for _ in range(n_pools):
            x = ad.avg_pool2d(x, 2, 2)
        return x

    def save(self, path) -> None:
        write_weight_file(
            path,
            {n: (k.data, b.data) for n, (k, b) in self.weights.items()},
            means=self.means,
            magic=LOSSNET_MAGIC,
            order=[name for name, _, _ in self.spec.conv_layers()],
        )


def load_weights(path, spec: LossNetSpec | None = None) -> LossNet:
    """Load a loss network from an ``RSLW`` container; ``spec`` defaults to VGG-16."""
    spec = spec or vgg16_spec()
    means, records = read_weight_file(path, magic=LOSSNET_MAGIC)
    expected = {name for name, _, _ in spec.conv_layers()}
    for name, _, _ in spec.conv_layers():
        if name not in records:
            raise WeightFileError(f"weight file {path} is missing layer {name!r}")
    extra = set(records) - expected
    if extra:
        raise WeightFileError(f"weight file {path} has unexpected layers {sorted(extra)}")
    weights = {}
    for name, _, _ in spec.conv_layers():
        k, b = records[name]
        weights[name] = (k, b)
    return LossNet(spec, weights, means)


def write_weight_file(path, records: dict[str, tuple[np.ndarray, np.ndarray]], means=(0.0, 0.0, 0.0),
                      magic: bytes = LOSSNET_MAGIC, order=None) -> None:
    """Write records as: magic, u32 version, 3 f32 means, then per record
    (u32 name length, name, 4 x u32 shape, kernel f32, bias f32), then CRC32."""
    buf = bytearray()
    buf += magic
    buf += struct.pack("<I", FORMAT_VERSION)
    buf += struct.pack("<3f", *means)
    for name in order or list(records):
        kernel, bias = records[name]
        kernel = np.asarray(kernel, dtype="<f4")
        bias = np.asarray(bias, dtype="<f4").reshape(-1)
        shape = kernel.shape + (1,) * (4 - kernel.ndim)
        if len(shape) != 4 or bias.size != shape[0]:
            raise WeightFileError(f"record {name!r}: kernel {kernel.shape} / bias {bias.shape} do not fit the format")
        encoded = name.encode("utf-8")
        buf += struct.pack("<I", len(encoded)) + encoded
        buf += struct.pack("<4I", *shape)
        buf += kernel.tobytes() + bias.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def read_weight_file(path, magic: bytes = LOSSNET_MAGIC):
    """Return (means, {name: (kernel, bias)}) from a weight container, verifying magic and checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise WeightFileError(f"{path}: file too short")
    if raw[:4] != magic:
        raise WeightFileError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise WeightFileError(f"{path}: checksum mismatch")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    means = struct.unpack_from("<3f", raw, 8)
    off = 20
    records: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    name = "<header>"
    try:
        while off < len(payload):
            (nlen,) = struct.unpack_from("<I", payload, off)
            off += 4
            name = payload[off : off + nlen].decode("utf-8")
            off += nlen
            shape = struct.unpack_from("<4I", payload, off)
            off += 16
            count = int(np.prod(shape))
            kernel = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(shape)
            off += 4 * count
            bias = np.frombuffer(payload, dtype="<f4", count=shape[0], offset=off)
            off += 4 * shape[0]
            records[name] = (kernel.astype(np.float32), bias.astype(np.float32))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise WeightFileError(f"{path}: truncated or malformed record {name!r}: {exc}") from None
    return means, records
