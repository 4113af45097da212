"""The dehazing model: semantic encoder, upsampling subnet, global estimation
with confidence-weighted pooling, and an AOD-style color module, plus the
no-semantics ablation baseline.

Encoder taps: block 4's last conv output (1/8 resolution, before that block's
pool) feeds the upsampling subnet; block 5's pooled output (1/32) feeds the
global estimation module.  The color module consumes the hazy image (3ch) +
semantic features (16ch) + broadcast global features (32ch) = 51 channels and
ends in the K-model head J = K*I + (1 - K); a direct-RGB head is available
behind the `head` config switch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import FormatError, ShapeError
from .optim import ParamSet
from .tensor import FLOAT, Tensor

SEMANTIC_CHANNELS = 16
GLOBAL_CHANNELS = 32

HZW_MAGIC = b"HZW1"

ENCODER_PRESETS = {
    "vgg16": {"blocks": ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512)), "trainable": False},
    "tiny": {"blocks": ((1, 8), (1, 16), (2, 24), (2, 32), (2, 32)), "trainable": True},
}


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    blocks: tuple[tuple[int, int], ...]
    trainable: bool

    def __post_init__(self):
        if len(self.blocks) != 5:
            raise ShapeError(f"encoder needs exactly 5 blocks, got {len(self.blocks)}")
        for count, channels in self.blocks:
            if count < 1 or channels < 1:
                raise ShapeError(f"bad encoder block spec {(count, channels)}")

    @classmethod
    def preset(cls, name: str, trainable: bool | None = None) -> "EncoderConfig":
        if name not in ENCODER_PRESETS:
            raise ShapeError(f"unknown encoder preset {name!r}")
        p = ENCODER_PRESETS[name]
        return cls(
            name=name,
            blocks=p["blocks"],
            trainable=p["trainable"] if trainable is None else trainable,
        )

    @property
    def block4_channels(self) -> int:
        return self.blocks[3][1]

    @property
    def block5_channels(self) -> int:
        return self.blocks[4][1]


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    head: str = "kmodel"  # "kmodel" | "direct"
    kind: str = "full"  # "full" | "baseline"

    def __post_init__(self):
        if self.head not in ("kmodel", "direct"):
            raise ShapeError(f"head must be kmodel|direct, got {self.head!r}")
        if self.kind not in ("full", "baseline"):
            raise ShapeError(f"kind must be full|baseline, got {self.kind!r}")

    def config_hash(self) -> str:
        import hashlib

        doc = {
            "encoder": {"name": self.encoder.name, "blocks": self.encoder.blocks,
                        "trainable": self.encoder.trainable},
            "head": self.head,
            "kind": self.kind,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True, default=list).encode()).hexdigest()[:16]

    def global_widths(self) -> tuple[int, int]:
        # 256/64 at VGG16 scale shrinks with the encoder for the tiny preset.
        return (256, 64) if self.encoder.name == "vgg16" else (32, 16)

    def upsample_widths(self) -> tuple[int, int, int]:
        c4 = self.encoder.block4_channels
        return (c4 // 2, c4 // 4, SEMANTIC_CHANNELS)


# Color module topology: (kernel, out_channels); inputs are concatenations of
# earlier layer outputs exactly as in AOD-Net.
_COLOR_KERNELS = (1, 3, 5, 7, 3)


def _color_widths(first: int) -> tuple[int, int, int, int, int]:
    return (first, 16, 8, 4, 3)


@dataclass
class ForwardTrace:
    semantic: Tensor  # N,16,H,W
    global_features: Tensor  # N,32,1,1
    confidence: Tensor  # N,1,h,w
    prediction: Tensor  # N,3,H,W (unclamped)


@dataclass
class ModelWeights:
    """Named-tensor bag; `normalization` holds (mean, std) per RGB channel for
    externally pretrained encoders."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    normalization: tuple[np.ndarray, np.ndarray] | None = None


# -- shape declarations and init -----------------------------------------------


def declared_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cout, cin, k):
        shapes[name + ".w"] = (cout, cin, k, k)
        shapes[name + ".b"] = (cout,)

    if config.kind == "full":
        cin = 3
        for bi, (count, channels) in enumerate(config.encoder.blocks, start=1):
            for ci in range(1, count + 1):
                conv(f"encoder.block{bi}.conv{ci}", channels, cin, 3)
                cin = channels
        c4 = config.encoder.block4_channels
        for si, width in enumerate(config.upsample_widths(), start=1):
            conv(f"upsample.stage{si}", width, c4, 3)
            c4 = width
        g1, g2 = config.global_widths()
        conv("global.conv1", g1, config.encoder.block5_channels, 5)
        conv("global.conv2", g2, g1, 5)
        conv("global.conv3", GLOBAL_CHANNELS + 1, g2, 1)
        color_in = 3 + SEMANTIC_CHANNELS + GLOBAL_CHANNELS
        widths = _color_widths(16)
    else:
        color_in = 6
        widths = _color_widths(24)

    f1, f2, f3, f4, f5 = widths
    ins = (color_in, f1, f1 + f2, f2 + f3, f1 + f2 + f3 + f4)
    for i, (k, cout, cin_i) in enumerate(zip(_COLOR_KERNELS, widths, ins), start=1):
        conv(f"color.conv{i}", cout, cin_i, k)
    return shapes


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Fan-in-scaled Gaussian conv weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence([0x1217, seed]))
    tensors: dict[str, np.ndarray] = {}
    for name, shape in declared_shapes(config).items():
        if name.endswith(".w"):
            cout, cin, kh, kw = shape
            std = np.sqrt(2.0 / (cin * kh * kw))
            tensors[name] = (rng.standard_normal(shape) * std).astype(FLOAT)
        else:
            tensors[name] = np.zeros(shape, dtype=FLOAT)
    return ModelWeights(tensors=tensors)


# -- forward passes ---------------------------------------------------------------


def _conv_block(x: Tensor, t: dict[str, Tensor], name: str, activate: bool = True) -> Tensor:
    out = ops.conv2d(x, t[name + ".w"], t[name + ".b"], padding="same")
    return ops.relu(out) if activate else out


def semantic_encode(x: Tensor, config: ModelConfig, t: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Run the 5-block encoder; returns (block-4 conv tap, block-5 pooled tap)."""
    n, c, h, w = x.shape
    if h % 32 or w % 32:
        raise ShapeError(f"encoder input H,W must be divisible by 32, got {h}x{w}")
    tap4 = None
    for bi, (count, _channels) in enumerate(config.encoder.blocks, start=1):
        for ci in range(1, count + 1):
            x = _conv_block(x, t, f"encoder.block{bi}.conv{ci}")
        if bi == 4:
            tap4 = x
        x = ops.maxpool2(x)
    return tap4, x


def upsample_subnet(block4: Tensor, t: dict[str, Tensor]) -> Tensor:
    x = block4
    for si in range(1, 4):
        x = _conv_block(x, t, f"upsample.stage{si}")
        x = ops.upsample2_bilinear(x)
    return x


def global_estimate(block5: Tensor, t: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Confidence-weighted pooling of 32 local features into a 1x1 global vector."""
    x = _conv_block(block5, t, "global.conv1")
    x = _conv_block(x, t, "global.conv2")
    x = _conv_block(x, t, "global.conv3", activate=False)
    local = _slice_channels(x, 0, GLOBAL_CHANNELS)
    logits = _slice_channels(x, GLOBAL_CHANNELS, GLOBAL_CHANNELS + 1)
    confidence = ops.softmax_spatial(logits)
    pooled = ops.weighted_global_pool(local, confidence)
    return pooled, confidence


def _slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    from .tensor import make_node

    data = x.data[:, start:stop]

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_node(np.ascontiguousarray(data), (x,), backward)


def color_module(
    hazy: Tensor, extra: list[Tensor], t: dict[str, Tensor], head: str
) -> Tensor:
    """AOD-Net topology over concat(hazy, extra features); widened filters."""
    x = ops.concat_channels([hazy] + extra)
    c1 = _conv_block(x, t, "color.conv1")
    c2 = _conv_block(c1, t, "color.conv2")
    c3 = _conv_block(ops.concat_channels([c1, c2]), t, "color.conv3")
    c4 = _conv_block(ops.concat_channels([c2, c3]), t, "color.conv4")
    cat = ops.concat_channels([c1, c2, c3, c4])
    if head == "kmodel":
        k = _conv_block(cat, t, "color.conv5")  # ReLU as in AOD-Net
        return k * hazy + (1.0 - k)
    return _conv_block(cat, t, "color.conv5", activate=False)


def full_forward(hazy: Tensor, config: ModelConfig, t: dict[str, Tensor]) -> ForwardTrace:
    n, c, h, w = hazy.shape
    if c != 3:
        raise ShapeError(f"expected 3-channel input, got {c}")
    enc_in = hazy
    norm = t.get("__norm__")
    if norm is not None:
        mean, std = norm
        enc_in = (hazy - Tensor(np.broadcast_to(mean, hazy.shape).copy())) * Tensor(
            np.broadcast_to(1.0 / std, hazy.shape).copy()
        )
    tap4, tap5 = semantic_encode(enc_in, config, t)
    semantic = upsample_subnet(tap4, t)
    pooled, confidence = global_estimate(tap5, t)
    broadcast = ops.broadcast_spatial(pooled, (h, w))
    prediction = color_module(hazy, [semantic, broadcast], t, config.head)
    return ForwardTrace(
        semantic=semantic,
        global_features=pooled,
        confidence=confidence,
        prediction=prediction,
    )


def baseline_forward(hazy: Tensor, illumination: np.ndarray, t: dict[str, Tensor], head: str) -> Tensor:
    """Color module alone on a 6-channel input: hazy + broadcast illumination."""
    n, c, h, w = hazy.shape
    a = np.asarray(illumination, dtype=FLOAT).reshape(n, 3)
    a_map = np.broadcast_to(a[:, :, None, None], (n, 3, h, w)).copy()
    return color_module(hazy, [Tensor(a_map)], t, head)


# -- runtime binding ----------------------------------------------------------------


class Model:
    """Binds a weight bag to Tensors; encoder tensors stay constant when frozen."""

    def __init__(self, config: ModelConfig, weights: ModelWeights):
        expected = declared_shapes(config)
        _check_tensor_bag(weights.tensors, expected)
        self.config = config
        self.params = ParamSet()
        self.tensors: dict[str, Tensor] = {}
        for name in expected:
            arr = np.array(weights.tensors[name], dtype=FLOAT, copy=True)
            frozen = name.startswith("encoder.") and not config.encoder.trainable
            if frozen:
                self.tensors[name] = Tensor(arr)
            else:
                self.tensors[name] = self.params.add(name, arr)
        if weights.normalization is not None:
            mean, std = weights.normalization
            self.tensors["__norm__"] = (
                np.asarray(mean, FLOAT).reshape(1, 3, 1, 1),
                np.asarray(std, FLOAT).reshape(1, 3, 1, 1),
            )
        self.normalization = weights.normalization

    def forward(self, hazy: Tensor) -> ForwardTrace:
        if self.config.kind != "full":
            raise ShapeError("use BaselineModel for the ablation baseline")
        return full_forward(hazy, self.config, self.tensors)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Numpy in/out inference; output clamped to [0,1]."""
        batch, single = _batch_nchw(images)
        trace = self.forward(Tensor(batch))
        out = np.clip(trace.prediction.data, 0.0, 1.0)
        return _unbatch_hwc(out, single)

    def export_weights(self) -> ModelWeights:
        return ModelWeights(
            tensors={
                name: t.data.copy() for name, t in self.tensors.items() if name != "__norm__"
            },
            normalization=self.normalization,
        )


class BaselineModel:
    def __init__(self, config: ModelConfig, weights: ModelWeights):
        if config.kind != "baseline":
            raise ShapeError("BaselineModel requires a baseline config")
        expected = declared_shapes(config)
        _check_tensor_bag(weights.tensors, expected)
        self.config = config
        self.params = ParamSet()
        self.tensors = {
            name: self.params.add(name, np.array(weights.tensors[name], dtype=FLOAT, copy=True))
            for name in expected
        }
        self.normalization = None

    def forward(self, hazy: Tensor, illumination: np.ndarray) -> Tensor:
        return baseline_forward(hazy, illumination, self.tensors, self.config.head)

    def predict(self, images: np.ndarray, illumination: np.ndarray) -> np.ndarray:
        batch, single = _batch_nchw(images)
        illum = np.asarray(illumination, dtype=FLOAT).reshape(batch.shape[0], 3)
        out = np.clip(self.forward(Tensor(batch), illum).data, 0.0, 1.0)
        return _unbatch_hwc(out, single)

    def export_weights(self) -> ModelWeights:
        return ModelWeights(tensors={name: t.data.copy() for name, t in self.tensors.items()})


def build_model(config: ModelConfig, weights: ModelWeights):
    return Model(config, weights) if config.kind == "full" else BaselineModel(config, weights)


def _check_tensor_bag(tensors: dict[str, np.ndarray], expected: dict[str, tuple[int, ...]]):
    for name, shape in expected.items():
        if name not in tensors:
            raise FormatError(f"weights missing tensor {name!r}")
        got = tuple(tensors[name].shape)
        if got != shape and _pad4(got) != _pad4(shape):
            raise FormatError(f"tensor {name!r} has shape {got}, expected {shape}")
    for name in tensors:
        if name not in expected:
            raise FormatError(f"weights contain unexpected tensor {name!r}")


def _batch_nchw(images: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(images, dtype=FLOAT)
    if arr.ndim == 3:
        return arr.transpose(2, 0, 1)[None], True
    if arr.ndim == 4:
        return arr.transpose(0, 3, 1, 2), False
    raise ShapeError(f"expected HxWx3 or NxHxWx3 images, got shape {arr.shape}")


def _unbatch_hwc(batch: np.ndarray, single: bool) -> np.ndarray:
    out = batch.transpose(0, 2, 3, 1)
    return out[0] if single else out


# -- HZW1 weights file ----------------------------------------------------------------


def _pad4(shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(shape) > 4:
        raise FormatError(f"cannot store rank-{len(shape)} tensor in HZW1")
    return tuple(shape) + (1,) * (4 - len(shape))


def named_arrays_to_bytes(
    arrays: dict[str, np.ndarray],
    normalization: tuple[np.ndarray, np.ndarray] | None = None,
) -> bytes:
    """Serialize a named-tensor bag in HZW1 layout (1-D shapes padded to rank 4)."""
    import io

    from .formats import HZT_MAGIC

    buf = io.BytesIO()
    buf.write(HZW_MAGIC)
    buf.write(struct.pack("<I", len(arrays)))
    if normalization is None:
        buf.write(b"\x00")
    else:
        mean, std = normalization
        buf.write(b"\x01")
        buf.write(np.asarray(list(mean) + list(std), dtype="<f4").tobytes())
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        a4 = np.ascontiguousarray(arr, dtype="<f4").reshape(_pad4(arr.shape))
        buf.write(HZT_MAGIC)
        buf.write(struct.pack("<5I", 4, *a4.shape))
        buf.write(a4.tobytes())
    return buf.getvalue()


def named_arrays_from_bytes(
    blob: bytes, pos: int = 0, origin: str = "<bytes>"
) -> tuple[dict[str, np.ndarray], tuple[np.ndarray, np.ndarray] | None, int]:
    """Parse one HZW1 block starting at `pos`; returns (arrays, normalization, end)."""
    from .formats import parse_hzt

    if blob[pos : pos + 4] != HZW_MAGIC:
        raise FormatError(f"{origin}: bad HZW1 magic {blob[pos : pos + 4]!r}")
    (count,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
    pos += 8
    normalization = None
    flag = blob[pos]
    pos += 1
    if flag == 1:
        vals = np.frombuffer(blob, dtype="<f4", offset=pos, count=6)
        normalization = (vals[:3].copy(), vals[3:].copy())
        pos += 24
    elif flag != 0:
        raise FormatError(f"{origin}: bad normalization flag {flag}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(blob) < pos + 2:
            raise FormatError(f"{origin}: truncated tensor table")
        (name_len,) = struct.unpack("<H", blob[pos : pos + 2])
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if len(blob) < pos + 24:
            raise FormatError(f"{origin}: truncated tensor {name!r}")
        rank, n, c, h, w = struct.unpack("<5I", blob[pos + 4 : pos + 24])
        size = 24 + 4 * n * c * h * w
        arrays[name] = parse_hzt(blob[pos : pos + size], f"{origin}:{name}")
        pos += size
    return arrays, normalization, pos


def save_weights(weights: ModelWeights, path):
    with open(path, "wb") as f:
        f.write(named_arrays_to_bytes(weights.tensors, weights.normalization))


def load_weights(path, config: ModelConfig) -> ModelWeights:
    """Read an HZW1 file and validate names/shapes against the config."""
    with open(path, "rb") as f:
        blob = f.read()
    tensors, normalization, pos = named_arrays_from_bytes(blob, 0, str(path))
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes")
    expected = declared_shapes(config)
    _check_tensor_bag(tensors, expected)
    shaped = {name: tensors[name].reshape(expected[name]) for name in expected}
    return ModelWeights(tensors=shaped, normalization=normalization)
