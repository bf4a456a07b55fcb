"""Two-stage TDNN model: structure, construction, and file format.

The model is a phone network applied to spliced feature frames, a max
pool over its outputs, and a small word network over the pooled block.
The phone network ends in a linear layer; a softmax over it is used only
while pretraining phone targets.  Files use the TDNNKWS1 container: a
magic tag, a text header describing shapes and the frontend, then raw
float32 little-endian weights.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (
    BadMagicError,
    ConfigError,
    DimensionMismatchError,
    FormatVersionError,
    ModelFormatError,
    TruncatedPayloadError,
)
from .features import FeatureNormalizer, FrontendConfig

logger = logging.getLogger(__name__)

MAGIC = b"TDNNKWS1"
FORMAT_VERSION = 1
ACTIVATIONS = ("relu", "linear", "softmax")

FILLER_LABEL = "_filler_"


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax computed in float64."""
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class DenseLayer:
    """Fully connected layer: y = act(x @ weights + bias).

    weights has shape (fan_in, fan_out); float32 storage.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        if weights.ndim != 2:
            raise ConfigError(f"layer weights must be 2-D, got shape {weights.shape}")
        if bias.shape != (weights.shape[1],):
            raise ConfigError(
                f"bias shape {bias.shape} does not match fan_out {weights.shape[1]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        self.weights = weights
        self.bias = bias

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]

    @property
    def weight_count(self) -> int:
        """Multiplications per evaluation; bias adds are not counted."""
        return self.fan_in * self.fan_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate one input vector; float32 in, float32 out."""
        if self.activation == "softmax":
            pre = kernels.dense_forward(x, self.weights, self.bias, False)
            return softmax(pre).astype(np.float32)
        return kernels.dense_forward(x, self.weights, self.bias, self.activation == "relu")

    def clone(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int,
                activation: str) -> DenseLayer:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)
    bias = np.zeros(fan_out, dtype=np.float32)
    return DenseLayer(weights, bias, activation)


def _validate_name(name: str) -> None:
    if not name:
        raise ConfigError("keyword names must be non-empty")
    if name == FILLER_LABEL:
        raise ConfigError(f"keyword name {name!r} is reserved for the filler class")
    ok = all(ch.isalnum() or ch in "_-" for ch in name)
    if not ok:
        raise ConfigError(f"keyword name {name!r} may use only letters, digits, _ and -")


@dataclass
class TdnnModel:
    """Complete keyword spotter: frontend config, normalizer, and both networks.

    Word-network output slot k is keywords[k]; the last slot is the
    filler class.
    """

    phone_layers: list
    word_layers: list
    keywords: tuple
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    normalizer: FeatureNormalizer = None
    context_past: int = 5
    context_future: int = 5
    pool_size: int = 5
    pool_stride: int = 4
    pool_count: int = 17

    def __post_init__(self):
        self.keywords = tuple(self.keywords)
        if not self.keywords:
            raise ConfigError("a model needs at least one keyword")
        for name in self.keywords:
            _validate_name(name)
        if len(set(self.keywords)) != len(self.keywords):
            raise ConfigError("keyword names must be unique")
        if self.normalizer is None:
            self.normalizer = FeatureNormalizer.identity(self.frontend.num_filters)
        if min(self.context_past, self.context_future) < 0:
            raise ConfigError("context sizes must be non-negative")
        if self.pool_size < 1 or self.pool_stride < 1 or self.pool_count < 1:
            raise ConfigError("pool_size, pool_stride, pool_count must be >= 1")
        if not self.phone_layers or not self.word_layers:
            raise ConfigError("both networks need at least one layer")
        self._check_chain()

    def _check_chain(self):
        if self.normalizer.dim != self.frontend.num_filters:
            raise DimensionMismatchError(
                f"normalizer covers {self.normalizer.dim} dims but the frontend "
                f"produces {self.frontend.num_filters}"
            )
        expect = self.splice_dim
        for i, layer in enumerate(self.phone_layers):
            if layer.fan_in != expect:
                raise DimensionMismatchError(
                    f"phone layer {i} expects fan_in {layer.fan_in}, chain gives {expect}"
                )
            expect = layer.fan_out
        expect = self.pool_count * self.num_phones
        for i, layer in enumerate(self.word_layers):
            if layer.fan_in != expect:
                raise DimensionMismatchError(
                    f"word layer {i} expects fan_in {layer.fan_in}, chain gives {expect}"
                )
            expect = layer.fan_out
        if expect != len(self.keywords) + 1:
            raise DimensionMismatchError(
                f"word network emits {expect} classes but the model names "
                f"{len(self.keywords)} keywords plus filler"
            )

    @property
    def num_mel(self) -> int:
        return self.frontend.num_filters

    @property
    def context_frames(self) -> int:
        return self.context_past + 1 + self.context_future

    @property
    def splice_dim(self) -> int:
        return self.context_frames * self.num_mel

    @property
    def num_phones(self) -> int:
        return self.phone_layers[-1].fan_out

    @property
    def num_outputs(self) -> int:
        return self.word_layers[-1].fan_out

    @property
    def word_input_dim(self) -> int:
        return self.pool_count * self.num_phones

    @property
    def output_names(self) -> tuple:
        """Class name per word-network output slot: keywords, then filler."""
        return self.keywords + (FILLER_LABEL,)

    def layer_weight_counts(self) -> list:
        """Multiplications per layer per evaluation, phone layers then word layers."""
        layers = list(self.phone_layers) + list(self.word_layers)
        return [layer.weight_count for layer in layers]

    def total_weights(self) -> int:
        return sum(self.layer_weight_counts())

    def param_count(self) -> int:
        """Sum of fan_in x fan_out over all layers; biases reported separately."""
        return self.total_weights()

    def bias_count(self) -> int:
        layers = list(self.phone_layers) + list(self.word_layers)
        return sum(layer.fan_out for layer in layers)

    def summary(self) -> str:
        lines = []
        names = [f"phone-{i + 1}" for i in range(len(self.phone_layers))]
        names += [f"word-{i + 1}" for i in range(len(self.word_layers))]
        layers = list(self.phone_layers) + list(self.word_layers)
        for name, layer in zip(names, layers):
            lines.append(
                f"{name:<8} {layer.fan_in:>5} -> {layer.fan_out:<5} "
                f"{layer.activation:<8} weights {layer.weight_count}"
            )
        lines.append(f"total weights {self.total_weights()}  "
                     f"biases {self.bias_count()}")
        lines.append(f"keywords: {', '.join(self.keywords)}")
        return "\n".join(lines)

    def clone(self) -> "TdnnModel":
        return replace(
            self,
            phone_layers=[layer.clone() for layer in self.phone_layers],
            word_layers=[layer.clone() for layer in self.word_layers],
        )


def build_model(keywords, seed: int = 0, frontend: FrontendConfig | None = None,
                normalizer: FeatureNormalizer | None = None,
                phone_hidden=(128, 128, 128), num_phones: int = 132,
                word_hidden=(64,), context_past: int = 5, context_future: int = 5,
                pool_size: int = 5, pool_stride: int = 4,
                pool_count: int = 17) -> TdnnModel:
    """Build a randomly initialized model with the given architecture."""
    frontend = frontend or FrontendConfig()
    rng = np.random.default_rng(seed)
    splice = (context_past + 1 + context_future) * frontend.num_filters

    phone_layers = []
    fan_in = splice
    for width in phone_hidden:
        phone_layers.append(init_layer(rng, fan_in, width, "relu"))
        fan_in = width
    phone_layers.append(init_layer(rng, fan_in, num_phones, "linear"))

    word_layers = []
    fan_in = pool_count * num_phones
    for width in word_hidden:
        word_layers.append(init_layer(rng, fan_in, width, "relu"))
        fan_in = width
    word_layers.append(init_layer(rng, fan_in, len(tuple(keywords)) + 1, "softmax"))

    return TdnnModel(
        phone_layers=phone_layers,
        word_layers=word_layers,
        keywords=tuple(keywords),
        frontend=frontend,
        normalizer=normalizer,
        context_past=context_past,
        context_future=context_future,
        pool_size=pool_size,
        pool_stride=pool_stride,
        pool_count=pool_count,
    )


def build_default(keywords, seed: int = 0,
                  normalizer: FeatureNormalizer | None = None) -> TdnnModel:
    """The reference architecture: 451-128-128-128-132 phone network,
    pool 5 stride 4 over 17 windows, 2244-64-(K+1) word network.

    Accepts either a count of keywords (names are generated) or a
    sequence of keyword names.
    """
    if isinstance(keywords, int):
        if keywords < 1:
            raise ConfigError("a model needs at least one keyword")
        keywords = tuple(f"keyword{i + 1}" for i in range(keywords))
    return build_model(keywords, seed=seed, normalizer=normalizer)


def _float_list_text(values: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_float_list(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in text.split()], dtype=np.float64)


def save_model(model: TdnnModel, path) -> None:
    """Write the model in TDNNKWS1 format."""
    header_lines = [
        f"format.version={FORMAT_VERSION}",
        f"model.context_past={model.context_past}",
        f"model.context_future={model.context_future}",
        f"model.pool_size={model.pool_size}",
        f"model.pool_stride={model.pool_stride}",
        f"model.pool_count={model.pool_count}",
        f"model.keywords={','.join(model.keywords)}",
        f"model.phone_layers={len(model.phone_layers)}",
        f"model.word_layers={len(model.word_layers)}",
    ]
    for prefix, layers in (("phone", model.phone_layers), ("word", model.word_layers)):
        for i, layer in enumerate(layers):
            header_lines.append(f"{prefix}.{i}.in={layer.fan_in}")
            header_lines.append(f"{prefix}.{i}.out={layer.fan_out}")
            header_lines.append(f"{prefix}.{i}.act={layer.activation}")
    header_lines.append(model.frontend.to_text())
    header_lines.append(f"norm.mean={_float_list_text(model.normalizer.mean)}")
    header_lines.append(f"norm.inv_std={_float_list_text(model.normalizer.inv_std)}")
    header = ("\n".join(header_lines) + "\n").encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(len(header).to_bytes(4, "little"))
    buf.write(header)
    for layer in list(model.phone_layers) + list(model.word_layers):
        buf.write(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _header_int(pairs: dict, key: str) -> int:
    if key not in pairs:
        raise ModelFormatError(f"model header is missing {key}")
    try:
        return int(pairs[key])
    except ValueError:
        raise ModelFormatError(f"model header field {key} is not an integer") from None


def load_model(path) -> TdnnModel:
    """Read a TDNNKWS1 model file.

    Raises BadMagicError, FormatVersionError, TruncatedPayloadError, or
    DimensionMismatchError for the corresponding defects.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path} is not a TDNNKWS1 model file")
    header_len = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 4], "little")
    offset = len(MAGIC) + 4
    if len(blob) < offset + header_len:
        raise TruncatedPayloadError(f"{path}: header is cut short")
    try:
        header = blob[offset : offset + header_len].decode("utf-8")
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: header is not valid UTF-8") from None
    offset += header_len

    pairs = {}
    for line in header.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise ModelFormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        pairs[key] = value

    version = _header_int(pairs, "format.version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )

    if "model.keywords" not in pairs:
        raise ModelFormatError(f"{path}: model header is missing model.keywords")
    keywords = tuple(k for k in pairs["model.keywords"].split(",") if k)

    layer_specs = []
    for prefix, count_key in (("phone", "model.phone_layers"),
                              ("word", "model.word_layers")):
        count = _header_int(pairs, count_key)
        specs = []
        for i in range(count):
            fan_in = _header_int(pairs, f"{prefix}.{i}.in")
            fan_out = _header_int(pairs, f"{prefix}.{i}.out")
            act = pairs.get(f"{prefix}.{i}.act")
            if act not in ACTIVATIONS:
                raise ModelFormatError(f"{path}: bad activation {act!r} for {prefix}.{i}")
            specs.append((fan_in, fan_out, act))
        layer_specs.append(specs)
    phone_specs, word_specs = layer_specs

    frontend = FrontendConfig.from_text(pairs)
    if "norm.mean" not in pairs or "norm.inv_std" not in pairs:
        raise ModelFormatError(f"{path}: model header is missing normalizer statistics")
    normalizer = FeatureNormalizer(
        mean=_parse_float_list(pairs["norm.mean"]),
        inv_std=_parse_float_list(pairs["norm.inv_std"]),
    )

    layers = []
    for fan_in, fan_out, act in phone_specs + word_specs:
        need = (fan_in * fan_out + fan_out) * 4
        if len(blob) < offset + need:
            raise TruncatedPayloadError(f"{path}: weight payload is cut short")
        weights = np.frombuffer(
            blob, dtype="<f4", count=fan_in * fan_out, offset=offset
        ).reshape(fan_in, fan_out)
        offset += fan_in * fan_out * 4
        bias = np.frombuffer(blob, dtype="<f4", count=fan_out, offset=offset)
        offset += fan_out * 4
        layers.append(DenseLayer(weights.copy(), bias.copy(), act))
    if offset != len(blob):
        raise ModelFormatError(f"{path}: {len(blob) - offset} trailing bytes after payload")

    n_phone = len(phone_specs)
    try:
        return TdnnModel(
            phone_layers=layers[:n_phone],
            word_layers=layers[n_phone:],
            keywords=keywords,
            frontend=frontend,
            normalizer=normalizer,
            context_past=_header_int(pairs, "model.context_past"),
            context_future=_header_int(pairs, "model.context_future"),
            pool_size=_header_int(pairs, "model.pool_size"),
            pool_stride=_header_int(pairs, "model.pool_stride"),
            pool_count=_header_int(pairs, "model.pool_count"),
        )
    except ConfigError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None
