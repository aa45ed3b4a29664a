"""End-to-end super-resolution network: shallow conv, FEM stack, aggregation, reconstruction."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .blocks import ConvParams, DfcmParams, FemParams, McoParams, MscParams, fem_forward
from .degradation import atomic_write_bytes, cubic_matrix, rng_for
from .errors import ConfigMismatchError, ConfigurationError, FormatError, IntegrityError
from .graph import AsgnnParams
from .tensor import Tensor

MAGIC = b"ASGNNSR\x00"
FORMAT_VERSION = 1


@dataclass
class NetworkConfig:
    scale: int = 2
    in_channels: int = 1
    width: int = 32
    fem_count: int = 3
    dfcm_per_fem: int = 3
    mco_count: int = 1
    msc_count: int = 1
    alpha: float = 0.75
    patch: int = 8
    use_bicubic_skip: bool = True
    use_asgnn: bool = True
    lsh_bits: int = 4

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scale not in (2, 4):
            raise ConfigurationError(f"scale must be 2 or 4, got {self.scale}")
        if self.width < 4 or self.width % 4:
            raise ConfigurationError(f"width must be a positive multiple of 4, got {self.width}")
        if self.fem_count < 1 or self.dfcm_per_fem < 1:
            raise ConfigurationError("fem_count and dfcm_per_fem must be at least 1")
        if self.mco_count < 0 or self.msc_count < 0:
            raise ConfigurationError("mco_count and msc_count must be non-negative")
        if self.in_channels < 1 or self.patch < 1 or self.lsh_bits < 1:
            raise ConfigurationError("in_channels, patch and lsh_bits must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must lie in (0, 1], got {self.alpha}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown network config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    config: NetworkConfig
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def count(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.buffers.items()})


# ----------------------------------------------------------------- layout

def _conv(name, cout, cin, k):
    return [(f"{name}.weight", (cout, cin, k, k)), (f"{name}.bias", (cout,))]


def param_layout(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Trainable parameter names and shapes in declaration order."""
    c, s, cin = config.width, config.scale, config.in_channels
    d = config.dfcm_per_fem
    out = _conv("shallow", c, cin, 3)
    for f in range(config.fem_count):
        if f > 0:
            out += _conv(f"trans{f}.conv1", c, c, 3) + _conv(f"trans{f}.conv2", c, c, 3)
        for j in range(d):
            pre = f"fem{f}.dfcm{j}"
            for m in range(config.mco_count):
                q = f"{pre}.mco{m}"
                out += (_conv(f"{q}.adjust", c, c, 1) + _conv(f"{q}.branch3", c, c, 3)
                        + _conv(f"{q}.branch5", c, c, 5) + _conv(f"{q}.fuse", c, c, 3))
            for m in range(config.msc_count):
                q = f"{pre}.msc{m}"
                out += _conv(f"{q}.dconv", c, 1, 3) + _conv(f"{q}.fuse", c, c, 3)
            if config.use_asgnn:
                out.append((f"{pre}.asgnn.w_g", (c, c)))
        out += _conv(f"fem{f}.fuse_main", c, (d + 1) * c, 1)
        if config.use_asgnn:
            out += _conv(f"fem{f}.fuse_att", c, d * c, 1)
    if config.use_asgnn:
        out += _conv("agg.att", c, c, 1)
    out += _conv("agg.tail1", c, c, 3) + _conv("agg.tail2", c, c, 3)
    out += _conv("agg.fuse", c, (config.fem_count + 1) * c, 1)
    out += _conv("recon.up", s * s * cin, c, 3) + _conv("recon.tail", cin, cin, 3)
    return out


def buffer_layout(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    if not config.use_asgnn:
        return []
    return [(f"fem{f}.dfcm{j}.asgnn.planes", (config.lsh_bits, config.width))
            for f in range(config.fem_count) for j in range(config.dfcm_per_fem)]


def param_init(config: NetworkConfig, seed: int = 0) -> ModelParams:
    """Uniform(+-sqrt(1/fan_in)) weights, zero biases, zero final tail conv."""
    rng = rng_for(seed)
    weights = {}
    for name, shape in param_layout(config):
        if name.endswith(".bias") or name.startswith("recon.tail"):
            weights[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        bound = np.sqrt(1.0 / fan_in)
        weights[name] = rng.uniform(-bound, bound, size=shape)
    buffers = {}
    for name, shape in buffer_layout(config):
        planes = rng.standard_normal(shape)
        buffers[name] = planes / np.linalg.norm(planes, axis=1, keepdims=True)
    return ModelParams(config, weights, buffers)


def _assemble(t: dict[str, Tensor], buffers: dict[str, np.ndarray], config: NetworkConfig):
    def conv(name):
        return ConvParams(t[f"{name}.weight"], t[f"{name}.bias"])

    fems = []
    for f in range(config.fem_count):
        dfcms = []
        for j in range(config.dfcm_per_fem):
            pre = f"fem{f}.dfcm{j}"
            mcos = [McoParams(conv(f"{pre}.mco{m}.adjust"), conv(f"{pre}.mco{m}.branch3"),
                              conv(f"{pre}.mco{m}.branch5"), conv(f"{pre}.mco{m}.fuse"))
                    for m in range(config.mco_count)]
            mscs = [MscParams(conv(f"{pre}.msc{m}.dconv"), conv(f"{pre}.msc{m}.fuse"))
                    for m in range(config.msc_count)]
            asgnn = None
            if config.use_asgnn:
                asgnn = AsgnnParams(w_g=t[f"{pre}.asgnn.w_g"], lsh_planes=buffers[f"{pre}.asgnn.planes"])
            dfcms.append(DfcmParams(mcos, mscs, asgnn))
        fuse_att = conv(f"fem{f}.fuse_att") if config.use_asgnn else None
        fems.append(FemParams(dfcms, conv(f"fem{f}.fuse_main"), fuse_att))
    return fems, conv


def as_tensors(params: ModelParams, requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.weights.items()}


def bicubic_upsample(x: Tensor, scale: int) -> Tensor:
    h, w = x.shape[-2:]
    return T.separable_resample(x, cubic_matrix(h, scale * h), cubic_matrix(w, scale * w), 0.0, 1.0)


def check_input(i_lr: Tensor, config: NetworkConfig) -> None:
    if i_lr.ndim != 4:
        raise ConfigurationError(f"input must be (b, c, h, w), got shape {i_lr.shape}")
    if i_lr.shape[1] != config.in_channels:
        raise ConfigurationError(f"input has {i_lr.shape[1]} channels, network expects {config.in_channels}")
    h, w = i_lr.shape[-2:]
    if config.use_asgnn and (h < config.patch or w < config.patch):
        raise ConfigurationError(f"input {h}x{w} smaller than patch size {config.patch}")


def forward(i_lr, params: ModelParams, tensors: dict[str, Tensor] | None = None) -> Tensor:
    """Super-resolve a (b, in_ch, H, W) batch to (b, in_ch, s*H, s*W).

    Pass ``tensors`` (from :func:`as_tensors`) to get gradients on the weights.
    """
    config = params.config
    x = T.as_tensor(i_lr)
    check_input(x, config)
    t = tensors if tensors is not None else as_tensors(params)
    fems, conv = _assemble(t, params.buffers, config)

    feat = conv("shallow")(x)
    ys, y_atts = [], []
    for f, fem in enumerate(fems):
        if f > 0:
            feat = conv(f"trans{f}.conv2")(T.relu(conv(f"trans{f}.conv1")(feat)))
        y, y_att = fem_forward(feat, fem, config.patch, config.alpha)
        ys.append(y)
        if y_att is not None:
            y_atts.append(y_att)
        feat = y

    tail = conv("agg.tail2")(T.relu(conv("agg.tail1")(ys[-1])))
    i_de = conv("agg.fuse")(T.concat_channels(ys + [tail]))
    if y_atts:
        total = y_atts[0]
        for y_att in y_atts[1:]:
            total = T.add(total, y_att)
        i_de = T.add(conv("agg.att")(total), i_de)

    up = T.pixel_shuffle(conv("recon.up")(i_de), config.scale)
    out = conv("recon.tail")(up)
    if config.use_bicubic_skip:
        out = T.add(out, bicubic_upsample(x, config.scale))
    return out


# ----------------------------------------------------------------- serialization

def dumps_params(params: ModelParams) -> bytes:
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg)), cfg]
    items = [(0, k, v) for k, v in params.weights.items()] + [(1, k, v) for k, v in params.buffers.items()]
    parts.append(struct.pack("<I", len(items)))
    for kind, name, arr in items:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<HBB", len(raw), kind, arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_params(path, params: ModelParams) -> None:
    atomic_write_bytes(path, dumps_params(params))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IntegrityError(f"parameter file truncated at byte {len(self.buf)} (needed {n} bytes at {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads_params(buf: bytes, config: NetworkConfig | None = None) -> ModelParams:
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic {buf[:len(MAGIC)]!r}")
    r = _Reader(buf)
    r.take(len(MAGIC))
    version, cfg_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    try:
        stored = NetworkConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable config block: {exc}") from exc
    if config is not None and stored != config:
        diff = {k: (v, getattr(config, k)) for k, v in stored.to_dict().items() if getattr(config, k) != v}
        raise ConfigMismatchError(f"file config differs from requested (file, requested): {diff}")
    (count,) = r.unpack("<I")
    weights, buffers = {}, {}
    for _ in range(count):
        name_len, kind, ndim = r.unpack("<HBB")
        name = r.take(name_len).decode("utf-8")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        (buffers if kind else weights)[name] = arr
    if r.pos != len(buf):
        raise IntegrityError(f"{len(buf) - r.pos} trailing bytes after parameter blobs")
    expected = [n for n, _ in param_layout(stored)]
    if list(weights) != expected:
        raise IntegrityError("parameter names do not match the stored configuration")
    for name, shape in param_layout(stored):
        if weights[name].shape != shape:
            raise IntegrityError(f"{name}: shape {weights[name].shape}, expected {shape}")
    return ModelParams(stored, weights, buffers)


def load_params(path, config: NetworkConfig | None = None) -> ModelParams:
    return loads_params(Path(path).read_bytes(), config)
