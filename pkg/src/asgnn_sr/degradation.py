"""LR/HR pair synthesis: bicubic resampling, 7-tap Gaussian blur, Gaussian noise, PGM I/O."""
from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

CUBIC_A = -0.5


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical draws on every platform for a given seed."""
    return np.random.Generator(np.random.Philox(seed))


# ----------------------------------------------------------------- bicubic

def cubic_kernel(t: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def cubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) resampling matrix with half-pixel centres and clamped borders."""
    if n_out < 1 or n_in < 1:
        raise ConfigurationError(f"bicubic: sizes must be positive, got {n_in} -> {n_out}")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    m = np.zeros((n_out, n_in))
    for offset in range(-1, 3):
        idx = base + offset
        wts = cubic_kernel(src - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    return m


def bicubic_resample(img: np.ndarray, out_h: int, out_w: int, clamp: bool = True) -> np.ndarray:
    """Catmull-Rom resize of the last two axes; result clamped to [0, 1] by default."""
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"bicubic: output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[-2:]
    out = cubic_matrix(h, out_h) @ np.asarray(img, dtype=np.float64) @ cubic_matrix(w, out_w).T
    return np.clip(out, 0.0, 1.0) if clamp else out


# ----------------------------------------------------------------- blur / noise

def gaussian_taps(kernel_size: int = 7, sigma: float = 1.0) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigurationError(f"gaussian kernel size must be odd and positive, got {kernel_size}")
    if sigma <= 0:
        raise ConfigurationError(f"gaussian sigma must be positive, got {sigma}")
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    taps = np.exp(-(x * x) / (2 * sigma * sigma))
    return taps / taps.sum()


def _correlate_axis(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = len(taps) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="symmetric")
    n = img.shape[axis]
    out = np.zeros_like(img)
    for k, t in enumerate(taps):
        out += t * np.take(padded, np.arange(k, k + n), axis=axis)
    return out


def gaussian_blur(img: np.ndarray, kernel_size: int = 7, sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur of the last two axes, mirror padding (edge sample repeated)."""
    taps = gaussian_taps(kernel_size, sigma)
    img = np.asarray(img, dtype=np.float64)
    if min(img.shape[-2:]) < kernel_size // 2:
        raise ConfigurationError(f"gaussian blur: image {img.shape[-2:]} smaller than kernel radius")
    return _correlate_axis(_correlate_axis(img, taps, img.ndim - 2), taps, img.ndim - 1)


def add_noise(img: np.ndarray, std: float = 0.01, seed: int = 0) -> np.ndarray:
    if std < 0:
        raise ConfigurationError(f"noise std must be non-negative, got {std}")
    img = np.asarray(img, dtype=np.float64)
    if std == 0:
        return img.copy()
    return np.clip(img + std * rng_for(seed).standard_normal(img.shape), 0.0, 1.0)


# ----------------------------------------------------------------- pipeline

@dataclass
class DegradationConfig:
    scale: int = 2
    blur_kernel_size: int = 7
    blur_sigma: float = 1.0
    noise_std: float = 0.01
    blur_first: bool = False


@dataclass
class ImagePair:
    hr: np.ndarray
    lr: np.ndarray
    meta: dict = field(default_factory=dict)


def degrade(hr: np.ndarray, scale: int, seed: int, config: DegradationConfig | None = None) -> ImagePair:
    """Bicubic downsample, then blur, then noise (blur first when configured)."""
    cfg = config or DegradationConfig(scale=scale)
    if scale < 1:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    hr = np.asarray(hr, dtype=np.float64)
    h, w = (hr.shape[0] // scale) * scale, (hr.shape[1] // scale) * scale
    hr = hr[:h, :w]
    if cfg.blur_first:
        lr = bicubic_resample(gaussian_blur(hr, cfg.blur_kernel_size, cfg.blur_sigma), h // scale, w // scale)
    else:
        lr = gaussian_blur(bicubic_resample(hr, h // scale, w // scale), cfg.blur_kernel_size, cfg.blur_sigma)
    lr = np.clip(add_noise(lr, cfg.noise_std, seed), 0.0, 1.0)
    meta = dict(asdict(cfg), scale=scale, seed=seed)
    return ImagePair(hr=hr, lr=lr, meta=meta)


# ----------------------------------------------------------------- PGM

def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"PGM header truncated at byte {start}")
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P5":
        raise FormatError(f"unsupported magic {buf[:2]!r} at byte 0 (expected b'P5')")
    pos = 2
    fields = []
    for _ in range(3):
        tok_start = pos
        tok, pos = _read_token(buf, pos)
        if not tok.isdigit():
            raise FormatError(f"malformed PGM header field {tok!r} near byte {tok_start}")
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1 or not (1 <= maxval <= 65535):
        raise FormatError(f"invalid PGM dimensions/maxval ({width}, {height}, {maxval}) before byte {pos}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError(f"missing whitespace after PGM header at byte {pos}")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos < need:
        raise FormatError(f"PGM payload truncated at byte {len(buf)}: need {need} bytes from byte {pos}")
    data = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())


def encode_pgm(img: np.ndarray, maxval: int = 255) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ConfigurationError(f"PGM images are 2-D, got shape {img.shape}")
    if not (1 <= maxval <= 65535):
        raise ConfigurationError(f"maxval must be in [1, 65535], got {maxval}")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    return header + q.astype(dtype).tobytes()


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_image(path, img: np.ndarray, maxval: int = 255) -> None:
    atomic_write_bytes(path, encode_pgm(img, maxval))


# ----------------------------------------------------------------- manifests

@dataclass
class DatasetManifest:
    entries: list[tuple[str, str, int]]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    def dumps(self) -> str:
        lines = [f"# split={self.split}"]
        lines += [f"{hr}\t{lr}\t{seed}" for hr, lr, seed in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        atomic_write_bytes(path, self.dumps().encode("utf-8"))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        split, entries = "train", []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("split="):
                    split = line[1:].strip()[len("split="):]
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            entries.append((parts[0], parts[1], int(parts[2])))
        return cls(entries=entries, split=split)
