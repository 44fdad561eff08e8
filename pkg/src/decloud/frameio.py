"""File formats: frame directories, mask images, a raw tensor container and
flat key=value config files.

Frame directories hold zero-padded numeric image names; lexicographic order
defines time order.  The raw container is for lossless interchange:

    bytes 0-3   magic "TCRM"
    byte  4     version (1)
    bytes 5-20  rows, cols, channels, time as uint32 little-endian
    byte  21    element type (1 = float32, 2 = float64)
    payload     values, row index fastest, then col, channel, time

Float64 payloads round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .tensor_ops import ImageSequence, ObservationMask

__all__ = [
    "FrameDirSpec",
    "load_frames",
    "save_frames",
    "load_raw",
    "save_raw",
    "load_mask",
    "save_mask",
    "read_config",
    "RAW_SUFFIX",
]

RAW_SUFFIX = ".tcrm"

_MAGIC = b"TCRM"
_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}
_HEADER = struct.Struct("<4sB4IB")


@dataclass(frozen=True)
class FrameDirSpec:
    """Directory of frames: glob pattern, channel count and bit depth."""

    path: str | Path
    pattern: str = "*.png"
    channels: int = 3
    bit_depth: int = 8

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")

    @property
    def max_code(self) -> int:
        return (1 << self.bit_depth) - 1

    @property
    def dtype(self):
        return np.uint8 if self.bit_depth == 8 else np.uint16


def _frame_files(spec: FrameDirSpec) -> list[Path]:
    root = Path(spec.path)
    if not root.is_dir():
        raise FileNotFoundError(f"frame directory not found: {root}")
    files = sorted(root.glob(spec.pattern))
    if not files:
        raise FileNotFoundError(f"no frames matching {spec.pattern!r} in {root}")
    return files


def load_frames(spec: FrameDirSpec) -> ImageSequence:
    """Read a frame directory into a [0, 1] sequence (time = sorted names)."""
    frames = []
    shape = None
    for path in _frame_files(spec):
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise OSError(f"unreadable image: {path}")
        if img.ndim == 2:
            img = img[:, :, None]
        if img.shape[2] != spec.channels:
            raise ValueError(
                f"{path}: {img.shape[2]} channels, expected {spec.channels}"
            )
        if spec.channels == 3:
            img = img[:, :, ::-1]  # BGR -> RGB
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(f"{path}: frame shape {img.shape} != {shape}")
        frames.append(img.astype(np.float64) / spec.max_code)
    data = np.stack(frames, axis=-1)  # (rows, cols, channels, time)
    return ImageSequence(data)


def save_frames(seq: ImageSequence, spec: FrameDirSpec) -> list[Path]:
    """Quantize to the spec'd bit depth (values clamped to [0, 1]) and write
    one zero-padded numeric file per time step."""
    root = Path(spec.path)
    root.mkdir(parents=True, exist_ok=True)
    if seq.channels != spec.channels:
        raise ValueError(f"sequence has {seq.channels} channels, spec says {spec.channels}")
    ext = spec.pattern.rsplit(".", 1)[-1]
    codes = np.rint(np.clip(seq.data, 0.0, 1.0) * spec.max_code).astype(spec.dtype)
    written = []
    for l in range(seq.times):
        img = codes[:, :, :, l]
        if spec.channels == 3:
            img = img[:, :, ::-1]  # RGB -> BGR
        else:
            img = img[:, :, 0]
        path = root / f"{l:05d}.{ext}"
        if not cv2.imwrite(str(path), img):
            raise OSError(f"failed to write {path}")
        written.append(path)
    return written


def save_raw(seq: ImageSequence, path: str | Path, dtype: str = "f8") -> None:
    """Write the raw tensor container (f8 is lossless for float64 data)."""
    code = {"f4": 1, "f8": 2}.get(dtype)
    if code is None:
        raise ValueError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    m, n, c, t = seq.dims
    header = _HEADER.pack(_MAGIC, _VERSION, m, n, c, t, code)
    payload = np.ascontiguousarray(
        seq.data.ravel(order="F"), dtype=_DTYPES[code]
    ).tobytes()
    Path(path).write_bytes(header + payload)


def load_raw(path: str | Path) -> ImageSequence:
    """Read the raw tensor container, validating magic/version/length."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, m, n, c, t, code = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unknown version {version}")
    if code not in _DTYPES:
        raise ValueError(f"{path}: unknown element type code {code}")
    dtype = _DTYPES[code]
    expected = _HEADER.size + m * n * c * t * dtype.itemsize
    if len(blob) != expected:
        raise ValueError(f"{path}: payload is {len(blob) - _HEADER.size} bytes, "
                         f"expected {expected - _HEADER.size}")
    flat = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size)
    data = flat.reshape((m, n, c, t), order="F").astype(np.float64)
    return ImageSequence(data)


def save_mask(mask: ObservationMask, path: str | Path) -> list[Path]:
    """One 8-bit image per frame; 255 = observed, 0 = occluded."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for l in range(mask.observed.shape[2]):
        img = np.where(mask.observed[:, :, l], 255, 0).astype(np.uint8)
        out = root / f"{l:05d}.png"
        if not cv2.imwrite(str(out), img):
            raise OSError(f"failed to write {out}")
        written.append(out)
    return written


def load_mask(path: str | Path, pattern: str = "*.png") -> ObservationMask:
    """Nonzero pixels are observed."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"mask directory not found: {root}")
    files = sorted(root.glob(pattern))
    if not files:
        raise FileNotFoundError(f"no mask frames matching {pattern!r} in {root}")
    planes = []
    shape = None
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_GRAYSCALE)
        if img is None:
            raise OSError(f"unreadable mask image: {f}")
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(f"{f}: mask shape {img.shape} != {shape}")
        planes.append(img > 0)
    return ObservationMask(np.stack(planes, axis=-1))


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment. Values stay strings
    (the CLI parses them per flag)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
