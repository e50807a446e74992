"""Binary tensor and checkpoint files, 8-bit PGM/PPM images, ``key = value`` configs.

Tensor file layout (little-endian)::

    b"SPAT" | version u8 | dtype u8 (0 = f64, 1 = f32) | rank u8 | rank x u32 extents | payload

A checkpoint is a ``key = value`` text header (the model config) closed by
a blank line, followed by records ``name_len u16 | name | tensor file``
in registry order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import ModelConfig, ModelWeights, init_weights

MAGIC = b"SPAT"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


class FormatError(ValueError):
    """Malformed file content; ``offset`` is the byte position of the problem."""

    def __init__(self, msg: str, offset: int | None = None):
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


# -- tensors ----------------------------------------------------------------------

def encode_tensor(t: np.ndarray) -> bytes:
    arr = np.asarray(t)
    code = DTYPE_CODES.get(np.dtype(arr.dtype.type))
    if code is None:
        raise TypeError(f"unsupported tensor dtype {arr.dtype}; use float64 or float32")
    if arr.ndim > 255 or arr.ndim == 0:
        raise ValueError(f"tensor rank must be 1..255, got {arr.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one tensor starting at ``offset``; returns it and the end offset."""
    if len(buf) < offset + 7:
        raise FormatError("truncated tensor header", offset)
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[offset:offset + 4])!r}, expected {MAGIC!r}", offset)
    version, code, rank = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported tensor format version {version}", offset + 4)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset + 5)
    pos = offset + 7
    if len(buf) < pos + 4 * rank:
        raise FormatError("truncated tensor extents", pos)
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    if rank == 0 or 0 in shape:
        raise FormatError(f"invalid tensor shape {shape}", pos)
    pos += 4 * rank
    dt = DTYPES[code]
    nbytes = int(np.prod(shape)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError(f"truncated payload: need {nbytes} bytes, have {len(buf) - pos}", pos)
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), pos + nbytes


def save_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(t))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after tensor", end)
    return arr


# -- key = value configs ----------------------------------------------------------

def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(d: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


# -- checkpoints -------------------------------------------------------------------

def encode_checkpoint(cfg: ModelConfig, weights: ModelWeights) -> bytes:
    parts = [format_kv(cfg.to_dict()).encode("ascii"), b"\n"]
    for name, t in weights.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + encode_tensor(t))
    return b"".join(parts)


def decode_checkpoint(buf: bytes, expect: ModelConfig | None = None) -> tuple[ModelConfig, ModelWeights]:
    end = buf.find(b"\n\n")
    if end < 0:
        raise FormatError("checkpoint header not terminated by a blank line", len(buf))
    try:
        header = parse_kv(buf[:end].decode("ascii"), "checkpoint header")
        cfg = ModelConfig.from_dict(header)
    except (UnicodeDecodeError, ValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}", 0) from exc
    if expect is not None and expect != cfg:
        raise ValueError(f"checkpoint config {cfg} does not match expected {expect}")
    layout = init_weights(cfg)
    weights = ModelWeights()
    pos = end + 2
    while pos < len(buf):
        if len(buf) < pos + 2:
            raise FormatError("truncated record header", pos)
        (n,) = struct.unpack_from("<H", buf, pos)
        if len(buf) < pos + 2 + n:
            raise FormatError("truncated tensor name", pos + 2)
        name = buf[pos + 2:pos + 2 + n].decode("utf-8", errors="replace")
        if name not in layout:
            raise FormatError(f"unexpected tensor {name!r} for this model config", pos)
        if name in weights:
            raise FormatError(f"duplicate tensor {name!r}", pos)
        arr, pos = decode_tensor(buf, pos + 2 + n)
        if arr.shape != layout[name].shape:
            raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {layout[name].shape}", pos)
        weights[name] = arr
    if list(weights) != list(layout):
        missing = [k for k in layout if k not in weights]
        if missing:
            raise FormatError(f"checkpoint is missing {len(missing)} tensors, first {missing[0]!r}", len(buf))
        raise FormatError("checkpoint tensors are not in registry order", end + 2)
    return cfg, weights


def save_checkpoint(path, cfg: ModelConfig, weights: ModelWeights) -> None:
    Path(path).write_bytes(encode_checkpoint(cfg, weights))


def load_checkpoint(path, expect: ModelConfig | None = None) -> tuple[ModelConfig, ModelWeights]:
    return decode_checkpoint(Path(path).read_bytes(), expect)


# -- PGM / PPM ---------------------------------------------------------------------

def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated netpbm header", pos)
        if buf[pos:pos + 1] == b"#":
            nl = buf.find(b"\n", pos)
            pos = len(buf) if nl < 0 else nl + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after netpbm header", pos)
    return tokens, pos + 1


def decode_image(buf: bytes) -> np.ndarray:
    """Binary P5/P6 to a float64 ``C x H x W`` array in [0, 1]."""
    if buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {bytes(buf[:2])!r}; expected P5 or P6", 0)
    channels = 1 if buf[:2] == b"P5" else 3
    tokens, pos = _header_tokens(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"non-integer netpbm header field: {exc}", 2) from exc
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid image size {width}x{height}", 2)
    if maxval != 255:
        raise FormatError(f"only 8-bit images (maxval 255) are supported, got maxval {maxval}", 2)
    need = width * height * channels
    if len(buf) - pos < need:
        raise FormatError(f"truncated raster: need {need} bytes, have {len(buf) - pos}", pos)
    raster = np.frombuffer(buf, np.uint8, count=need, offset=pos)
    return raster.reshape(height, width, channels).transpose(2, 0, 1) / 255.0


def encode_image(img: np.ndarray) -> bytes:
    """``H x W`` / ``1 x H x W`` -> P5, ``3 x H x W`` -> P6, via ``round(255 * clamp(x))``."""
    arr = img[None] if img.ndim == 2 else img
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"image must be H x W, 1 x H x W or 3 x H x W, got {img.shape}")
    c, h, w = arr.shape
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def load_image(path) -> np.ndarray:
    try:
        return decode_image(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_image(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_image(img))


def load_array(path) -> np.ndarray:
    """Load a ``.pgm``/``.ppm`` image or a tensor file, by extension."""
    if Path(path).suffix.lower() in (".pgm", ".ppm", ".pnm"):
        return load_image(path)
    return load_tensor(path)


def save_array(path, arr: np.ndarray) -> None:
    if Path(path).suffix.lower() in (".pgm", ".ppm", ".pnm"):
        save_image(path, arr)
    else:
        save_tensor(path, arr)
