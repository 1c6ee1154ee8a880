"""Binary file formats for videos, token grids, codebooks and action tracks.

All formats are little-endian with a 4-byte magic and a u32 version field:

    DVID  magic, version=1, N, H, W, then N*H*W*3 bytes of RGB pixels
    DTOK  magic, version=1, N, h, w, vocab, then N*h*w u16 token ids
    DCBK  magic, version=1, vocab, patch, then vocab*3*patch*patch f32 values
    DACT  magic, version=1, N, reserved=0, then N (yaw_rate, speed) f32 pairs
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

_HEADERS = {
    "DVID": "<4sIIII",
    "DTOK": "<4sIIIII",
    "DCBK": "<4sIIII",
    "DACT": "<4sIIII",
}


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


def _read_header(data: bytes, magic: str, path: Path) -> tuple:
    fmt = _HEADERS[magic]
    size = struct.calcsize(fmt)
    if len(data) < size:
        raise FormatError(f"{path}: truncated {magic} header")
    fields = struct.unpack_from(fmt, data)
    if fields[0] != magic.encode("ascii"):
        raise FormatError(f"{path}: bad magic {fields[0]!r}, expected {magic}")
    if fields[1] != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported {magic} version {fields[1]}")
    return fields[2:]


def write_video(path: str | Path, pixels: np.ndarray) -> None:
    """Write an (N, H, W, 3) uint8 array as a DVID file."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 4 or pixels.shape[3] != 3:
        raise FormatError(f"video array must be (N, H, W, 3), got {pixels.shape}")
    n, h, w, _ = pixels.shape
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADERS["DVID"], b"DVID", FORMAT_VERSION, n, h, w))
        f.write(pixels.tobytes())


def read_video(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    n, h, w = _read_header(data, "DVID", path)
    expected = n * h * w * 3
    payload = data[struct.calcsize(_HEADERS["DVID"]):]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w, 3).copy()


def write_tokens(path: str | Path, tokens: np.ndarray, vocab: int) -> None:
    """Write an (N, h, w) integer token grid as a DTOK file (u16 payload)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 3:
        raise FormatError(f"token array must be (N, h, w), got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() > 0xFFFF:
        raise FormatError("token ids must fit in u16")
    n, h, w = tokens.shape
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADERS["DTOK"], b"DTOK", FORMAT_VERSION, n, h, w, vocab))
        f.write(tokens.astype("<u2").tobytes())


def read_tokens(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a DTOK file, returning ((N, h, w) int32 tokens, vocab)."""
    path = Path(path)
    data = path.read_bytes()
    n, h, w, vocab = _read_header(data, "DTOK", path)
    payload = data[struct.calcsize(_HEADERS["DTOK"]):]
    if len(payload) != n * h * w * 2:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {n * h * w * 2}")
    tokens = np.frombuffer(payload, dtype="<u2").reshape(n, h, w).astype(np.int32)
    return tokens, vocab


def write_codebook(path: str | Path, vectors: np.ndarray, patch_size: int) -> None:
    """Write (vocab, 3*patch*patch) f32 codebook vectors as a DCBK file."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[1] != 3 * patch_size * patch_size:
        raise FormatError(
            f"codebook vectors must be (vocab, {3 * patch_size * patch_size}), got {vectors.shape}"
        )
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADERS["DCBK"], b"DCBK", FORMAT_VERSION, vectors.shape[0], patch_size))
        f.write(vectors.tobytes())


def read_codebook(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a DCBK file, returning ((vocab, 3*patch*patch) f32 vectors, patch_size)."""
    path = Path(path)
    data = path.read_bytes()
    vocab, patch = _read_header(data, "DCBK", path)
    dim = 3 * patch * patch
    payload = data[struct.calcsize(_HEADERS["DCBK"]):]
    if len(payload) != vocab * dim * 4:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {vocab * dim * 4}")
    return np.frombuffer(payload, dtype="<f4").reshape(vocab, dim).copy(), patch


def write_actions(path: str | Path, actions: np.ndarray) -> None:
    """Write an (N, 2) float array of (yaw_rate, speed) pairs as a DACT file."""
    actions = np.ascontiguousarray(actions, dtype="<f4")
    if actions.ndim != 2 or actions.shape[1] != 2:
        raise FormatError(f"action array must be (N, 2), got {actions.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADERS["DACT"], b"DACT", FORMAT_VERSION, actions.shape[0], 0))
        f.write(actions.tobytes())


def read_actions(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    n, _reserved = _read_header(data, "DACT", path)
    payload = data[struct.calcsize(_HEADERS["DACT"]):]
    if len(payload) != n * 8:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {n * 8}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, 2).copy()
