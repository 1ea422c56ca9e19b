"""Binary tensor files and model checkpoints.

Tensor file (``.gten``): magic bytes ``GTEN``, a little-endian u32 rank,
``rank`` little-endian u32 dims, then float32 little-endian values in
row-major order.

Checkpoint: a little-endian u32 length, a UTF-8 key-value header
(``key = value`` lines), then one length-prefixed GTEN blob per parameter
tensor, in parameter order.  The header's ``tensors`` key gives the count.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

__all__ = [
    "gten_bytes",
    "gten_from_bytes",
    "write_gten",
    "read_gten",
    "write_checkpoint",
    "read_checkpoint",
]

MAGIC = b"GTEN"


def gten_bytes(array: np.ndarray) -> bytes:
    # note: ascontiguousarray would promote rank-0 arrays to rank 1
    arr = np.asarray(array, dtype="<f4", order="C")
    parts = [MAGIC, struct.pack("<I", arr.ndim)]
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(arr.tobytes())
    return b"".join(parts)


def gten_from_bytes(blob: bytes) -> np.ndarray:
    """Decode one tensor blob; values come back as float64."""
    if len(blob) < 8:
        raise DataFormatError("tensor file truncated before rank field")
    if blob[:4] != MAGIC:
        raise DataFormatError(
            f"bad magic bytes {blob[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", blob, 4)
    head = 8 + 4 * rank
    if len(blob) < head:
        raise DataFormatError("tensor file truncated inside dims field")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = 1
    for d in dims:
        if d == 0:
            raise DataFormatError("zero dimension in dims field")
        count *= d
    expected = head + 4 * count
    if len(blob) != expected:
        raise DataFormatError(
            f"values field has {len(blob) - head} bytes, expected {4 * count}")
    values = np.frombuffer(blob, dtype="<f4", offset=head, count=count)
    return values.astype(np.float64).reshape(dims)


def write_gten(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(gten_bytes(array))


def read_gten(path: str | Path) -> np.ndarray:
    return gten_from_bytes(Path(path).read_bytes())


def _format_header(pairs: dict[str, str]) -> bytes:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items()).encode("utf-8")


def _parse_header(blob: bytes) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise DataFormatError(f"malformed checkpoint header line: {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def write_checkpoint(path: str | Path, header: dict[str, str],
                     tensors: list[np.ndarray]) -> None:
    pairs = dict(header)
    pairs["tensors"] = str(len(tensors))
    head = _format_header(pairs)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for arr in tensors:
            blob = gten_bytes(arr)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


def read_checkpoint(path: str | Path) -> tuple[dict[str, str], list[np.ndarray]]:
    raw = Path(path).read_bytes()
    buf = io.BytesIO(raw)

    def take(n: int, what: str) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise DataFormatError(f"checkpoint truncated inside {what}")
        return chunk

    (head_len,) = struct.unpack("<I", take(4, "header length"))
    header = _parse_header(take(head_len, "header"))
    if "tensors" not in header:
        raise DataFormatError("checkpoint header missing tensors field")
    try:
        count = int(header["tensors"])
    except ValueError as exc:
        raise DataFormatError("checkpoint tensors field is not an integer") from exc
    tensors = []
    for _ in range(count):
        (blob_len,) = struct.unpack("<I", take(4, "tensor length prefix"))
        tensors.append(gten_from_bytes(take(blob_len, "tensor blob")))
    if buf.read(1):
        raise DataFormatError("trailing bytes after last tensor blob")
    return header, tensors
