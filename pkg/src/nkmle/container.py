"""Binary container for datasets, checkpoints and filter outputs.

Layout::

    b"NKMLE1"
    key=value\\n ...        UTF-8 header lines
    \\n                     blank line ends the header
    repeated until EOF:
        u32  name length (little-endian)
        ...  name bytes (UTF-8)
        u64  element count
        ...  count little-endian float64 values

Arrays are stored flat; the readers for each kind reshape them from header
fields and reject mismatches.
"""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import BadMagic, CountMismatch, TruncatedPayload, VersionMismatch

MAGIC = b"NKMLE1"
FORMAT_VERSION = 1
KINDS = ("dataset", "checkpoint", "estimates")


def encode(header: Mapping[str, str], arrays: Mapping[str, NDArray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    lines = [f"format_version={FORMAT_VERSION}"]
    for key, value in header.items():
        if key == "format_version":
            continue
        value = str(value)
        if "=" in key or "\n" in key or "\n" in value or not key:
            raise ValueError(f"header entry {key!r}={value!r} cannot be encoded")
        lines.append(f"{key}={value}")
    buf.write(("\n".join(lines) + "\n\n").encode("utf-8"))
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").ravel()
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<Q", data.size))
        buf.write(data.tobytes())
    return buf.getvalue()


def decode(blob: bytes) -> tuple[dict[str, str], dict[str, NDArray[np.float64]]]:
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"bad magic {blob[:len(MAGIC)]!r}")
    end = blob.find(b"\n\n", len(MAGIC))
    if end < 0:
        raise TruncatedPayload("header is not terminated by a blank line")
    header: dict[str, str] = {}
    for line in blob[len(MAGIC):end].decode("utf-8").split("\n"):
        key, sep, value = line.partition("=")
        if not sep:
            raise TruncatedPayload(f"malformed header line {line!r}")
        header[key] = value
    version = header.get("format_version")
    if version != str(FORMAT_VERSION):
        raise VersionMismatch(f"format_version {version!r}, this reader handles {FORMAT_VERSION}")

    arrays: dict[str, NDArray[np.float64]] = {}
    pos = end + 2
    n = len(blob)
    while pos < n:
        if pos + 4 > n:
            raise TruncatedPayload("truncated array name length")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + name_len + 8 > n:
            raise TruncatedPayload("truncated array name / count")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (count,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        nbytes = 8 * count
        if pos + nbytes > n:
            raise TruncatedPayload(f"array {name!r} declares {count} values, file ends early")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += nbytes
    return header, arrays


def save_container(path, header: Mapping[str, str], arrays: Mapping[str, NDArray]) -> None:
    """Write atomically (temp file + rename) so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(header, arrays))
    os.replace(tmp, path)


def load_container(path) -> tuple[dict[str, str], dict[str, NDArray[np.float64]]]:
    return decode(Path(path).read_bytes())


def take(arrays: Mapping[str, NDArray], name: str, shape: tuple[int, ...]) -> NDArray[np.float64]:
    """Fetch array ``name`` and reshape it, raising CountMismatch on size drift."""
    if name not in arrays:
        raise CountMismatch(f"missing array {name!r}")
    a = arrays[name]
    expected = int(np.prod(shape))
    if a.size != expected:
        raise CountMismatch(f"array {name!r} has {a.size} values, header implies {expected}")
    return a.reshape(shape)


def header_int(header: Mapping[str, str], key: str) -> int:
    try:
        return int(header[key])
    except KeyError:
        raise CountMismatch(f"header lacks {key!r}") from None
