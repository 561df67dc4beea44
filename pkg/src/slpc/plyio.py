"""Binary little-endian PLY I/O for oriented point clouds.

The on-disk layout is fixed: one vertex element with float32 properties
x y z nx ny nz. Reading is strict; malformed input raises PlyError with
the byte offset where parsing stopped.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .geometry import PointCloud

__all__ = ["PlyError", "write_ply", "read_ply", "ply_bytes", "cloud_from_ply_bytes"]

_PROPS = ("x", "y", "z", "nx", "ny", "nz")


class PlyError(ValueError):
    """Malformed PLY input; message carries the byte offset."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def ply_bytes(cloud: PointCloud) -> bytes:
    """Serialize a cloud with normals to binary little-endian PLY bytes."""
    if cloud.normals is None:
        raise ValueError("PLY export requires normals")
    n = len(cloud)
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {n}",
            *[f"property float {p}" for p in _PROPS],
            "end_header",
        ]
    )
    payload = np.concatenate([cloud.positions, cloud.normals], axis=1)
    payload = np.ascontiguousarray(payload, dtype="<f4")
    return header.encode("ascii") + b"\n" + payload.tobytes()


def write_ply(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(ply_bytes(cloud))


def cloud_from_ply_bytes(data: bytes) -> PointCloud:
    """Parse the exact dialect ply_bytes emits. Strict by design."""
    buf = io.BytesIO(data)

    def read_line():
        start = buf.tell()
        line = buf.readline()
        if not line.endswith(b"\n"):
            raise PlyError("unterminated header line", start)
        return line.rstrip(b"\n").decode("ascii", errors="replace"), start

    line, off = read_line()
    if line != "ply":
        raise PlyError(f"bad magic {line!r}", off)
    line, off = read_line()
    if line != "format binary_little_endian 1.0":
        raise PlyError(f"unsupported format {line!r}", off)

    n_vertices = None
    props = []
    while True:
        line, off = read_line()
        if line == "end_header":
            break
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            try:
                n_vertices = int(parts[2])
            except (IndexError, ValueError):
                raise PlyError(f"bad vertex count in {line!r}", off) from None
        elif parts[:1] == ["element"]:
            raise PlyError(f"unsupported element {line!r}", off)
        elif parts[:2] == ["property", "float"]:
            props.append(parts[2])
        elif parts[:1] == ["property"]:
            raise PlyError(f"unsupported property type {line!r}", off)
        elif parts[:1] == ["comment"]:
            continue
        else:
            raise PlyError(f"unrecognized header line {line!r}", off)

    if n_vertices is None:
        raise PlyError("header missing vertex element", buf.tell())
    if n_vertices < 1:
        raise PlyError("empty vertex element", buf.tell())
    if tuple(props) != _PROPS:
        raise PlyError(f"expected properties {_PROPS}, got {tuple(props)}", buf.tell())

    payload_off = buf.tell()
    raw = buf.read()
    expected = n_vertices * len(_PROPS) * 4
    if len(raw) < expected:
        raise PlyError(
            f"truncated payload: need {expected} bytes, have {len(raw)}",
            payload_off + len(raw),
        )
    arr = np.frombuffer(raw[:expected], dtype="<f4").reshape(n_vertices, 6)
    return PointCloud(arr[:, :3].copy(), arr[:, 3:].copy())


def read_ply(path) -> PointCloud:
    return cloud_from_ply_bytes(Path(path).read_bytes())
