"""Reader and writer for TGF1 field files.

Layout (all integers little-endian u32)::

    b"TGF1" | version=1 | d | shape[0..d) | channels | float32 LE payload

The payload is row-major over the cells with channels innermost, i.e. the
C-order bytes of an array shaped ``(*shape, channels)``.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from tempogan.core.fields import GridField

logger = logging.getLogger(__name__)

MAGIC = b"TGF1"
VERSION = 1


def encode_field(field: GridField) -> bytes:
    """Serializes a field to TGF1 bytes."""
    header = MAGIC + struct.pack(
        f"<II{field.dim}II", VERSION, field.dim, *field.shape, field.channels
    )
    payload = np.moveaxis(field.data, 0, -1).astype("<f4", copy=False)
    return header + np.ascontiguousarray(payload).tobytes()


def decode_field(buf: bytes) -> GridField:
    """Parses TGF1 bytes into a field."""
    if buf[:4] != MAGIC:
        raise ValueError("not a TGF1 file (bad magic)")
    version, dim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported TGF1 version {version}")
    if dim not in (2, 3):
        raise ValueError(f"unsupported dimension {dim}")
    offset = 12
    shape = struct.unpack_from(f"<{dim}I", buf, offset)
    offset += 4 * dim
    (channels,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    count = int(np.prod(shape)) * channels
    if len(buf) - offset != 4 * count:
        raise ValueError(
            f"payload holds {(len(buf) - offset) // 4} values, header promises {count}"
        )
    payload = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    data = np.moveaxis(payload.reshape(*shape, channels), -1, 0)
    return GridField(data.astype(np.float32))


def write_field(path: str | Path, field: GridField) -> Path:
    """Writes a field to ``path``, creating parent directories."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_field(field))
    except OSError as e:
        logger.error(f"Error writing field {path}: {e}")
        raise OSError(f"cannot write field {path}: {e}") from e
    return path


def read_field(path: str | Path) -> GridField:
    """Reads a TGF1 field from ``path``."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        logger.error(f"Error reading field {path}: {e}")
        raise OSError(f"cannot read field {path}: {e}") from e
    try:
        return decode_field(buf)
    except (ValueError, struct.error) as e:
        raise ValueError(f"{path}: {e}") from e
