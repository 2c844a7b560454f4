import struct

import numpy as np
import pytest

from tempogan.core.fields import GridField
from tempogan.data.io import MAGIC, decode_field, encode_field, read_field, write_field


def test_header_layout():
    """Verify magic, version, dimension, shape and channel count in the header."""
    f = GridField.zeros((3, 5), channels=2)
    buf = encode_field(f)
    assert buf[:4] == MAGIC
    assert struct.unpack_from("<IIIII", buf, 4) == (1, 2, 3, 5, 2)
    assert len(buf) == 4 + 5 * 4 + 3 * 5 * 2 * 4


def test_channels_are_innermost():
    """Verify the payload interleaves the components of each cell."""
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0, 0, 1] = 1.0
    data[1, 0, 1] = 2.0
    buf = encode_field(GridField(data))
    payload = np.frombuffer(buf, dtype="<f4", offset=24)
    np.testing.assert_array_equal(payload[2:4], [1.0, 2.0])


def test_write_then_read(tmp_path):
    rng = np.random.default_rng(0)
    f = GridField(rng.random((3, 4, 5, 6)).astype(np.float32))
    path = write_field(tmp_path / "nested" / "v.tgf", f)
    assert path.exists()
    np.testing.assert_array_equal(read_field(path).data, f.data)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda b: b"XXXX" + b[4:], "bad magic"),
        (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
        (lambda b: b[:-4], "payload"),
    ],
)
def test_decode_rejects_corrupt_data(mutate, message):
    buf = encode_field(GridField.zeros((4, 4)))
    with pytest.raises(ValueError, match=message):
        decode_field(mutate(buf))


def test_read_corrupt_file_names_path(tmp_path):
    path = tmp_path / "bad.tgf"
    path.write_bytes(b"TGF1")
    with pytest.raises(ValueError, match="bad.tgf"):
        read_field(path)


def test_read_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError, match="missing.tgf"):
        read_field(tmp_path / "missing.tgf")
