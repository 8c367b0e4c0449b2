"""Binary container round-trips and corruption handling."""

import numpy as np
import pytest

from dkstn.checkpoint import load_arrays, save_arrays
from dkstn.errors import FormatError, LengthError


def test_round_trip_preserves_values_shapes_and_order(tmp_path):
    rng = np.random.default_rng(0)
    entries = {
        "alpha/w": rng.standard_normal((3, 4)),
        "alpha/b": rng.standard_normal(4),
        "scalar": np.float64(3.25),
        "cube": rng.standard_normal((2, 2, 2)),
    }
    path = tmp_path / "weights.dkw"
    save_arrays(path, entries)
    loaded = load_arrays(path)
    assert list(loaded) == list(entries)
    for name in entries:
        assert loaded[name].shape == np.asarray(entries[name]).shape
        assert np.array_equal(loaded[name], entries[name])


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dkw"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        load_arrays(path)


def test_truncated_payload_reports_byte_counts(tmp_path):
    path = tmp_path / "w.dkw"
    save_arrays(path, {"x": np.arange(10.0)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(LengthError) as err:
        load_arrays(path)
    message = str(err.value)
    assert str(len(blob)) in message and str(len(blob) - 8) in message


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "w.dkw"
    save_arrays(path, {"x": np.arange(4.0)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(LengthError, match="trailing"):
        load_arrays(path)
