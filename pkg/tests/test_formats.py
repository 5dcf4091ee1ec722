import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from redfwi.exceptions import ContractError, FormatError
from redfwi.formats import load_grid, pgm_pixels, read_csv, read_pgm, render_pgm, save_grid, write_csv


def test_header_layout(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "a.rdq"
    save_grid(p, a)
    blob = p.read_bytes()
    assert blob[:4] == b"RDQ1"
    assert struct.unpack("<IIII", blob[4:20]) == (1, 2, 2, 3)
    assert blob[20:] == a.astype("<f4").tobytes()
    assert len(blob) == 20 + 6 * 4


def test_round_trip_field(tmp_path, rng):
    a = rng.uniform(1500, 4500, (70, 70)).astype(np.float32)
    save_grid(tmp_path / "f.rdq", a)
    b = load_grid(tmp_path / "f.rdq")
    assert b.dtype == np.float32 and b.tobytes() == a.tobytes()


def test_round_trip_survey_axis_order(tmp_path, rng):
    a = rng.standard_normal((5, 70, 1000)).astype(np.float32)
    save_grid(tmp_path / "s.rdq", a)
    b = load_grid(tmp_path / "s.rdq")
    assert b.shape == (5, 70, 1000)
    assert np.array_equal(a[3, 10], b[3, 10]) and np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(a=arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=6),
                elements=st.floats(width=32, allow_nan=False)))
def test_round_trip_property(a, tmp_path_factory):
    p = tmp_path_factory.mktemp("g") / "x.rdq"
    save_grid(p, a)
    assert load_grid(p).tobytes() == np.ascontiguousarray(a).tobytes()


def test_truncated_and_bad_magic(tmp_path):
    p = tmp_path / "t.rdq"
    save_grid(p, np.ones((4, 4), np.float32))
    blob = p.read_bytes()
    p.write_bytes(blob[:-3])
    with pytest.raises(FormatError):
        load_grid(p)
    p.write_bytes(blob[:14])
    with pytest.raises(FormatError):
        load_grid(p)
    p.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        load_grid(p)
    p.write_bytes(blob[:4] + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(FormatError):
        load_grid(p)


def test_pgm_mapping():
    assert not np.any(pgm_pixels(np.full((3, 3), 1500.0), 1500, 4500))
    assert np.all(pgm_pixels(np.full((3, 3), 4500.0), 1500, 4500) == 255)
    # 127.5 rounds half to even
    assert np.all(pgm_pixels(np.full((2, 2), 3000.0), 1500, 4500) == 128)
    assert pgm_pixels(np.array([[-1e9, 1e9]]), 0, 1).tolist() == [[0, 255]]


def test_pgm_file(tmp_path, rng):
    f = rng.uniform(1500, 4500, (7, 9))
    px = render_pgm(f, tmp_path / "a.pgm", 1500, 4500)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n9 7\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), px)


def test_pgm_range_error(tmp_path):
    with pytest.raises(ContractError):
        render_pgm(np.zeros((2, 2)), tmp_path / "a.pgm", 1.0, 1.0)


def test_csv_round_trip(tmp_path):
    write_csv(tmp_path / "c.csv", ["a", "b"], [[1, 0.1], [2, None]])
    header, rows = read_csv(tmp_path / "c.csv")
    assert header == ["a", "b"] and rows == [["1", "0.1"], ["2", ""]]
