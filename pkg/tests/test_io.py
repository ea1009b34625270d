import struct

import numpy as np
import pytest

from finsler_hardy.distance import FROM_POLE, solve_distance
from finsler_hardy.grid import Field, GridDomain
from finsler_hardy.io import (ChecksumError, FieldFormatError, UnsupportedVersion, decode_field,
                              encode_field, export_field, import_field)
from finsler_hardy.measure import volume_density_field
from finsler_hardy.structures import FinslerStructure


def test_distance_round_trip(tmp_path):
    S = FinslerStructure.randers(np.eye(2), [0.3, 0.1])
    g = GridDomain(np.array([-1.0, -0.5]), np.array([1.0, 0.75]), (33, 21))
    d = solve_distance(S, g, np.array([0.1, 0.0]), FROM_POLE, pole_index=3)
    back = import_field(export_field(d, tmp_path / "d.fhf"))
    assert back.values.tobytes() == d.values.tobytes()
    assert back.grid.same_as(g)
    assert back.direction == FROM_POLE and back.pole_index == 3
    np.testing.assert_array_equal(back.pole, d.pole)


def test_vector_and_density_round_trip():
    g = GridDomain.cube(3, 5)
    v = Field(g, np.random.default_rng(0).normal(size=g.shape + (3,)), "vector")
    back = decode_field(encode_field(v))
    assert back.kind == "vector" and np.array_equal(back.values, v.values)
    dens = volume_density_field(FinslerStructure.riemannian(np.diag([1.0, 4.0, 9.0])), g)
    assert decode_field(encode_field(dens)).kind == "density"


def test_truncated_file_fails_checksum():
    blob = encode_field(Field(GridDomain.cube(2, 9), np.ones((9, 9))))
    with pytest.raises(ChecksumError):
        decode_field(blob[:-20])
    corrupt = bytearray(blob)
    corrupt[60] ^= 0xFF
    with pytest.raises(ChecksumError):
        decode_field(bytes(corrupt))


def test_version_bump_rejected():
    blob = bytearray(encode_field(Field(GridDomain.cube(2, 9), np.ones((9, 9)))))
    struct.pack_into("<I", blob, 8, 2)
    with pytest.raises(UnsupportedVersion, match="version 2"):
        decode_field(bytes(blob))


def test_bad_magic():
    with pytest.raises(FieldFormatError):
        decode_field(b"NOTFIELD" + bytes(40))
