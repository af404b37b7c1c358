import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taylorhel import io
from taylorhel.grid import Field
from taylorhel.verify import check_basis_matrices

finite = st.floats(allow_nan=False, allow_infinity=True, width=64)


@settings(max_examples=30, deadline=None)
@given(st.lists(finite, min_size=1, max_size=40))
def test_csv_floats_round_trip_exactly(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    io.write_csv(path, ["x"], [[v] for v in values])
    _, rows = io.read_csv(path)
    assert [float(r[0]) for r in rows] == values


@pytest.mark.parametrize("degree", [0, 1, 2, 3])
def test_snapshot_round_trip(torus16, tmp_path, rng, degree):
    c = torus16[0]
    f = Field(degree, rng.standard_normal(c.size(degree)), c)
    path = io.write_snapshot(tmp_path / "f.hltr", f)
    g = io.read_snapshot(path, c)
    assert g.degree == degree and np.array_equal(g.values, f.values)
    head, _ = io.read_snapshot_raw(path)
    assert head["shape"] == (16, 16, 16) and head["count"] == c.size(degree)


def test_snapshot_layout_is_fixed(torus16, tmp_path):
    c = torus16[0]
    f = Field(1, np.arange(c.size(1), dtype=float), c)
    data = io.write_snapshot(tmp_path / "f.hltr", f).read_bytes()
    assert data[:5] == b"HLTR1"
    deg, nx, ny, nz, h, ox, oy, oz, count = struct.unpack_from("<B3I4dQ", data, 5)
    assert (deg, nx, ny, nz, h, count) == (1, 16, 16, 16, 1 / 16, c.size(1))
    assert np.frombuffer(data, "<f8", offset=5 + struct.calcsize("<B3I4dQ"))[7] == 7.0


def test_snapshot_errors(torus16, shell16, tmp_path):
    c = torus16[0]
    path = io.write_snapshot(tmp_path / "f.hltr", Field.zeros(c, 2))
    with pytest.raises(io.SnapshotError):
        io.read_snapshot(path, shell16[0])
    raw = path.read_bytes()
    (tmp_path / "short.hltr").write_bytes(raw[:-8])
    with pytest.raises(io.SnapshotError):
        io.read_snapshot(tmp_path / "short.hltr", c)
    (tmp_path / "magic.hltr").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(io.SnapshotError):
        io.read_snapshot_raw(tmp_path / "magic.hltr")


def test_basis_round_trip_and_corruption(shell16, tmp_path):
    c, atlas, basis = shell16
    io.save_basis(tmp_path, basis)
    loaded = io.load_basis(tmp_path, c, atlas)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(loaded.h_fields, basis.h_fields))
    assert all(ch.passed for ch in check_basis_matrices(loaded, 16))
    fm = io.read_matrix_csv(tmp_path / "flux_matrix.csv")
    fm[0, 1] = 1e-3
    io.write_matrix_csv(tmp_path / "flux_matrix.csv", fm)
    bad = check_basis_matrices(io.load_basis(tmp_path, c, atlas), 16)
    assert [ch.name for ch in bad if not ch.passed] == ["flux_matrix"]


def test_manifest_records_config_and_digests(tmp_path):
    io.write_csv(tmp_path / "a.csv", ["x"], [[1.0]])
    io.write_manifest(tmp_path / "manifest.json", {"eta": 0.01}, ["a.csv"], {"seed": 7})
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["config"] == {"eta": 0.01} and doc["seed"] == 7
    assert doc["outputs"]["a.csv"] == io.file_digest(tmp_path / "a.csv")


def test_vtk_export(torus16, tmp_path):
    c = torus16[0]
    text = io.write_vtk(tmp_path / "f.vtk", c, {"B": Field.zeros(c, 2)}).read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert "DIMENSIONS 17 17 17" in text and "VECTORS B double" in text
    with pytest.raises(io.SnapshotError):
        io.write_vtk(tmp_path / "g.vtk", c, {"p": Field.zeros(c, 0)})
