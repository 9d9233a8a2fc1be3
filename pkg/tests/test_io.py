import numpy as np
import pytest

from surface_grf.io import Table, export_csv, export_field_vtk, format_value, read_csv, read_vtk
from surface_grf.sampler import WhittleMaternSampler


def test_format_value():
    assert format_value(3) == "3"
    assert format_value(np.int64(6146)) == "6146"
    assert format_value(0.123456789) == "0.123457"
    assert format_value(1.5e-7) == "1.5e-07"
    assert format_value(float("nan")) == "nan"
    assert format_value("PASS") == "PASS"


def test_csv_round_trip(tmp_path):
    t = Table(["N", "h", "e"])
    rows = [(8, 1.6329931618554523, 65.4881234), (26, 1.0, 1.23456789e-5)]
    for n, h, e in rows:
        t.add(N=n, h=h, e=e)
    path = export_csv(t, tmp_path / "t.csv")
    text = path.read_text()
    assert text.splitlines()[0] == "N,h,e"
    back = read_csv(path)
    assert back.columns == t.columns
    for (n, h, e), r in zip(rows, back.rows):
        assert r["N"] == n
        assert r["h"] == float(format_value(h))
        assert r["e"] == float(format_value(e))
    # re-exporting the parsed table reproduces the bytes
    assert read_csv(export_csv(back, tmp_path / "u.csv")).rows == back.rows


def test_table_requires_all_columns():
    with pytest.raises(KeyError):
        Table(["a", "b"]).add(a=1)


def test_vtk_of_cube_sample(tmp_path, sphere_meshes):
    mesh = sphere_meshes[0]
    u = WhittleMaternSampler(seed=0).fit(mesh).sample(1)[0]
    path = export_field_vtk(mesh, u, tmp_path / "u.vtk")
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 3.0\n")
    assert "POINTS 8 double" in text and "CELLS 6 30" in text and "CELL_TYPES 6" in text
    pts, quads, vals = read_vtk(path)
    np.testing.assert_array_equal(pts, mesh.vertices)
    np.testing.assert_array_equal(quads, mesh.quads)
    np.testing.assert_array_equal(vals, u)


def test_vtk_errors(tmp_path, sphere_meshes):
    mesh = sphere_meshes[0]
    with pytest.raises(ValueError):
        export_field_vtk(mesh, np.zeros(5), tmp_path / "bad.vtk")
    with pytest.raises(ValueError):
        export_field_vtk(mesh, np.zeros(8), tmp_path / "bad.vtk", name="two words")
    with pytest.raises(OSError, match="missing"):
        export_field_vtk(mesh, np.zeros(8), tmp_path / "missing" / "u.vtk")
    with pytest.raises(OSError, match="missing"):
        export_csv(Table(["a"]), tmp_path / "missing" / "t.csv")
