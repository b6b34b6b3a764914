import numpy as np
import pytest

from conftest import perturbed_sphere
from deturckflow.errors import MeshParseError, NonManifoldError
from deturckflow.fileio import (
    read_curve_csv,
    read_curve_vtk,
    read_mesh,
    read_off,
    read_vtk,
    sidecar_path,
    write_curve_csv,
    write_curve_vtk,
    write_mesh,
    write_off,
    write_vtk,
)
from deturckflow.mesh import generate_icosphere, generate_parametrized_curve, icosahedron


@pytest.fixture
def surface(rng):
    return perturbed_sphere(rng, 2, 0.1, 0.05)


class TestSurfaceRoundTrip:
    @pytest.mark.parametrize("ext", ["off", "vtk"])
    def test_exact(self, surface, tmp_path, ext):
        path = tmp_path / f"s.{ext}"
        write_mesh(path, surface)
        back = read_mesh(path)
        np.testing.assert_array_equal(back.vertices, surface.vertices)
        np.testing.assert_array_equal(back.triangles, surface.triangles)
        np.testing.assert_array_equal(back.reference_positions, surface.reference_positions)

    def test_off_without_reference_has_no_sidecar(self, tmp_path):
        s = generate_icosphere(1)
        write_off(tmp_path / "s.off", s)
        assert not sidecar_path(tmp_path / "s.off").exists()
        back = read_off(tmp_path / "s.off")
        np.testing.assert_array_equal(back.reference_positions, s.vertices)

    def test_off_stale_sidecar_removed(self, surface, tmp_path):
        write_off(tmp_path / "s.off", surface)
        assert sidecar_path(tmp_path / "s.off").exists()
        write_off(tmp_path / "s.off", generate_icosphere(2))
        assert not sidecar_path(tmp_path / "s.off").exists()

    def test_format_override(self, surface, tmp_path):
        path = tmp_path / "mesh.dat"
        write_mesh(path, surface, fmt="vtk-legacy")
        assert read_mesh(path, fmt="vtk").n_vertices == surface.n_vertices

    def test_unknown_format(self, surface, tmp_path):
        with pytest.raises(ValueError):
            write_mesh(tmp_path / "s.stl", surface)
        with pytest.raises(ValueError):
            read_mesh(tmp_path / "s.stl")

    def test_off_header_with_counts_on_same_line(self, tmp_path):
        v, f = icosahedron()
        text = f"OFF {len(v)} {len(f)} 0\n" + "".join(f"{a} {b} {c}\n" for a, b, c in v)
        text += "".join(f"3 {a} {b} {c}\n" for a, b, c in f)
        (tmp_path / "i.off").write_text(text)
        assert read_off(tmp_path / "i.off").n_triangles == 20

    def test_vtk_points_may_wrap(self, tmp_path):
        v, f = icosahedron()
        flat = " ".join(repr(float(x)) for x in v.ravel())
        text = "# vtk DataFile Version 3.0\nx\nASCII\nDATASET POLYDATA\n"
        text += f"POINTS {len(v)} double\n{flat}\nPOLYGONS {len(f)} {4 * len(f)}\n"
        text += "".join(f"3 {a} {b} {c}\n" for a, b, c in f)
        (tmp_path / "i.vtk").write_text(text)
        back = read_vtk(tmp_path / "i.vtk")
        np.testing.assert_array_equal(back.vertices, v)


def off_text(v, f):
    text = f"OFF\n{len(v)} {len(f)} 0\n" + "".join(f"{a} {b} {c}\n" for a, b, c in v)
    return text + "".join(f"3 {a} {b} {c}\n" for a, b, c in f)


class TestParseErrors:
    def test_truncated_off(self, tmp_path):
        v, f = icosahedron()
        lines = off_text(v, f).splitlines()[:7]
        (tmp_path / "t.off").write_text("\n".join(lines) + "\n")
        with pytest.raises(MeshParseError, match="vertex 5") as info:
            read_off(tmp_path / "t.off")
        assert info.value.line == 8

    def test_bad_number_reports_line(self, tmp_path):
        v, f = icosahedron()
        lines = off_text(v, f).splitlines()
        lines[4] = "0.0 abc 1.0"
        (tmp_path / "b.off").write_text("\n".join(lines) + "\n")
        with pytest.raises(MeshParseError) as info:
            read_off(tmp_path / "b.off")
        assert info.value.line == 5
        assert "line 5" in str(info.value)

    def test_dangling_edge(self, tmp_path):
        v, f = icosahedron()
        (tmp_path / "d.off").write_text(off_text(v, f[:-1]))
        with pytest.raises(NonManifoldError):
            read_off(tmp_path / "d.off")

    def test_quad_rejected(self, tmp_path):
        (tmp_path / "q.off").write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
        with pytest.raises(MeshParseError, match="triangles"):
            read_off(tmp_path / "q.off")

    def test_index_out_of_range(self, tmp_path):
        v, f = icosahedron()
        f = f.copy()
        f[3, 1] = 99
        (tmp_path / "r.off").write_text(off_text(v, f))
        with pytest.raises(MeshParseError, match="out of range"):
            read_off(tmp_path / "r.off")

    def test_missing_header(self, tmp_path):
        (tmp_path / "h.off").write_text("PLY\n")
        with pytest.raises(MeshParseError):
            read_off(tmp_path / "h.off")

    def test_trailing_data(self, tmp_path):
        v, f = icosahedron()
        (tmp_path / "x.off").write_text(off_text(v, f) + "1 2 3\n")
        with pytest.raises(MeshParseError, match="trailing"):
            read_off(tmp_path / "x.off")

    def test_vtk_binary_rejected(self, tmp_path):
        (tmp_path / "b.vtk").write_text("# vtk DataFile Version 3.0\nx\nBINARY\nDATASET POLYDATA\n")
        with pytest.raises(MeshParseError, match="ASCII"):
            read_vtk(tmp_path / "b.vtk")

    def test_vtk_truncated_points(self, surface, tmp_path):
        write_vtk(tmp_path / "s.vtk", surface)
        lines = (tmp_path / "s.vtk").read_text().splitlines()[:20]
        (tmp_path / "s.vtk").write_text("\n".join(lines) + "\n")
        with pytest.raises(MeshParseError, match="end of file"):
            read_vtk(tmp_path / "s.vtk")

    def test_sidecar_row_count(self, surface, tmp_path):
        write_off(tmp_path / "s.off", surface)
        side = sidecar_path(tmp_path / "s.off")
        side.write_text("\n".join(side.read_text().splitlines()[:-1]) + "\n")
        with pytest.raises(MeshParseError):
            read_off(tmp_path / "s.off")


class TestCurves:
    def test_csv_round_trip(self, tmp_path):
        c = generate_parametrized_curve(40, "example2_fourpetal")
        write_curve_csv(tmp_path / "c.csv", c)
        back = read_curve_csv(tmp_path / "c.csv")
        np.testing.assert_array_equal(back.vertices, c.vertices)
        np.testing.assert_allclose(back.theta, c.theta, rtol=1e-15)

    def test_vtk_round_trip_keeps_theta(self, tmp_path):
        c = generate_parametrized_curve(40, "example1_flattened_circle")
        write_curve_vtk(tmp_path / "c.vtk", c)
        back = read_curve_vtk(tmp_path / "c.vtk")
        np.testing.assert_array_equal(back.vertices, c.vertices)
        np.testing.assert_array_equal(back.theta, c.theta)

    def test_csv_bad_header(self, tmp_path):
        (tmp_path / "c.csv").write_text("i,x,y\n0,1,0\n")
        with pytest.raises(MeshParseError, match="header"):
            read_curve_csv(tmp_path / "c.csv")

    def test_csv_index_gap(self, tmp_path):
        (tmp_path / "c.csv").write_text("index,x,y\n0,1,0\n2,0,1\n3,-1,0\n")
        with pytest.raises(MeshParseError) as info:
            read_curve_csv(tmp_path / "c.csv")
        assert info.value.line == 3
