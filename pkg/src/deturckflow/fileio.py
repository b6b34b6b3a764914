"""ASCII mesh files: OFF and legacy VTK for surfaces, CSV and VTK polylines for curves.

OFF has no place for per-vertex vectors, so reference positions go to a
sidecar file ``<path>.ref`` with one ``x y z`` row per vertex.  Legacy VTK
files carry them as ``POINT_DATA`` vectors named ``reference_position``.
Floats are written with 17 significant digits, so round trips are exact.
"""

import os
from pathlib import Path

import numpy as np

from .errors import MeshParseError
from .mesh import PolygonalCurve, TriSurface, check_closed_manifold

SURFACE_FORMATS = ("off", "vtk")
REFERENCE_FIELD = "reference_position"


def _num(x):
    return format(float(x), ".17g")


def _detect(path, fmt):
    if fmt is not None:
        fmt = fmt.lower().replace("vtk-legacy", "vtk")
        return fmt
    ext = Path(path).suffix.lower().lstrip(".")
    return ext


def sidecar_path(path):
    return Path(str(path) + ".ref")


class _Lines:
    """Non-empty, comment-stripped lines with their 1-based line numbers."""

    def __init__(self, path, comment="#"):
        self.path = str(path)
        with open(path) as fh:
            raw = fh.read().splitlines()
        self.n_raw = len(raw)
        self.items = []
        for k, line in enumerate(raw, start=1):
            if comment is not None:
                line = line.split(comment, 1)[0]
            line = line.strip()
            if line:
                self.items.append((k, line))
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.items):
            raise MeshParseError(f"unexpected end of file while reading {what}", self.n_raw + 1, self.path)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def error(self, message, line):
        return MeshParseError(message, line, self.path)


def _parse_numbers(lines, line_no, text, count, kind, what):
    parts = text.split()
    if len(parts) != count:
        raise lines.error(f"{what}: expected {count} values, found {len(parts)}", line_no)
    try:
        return [kind(p) for p in parts]
    except ValueError:
        raise lines.error(f"{what}: cannot parse {text!r}", line_no) from None


# --------------------------------------------------------------------------
# OFF


def write_off(path, surface):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{surface.n_vertices} {surface.n_triangles} 0\n")
        for v in surface.vertices:
            fh.write(" ".join(_num(x) for x in v) + "\n")
        for t in surface.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
    if not np.array_equal(surface.reference_positions, surface.vertices):
        _write_rows(sidecar_path(path), surface.reference_positions)
    elif sidecar_path(path).exists():
        os.remove(sidecar_path(path))


def _write_rows(path, rows):
    with open(path, "w") as fh:
        for r in rows:
            fh.write(" ".join(_num(x) for x in r) + "\n")


def read_off(path):
    lines = _Lines(path)
    line_no, text = lines.next("OFF header")
    parts = text.split()
    if parts[0] != "OFF":
        raise lines.error(f"expected 'OFF' header, found {parts[0]!r}", line_no)
    rest = parts[1:]
    if not rest:
        line_no, text = lines.next("vertex and face counts")
        rest = text.split()
    if len(rest) not in (2, 3):
        raise lines.error("expected '<vertices> <faces> [<edges>]'", line_no)
    try:
        nv, nf = int(rest[0]), int(rest[1])
    except ValueError:
        raise lines.error(f"cannot parse counts {' '.join(rest)!r}", line_no) from None
    if nv < 0 or nf < 0:
        raise lines.error("counts must be non-negative", line_no)
    vertices = np.empty((nv, 3))
    for i in range(nv):
        line_no, text = lines.next(f"vertex {i}")
        vertices[i] = _parse_numbers(lines, line_no, text, 3, float, f"vertex {i}")
    triangles = np.empty((nf, 3), dtype=np.int64)
    for j in range(nf):
        line_no, text = lines.next(f"face {j}")
        parts = text.split()
        if parts[0] != "3":
            raise lines.error(f"face {j}: only triangles are supported, found {parts[0]!r} corners", line_no)
        tri = _parse_numbers(lines, line_no, " ".join(parts[1:]), 3, int, f"face {j}")
        if min(tri) < 0 or max(tri) >= nv:
            raise lines.error(f"face {j}: vertex index out of range", line_no)
        triangles[j] = tri
    if lines.pos < len(lines.items):
        raise lines.error("unexpected trailing data", lines.items[lines.pos][0])
    reference = None
    side = sidecar_path(path)
    if side.exists():
        reference = _read_rows(side, nv, 3)
    check_closed_manifold(triangles, nv)
    return TriSurface(vertices, triangles, reference)


def _read_rows(path, n, width):
    lines = _Lines(path)
    out = np.empty((n, width))
    for i in range(n):
        line_no, text = lines.next(f"row {i}")
        out[i] = _parse_numbers(lines, line_no, text, width, float, f"row {i}")
    if lines.pos < len(lines.items):
        raise lines.error("more rows than vertices", lines.items[lines.pos][0])
    return out


# --------------------------------------------------------------------------
# legacy VTK


def _vtk_header(fh, title):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(f"{title}\n")
    fh.write("ASCII\n")
    fh.write("DATASET POLYDATA\n")


def write_vtk(path, surface):
    with open(path, "w") as fh:
        _vtk_header(fh, "triangulated surface")
        fh.write(f"POINTS {surface.n_vertices} double\n")
        for v in surface.vertices:
            fh.write(" ".join(_num(x) for x in v) + "\n")
        m = surface.n_triangles
        fh.write(f"POLYGONS {m} {4 * m}\n")
        for t in surface.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"POINT_DATA {surface.n_vertices}\n")
        fh.write(f"VECTORS {REFERENCE_FIELD} double\n")
        for v in surface.reference_positions:
            fh.write(" ".join(_num(x) for x in v) + "\n")


class _VtkReader:
    def __init__(self, path):
        # the second line of a legacy VTK file is a free-form title; '#' only starts the version line
        lines = _Lines(path, comment=None)
        self.lines = lines
        line_no, text = lines.next("VTK version line")
        if not text.startswith("# vtk DataFile"):
            raise lines.error("missing '# vtk DataFile' version line", line_no)
        lines.next("title")
        line_no, text = lines.next("format keyword")
        if text.upper() != "ASCII":
            raise lines.error(f"only ASCII files are supported, found {text!r}", line_no)
        line_no, text = lines.next("DATASET line")
        if text.split() != ["DATASET", "POLYDATA"]:
            raise lines.error(f"expected 'DATASET POLYDATA', found {text!r}", line_no)

    def points(self):
        line_no, text = self.lines.next("POINTS line")
        parts = text.split()
        if parts[0] != "POINTS" or len(parts) < 2:
            raise self.lines.error(f"expected POINTS, found {text!r}", line_no)
        n = self._int(parts[1], line_no)
        return self.vectors(n, "point")

    def vectors(self, n, what):
        """Read ``3 n`` floats, which legacy VTK allows to wrap across lines."""
        values = []
        while len(values) < 3 * n:
            line_no, text = self.lines.next(f"{what} {len(values) // 3}")
            for p in text.split():
                try:
                    values.append(float(p))
                except ValueError:
                    raise self.lines.error(f"{what} {len(values) // 3}: cannot parse {p!r}", line_no) from None
        if len(values) != 3 * n:
            raise self.lines.error(f"{what} data overruns the declared count", line_no)
        return np.array(values).reshape(n, 3)

    def cells(self, keyword, n_points):
        line_no, text = self.lines.next(f"{keyword} line")
        parts = text.split()
        if parts[0] != keyword or len(parts) != 3:
            raise self.lines.error(f"expected '{keyword} <n> <size>', found {text!r}", line_no)
        n = self._int(parts[1], line_no)
        out = []
        for j in range(n):
            line_no, text = self.lines.next(f"cell {j}")
            try:
                nums = [int(p) for p in text.split()]
            except ValueError:
                raise self.lines.error(f"cell {j}: cannot parse {text!r}", line_no) from None
            if not nums or nums[0] != len(nums) - 1:
                raise self.lines.error(f"cell {j}: count does not match the indices", line_no)
            if min(nums[1:], default=0) < 0 or max(nums[1:], default=0) >= n_points:
                raise self.lines.error(f"cell {j}: point index out of range", line_no)
            out.append((nums[1:], line_no))
        return out

    def point_data(self, n):
        """Dict of named point fields (VECTORS and SCALARS with one component)."""
        fields = {}
        if self.lines.pos >= len(self.lines.items):
            return fields
        line_no, text = self.lines.next("POINT_DATA line")
        parts = text.split()
        if parts[0] != "POINT_DATA" or len(parts) != 2 or self._int(parts[1], line_no) != n:
            raise self.lines.error(f"expected 'POINT_DATA {n}', found {text!r}", line_no)
        while self.lines.pos < len(self.lines.items):
            line_no, text = self.lines.next("field header")
            parts = text.split()
            if parts[0] == "VECTORS" and len(parts) >= 2:
                fields[parts[1]] = self.vectors(n, parts[1])
            elif parts[0] == "SCALARS" and len(parts) >= 2:
                line_no2, text2 = self.lines.next("LOOKUP_TABLE line")
                if not text2.startswith("LOOKUP_TABLE"):
                    raise self.lines.error("expected LOOKUP_TABLE", line_no2)
                vals = []
                while len(vals) < n:
                    ln, t = self.lines.next(f"{parts[1]} value {len(vals)}")
                    try:
                        vals.extend(float(p) for p in t.split())
                    except ValueError:
                        raise self.lines.error(f"cannot parse {t!r}", ln) from None
                fields[parts[1]] = np.array(vals[:n])
            else:
                raise self.lines.error(f"unsupported point data entry {text!r}", line_no)
        return fields

    def _int(self, text, line_no):
        try:
            return int(text)
        except ValueError:
            raise self.lines.error(f"cannot parse count {text!r}", line_no) from None


def read_vtk(path):
    reader = _VtkReader(path)
    vertices = reader.points()
    cells = reader.cells("POLYGONS", vertices.shape[0])
    triangles = np.empty((len(cells), 3), dtype=np.int64)
    for j, (idx, line_no) in enumerate(cells):
        if len(idx) != 3:
            raise reader.lines.error(f"polygon {j} is not a triangle", line_no)
        triangles[j] = idx
    fields = reader.point_data(vertices.shape[0])
    check_closed_manifold(triangles, vertices.shape[0])
    return TriSurface(vertices, triangles, fields.get(REFERENCE_FIELD))


# --------------------------------------------------------------------------
# dispatch


def write_mesh(path, surface, fmt=None):
    fmt = _detect(path, fmt)
    if fmt == "off":
        write_off(path, surface)
    elif fmt == "vtk":
        write_vtk(path, surface)
    else:
        raise ValueError(f"unknown surface format {fmt!r}; expected one of {SURFACE_FORMATS}")


def read_mesh(path, fmt=None):
    fmt = _detect(path, fmt)
    if fmt == "off":
        return read_off(path)
    if fmt == "vtk":
        return read_vtk(path)
    raise ValueError(f"unknown surface format {fmt!r}; expected one of {SURFACE_FORMATS}")


# --------------------------------------------------------------------------
# curves


def write_curve_csv(path, curve):
    with open(path, "w") as fh:
        fh.write("index,x,y\n")
        for i, (x, y) in enumerate(curve.vertices):
            fh.write(f"{i},{_num(x)},{_num(y)}\n")


def read_curve_csv(path):
    """Read ``index,x,y`` rows; the parameter grid is taken uniform."""
    lines = _Lines(path)
    line_no, text = lines.next("header")
    if [p.strip() for p in text.split(",")] != ["index", "x", "y"]:
        raise lines.error(f"expected header 'index,x,y', found {text!r}", line_no)
    pts = []
    for line_no, text in lines.items[1:]:
        parts = text.split(",")
        if len(parts) != 3:
            raise lines.error(f"expected 3 comma separated values, found {len(parts)}", line_no)
        try:
            idx, x, y = int(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise lines.error(f"cannot parse {text!r}", line_no) from None
        if idx != len(pts):
            raise lines.error(f"expected index {len(pts)}, found {idx}", line_no)
        pts.append((x, y))
    return PolygonalCurve(np.array(pts, dtype=float).reshape(-1, 2))


def write_curve_vtk(path, curve):
    """Closed polyline in the z = 0 plane, with the parameter values as point data."""
    n = curve.n
    with open(path, "w") as fh:
        _vtk_header(fh, "closed polygonal curve")
        fh.write(f"POINTS {n} double\n")
        for x, y in curve.vertices:
            fh.write(f"{_num(x)} {_num(y)} 0\n")
        fh.write(f"LINES 1 {n + 2}\n")
        fh.write(f"{n + 1} " + " ".join(str(i) for i in range(n)) + " 0\n")
        fh.write(f"POINT_DATA {n}\n")
        fh.write("SCALARS theta double 1\nLOOKUP_TABLE default\n")
        for t in curve.theta:
            fh.write(_num(t) + "\n")


def read_curve_vtk(path):
    reader = _VtkReader(path)
    pts = reader.points()
    cells = reader.cells("LINES", pts.shape[0])
    if len(cells) != 1:
        raise reader.lines.error("expected exactly one polyline", cells[-1][1] if cells else None)
    idx, line_no = cells[0]
    n = pts.shape[0]
    if idx != list(range(n)) + [0]:
        raise reader.lines.error("polyline must visit every point in order and close", line_no)
    fields = reader.point_data(n)
    return PolygonalCurve(pts[:, :2].copy(), fields.get("theta"))
