"""Mesh quality, errors against closed-form solutions, and convergence orders."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import PolygonalCurve, triangle_shape

CSV_COLUMNS = ("time", "size", "sigma_max_or_ratio", "max_speed", "energy_lhs", "energy_rhs", "iterations", "flags")

# 5-point Gauss-Legendre rule on [0, 1]; exact for polynomials of degree 9
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GAUSS_NODES = 0.5 * (_GL_X + 1.0)
GAUSS_WEIGHTS = 0.5 * _GL_W


def triangle_sigma_values(points, triangles):
    """Per-triangle diameter / inradius (inf for zero area)."""
    return triangle_shape(points, triangles)[0]


def sigma_max(surface, with_flag=False):
    """Largest diameter/inradius over all triangles.

    A degenerate triangle yields ``inf``; with ``with_flag`` the pair
    ``(value, degenerate)`` is returned instead of raising.
    """
    value = float(np.max(triangle_sigma_values(surface.vertices, surface.triangles)))
    if with_flag:
        return value, not math.isfinite(value)
    return value


def segment_ratio(curve):
    lengths = curve.segment_lengths()
    return float(lengths.max() / lengths.min())


def _exact_circle(theta, t, R0):
    r2 = R0 * R0 - 2.0 * t
    r = math.sqrt(r2)
    return r * np.cos(theta), r * np.sin(theta), r


def h1_error_vs_circle(curve, t, R0=1.0):
    """(L2 error, H1-seminorm error) of ``curve`` against the shrinking circle.

    The exact solution is ``sqrt(R0^2 - 2t) (cos theta, sin theta)``.  The
    integrals over each parameter interval use a fixed 5-point Gauss rule
    (exact for degree 9 polynomials), so errors are reproducible bit for bit.
    """
    if not t < 0.5 * R0 * R0:
        raise ValueError(f"t = {t} is at or beyond the extinction time {0.5 * R0 * R0}")
    x = curve.vertices
    th0 = curve.theta
    h = curve.parameter_spacing()
    x1 = np.roll(x, -1, axis=0)
    th = th0[:, None] + h[:, None] * GAUSS_NODES[None, :]  # (N, 5)
    s = GAUSS_NODES[None, :, None]
    xh = x[:, None, :] * (1.0 - s) + x1[:, None, :] * s
    dxh = ((x1 - x) / h[:, None])[:, None, :]
    ex, ey, r = _exact_circle(th, t, R0)
    exact = np.stack([ex, ey], axis=-1)
    dexact = np.stack([-ey, ex], axis=-1)
    w = h[:, None] * GAUSS_WEIGHTS[None, :]
    l2 = math.sqrt(float(np.sum(w * np.sum((xh - exact) ** 2, axis=-1))))
    h1 = math.sqrt(float(np.sum(w * np.sum((dxh - dexact) ** 2, axis=-1))))
    return l2, h1


@dataclass(frozen=True)
class EocTable:
    h: tuple
    errors: tuple
    orders: tuple

    def rows(self):
        out = [(self.h[0], self.errors[0], None)]
        out += [(h, e, o) for h, e, o in zip(self.h[1:], self.errors[1:], self.orders)]
        return out


def eoc(table):
    """Pairwise orders ln(e_i / e_{i+1}) / ln(h_i / h_{i+1}) of (h, error) rows."""
    rows = [(float(h), float(e)) for h, e in table]
    if len(rows) < 2:
        raise ValueError("an EOC table needs at least two rows")
    h = np.array([r[0] for r in rows])
    e = np.array([r[1] for r in rows])
    if not np.all(np.isfinite(h)) or not np.all(h > 0):
        raise ValueError("mesh sizes must be positive and finite")
    if not np.all(np.diff(h) < 0):
        raise ValueError("mesh sizes must be strictly decreasing")
    if not np.all(np.isfinite(e)) or not np.all(e > 0):
        raise ValueError("errors must be positive and finite")
    orders = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    return EocTable(tuple(h.tolist()), tuple(e.tolist()), tuple(orders.tolist()))


@dataclass(frozen=True)
class DiagnosticsRecord:
    """One sample of a run.

    ``quality`` is sigma_max for surfaces and the segment ratio for curves;
    the energy columns are only meaningful for the alpha-scheme on curves
    (NaN elsewhere).
    """

    time: float
    size: float
    quality: float
    max_speed: float = 0.0
    energy_lhs: float = float("nan")
    energy_rhs: float = float("nan")
    iterations: int = 0
    flags: tuple = field(default_factory=tuple)

    def row(self):
        return [
            _fmt(self.time),
            _fmt(self.size),
            _fmt(self.quality),
            _fmt(self.max_speed),
            _fmt(self.energy_lhs),
            _fmt(self.energy_rhs),
            str(int(self.iterations)),
            ";".join(self.flags),
        ]


def _fmt(x):
    return repr(float(x))


def measure(mesh, time, prev=None, tau=None, iterations=0, energy_lhs=float("nan"), energy_rhs=float("nan"), flags=()):
    """Build a DiagnosticsRecord for a curve or surface.

    The speed is the largest vertex displacement from ``prev`` divided by
    ``tau`` (0 without a previous mesh).
    """
    flags = list(flags)
    if isinstance(mesh, PolygonalCurve):
        size = float(np.sum(mesh.segment_lengths()))
        quality = segment_ratio(mesh)
    else:
        sig, area = mesh.triangle_shape
        size = float(np.sum(area))
        quality = float(np.max(sig))
        if not math.isfinite(quality):
            flags.append("near-degeneration")
    speed = 0.0
    if prev is not None and tau:
        speed = float(np.max(np.linalg.norm(mesh.vertices - prev.vertices, axis=1))) / tau
    return DiagnosticsRecord(time, size, quality, speed, energy_lhs, energy_rhs, iterations, tuple(flags))


def extinction_time(series, threshold):
    """First time the size drops below ``threshold`` times the initial size.

    Linearly interpolated between the bracketing samples; None if the series
    never gets there.
    """
    if not series:
        raise ValueError("empty series")
    times = np.array([r.time for r in series], dtype=float)
    sizes = np.array([r.size for r in series], dtype=float)
    level = threshold * sizes[0]
    below = np.nonzero(sizes < level)[0]
    if below.size == 0:
        return None
    k = int(below[0])
    if k == 0:
        return float(times[0])
    t0, t1, s0, s1 = times[k - 1], times[k], sizes[k - 1], sizes[k]
    return float(t0 + (s0 - level) / (s0 - s1) * (t1 - t0))


def extrapolated_extinction_time(series, tail=2):
    """Zero of the straight line through the last ``tail`` (time, size) samples.

    Suited to sizes that decay linearly in time, such as the area of a
    shrinking sphere.
    """
    if len(series) < 2:
        raise ValueError("need at least two samples to extrapolate")
    pts = series[-tail:]
    t = np.array([r.time for r in pts])
    s = np.array([r.size for r in pts])
    slope, intercept = np.polyfit(t, s, 1)
    span = float(t[-1] - t[0])
    # a slope within roundoff of zero means the size is not decaying
    if not span > 0 or not slope * span < -1e-12 * float(np.max(np.abs(s))):
        return None
    return float(-intercept / slope)


def write_csv(path, records):
    """Write records with the fixed column order; floats use repr for exact round trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                DiagnosticsRecord(
                    float(row["time"]),
                    float(row["size"]),
                    float(row["sigma_max_or_ratio"]),
                    float(row["max_speed"]),
                    float(row["energy_lhs"]),
                    float(row["energy_rhs"]),
                    int(row["iterations"]),
                    tuple(f for f in row["flags"].split(";") if f),
                )
            )
    return out
