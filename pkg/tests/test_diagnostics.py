import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deturckflow.diagnostics import (
    CSV_COLUMNS,
    DiagnosticsRecord,
    eoc,
    extinction_time,
    extrapolated_extinction_time,
    h1_error_vs_circle,
    measure,
    read_csv,
    segment_ratio,
    sigma_max,
    triangle_sigma_values,
    write_csv,
)
from deturckflow.mesh import PolygonalCurve, TriSurface, generate_circle, generate_icosphere, generate_parametrized_curve


def exact_circle(N, t, R0=1.0, phase=0.0):
    theta = 2 * np.pi * np.arange(N) / N
    r = math.sqrt(R0 * R0 - 2 * t)
    return PolygonalCurve(np.column_stack([r * np.cos(theta + phase), r * np.sin(theta + phase)]), theta)


class TestSigma:
    def test_equilateral(self):
        v = [[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]]
        assert triangle_sigma_values(v, [[0, 1, 2]])[0] == pytest.approx(3.46410, abs=1e-5)

    def test_right_isosceles(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]
        assert triangle_sigma_values(v, [[0, 1, 2]])[0] == pytest.approx(4.82843, abs=1e-5)

    def test_mixed_mesh_takes_max(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0], [0, -1, 0]], dtype=float)
        s = TriSurface(v, np.array([[0, 1, 2], [0, 3, 1]]))
        assert sigma_max(s) == pytest.approx(4.82843, abs=1e-5)

    def test_degenerate_flagged_not_raised(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        s = TriSurface(v, np.array([[0, 1, 2]]))
        value, degenerate = sigma_max(s, with_flag=True)
        assert math.isinf(value) and degenerate

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_scale_invariant(self, lam):
        s = generate_icosphere(2)
        scaled = s.with_vertices(lam * s.vertices)
        assert sigma_max(scaled) == pytest.approx(sigma_max(s), rel=1e-12)

    def test_measure_flags_degeneration(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
        rec = measure(TriSurface(v, np.array([[0, 1, 2]])), 0.0)
        assert "near-degeneration" in rec.flags


class TestSegmentRatio:
    def test_regular_polygon(self):
        assert segment_ratio(generate_circle(17)) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("r", [1.5, 4.0])
    def test_graded_circle(self, r):
        c = generate_parametrized_curve(32, "example3_graded_circle", grading_ratio=r)
        assert segment_ratio(c) == pytest.approx(r, rel=1e-10)

    def test_at_least_one(self, rng):
        c = PolygonalCurve(rng.normal(size=(10, 2)))
        assert segment_ratio(c) >= 1.0


class TestH1Error:
    def test_interpolation_error_matches_fine_quadrature(self):
        N = 64
        l2, h1 = h1_error_vs_circle(exact_circle(N, 0.0), 0.0)
        # independent midpoint rule with 4000 points per segment
        s = (np.arange(4000) + 0.5) / 4000
        h = 2 * np.pi / N
        theta = h * (np.arange(N)[:, None] + s[None, :])
        k = np.arange(N)[:, None]
        a = np.stack([np.cos(h * k), np.sin(h * k)], -1)
        b = np.stack([np.cos(h * (k + 1)), np.sin(h * (k + 1))], -1)
        xh = a * (1 - s)[None, :, None] + b * s[None, :, None]
        exact = np.stack([np.cos(theta), np.sin(theta)], -1)
        dexact = np.stack([-np.sin(theta), np.cos(theta)], -1)
        ref_l2 = math.sqrt(np.sum((xh - exact) ** 2) * h / 4000)
        ref_h1 = math.sqrt(np.sum(((b - a) / h - dexact) ** 2) * h / 4000)
        assert l2 == pytest.approx(ref_l2, rel=1e-6)
        assert h1 == pytest.approx(ref_h1, rel=1e-6)
        # the chord sits pi^2 / (2 N^2) inside the circle at its midpoint
        assert 2e-3 < l2 < 2.5e-3

    def test_interpolation_error_rates(self):
        l2a, h1a = h1_error_vs_circle(exact_circle(32, 0.1), 0.1)
        l2b, h1b = h1_error_vs_circle(exact_circle(64, 0.1), 0.1)
        assert math.log2(l2a / l2b) == pytest.approx(2.0, abs=0.05)
        assert math.log2(h1a / h1b) == pytest.approx(1.0, abs=0.05)

    def test_rotation_increases_error(self):
        N = 32
        aligned = h1_error_vs_circle(exact_circle(N, 0.0), 0.0)
        rotated = h1_error_vs_circle(exact_circle(N, 0.0, phase=np.pi / N), 0.0)
        assert rotated[0] > aligned[0] and rotated[1] > aligned[1]

    def test_wrong_radius_l2(self):
        # a radius error of d contributes about sqrt(2 pi) d to the L2 error
        c = exact_circle(2048, 0.0, R0=1.01)
        l2, _ = h1_error_vs_circle(c, 0.0)
        assert l2 == pytest.approx(math.sqrt(2 * math.pi) * 0.01, rel=1e-3)

    @pytest.mark.parametrize("t", [0.5, 0.7])
    def test_beyond_extinction(self, t):
        with pytest.raises(ValueError):
            h1_error_vs_circle(generate_circle(8), t)


class TestEoc:
    def test_order_one(self):
        assert eoc([(0.1, 0.2), (0.05, 0.1)]).orders[0] == pytest.approx(1.0)

    def test_order_two(self):
        assert eoc([(0.1, 0.04), (0.05, 0.01)]).orders[0] == pytest.approx(2.0)

    @pytest.mark.parametrize(
        "table",
        [[(0.1, 0.2), (0.05, 0.0)], [(0.05, 0.2), (0.1, 0.1)], [(0.1, 0.2)], [(0.1, 0.2), (0.1, 0.1)], [(0.1, np.nan), (0.05, 0.1)]],
    )
    def test_invalid(self, table):
        with pytest.raises(ValueError):
            eoc(table)

    def test_rows(self):
        rows = eoc([(0.1, 0.2), (0.05, 0.1), (0.025, 0.05)]).rows()
        assert rows[0][2] is None and len(rows) == 3


def circle_series(R0, tau):
    n = int(round(0.5 * R0 * R0 / tau))
    t = tau * np.arange(n + 1)
    return [DiagnosticsRecord(float(x), 2 * math.pi * math.sqrt(max(R0 * R0 - 2 * x, 0.0)), 1.0) for x in t]


class TestExtinction:
    @pytest.mark.parametrize("R0", [1.0, 0.7])
    def test_circle(self, R0):
        tau = 1e-3
        t = extinction_time(circle_series(R0, tau), 1e-3)
        assert abs(t - 0.5 * R0 * R0) <= tau

    def test_constant_series(self):
        assert extinction_time([DiagnosticsRecord(float(k), 1.0, 1.0) for k in range(5)], 0.5) is None

    def test_interpolation(self):
        series = [DiagnosticsRecord(0.0, 1.0, 1.0), DiagnosticsRecord(1.0, 0.5, 1.0), DiagnosticsRecord(2.0, 0.0, 1.0)]
        assert extinction_time(series, 0.25) == pytest.approx(1.5)

    def test_empty(self):
        with pytest.raises(ValueError):
            extinction_time([], 0.1)

    def test_linear_extrapolation(self):
        series = [DiagnosticsRecord(t, 4 * math.pi * (1 - 4 * t), 1.0) for t in (0.0, 0.1, 0.2)]
        assert extrapolated_extinction_time(series) == pytest.approx(0.25, rel=1e-12)

    def test_extrapolation_needs_decay(self):
        series = [DiagnosticsRecord(0.0, 1.0, 1.0), DiagnosticsRecord(1.0, 1.0, 1.0)]
        assert extrapolated_extinction_time(series) is None


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        records = [
            DiagnosticsRecord(float(t), float(rng.random()), float(rng.random() * 10), 0.1 / 3, 1 / 7, float("nan"), k, ("a", "b") if k else ())
            for k, t in enumerate(np.linspace(0, 1, 7))
        ]
        write_csv(tmp_path / "d.csv", records)
        back = read_csv(tmp_path / "d.csv")
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert a.row() == b.row()
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)

    def test_measure_curve_speed(self):
        c = generate_circle(8)
        moved = c.with_vertices(c.vertices * 0.9)
        rec = measure(moved, 0.1, prev=c, tau=0.01)
        assert rec.max_speed == pytest.approx(10.0)
        assert rec.quality == pytest.approx(1.0)
        assert rec.size == pytest.approx(0.9 * 16 * math.sin(math.pi / 8))
