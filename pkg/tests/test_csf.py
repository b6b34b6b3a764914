import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deturckflow.csf import (
    BgnCurveConfig,
    CsfConfig,
    CsfState,
    bgn_nodal_rho,
    csf_element_mass_kernel,
    csf_system,
    dirichlet_energy,
    mass_coefficients,
    max_vertex_speed,
    step_bgn_curve,
    step_csf,
)
from deturckflow.diagnostics import segment_ratio
from deturckflow.errors import FixedPointNonConvergence, InvalidMeshError, SingularKernelError
from deturckflow.mesh import PolygonalCurve, generate_circle, generate_parametrized_curve
from deturckflow.solvers import SolverConfig, dense_lu_solve


def run_csf(curve, alpha, tau, steps, solver=None):
    cfg = CsfConfig(alpha, tau) if solver is None else CsfConfig(alpha, tau, solver)
    state = CsfState(curve)
    for _ in range(steps):
        state = step_csf(state, cfg)
    return state


def rotation(angle):
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


def wobbly_curve(rng, n=24):
    theta = 2 * np.pi * np.arange(n) / n
    r = 1 + 0.2 * np.cos(3 * theta) + 0.05 * rng.uniform(-1, 1, n)
    return PolygonalCurve(np.column_stack([r * np.cos(theta), r * np.sin(theta)]), theta)


class TestKernel:
    def test_mass_coefficients_example(self):
        np.testing.assert_allclose(mass_coefficients(0.5, [0.0, 2.0])[0], [[2.0, 0.0], [0.0, 4.0]])

    def test_alpha_one_is_isotropic(self):
        c = mass_coefficients(1.0, [[3.0, 4.0]])[0]
        np.testing.assert_allclose(c, 25 * np.eye(2))

    def test_alpha_zero_is_normal_projection(self, rng):
        rho = rng.normal(size=2)
        c = mass_coefficients(0.0, rho)[0]
        np.testing.assert_allclose(c, np.outer(rho, rho))

    def test_element_kernel_structure(self):
        k = csf_element_mass_kernel(0.3, 0.5, [0.0, 2.0])[0]
        coeff = np.array([[2.0, 0.0], [0.0, 4.0]])
        np.testing.assert_allclose(k, np.kron(np.array([[2, 1], [1, 2]]) * 0.3 / 6, coeff), rtol=1e-14)

    def test_alpha_zero_degenerate_segment(self):
        with pytest.raises(SingularKernelError, match="segment 1"):
            csf_element_mass_kernel([0.1, 0.1], 0.0, [[1.0, 0.0], [0.0, 0.0]])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CsfConfig(0.5, 0.0)
        with pytest.raises(ValueError):
            CsfConfig(-0.1, 1e-3)
        with pytest.raises(ValueError):
            BgnCurveConfig(1e-3, damping=0.0)
        with pytest.raises(ValueError):
            BgnCurveConfig(1e-3, damping=1.5)


class TestAlphaScheme:
    @pytest.mark.parametrize("alpha", [1.0, 0.5, 0.01, 0.0])
    def test_circle_stays_round(self, alpha):
        tau = 1e-3
        state = run_csf(generate_circle(32), alpha, tau, 100)
        r = np.linalg.norm(state.curve.vertices, axis=1)
        assert r.max() - r.min() < 1e-12
        assert state.time == pytest.approx(0.1, rel=1e-14)
        assert r.mean() == pytest.approx(np.sqrt(1 - 2 * state.time), abs=5e-3)

    @pytest.mark.parametrize("alpha", [1.0, 0.3, 1e-3])
    def test_matches_dense_lu(self, alpha, rng):
        curve = wobbly_curve(rng)
        A, b, _, _ = csf_system(curve, alpha, 1e-3)
        ref = dense_lu_solve(A, b).x
        new = step_csf(CsfState(curve), CsfConfig(alpha, 1e-3, SolverConfig("cg", tol=1e-12)))
        assert np.max(np.abs(new.curve.vertices.ravel() - ref)) < 1e-8

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([1.0, 0.1]))
    def test_rigid_motion_equivariance(self, angle, dx, dy, alpha):
        curve = generate_parametrized_curve(24, "example2_fourpetal")
        R = rotation(angle)
        shift = np.array([dx, dy])
        a = run_csf(curve, alpha, 1e-3, 3).curve.vertices
        b = run_csf(curve.with_vertices(curve.vertices @ R.T + shift), alpha, 1e-3, 3).curve.vertices
        np.testing.assert_allclose(b, a @ R.T + shift, atol=1e-9)

    def test_parabolic_scaling(self):
        curve = generate_parametrized_curve(24, "example1_flattened_circle")
        s = 2.5
        a = run_csf(curve, 0.5, 1e-3, 3).curve.vertices
        b = run_csf(curve.with_vertices(s * curve.vertices), 0.5, s * s * 1e-3, 3).curve.vertices
        np.testing.assert_allclose(b, s * a, atol=1e-9)

    def test_first_order_in_time(self):
        # one step of tau and two of tau/2 differ by O(tau^2)
        curve = generate_parametrized_curve(16, "example1_flattened_circle")
        solver = SolverConfig("cg", tol=1e-14)
        diffs = []
        for tau in (1e-3, 5e-4, 2.5e-4):
            one = run_csf(curve, 0.5, tau, 1, solver).curve.vertices
            two = run_csf(curve, 0.5, tau / 2, 2, solver).curve.vertices
            diffs.append(np.max(np.abs(one - two)))
        ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
        assert np.all((ratios > 3.0) & (ratios < 5.0))

    @pytest.mark.parametrize("alpha", [1.0, 0.1, 1e-4])
    def test_energy_stability(self, alpha, rng):
        state = run_csf(wobbly_curve(rng), alpha, 1e-3, 100)
        assert state.stability_violations == 0
        assert state.stability_lhs <= state.initial_energy + 1e-8

    def test_energy_decreases(self, rng):
        curve = wobbly_curve(rng)
        state = run_csf(curve, 0.5, 1e-3, 20)
        assert dirichlet_energy(state.curve) < dirichlet_energy(curve)

    def test_does_not_mutate_input(self, rng):
        curve = wobbly_curve(rng)
        before = curve.vertices.copy()
        run_csf(curve, 0.5, 1e-3, 2)
        np.testing.assert_array_equal(curve.vertices, before)


class TestBgnCurve:
    def run(self, curve, tau, steps, **kw):
        cfg = BgnCurveConfig(tau, **kw)
        state = CsfState(curve)
        iterations = []
        for _ in range(steps):
            state, it = step_bgn_curve(state, cfg)
            iterations.append(it)
        return state, iterations

    def test_nodal_rho_on_circle_is_normal(self):
        c = generate_circle(16)
        rho = bgn_nodal_rho(c, c.parameter_spacing())
        cos = np.einsum("ij,ij->i", rho, c.vertices) / np.linalg.norm(rho, axis=1)
        # rot(X_theta) points inwards for an anticlockwise curve
        np.testing.assert_allclose(np.abs(cos), 1.0, atol=1e-12)

    def test_circle_shrinks(self):
        state, _ = self.run(generate_circle(32), 1e-3, 50)
        r = np.linalg.norm(state.curve.vertices, axis=1)
        assert r.max() - r.min() < 1e-8
        assert r.mean() == pytest.approx(np.sqrt(1 - 2 * state.time), abs=5e-3)

    def test_equidistribution(self):
        curve = generate_parametrized_curve(32, "example3_graded_circle", grading_ratio=3.0)
        state, _ = self.run(curve, 1e-2, 5, damping=0.5)
        assert segment_ratio(curve) == pytest.approx(3.0)
        assert segment_ratio(state.curve) < 1.01

    def test_equivariance(self, rng):
        curve = generate_parametrized_curve(24, "example2_fourpetal")
        R = rotation(rng.uniform(0, 2 * np.pi))
        a, _ = self.run(curve, 1e-3, 2)
        b, _ = self.run(curve.with_vertices(curve.vertices @ R.T), 1e-3, 2)
        np.testing.assert_allclose(b.curve.vertices, a.curve.vertices @ R.T, atol=1e-7)

    def test_non_convergence_raises(self):
        curve = generate_parametrized_curve(64, "example3_graded_circle", grading_ratio=1.5)
        with pytest.raises(FixedPointNonConvergence) as info:
            self.run(curve, 1e-4, 1, max_iterations=50)
        err = info.value
        assert err.iterations == 50
        assert err.previous.shape == err.last.shape == (64, 2)

    def test_damping_restores_convergence(self):
        curve = generate_parametrized_curve(64, "example3_graded_circle", grading_ratio=1.5)
        _, its = self.run(curve, 1e-4, 1, damping=0.5)
        assert its[0] <= 1000


class TestSpeed:
    def test_example(self):
        a = np.zeros((3, 2))
        b = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]])
        assert max_vertex_speed(a, b, 0.5) == pytest.approx(10.0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidMeshError):
            max_vertex_speed(np.zeros((3, 2)), np.zeros((4, 2)), 1.0)
