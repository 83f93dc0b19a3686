from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

import topoderiv as td
from topoderiv.fem import interpolate, load_vector, solve_linear

from conftest import UNIT_SQUARE, random_admissible_matrix, unit_spec


def identity_field(mesh, value=1.0, alpha=1.0):
    params = td.AdmissibilityParams(alpha)
    return td.isotropic_field(mesh, np.full(mesh.n_elements, value), params)


def interior_test_vectors(mesh, rng, k=10):
    vs = rng.normal(size=(k, mesh.n_vertices))
    vs[:, list(mesh.boundary_nodes)] = 0.0
    return vs


def sin_product_spec(mesh):
    f = interpolate(mesh, lambda x, y: 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y))
    target = np.zeros(mesh.n_vertices)
    return td.ProblemSpec(mesh, identity_field(mesh), f, target, source_kind="nodal")


class TestAssemble:
    def test_identity_coefficient_gives_five_point_stencil(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 4)
        ops = td.assemble(mesh, identity_field(mesh))
        vid = int(np.argmin(np.abs(mesh.vertices - 0.5).sum(axis=1)))
        row = ops.stiffness.getrow(vid).toarray().ravel()
        neighbors = {}
        for j in np.nonzero(np.abs(row) > 1e-14)[0]:
            neighbors[tuple(np.round(mesh.vertices[j] - 0.5, 6))] = row[j]
        assert neighbors == {
            (0.0, 0.0): 4.0,
            (0.25, 0.0): -1.0,
            (-0.25, 0.0): -1.0,
            (0.0, 0.25): -1.0,
            (0.0, -0.25): -1.0,
        }

    def test_constants_in_stiffness_kernel(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 6)
        ops = td.assemble(mesh, identity_field(mesh))
        ones = np.ones(mesh.n_vertices)
        assert np.abs(ops.stiffness @ ones).max() <= 1e-12

    def test_doubling_coefficient_doubles_stiffness(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 5)
        k1 = td.assemble(mesh, identity_field(mesh)).stiffness
        k2 = td.assemble(mesh, identity_field(mesh, 2.0)).stiffness
        assert abs(k2 - 2.0 * k1).max() <= 1e-13

    def test_skew_part_assembles_skew(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 5)
        a = np.array([[2.0, 0.7], [-0.7, 2.0]])
        params = td.AdmissibilityParams(1.0)
        fwd = td.CoefficientField(np.tile(a, (mesh.n_elements, 1, 1)), params)
        bwd = td.CoefficientField(np.tile(a.T, (mesh.n_elements, 1, 1)), params)
        diff = (td.assemble(mesh, fwd).stiffness - td.assemble(mesh, bwd).stiffness).toarray()
        assert np.abs(diff + diff.T).max() <= 1e-13

    def test_mass_integrates_one_to_domain_area(self):
        mesh = td.build_rect_mesh((0.0, 0.0, 2.0, 1.0), 6)
        m = td.mass_matrix(mesh)
        ones = np.ones(mesh.n_vertices)
        assert abs(ones @ (m @ ones) - 2.0) <= 1e-12

    def test_symmetric_flag_detects_skew(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 3)
        sym = td.assemble(mesh, identity_field(mesh))
        a = np.array([[1.0, 0.5], [-0.5, 1.0]])
        params = td.AdmissibilityParams(1.0)
        skewed = td.CoefficientField(np.tile(a, (mesh.n_elements, 1, 1)), params)
        assert sym.symmetric
        assert not td.assemble(mesh, skewed).symmetric


class TestSolveState:
    def test_manufactured_second_order_ratios(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 8)
        errors = []
        for _ in range(4):
            spec = sin_product_spec(mesh)
            y = td.solve_state(spec)
            err = td.l2_error(spec.mesh, y, lambda x, z: np.sin(np.pi * x) * np.sin(np.pi * z))
            errors.append(err)
            mesh = td.uniform_refine(mesh)
        ratios = [errors[k] / errors[k + 1] for k in range(3)]
        assert all(3.6 <= r <= 4.4 for r in ratios), ratios

    def test_zero_source_gives_zero_state(self):
        spec = unit_spec(8, f=0.0)
        y = td.solve_state(spec)
        assert np.abs(y).max() <= 1e-14

    def test_scaling_coefficient_scales_state(self):
        spec1 = unit_spec(16, coeff_value=1.0)
        spec3 = unit_spec(16, coeff_value=3.0)
        y1 = td.solve_state(spec1)
        y3 = td.solve_state(spec3)
        assert np.abs(3.0 * y3 - y1).max() <= 1e-10 * np.abs(y1).max()

    def test_dirichlet_values_are_zero(self):
        spec = unit_spec(12)
        y = td.solve_state(spec)
        assert np.abs(y[list(spec.mesh.boundary_nodes)]).max() == 0.0

    def test_energy_identity(self):
        spec = unit_spec(16)
        ops = td.assemble(spec.mesh, spec.coeff)
        y = td.solve_state(spec, ops=ops)
        load = load_vector(spec.mesh, ops, spec)
        lhs = y @ (ops.stiffness @ y)
        rhs = load @ y
        assert abs(lhs - rhs) <= 1e-10 * abs(rhs)

    def test_energy_decreases_when_coefficient_grows(self):
        spec1 = unit_spec(16, coeff_value=1.0)
        ops1 = td.assemble(spec1.mesh, spec1.coeff)
        y1 = td.solve_state(spec1, ops=ops1)
        load = load_vector(spec1.mesh, ops1, spec1)
        spec2 = unit_spec(16, coeff_value=2.5)
        y2 = td.solve_state(spec2)
        assert load @ y2 < load @ y1


class TestSolveAdjoint:
    def test_state_equal_target_gives_zero_adjoint(self):
        spec = unit_spec(8)
        y = td.solve_state(spec)
        matched = td.ProblemSpec(spec.mesh, spec.coeff, spec.source_nodal, y, source_kind="nodal")
        p = td.solve_adjoint(matched, y)
        assert np.abs(p).max() <= 1e-12

    def test_adjoint_equals_state_when_rhs_matches_load(self):
        # with symmetric a and y_d := y - f the adjoint system is the state system
        spec = unit_spec(12)
        y = td.solve_state(spec)
        shifted = td.ProblemSpec(spec.mesh, spec.coeff, spec.source_nodal,
                                 y - spec.source_nodal, source_kind="nodal")
        p = td.solve_adjoint(shifted, y)
        assert np.abs(p - y).max() <= 1e-10 * np.abs(y).max()

    def test_weak_form_residual_nonsymmetric(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 16)
        a = np.array([[2.0, 1.0], [-1.0, 2.0]])
        params = td.AdmissibilityParams(1.0)
        field = td.CoefficientField(np.tile(a, (mesh.n_elements, 1, 1)), params)
        spec = td.ProblemSpec(mesh, field, np.ones(mesh.n_vertices),
                              np.zeros(mesh.n_vertices), source_kind="nodal")
        ops = td.assemble(mesh, field)
        y = td.solve_state(spec, ops=ops)
        p = td.solve_adjoint(spec, y, ops=ops)
        rhs = ops.mass @ (y - np.zeros(mesh.n_vertices))
        rng = np.random.default_rng(11)
        scale = np.linalg.norm(rhs)
        for v in interior_test_vectors(mesh, rng):
            lhs = v @ (ops.stiffness.T @ p)
            assert abs(lhs - v @ rhs) <= 1e-10 * max(1.0, np.linalg.norm(v)) * max(1.0, scale)


class TestAveragedAdjoint:
    def test_reduces_to_adjoint_without_perturbation(self):
        spec = unit_spec(12)
        ops = td.assemble(spec.mesh, spec.coeff)
        y = td.solve_state(spec, ops=ops)
        p = td.solve_adjoint(spec, y, ops=ops)
        pa = td.solve_averaged_adjoint(spec, y, y, ops_r=ops)
        assert np.abs(pa - p).max() <= 1e-12 * max(1.0, np.abs(p).max())

    def test_zero_when_states_match_target(self):
        spec = unit_spec(8)
        y = td.solve_state(spec)
        matched = td.ProblemSpec(spec.mesh, spec.coeff, spec.source_nodal, y, source_kind="nodal")
        pa = td.solve_averaged_adjoint(matched, y, y)
        assert np.abs(pa).max() <= 1e-12

    def test_weak_form_residual_perturbed(self):
        spec = unit_spec(16)
        pert = td.PerturbationSpec(td.ball_shape((0.5, 0.5), 0.2), 2.0 * np.eye(2))
        coeff_r = td.perturb(spec.coeff, spec.mesh, pert, "area_fraction")
        spec_r = spec.with_coeff(coeff_r)
        ops = td.assemble(spec.mesh, spec.coeff)
        ops_r = td.assemble(spec.mesh, coeff_r)
        y = td.solve_state(spec, ops=ops)
        y_r = td.solve_state(spec_r, ops=ops_r)
        pa = td.solve_averaged_adjoint(spec_r, y_r, y, ops_r=ops_r)
        rhs = td.mass_matrix(spec.mesh) @ (0.5 * (y_r + y) - spec.target_nodal)
        rng = np.random.default_rng(4)
        for v in interior_test_vectors(spec.mesh, rng):
            lhs = v @ (ops_r.stiffness.T @ pa)
            assert abs(lhs - v @ rhs) <= 1e-10 * max(1.0, np.linalg.norm(v))


class TestEvalCost:
    def test_zero_when_matched(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 4)
        y = np.linspace(0.0, 1.0, mesh.n_vertices)
        assert td.eval_cost(mesh, y, y) == 0.0

    def test_unit_constant_mismatch(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 8)
        y = np.ones(mesh.n_vertices)
        y_d = np.zeros(mesh.n_vertices)
        assert abs(td.eval_cost(mesh, y, y_d) - 0.5) <= 1e-12

    def test_linear_mismatch_exact_integral(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 8)
        y = mesh.vertices[:, 0].copy()
        y_d = np.zeros(mesh.n_vertices)
        assert abs(td.eval_cost(mesh, y, y_d) - 1.0 / 6.0) <= 1e-12

    def test_cost_nonnegative_random(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 4)
        rng = np.random.default_rng(2)
        for _ in range(20):
            y = rng.normal(size=mesh.n_vertices)
            y_d = rng.normal(size=mesh.n_vertices)
            assert td.eval_cost(mesh, y, y_d) >= 0.0


class TestGradients:
    def test_linear_fields_reproduced_exactly(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 6)
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        assert np.allclose(td.gradient_at(mesh, 3.0 * x, (0.4, 0.7)), (3.0, 0.0))
        assert np.allclose(td.gradient_at(mesh, np.full(mesh.n_vertices, 5.0), (0.3, 0.3)), (0.0, 0.0))
        assert np.allclose(td.gradient_at(mesh, x + 2.0 * y, (0.6, 0.2)), (1.0, 2.0))

    def test_element_gradients_match_gradient_at(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 4)
        rng = np.random.default_rng(9)
        field = rng.normal(size=mesh.n_vertices)
        grads = td.element_gradients(mesh, field)
        assert grads.shape == (mesh.n_elements, 2)
        for eid in (0, 7, 15):
            got = td.gradient_at(mesh, field, mesh.element_centroids[eid])
            assert np.allclose(got, grads[eid])

    def test_gradient_outside_domain_raises(self):
        mesh = td.build_rect_mesh(UNIT_SQUARE, 4)
        with pytest.raises(td.PointLocationError):
            td.gradient_at(mesh, np.zeros(mesh.n_vertices), (3.0, 0.5))


class TestSolveLinear:
    def test_zero_rhs_returns_zero(self):
        a = sp.eye(5, format="csr")
        x = solve_linear(a, np.zeros(5), symmetric=True)
        assert np.array_equal(x, np.zeros(5))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_singular_matrix_reports_solver_error(self):
        a = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(td.SolverError):
            solve_linear(a, np.array([1.0, 1.0]), symmetric=True)

    def test_repeated_solves_bit_identical(self):
        spec = unit_spec(24)
        y1 = td.solve_state(spec)
        y2 = td.solve_state(spec)
        assert np.array_equal(y1, y2)

    def test_solve_problem_bundles_cost(self):
        spec = unit_spec(16)
        sol = td.solve_problem(spec)
        assert sol.cost >= 0.0
        assert abs(sol.cost - td.eval_cost(spec.mesh, sol.y, spec.target_nodal)) == 0.0
        assert np.abs(sol.y[list(spec.mesh.boundary_nodes)]).max() == 0.0
        assert np.abs(sol.p[list(spec.mesh.boundary_nodes)]).max() == 0.0
