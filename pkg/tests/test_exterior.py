from __future__ import annotations

import numpy as np
import pytest

import topoderiv as td
from topoderiv.exterior import ExteriorConfig, build_exterior_mesh

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])


def ball_config(a0=1.0, b=2.0, trunc=12.0, resolution=64):
    return ExteriorConfig(a0=a0, b=np.asarray(b, dtype=float) * np.eye(2)
                          if np.ndim(b) == 0 else np.asarray(b, dtype=float),
                          truncation_radius=trunc, resolution=resolution)


class TestExteriorConfig:
    def test_rejects_small_truncation_radius(self):
        with pytest.raises(ValueError):
            ExteriorConfig(a0=1.0, b=2.0 * np.eye(2), truncation_radius=5.0,
                           resolution=64)

    def test_rejects_inadmissible_contrast(self):
        with pytest.raises(td.AdmissibilityError):
            ExteriorConfig(a0=1.0, b=np.array([[1.0, 2.0], [0.0, 1.0]]),
                           truncation_radius=20.0, resolution=64)

    def test_rejects_offcenter_shape(self):
        shape = td.ball_shape((0.5, 0.0), 1.0)
        with pytest.raises(ValueError):
            ExteriorConfig(shape=shape, a0=1.0, b=2.0 * np.eye(2),
                           truncation_radius=20.0, resolution=64)

    def test_truncation_scales_with_circumradius(self):
        shape = td.ellipse_shape((0.0, 0.0), 1.0, 4.0, 0.0)  # circumradius 2
        with pytest.raises(ValueError):
            ExteriorConfig(shape=shape, a0=1.0, b=2.0 * np.eye(2),
                           truncation_radius=15.0, resolution=64)


class TestExteriorMesh:
    def test_mesh_brackets_inclusion_and_truncation(self):
        cfg = ball_config()
        mesh, mask = build_exterior_mesh(cfg)
        assert np.all(mesh.element_areas > 0.0)
        radii = np.linalg.norm(mesh.vertices, axis=1)
        assert abs(radii.max() - cfg.truncation_radius) <= 1e-9 * cfg.truncation_radius
        inc_area = mesh.element_areas[mask].sum()
        assert abs(inc_area - np.pi) / np.pi <= 0.02

    def test_boundary_nodes_on_truncation_circle(self):
        cfg = ball_config()
        mesh, _ = build_exterior_mesh(cfg)
        rim = np.linalg.norm(mesh.vertices[list(mesh.boundary_nodes)], axis=1)
        assert rim.min() >= cfg.truncation_radius * (1.0 - 1e-9)


class TestSolveK:
    def test_zero_forcing_gives_zero_field(self):
        sol = td.solve_K(ball_config(), np.zeros(2))
        assert np.abs(sol.field).max() == 0.0
        assert np.array_equal(sol.moment, np.zeros(2))

    def test_no_contrast_gives_zero_field(self):
        sol = td.solve_K(ball_config(b=1.0), E1)
        assert np.abs(sol.field).max() <= 1e-12

    def test_ball_interior_gradient_matches_closed_form(self):
        sol = td.solve_K(ball_config(), E1)
        mean, rel_std = td.inclusion_gradient_stats(sol)
        want = np.array([-1.0 / 3.0, 0.0])
        assert np.linalg.norm(mean - want) <= 0.05 * np.linalg.norm(want)
        assert rel_std <= 0.05

    def test_ball_moment_matches_closed_form(self):
        sol = td.solve_K(ball_config(), E1)
        want = np.array([-np.pi / 3.0, 0.0])
        assert np.linalg.norm(sol.moment - want) <= 0.05 * np.linalg.norm(want)

    def test_gauge_pinned_at_node(self):
        sol = td.solve_K(ball_config(), E1)
        assert sol.field[sol.pin_node] == 0.0

    def test_moment_invariant_under_pin_change(self):
        cfg = ball_config()
        one = td.solve_K(cfg, E1)
        other_pin = (one.pin_node + 17) % one.mesh.n_vertices
        other = td.solve_K(cfg, E1, pin_node=other_pin)
        assert np.linalg.norm(one.moment - other.moment) <= 1e-12 * max(
            1.0, np.linalg.norm(one.moment))


class TestSolveQ:
    def test_zero_forcing_gives_zero(self):
        sol = td.solve_Q(ball_config(), np.zeros(2))
        assert np.abs(sol.field).max() == 0.0

    def test_symmetric_data_q_equals_k(self):
        cfg = ball_config()
        g = np.array([0.6, -0.3])
        k = td.solve_K(cfg, g)
        q = td.solve_Q(cfg, g)
        scale = max(1.0, np.abs(k.field).max())
        assert np.abs(k.field - q.field).max() <= 1e-12 * scale

    def test_ball_moment_second_axis(self):
        sol = td.solve_Q(ball_config(), E2)
        want = np.array([0.0, -np.pi / 3.0])
        assert np.linalg.norm(sol.moment - want) <= 0.05 * np.linalg.norm(want)


class TestExplicitG:
    def test_interior_values_linear(self):
        for x1 in (0.0, 0.3, -0.9):
            got = td.explicit_G(E1, 1.0, 2.0, 2, np.array([x1, 0.4 * x1]))
            assert abs(got + x1 / 3.0) <= 1e-15

    def test_zero_vector_everywhere_zero(self):
        pts = np.array([[0.1, 0.2], [2.0, -1.0], [5.0, 5.0]])
        assert np.array_equal(td.explicit_G(np.zeros(2), 1.0, 2.0, 2, pts),
                              np.zeros(3))

    def test_continuous_across_interface(self):
        inner = td.explicit_G(E1, 1.0, 2.0, 2, np.array([1.0, 0.0]))
        eps = 1e-9
        outer = td.explicit_G(E1, 1.0, 2.0, 2, np.array([1.0 + eps, 0.0]))
        assert abs(inner + 1.0 / 3.0) <= 1e-15
        assert abs(outer - inner) <= 1e-8

    def test_far_field_decay(self):
        near = td.explicit_G(E1, 1.0, 2.0, 2, np.array([2.0, 0.0]))
        far = td.explicit_G(E1, 1.0, 2.0, 2, np.array([20.0, 0.0]))
        assert abs(far) < abs(near)

    def test_interior_gradient_closed_form(self):
        got = td.explicit_interior_gradient(np.array([3.0, -1.5]), 1.0, 2.0, d=2)
        assert np.allclose(got, np.array([-1.0, 0.5]))


class TestSensitivityMatrix:
    def test_ball_case_matches_closed_form(self):
        r = td.sensitivity_matrix(ball_config())
        want = (np.pi / 3.0) * np.eye(2)
        assert np.linalg.norm(r - want, 2) <= 0.05 * np.linalg.norm(want, 2)

    def test_no_contrast_gives_zero(self):
        r = td.sensitivity_matrix(ball_config(b=1.0))
        assert np.abs(r).max() <= 1e-12

    def test_symmetric_and_psd_for_symmetric_data(self):
        rng = np.random.default_rng(8)
        for _ in range(3):
            angle = rng.uniform(0.0, np.pi)
            c, s = np.cos(angle), np.sin(angle)
            rot = np.array([[c, -s], [s, c]])
            b = rot @ np.diag(1.0 + rng.uniform(0.1, 2.0, 2)) @ rot.T
            r = td.sensitivity_matrix(ball_config(b=b))
            norm = np.linalg.norm(r, 2)
            assert np.linalg.norm(r - r.T, 2) <= 1e-8 * norm
            assert np.linalg.eigvalsh(0.5 * (r + r.T)).min() >= -1e-8 * norm


class TestPolarizationMatrix:
    def test_ball_matches_disc_formula(self):
        m = td.polarization_matrix(ball_config())
        want = np.pi * (2.0 * 2.0 / 3.0) * np.eye(2)
        assert np.linalg.norm(m - want, 2) <= 0.05 * np.linalg.norm(want, 2)

    def test_axis_aligned_ellipse_diagonal(self):
        lam = 2.0
        shape = td.ellipse_shape((0.0, 0.0), 1.0, lam, 0.0)
        cfg = ExteriorConfig(shape=shape, a0=1.0, b=2.0 * np.eye(2),
                             truncation_radius=20.0, resolution=64)
        m = td.polarization_matrix(cfg)
        want = np.pi * np.diag([
            2.0 * (lam + 1.0) / (1.0 + 2.0 * lam),
            2.0 * (lam + 1.0) / (lam + 2.0),
        ])
        assert np.linalg.norm(m - want, 2) <= 0.05 * np.linalg.norm(want, 2)

    def test_rotated_ellipse_conjugates(self):
        lam, theta = 2.0, 0.6
        diag_cfg = ExteriorConfig(shape=td.ellipse_shape((0.0, 0.0), 1.0, lam, 0.0),
                                  a0=1.0, b=2.0 * np.eye(2),
                                  truncation_radius=20.0, resolution=64)
        rot_cfg = ExteriorConfig(shape=td.ellipse_shape((0.0, 0.0), 1.0, lam, theta),
                                 a0=1.0, b=2.0 * np.eye(2),
                                 truncation_radius=20.0, resolution=64)
        m0 = td.polarization_matrix(diag_cfg)
        m1 = td.polarization_matrix(rot_cfg)
        rot = td.rotation_matrix(theta)
        want = rot.T @ m0 @ rot
        assert np.linalg.norm(m1 - want, 2) <= 0.05 * np.linalg.norm(want, 2)


class TestDuality:
    def test_no_contrast_residual_zero(self):
        cfg = ball_config(b=1.0)
        k = td.solve_K(cfg, E1)
        q = td.solve_Q(cfg, E2)
        assert td.kq_duality_residual(k, q, 1.0, 1.0, E1, E2) == 0.0

    def test_zero_gradient_residual_zero(self):
        cfg = ball_config()
        k = td.solve_K(cfg, np.zeros(2))
        q = td.solve_Q(cfg, np.zeros(2))
        assert td.kq_duality_residual(k, q, 1.0, 2.0, np.zeros(2), np.zeros(2)) == 0.0

    def test_ball_case_small_relative_residual(self):
        cfg = ball_config()
        gy = np.array([0.8, 0.1])
        gp = np.array([-0.2, 0.5])
        k = td.solve_K(cfg, gy)
        q = td.solve_Q(cfg, gp)
        res = td.kq_duality_residual(k, q, 1.0, 2.0, gy, gp)
        lhs = abs((2.0 - 1.0) * gy @ q.moment)
        assert res <= 0.05 * max(1e-12, lhs)


class TestTruncationConvergence:
    def test_doubling_radius_shrinks_gap(self):
        want = np.array([-1.0 / 3.0, 0.0])
        gaps = []
        for radius in (20.0, 40.0):
            cfg = ExteriorConfig(a0=1.0, b=2.0 * np.eye(2),
                                 truncation_radius=radius, resolution=192)
            sol = td.solve_K(cfg, E1)
            mean, _ = td.inclusion_gradient_stats(sol)
            gaps.append(np.linalg.norm(mean - want))
        assert gaps[0] / gaps[1] >= 1.7
