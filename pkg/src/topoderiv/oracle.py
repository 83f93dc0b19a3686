"""Brute-force validation of the closed-form sensitivities.

Build the perturbed coefficient physically on the mesh, re-solve the state
equation, and form the difference quotient (J(a_r) - J(a)) / (r^2 |omega|)
with |omega| = pi (the unit-determinant shape family).  Extrapolating the
quotient to r = 0 gives an independent check of the closed forms in
:mod:`topoform`; the expansion-identity residual checks the exact discrete
algebra behind them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import parallel_map
from .coeff import PerturbationSpec, isotropic_values, perturb
from .fem import (DEFAULT_RTOL, ProblemSpec, assemble, element_gradients,
                  eval_cost, gradient_at, mass_matrix, solve_adjoint,
                  solve_averaged_adjoint, solve_state)
from .mesh import InclusionShape, Mesh, locate_element
from .pmp import CostModel
from .topoform import PointData, delta_j_ball, delta_j_ellipse

__all__ = [
    "ResolutionError",
    "QuotientStudy",
    "DescentReport",
    "inclusion_mesh_size",
    "fit_quotients",
    "difference_quotient",
    "quotient_sweep",
    "expansion_identity_residual",
    "descent_check",
    "shape_axis_decomposition",
]

# quotient is first-order sensitive to geometric area error, so the
# inclusion must span several elements: r / h >= 8
_RESOLUTION_FACTOR = 8.0
_LADDER_RATIO = 0.75


class ResolutionError(ValueError):
    """Inclusion too small for the mesh; carries the refinement deficit."""

    def __init__(self, message: str, required_refinements: int):
        super().__init__(message)
        self.required_refinements = int(required_refinements)


def inclusion_mesh_size(mesh: Mesh, shape: InclusionShape) -> float:
    """Max diameter among the elements meeting the inclusion (superset)."""
    diam = mesh.element_diameters()
    dist = np.linalg.norm(mesh.element_centroids - np.asarray(shape.center),
                          axis=1)
    near = dist <= shape.circumradius + diam
    return float(diam[near].max())


def _require_resolution(mesh: Mesh, shape: InclusionShape, r: float) -> float:
    h = inclusion_mesh_size(mesh, shape)
    if r >= _RESOLUTION_FACTOR * h * (1.0 - 1e-12):
        return h
    needed = math.ceil(math.log2(_RESOLUTION_FACTOR * h / r))
    raise ResolutionError(
        f"resolution rule r/h >= {_RESOLUTION_FACTOR:g} violated: "
        f"r = {r:.6g}, h = {h:.6g} (r/h = {r / h:.3g}); refine the mesh "
        f"{needed} more time(s)", needed)


def fit_quotients(radii, quotients):
    """Least-squares fit q(r) = c0 + c1 r.

    Returns (c0, c1, rms_residual).  The linear-in-r model matches the
    first-order geometry error of the discretised inclusion.
    """
    r = np.asarray(radii, dtype=float)
    q = np.asarray(quotients, dtype=float)
    if r.shape != q.shape or r.ndim != 1 or r.size < 2:
        raise ValueError("need matching 1-d radii/quotients with >= 2 points")
    design = np.column_stack([np.ones_like(r), r])
    coef, *_ = np.linalg.lstsq(design, q, rcond=None)
    resid = q - design @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


@dataclass(frozen=True)
class QuotientStudy:
    """A radii ladder of difference quotients with its extrapolation."""

    radii: np.ndarray
    quotients: np.ndarray
    extrapolated: float
    fit_residual: float
    slope: float = 0.0
    cost_base: float = float("nan")
    costs_perturbed: np.ndarray | None = None

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        q = np.asarray(self.quotients, dtype=float)
        if r.ndim != 1 or r.shape != q.shape:
            raise ValueError("radii and quotients must be matching 1-d arrays")
        if np.any(np.diff(r) >= 0.0):
            raise ValueError("radii must be strictly decreasing")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "quotients", q)

    @classmethod
    def from_data(cls, radii, quotients, **extra) -> "QuotientStudy":
        """Fit a ladder of precomputed quotients (no solves involved)."""
        c0, c1, resid = fit_quotients(radii, quotients)
        return cls(radii=np.asarray(radii, dtype=float),
                   quotients=np.asarray(quotients, dtype=float),
                   extrapolated=c0, fit_residual=resid, slope=c1, **extra)


def _base_state(spec: ProblemSpec, rtol: float):
    ops = assemble(spec.mesh, spec.coeff)
    mass = mass_matrix(spec.mesh)
    y = solve_state(spec, ops, rtol=rtol)
    j0 = eval_cost(spec.mesh, y, spec.target_nodal, mass)
    return ops, mass, y, j0


def _perturbed_state(spec: ProblemSpec, pert_r: PerturbationSpec, mode: str,
                     rtol: float, mass):
    coeff_r = perturb(spec.coeff, spec.mesh, pert_r, mode)
    spec_r = spec.with_coeff(coeff_r)
    ops_r = assemble(spec.mesh, coeff_r)
    y_r = solve_state(spec_r, ops_r, rtol=rtol)
    j_r = eval_cost(spec.mesh, y_r, spec.target_nodal, mass)
    return coeff_r, spec_r, ops_r, y_r, j_r


def difference_quotient(spec: ProblemSpec, pert: PerturbationSpec, r: float,
                        mode: str = "area_fraction",
                        rtol: float = DEFAULT_RTOL) -> float:
    """(J(a_r) - J(a)) / (r^2 pi) on the given mesh at inclusion radius r."""
    r = float(r)
    _require_resolution(spec.mesh, pert.shape.scaled(r), r)
    _, mass, _, j0 = _base_state(spec, rtol)
    j_r = _perturbed_state(spec, pert.scaled(r), mode, rtol, mass)[-1]
    return (j_r - j0) / (math.pi * r * r)


def quotient_sweep(spec: ProblemSpec, pert: PerturbationSpec, radii,
                   mode: str = "area_fraction",
                   rtol: float = DEFAULT_RTOL) -> QuotientStudy:
    """Run the ladder on one fixed mesh and extrapolate r -> 0.

    The mesh is held fixed across rungs so J(a) cancels exactly; rungs are
    independent solves and run concurrently.
    """
    r = np.asarray(radii, dtype=float)
    if r.ndim != 1 or r.size < 4:
        raise ValueError(f"need at least 4 radii, got {r.size}")
    if np.any(np.diff(r) >= 0.0):
        raise ValueError("radii must be strictly decreasing")
    ratios = r[1:] / r[:-1]
    if np.any(ratios > _LADDER_RATIO * (1.0 + 1e-9)):
        raise ValueError(
            f"ladder must decay geometrically with ratio <= {_LADDER_RATIO}, "
            f"got max ratio {ratios.max():.6g}")
    for rr in r:
        _require_resolution(spec.mesh, pert.shape.scaled(rr), rr)

    _, mass, _, j0 = _base_state(spec, rtol)

    def rung(rr: float) -> float:
        return _perturbed_state(spec, pert.scaled(rr), mode, rtol, mass)[-1]

    costs = np.asarray(parallel_map(rung, [float(v) for v in r]))
    quotients = (costs - j0) / (math.pi * r * r)
    return QuotientStudy.from_data(r, quotients, cost_base=j0,
                                   costs_perturbed=costs)


def expansion_identity_residual(spec: ProblemSpec, pert: PerturbationSpec,
                                r: float, mode: str = "area_fraction",
                                rtol: float = DEFAULT_RTOL) -> float:
    """Residual of the exact discrete cost expansion at radius r.

    |J(a_r) - J(a) + (da grad y, grad p) + (da grad y, grad(p_avg - p))|
    normalised by max(1, |J(a_r) - J(a)|), where p_avg is the averaged
    adjoint of the perturbed operator.  Zero up to linear-solver tolerance.
    """
    r = float(r)
    _require_resolution(spec.mesh, pert.shape.scaled(r), r)
    ops, mass, y, j0 = _base_state(spec, rtol)
    p = solve_adjoint(spec, y, ops, rtol=rtol)
    coeff_r, spec_r, ops_r, y_r, j_r = _perturbed_state(
        spec, pert.scaled(r), mode, rtol, mass)
    p_avg = solve_averaged_adjoint(spec_r, y_r, y, ops_r=ops_r, rtol=rtol)

    da = coeff_r.per_element - spec.coeff.per_element
    gy = element_gradients(spec.mesh, y)
    gp = element_gradients(spec.mesh, p)
    gpa = element_gradients(spec.mesh, p_avg)
    area = spec.mesh.element_areas
    # (da grad y, grad w) = sum_e area_e grad(w)^T da grad(y)
    term_p = float(np.einsum("e,ek,ekl,el->", area, gp, da, gy))
    term_corr = float(np.einsum("e,ek,ekl,el->", area, gpa - gp, da, gy))
    return abs(j_r - j0 + term_p + term_corr) / max(1.0, abs(j_r - j0))


def shape_axis_decomposition(shape_matrix):
    """Recover (lam, theta) with H = R(theta)^T diag(lam, 1/lam) R(theta)."""
    h = np.asarray(shape_matrix, dtype=float)
    if h.shape != (2, 2) or np.abs(h - h.T).max() > 1e-12 * max(1.0, np.abs(h).max()):
        raise ValueError("shape matrix must be 2x2 symmetric")
    w, v = np.linalg.eigh(h)
    if np.linalg.det(v) < 0.0:
        v = v * np.array([1.0, -1.0])
    rot = v.T
    return float(w[0]), float(np.arctan2(rot[1, 0], rot[0, 0]))


def _scalar_entry(matrix, what: str) -> float:
    m = np.asarray(matrix, dtype=float)
    s = 0.5 * (m[0, 0] + m[1, 1])
    if np.max(np.abs(m - s * np.eye(2))) > 1e-12 * max(1.0, abs(s)):
        raise ValueError(f"{what} must be isotropic for the closed-form "
                         "prediction")
    return float(s)


@dataclass(frozen=True)
class DescentReport:
    """Outcome of :func:`descent_check`.

    ``predicted_slope`` is the closed-form first-order term per unit
    r^2 |omega|; ``observed_change`` the measured change of the extended
    cost at the smallest tested radius.  ``agrees`` is None when the
    prediction is below the conclusiveness gate (10x the fit residual).
    """

    predicted_slope: float
    observed_change: float
    conclusive: bool
    agrees: bool | None
    study: QuotientStudy


def descent_check(spec: ProblemSpec, pert: PerturbationSpec,
                  cost_model: CostModel, radii, mode: str = "area_fraction",
                  rtol: float = DEFAULT_RTOL) -> DescentReport:
    """Test the predicted sign of the extended-cost change.

    The prediction is the closed-form delta_j at the inclusion centre plus
    g(b) - g(a0).  A negative prediction must see the extended cost
    J + integral of g(a) decrease at the smallest ladder radius; a positive
    one must see a non-decrease.
    """
    mesh = spec.mesh
    ops = assemble(mesh, spec.coeff)
    y = solve_state(spec, ops, rtol=rtol)
    p = solve_adjoint(spec, y, ops, rtol=rtol)
    x0 = np.asarray(pert.shape.center, dtype=float)
    e0 = locate_element(mesh, x0)
    a0 = _scalar_entry(spec.coeff.per_element[e0], "background coefficient")
    b = _scalar_entry(pert.b, "perturbation value")
    data = PointData(a0, b, gradient_at(mesh, y, x0), gradient_at(mesh, p, x0))
    h = pert.shape.shape_matrix
    if np.max(np.abs(h - np.eye(2))) <= 1e-12:
        dj = delta_j_ball(data)
    else:
        lam, theta = shape_axis_decomposition(h)
        dj = delta_j_ellipse(data, lam, theta)
    predicted = dj + float(cost_model.g(b)) - float(cost_model.g(a0))

    study = quotient_sweep(spec, pert, radii, mode=mode, rtol=rtol)
    r_min = float(study.radii[-1])
    coeff_r = perturb(spec.coeff, mesh, pert.scaled(r_min), mode)
    g_gain = mesh.element_areas @ (
        np.asarray(cost_model.g(isotropic_values(coeff_r)), dtype=float)
        - np.asarray(cost_model.g(isotropic_values(spec.coeff)), dtype=float))
    observed = (study.costs_perturbed[-1] - study.cost_base) + float(g_gain)

    conclusive = abs(predicted) > 10.0 * study.fit_residual
    if not conclusive:
        agrees = None
    elif predicted < 0.0:
        agrees = observed < 0.0
    else:
        agrees = observed >= 0.0
    return DescentReport(predicted_slope=predicted, observed_change=observed,
                         conclusive=conclusive, agrees=agrees, study=study)
