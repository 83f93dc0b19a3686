"""Truncated free-space transmission problems for the correctors K and Q.

The corrector problems live on the whole plane with decay at infinity; here
they are posed on a disc of radius ``truncation_radius`` with homogeneous
Dirichlet data at the artificial boundary and a pinned node fixing the
additive constant.  The mesh is polar and graded: uniform fine rings up to
twice the inclusion radius, then geometrically growing rings (ratio 1.2)
out to the truncation boundary.  Anisotropic inclusions are meshed by an
area-preserving affine map of the unit-disc mesh, so the inclusion measure
is pi exactly up to the polygonal interface approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import _io
from .coeff import (AdmissibilityError, AdmissibilityParams, CoefficientField,
                    as_matrix, sym_min_eig)
from .fem import SolverError, assemble, element_gradients
from .mesh import InclusionShape, Mesh

__all__ = [
    "ExteriorConfig",
    "ExteriorSolution",
    "build_exterior_mesh",
    "solve_K",
    "solve_Q",
    "explicit_G",
    "explicit_interior_gradient",
    "sensitivity_matrix",
    "polarization_matrix",
    "kq_duality_residual",
    "inclusion_gradient_stats",
    "write_solution_vtk",
]


@dataclass
class ExteriorConfig:
    """Inputs of a corrector solve.

    ``shape`` must be centred at the origin with unit radius (the corrector
    problem is already the rescaled limit problem).  ``a0`` and ``b`` may be
    scalars or 2x2 matrices with positive definite symmetric part.
    """

    shape: InclusionShape = None
    a0: object = 1.0
    b: object = 2.0
    truncation_radius: float = 20.0
    resolution: int = 256

    def __post_init__(self):
        if self.shape is None:
            self.shape = InclusionShape((0.0, 0.0), 1.0)
        if np.linalg.norm(self.shape.center) > 1e-14:
            raise ValueError("inclusion must be centred at the origin")
        if abs(self.shape.radius - 1.0) > 1e-14:
            raise ValueError("inclusion must have unit radius")
        self.a0 = as_matrix(self.a0)
        self.b = as_matrix(self.b)
        for name, m in (("a0", self.a0), ("b", self.b)):
            if sym_min_eig(m) <= 0.0:
                raise AdmissibilityError(
                    f"{name} must have positive definite symmetric part")
        self.truncation_radius = float(self.truncation_radius)
        if self.truncation_radius < 10.0:
            raise ValueError("truncation_radius must be >= 10")
        if self.truncation_radius < 10.0 * self.shape.circumradius:
            raise ValueError("truncation_radius must be >= 10x the inclusion "
                             "circumradius")
        self.resolution = int(self.resolution)
        if self.resolution < 16:
            raise ValueError("resolution must be >= 16")

    @property
    def contrast(self):
        """The jump b - a0 as a 2x2 matrix."""
        return self.b - self.a0

    def isotropic_scalars(self):
        """(a0, b) as scalars; raises for anisotropic coefficients."""
        out = []
        for name, m in (("a0", self.a0), ("b", self.b)):
            c = 0.5 * (m[0, 0] + m[1, 1])
            if np.abs(m - c * np.eye(2)).max() > 1e-12 * max(1.0, abs(c)):
                raise ValueError(f"{name} is anisotropic; scalar form required")
            out.append(float(c))
        return tuple(out)


@dataclass
class ExteriorSolution:
    """Corrector field on the truncated mesh plus its inclusion moment.

    ``field`` is pinned: it vanishes at ``pin_node``.  ``moment`` is the
    exact sum of area * (constant element gradient) over inclusion elements.
    """

    field: np.ndarray
    moment: np.ndarray
    kind: str               # "K" or "Q"
    forcing: np.ndarray     # the gradient vector the problem was solved for
    mesh: Mesh
    inclusion_mask: np.ndarray
    pin_node: int
    config: ExteriorConfig


def build_exterior_mesh(cfg: ExteriorConfig):
    """Graded polar mesh of the truncated disc.

    Returns ``(mesh, inclusion_mask)`` where the mask marks elements inside
    the (affinely mapped) inclusion.  The interface circle is a polygon with
    ``cfg.resolution`` segments and lies exactly on a mesh ring.
    """
    n_theta = cfg.resolution
    rt = cfg.truncation_radius
    n_in = max(4, round(n_theta / (2.0 * np.pi)))
    ring_r = list(np.linspace(0.0, 1.0, n_in + 1)[1:])
    ring_r += list(np.linspace(1.0, 2.0, n_in + 1)[1:])
    h = 1.0 / n_in
    r = 2.0
    while True:
        h *= 1.2
        if r + h >= rt - 0.4 * h:
            ring_r.append(rt)
            break
        r += h
        ring_r.append(r)
    ring_r = np.asarray(ring_r)
    n_rings = len(ring_r)

    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    vertices = np.empty((1 + n_rings * n_theta, 2))
    vertices[0] = 0.0
    for k, radius in enumerate(ring_r):
        sl = slice(1 + k * n_theta, 1 + (k + 1) * n_theta)
        vertices[sl, 0] = radius * cos_t
        vertices[sl, 1] = radius * sin_t

    i = np.arange(n_theta)
    ip = (i + 1) % n_theta
    tris = [np.column_stack([np.zeros(n_theta, dtype=np.int64), 1 + i, 1 + ip])]
    for k in range(n_rings - 1):
        lo, hi = 1 + k * n_theta, 1 + (k + 1) * n_theta
        a, b_ = lo + i, lo + ip        # inner ring, angles i and i+1
        c, d = hi + ip, hi + i         # outer ring, angles i+1 and i
        even = i % 2 == 0              # alternate the quad diagonal
        t1 = np.where(even[:, None],
                      np.column_stack([a, d, c]),
                      np.column_stack([a, d, b_]))
        t2 = np.where(even[:, None],
                      np.column_stack([a, c, b_]),
                      np.column_stack([d, c, b_]))
        tris.append(t1)
        tris.append(t2)
    elements = np.vstack(tris)

    # inclusion = elements all of whose vertices sit at radius <= 1
    radii = np.linalg.norm(vertices, axis=1)
    mask = np.all(radii[elements] <= 1.0 + 1e-9, axis=1)

    H = cfg.shape.shape_matrix
    if np.abs(H - np.eye(2)).max() > 0.0:
        w, v = np.linalg.eigh(H)
        amap = v @ np.diag(w ** -0.5) @ v.T  # unit determinant
        vertices = vertices @ amap  # amap symmetric
    return Mesh(vertices, elements), mask


class _ExteriorOperators:
    """Assembled operators for one configuration (factorised once).

    Always uses a direct solver: the graded polar mesh has high-aspect
    outer elements that make iterative methods unreliable, and a single LU
    factorisation serves both the K system and the transposed Q system.
    """

    def __init__(self, cfg: ExteriorConfig):
        mesh, mask = build_exterior_mesh(cfg)
        per = np.broadcast_to(cfg.a0, (mesh.n_elements, 2, 2)).copy()
        per[mask] = cfg.b
        alpha = float(min(sym_min_eig(cfg.a0), sym_min_eig(cfg.b)))
        field = CoefficientField(per, AdmissibilityParams(alpha))
        ops = assemble(mesh, field)
        self.cfg = cfg
        self.mesh = mesh
        self.mask = mask
        self.stiffness_bc = ops.stiffness_bc
        self.boundary_nodes = ops.boundary_nodes
        self._lu = spla.splu(ops.stiffness_bc.tocsc())
        # rhs assembly needs gradients of inclusion elements only
        from .fem import shape_gradients
        g = shape_gradients(mesh)
        self.g_in = g[mask]
        self.el_in = mesh.elements[mask]
        self.area_in = mesh.element_areas[mask]

    def forcing_rhs(self, g_eff):
        """rhs_i = -sum_{e in omega} area_e grad(phi_i) . g_eff."""
        rhs = np.zeros(self.mesh.n_vertices)
        contrib = -self.area_in[:, None, None] * self.g_in * np.asarray(g_eff)
        np.add.at(rhs, self.el_in.ravel(), contrib.sum(axis=2).ravel())
        rhs[self.boundary_nodes] = 0.0
        return rhs

    def _direct_solve(self, rhs, transpose: bool, rtol: float = 1e-12):
        trans = "T" if transpose else "N"
        a = self.stiffness_bc.T if transpose else self.stiffness_bc
        bnorm = np.linalg.norm(rhs)
        if bnorm == 0.0:
            return np.zeros_like(rhs)
        x = self._lu.solve(rhs, trans=trans)
        res = np.linalg.norm(rhs - a @ x) / bnorm
        for _ in range(3):
            if res <= rtol:
                break
            x = x + self._lu.solve(rhs - a @ x, trans=trans)
            res = np.linalg.norm(rhs - a @ x) / bnorm
        if res > rtol:
            raise SolverError(
                f"exterior solve stalled at relative residual {res:.3e}",
                residual=res)
        return x

    def solve(self, g_eff, transpose: bool, kind: str, forcing, pin_node=None):
        field = self._direct_solve(self.forcing_rhs(g_eff), transpose)
        field[self.boundary_nodes] = 0.0
        if pin_node is None:
            pin_node = int(self.boundary_nodes[0])
        field = field - field[pin_node]
        grads = element_gradients(self.mesh, field)[self.mask]
        moment = (self.area_in[:, None] * grads).sum(axis=0)
        return ExteriorSolution(field=field, moment=moment, kind=kind,
                                forcing=np.asarray(forcing, dtype=float),
                                mesh=self.mesh, inclusion_mask=self.mask,
                                pin_node=pin_node, config=self.cfg)


def solve_K(cfg: ExteriorConfig, gy, pin_node=None) -> ExteriorSolution:
    """Corrector driven by the state gradient: forcing (b - a0) gy."""
    gy = np.asarray(gy, dtype=float).reshape(2)
    ops = _ExteriorOperators(cfg)
    return ops.solve(cfg.contrast @ gy, transpose=False, kind="K",
                     forcing=gy, pin_node=pin_node)


def solve_Q(cfg: ExteriorConfig, gp, pin_node=None) -> ExteriorSolution:
    """Corrector driven by the adjoint gradient.

    The trial function sits in the second slot of the bilinear form, so the
    system matrix is the transpose, and the forcing uses (b - a0)^T gp.
    """
    gp = np.asarray(gp, dtype=float).reshape(2)
    ops = _ExteriorOperators(cfg)
    return ops.solve(cfg.contrast.T @ gp, transpose=True, kind="Q",
                     forcing=gp, pin_node=pin_node)


def explicit_G(g, a0: float, b: float, d: int, x):
    """Closed-form corrector for the unit ball with scalar coefficients.

    G(x) = -(g . x) / max(1, |x|^d) / (b + a0 (d - 1)); linear inside the
    ball, decaying like |x|^(1-d) outside, continuous across |x| = 1.
    Accepts a single point or an (n, d) array of points.
    """
    g = np.asarray(g, dtype=float).reshape(d)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != d:
        raise ValueError(f"points must have dimension {d}")
    norms = np.linalg.norm(pts, axis=1)
    vals = -(pts @ g) / np.maximum(1.0, norms ** d) / (b + a0 * (d - 1))
    return float(vals[0]) if single else vals


def explicit_interior_gradient(g, a0: float, b: float, d: int = 2):
    """Gradient of :func:`explicit_G` inside the ball: -g / (b + a0 (d-1))."""
    return -np.asarray(g, dtype=float) / (b + a0 * (d - 1))


def sensitivity_matrix(cfg: ExteriorConfig):
    """Matrix R with p^T R y = -(b - a0) y . moment(Q_p).

    Row i comes from the basis solve with gp = e_i:
    R[i, j] = -moment(Q_{e_i}) . ((b - a0) e_j).
    """
    ops = _ExteriorOperators(cfg)
    db = cfg.contrast
    moments = [ops.solve(db.T @ e, transpose=True, kind="Q", forcing=e).moment
               for e in np.eye(2)]
    ell = np.column_stack(moments)  # column i = moment for gp = e_i
    return -ell.T @ db


def polarization_matrix(cfg: ExteriorConfig):
    """Numerical polarization matrix M of the inclusion (isotropic data).

    Defined through -(1/|omega|)(b - a0)(a0/b) gp^T M gy matching the
    general moment expansion, which gives M = (b/a0)(|omega| I + L^T) with
    L the matrix of basis Q-moments and |omega| = pi.
    """
    a0, b = cfg.isotropic_scalars()
    ops = _ExteriorOperators(cfg)
    db = cfg.contrast
    moments = [ops.solve(db.T @ e, transpose=True, kind="Q", forcing=e).moment
               for e in np.eye(2)]
    ell = np.column_stack(moments)
    return (b / a0) * (np.pi * np.eye(2) + ell.T)


def kq_duality_residual(sol_k: ExteriorSolution, sol_q: ExteriorSolution,
                        a0, b, gy, gp) -> float:
    """| (b-a0) gy . moment(Q) - (b-a0) moment(K) . gp |."""
    db = as_matrix(b) - as_matrix(a0)
    gy = np.asarray(gy, dtype=float).reshape(2)
    gp = np.asarray(gp, dtype=float).reshape(2)
    lhs = float(sol_q.moment @ (db @ gy))
    rhs = float(gp @ (db @ sol_k.moment))
    return abs(lhs - rhs)


def inclusion_gradient_stats(sol: ExteriorSolution):
    """Area-weighted mean and relative spread of the gradient inside omega.

    Returns ``(mean, rel_std)`` where ``rel_std`` is the area-weighted
    standard deviation of the per-element gradient around its mean, divided
    by the mean magnitude.
    """
    grads = element_gradients(sol.mesh, sol.field)[sol.inclusion_mask]
    areas = sol.mesh.element_areas[sol.inclusion_mask]
    total = areas.sum()
    mean = (areas[:, None] * grads).sum(axis=0) / total
    dev2 = (areas * ((grads - mean) ** 2).sum(axis=1)).sum() / total
    norm = np.linalg.norm(mean)
    rel = np.sqrt(dev2) / norm if norm > 0.0 else np.inf
    return mean, rel


def write_solution_vtk(sol: ExteriorSolution, path):
    """Export the corrector field and inclusion mask as VTK."""
    _io.write_vtk(path, sol.mesh.vertices, sol.mesh.elements,
                  point_data={sol.kind: sol.field},
                  cell_data={"inclusion": sol.inclusion_mask.astype(float)},
                  title=f"corrector {sol.kind}")
