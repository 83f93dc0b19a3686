"""Pointwise necessary-optimality residuals and field-wide audits.

Each residual is the left-hand side of a necessary condition that must be
nonnegative at an optimal coefficient; a negative value flags a descent
opportunity.  ``s`` denotes the gradient pairing grad(y).grad(p) at a point
and ``n`` the product of the gradient norms, so n >= |s| always.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coeff import isotropic_values
from .fem import FemSolution, ProblemSpec, element_gradients
from .topoform import PointData, delta_j_general

__all__ = [
    "CostModelError",
    "CostModel",
    "Classification",
    "PMPReport",
    "pmp_scalar_residual",
    "pmp_scalar2d_residual",
    "pmp_general_residual",
    "frechet_residual",
    "pmp_field_report",
    "linear_g_classify",
    "default_b_grid",
]

# violation threshold scale: residual < -1e-8 * (1 + |g(b)| + |s|)
_VIOLATION_SCALE = 1e-8


class CostModelError(ValueError):
    """Invalid cost model or unsupported cost-model operation."""


@dataclass(frozen=True)
class CostModel:
    """Scalar volume-cost g with a feasible coefficient range.

    ``kind`` is 'linear' (g(x) = ell * x) or 'tabulated' (piecewise-linear
    interpolation of strictly increasing abscissae).  ``feasible_range`` is
    (alpha, beta) with beta possibly infinite.
    """

    kind: str
    feasible_range: tuple
    ell: float = 0.0
    table: np.ndarray | None = None
    derivative: object = None

    def __post_init__(self):
        alpha, beta = self.feasible_range
        if not (alpha > 0.0 and beta >= alpha):
            raise CostModelError(
                f"feasible_range must satisfy 0 < alpha <= beta, got "
                f"({alpha}, {beta})")
        object.__setattr__(self, "feasible_range", (float(alpha), float(beta)))
        if self.kind == "linear":
            object.__setattr__(self, "ell", float(self.ell))
        elif self.kind == "tabulated":
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or t.shape[1] != 2 or t.shape[0] < 2:
                raise CostModelError("table must be (k >= 2, 2) pairs")
            if np.any(np.diff(t[:, 0]) <= 0.0):
                raise CostModelError("table abscissae must be strictly increasing")
            if t[0, 0] < alpha:
                raise CostModelError(
                    f"table abscissae must be >= alpha = {alpha}")
            object.__setattr__(self, "table", t)
            self.table.setflags(write=False)
        else:
            raise CostModelError(f"unknown cost model kind {self.kind!r}")

    @classmethod
    def linear_cost(cls, ell: float, feasible_range) -> "CostModel":
        return cls(kind="linear", feasible_range=tuple(feasible_range), ell=ell)

    @classmethod
    def tabulated_cost(cls, pairs, feasible_range,
                       derivative=None) -> "CostModel":
        return cls(kind="tabulated", feasible_range=tuple(feasible_range),
                   table=pairs, derivative=derivative)

    def g(self, x):
        """Evaluate the cost (vectorised)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return self.ell * x
        lo, hi = self.table[0, 0], self.table[-1, 0]
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise CostModelError(
                f"argument outside the tabulated domain [{lo}, {hi}]")
        return np.interp(x, self.table[:, 0], self.table[:, 1])

    def g_prime(self, x):
        """Derivative of the cost; unavailable for bare tabulated models."""
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return np.broadcast_to(self.ell, x.shape).copy() if x.ndim else self.ell
        if self.derivative is None:
            raise CostModelError(
                "tabulated cost model has no derivative; supply one for the "
                "Frechet condition")
        return self.derivative(x)

    @property
    def has_derivative(self) -> bool:
        return self.kind == "linear" or self.derivative is not None


def pmp_scalar_residual(s: float, a0: float, b: float, d: int,
                        g: CostModel) -> float:
    """Ball-test residual -(b - a0) s a0 d / (b + a0 (d-1)) + g(b) - g(a0)."""
    lead = -(b - a0) * s * a0 * d / (b + a0 * (d - 1))
    return lead + float(g.g(b)) - float(g.g(a0))


def pmp_scalar2d_residual(s: float, n: float, a0: float, b: float,
                          g: CostModel) -> float:
    """Ellipse-optimised residual (d=2):

        -(b - a0) s + g(b) - g(a0) + 0.5 (b - a0)^2 / b * (s - n).
    """
    if n < abs(s):
        raise ValueError(f"n = {n} < |s| = {abs(s)} violates Cauchy-Schwarz")
    lead = -(b - a0) * s + 0.5 * (b - a0) ** 2 / b * (s - n)
    return lead + float(g.g(b)) - float(g.g(a0))


def pmp_general_residual(data: PointData, q_moment, omega_measure: float,
                         g: CostModel) -> float:
    """Shape-resolved residual: delta_j_general(...) + g(b) - g(a0)."""
    a0, b = data.require_scalars("pmp_general_residual")
    lead = delta_j_general(data, q_moment, omega_measure)
    return lead + float(g.g(b)) - float(g.g(a0))


def frechet_residual(s: float, a0: float, b: float, g_prime: float) -> float:
    """First-order condition residual (-s + g'(a0)) (b - a0)."""
    return (-s + g_prime) * (b - a0)


@dataclass(frozen=True)
class Classification:
    """Outcome of :func:`linear_g_classify`."""

    tag: str
    failed_clause: str | None = None


def linear_g_classify(s: float, n: float, ell: float, alpha: float,
                      beta: float, a0: float) -> Classification:
    """Audit one point against the linear-cost optimality clauses.

    The clauses checked (with ~1e-9 relative tolerance) are:
      1. ell > s requires a0 = alpha
      2. ell < s requires a0 = beta
      3. ell = s requires n = s (parallel gradients)
      4. a0 = alpha requires ell - s >= 0.5 (beta - alpha)/beta * (n - s)
      5. a0 = beta  requires ell - s <= 0.5 (alpha - beta)/alpha * (n - s)
    Returns 'consistent-at-alpha', 'consistent-at-beta',
    'consistent-parallel', or 'violated' with the first failed clause.
    """
    if n < abs(s):
        raise ValueError(f"n = {n} < |s| = {abs(s)} violates Cauchy-Schwarz")
    if not (alpha <= a0 <= beta):
        raise ValueError(f"a0 = {a0} outside [{alpha}, {beta}]")
    tol = 1e-9 * (1.0 + abs(ell) + abs(s) + n)
    a_tol = 1e-9 * (1.0 + alpha + (beta if np.isfinite(beta) else alpha))
    at_alpha = abs(a0 - alpha) <= a_tol
    at_beta = np.isfinite(beta) and abs(a0 - beta) <= a_tol

    if ell > s + tol and not at_alpha:
        return Classification("violated", "ell>s requires a0=alpha")
    if ell < s - tol and not at_beta:
        return Classification("violated", "ell<s requires a0=beta")
    if abs(ell - s) <= tol and abs(n - s) > tol and not (at_alpha or at_beta):
        return Classification("violated", "ell=s requires n=s")
    if at_alpha:
        coef = 0.5 * (1.0 - alpha / beta) if np.isfinite(beta) else 0.5
        if ell - s < coef * (n - s) - tol:
            return Classification("violated", "lower bound at a0=alpha")
        return Classification("consistent-at-alpha")
    if at_beta:
        coef = 0.5 * (alpha - beta) / alpha
        if ell - s > coef * (n - s) + tol:
            return Classification("violated", "upper bound at a0=beta")
        return Classification("consistent-at-beta")
    return Classification("consistent-parallel")


def default_b_grid(alpha: float, beta: float, a0_values=None, n: int = 64):
    """Log-spaced grid on [alpha, beta] plus the endpoints and a0 values."""
    if not np.isfinite(beta) or beta <= alpha:
        raise ValueError("default grid needs a finite range alpha < beta")
    grid = np.geomspace(alpha, beta, n)
    extra = [alpha, beta]
    if a0_values is not None:
        extra.extend(np.atleast_1d(np.asarray(a0_values, dtype=float)))
    grid = np.unique(np.concatenate([grid, np.asarray(extra)]))
    return grid[(grid >= alpha) & (grid <= beta)]


@dataclass
class PMPReport:
    """Field-wide audit of the pointwise conditions on one solution.

    All arrays are per element, ordered by element id.  ``worst_b`` is the
    minimiser of the strongest (scalar2d) residual.
    """

    centroids: np.ndarray
    s: np.ndarray
    n: np.ndarray
    a0: np.ndarray
    min_res_scalar: np.ndarray
    argmin_b_scalar: np.ndarray
    min_res_scalar2d: np.ndarray
    argmin_b_scalar2d: np.ndarray
    frechet_res: np.ndarray
    classification: list
    violation_scalar: np.ndarray = field(repr=False, default=None)
    violation_scalar2d: np.ndarray = field(repr=False, default=None)
    violation_frechet: np.ndarray = field(repr=False, default=None)

    @property
    def worst_b(self):
        return self.argmin_b_scalar2d

    @property
    def n_elements(self) -> int:
        return len(self.s)

    def summary(self, worst_count: int = 10) -> dict:
        """Violation counts and the most negative scalar2d offenders."""
        order = np.argsort(self.min_res_scalar2d)
        worst = [
            {
                "element_id": int(e),
                "x": float(self.centroids[e, 0]),
                "y": float(self.centroids[e, 1]),
                "min_res_scalar2d": float(self.min_res_scalar2d[e]),
                "argmin_b_scalar2d": float(self.argmin_b_scalar2d[e]),
                "classification": self.classification[e],
            }
            for e in order[:worst_count]
        ]
        return {
            "n_elements": int(self.n_elements),
            "violations": {
                "scalar": int(self.violation_scalar.sum()),
                "scalar2d": int(self.violation_scalar2d.sum()),
                "frechet": int(self.violation_frechet.sum()),
            },
            "worst": worst,
        }


def pmp_field_report(spec: ProblemSpec, solution: FemSolution, b_grid,
                     g: CostModel) -> PMPReport:
    """Minimise each residual over ``b_grid`` on every element.

    Requires an isotropic coefficient field (the scalar conditions have no
    meaning for matrix coefficients) and a grid inside the feasible range.
    Ties in the minimiser resolve to the smallest b.
    """
    b_grid = np.sort(np.asarray(b_grid, dtype=float))
    alpha, beta = g.feasible_range
    if b_grid.size == 0:
        raise ValueError("b_grid is empty")
    if b_grid[0] < alpha - 1e-12 or b_grid[-1] > beta * (1 + 1e-12):
        raise ValueError(
            f"b_grid must lie inside the feasible range [{alpha}, {beta}]")
    a0 = isotropic_values(spec.coeff)  # rejects anisotropic fields
    gy = element_gradients(spec.mesh, solution.y)
    gp = element_gradients(spec.mesh, solution.p)
    s = np.einsum("ek,ek->e", gy, gp)
    n = np.linalg.norm(gy, axis=1) * np.linalg.norm(gp, axis=1)
    n = np.maximum(n, np.abs(s))  # scrub roundoff below the exact bound

    g_b = np.asarray(g.g(b_grid), dtype=float)
    g_a0 = np.asarray(g.g(a0), dtype=float)
    gp_a0 = np.asarray(g.g_prime(a0), dtype=float)

    m = len(s)
    min_sc = np.empty(m)
    arg_sc = np.empty(m)
    min_s2 = np.empty(m)
    arg_s2 = np.empty(m)
    min_fr = np.empty(m)
    chunk = 1 << 16
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        a0c = a0[lo:hi, None]
        sc = s[lo:hi, None]
        nc = n[lo:hi, None]
        db = b_grid[None, :] - a0c
        gdiff = g_b[None, :] - g_a0[lo:hi, None]
        res_sc = -db * sc * a0c * 2.0 / (b_grid[None, :] + a0c) + gdiff
        res_s2 = -db * sc + 0.5 * db ** 2 / b_grid[None, :] * (sc - nc) + gdiff
        res_fr = (-sc + gp_a0[lo:hi, None]) * db
        for res, mins, args in ((res_sc, min_sc, arg_sc),
                                (res_s2, min_s2, arg_s2)):
            k = np.argmin(res, axis=1)  # first minimum = smallest b
            mins[lo:hi] = res[np.arange(hi - lo), k]
            args[lo:hi] = b_grid[k]
        min_fr[lo:hi] = res_fr.min(axis=1)

    thr_sc = -_VIOLATION_SCALE * (1.0 + np.abs(g.g(arg_sc)) + np.abs(s))
    thr_s2 = -_VIOLATION_SCALE * (1.0 + np.abs(g.g(arg_s2)) + np.abs(s))
    thr_fr = -_VIOLATION_SCALE * (1.0 + np.abs(g.g(b_grid)).max() + np.abs(s))

    if g.kind == "linear" and np.isfinite(beta):
        classification = [
            linear_g_classify(s[e], n[e], g.ell, alpha, beta, a0[e]).tag
            for e in range(m)
        ]
    else:
        classification = ["unclassified"] * m

    return PMPReport(
        centroids=spec.mesh.element_centroids,
        s=s, n=n, a0=a0,
        min_res_scalar=min_sc, argmin_b_scalar=arg_sc,
        min_res_scalar2d=min_s2, argmin_b_scalar2d=arg_s2,
        frechet_res=min_fr,
        classification=classification,
        violation_scalar=min_sc < thr_sc,
        violation_scalar2d=min_s2 < thr_s2,
        violation_frechet=min_fr < thr_fr,
    )
