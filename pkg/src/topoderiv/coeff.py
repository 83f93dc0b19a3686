"""Piecewise-constant matrix coefficient fields and inclusion perturbations.

Admissibility means the symmetric part of every 2x2 element matrix has
smallest eigenvalue at least ``alpha``.  Matrices are not required to be
symmetric; the skew part does not affect admissibility (or, later, the
bilinear form energy).
"""

from dataclasses import dataclass

import numpy as np

from . import _io
from .mesh import Mesh, InclusionShape, tag_inclusion

__all__ = [
    "AdmissibilityError",
    "AdmissibilityParams",
    "CoefficientField",
    "PerturbationSpec",
    "is_admissible",
    "sym_min_eig",
    "as_matrix",
    "isotropic_field",
    "isotropic_values",
    "perturb",
    "write_field_csv",
    "read_field_csv",
]

_ADMISSIBILITY_SLACK = 1e-12


class AdmissibilityError(ValueError):
    """A coefficient matrix violates the uniform ellipticity bound."""


@dataclass(frozen=True)
class AdmissibilityParams:
    """Ellipticity level ``alpha > 0``."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0.0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def as_matrix(value):
    """Coerce a scalar or 2x2 array-like to a 2x2 float matrix."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(2)
    if a.shape == (2, 2):
        return a.copy()
    raise ValueError(f"expected scalar or 2x2 matrix, got shape {a.shape}")


def sym_min_eig(matrices):
    """Smallest eigenvalue of the symmetric part, vectorised over (..., 2, 2).

    Closed form for 2x2: mean of the diagonal minus the radius
    sqrt(((s00 - s11)/2)^2 + s01^2) of the symmetrised matrix.
    """
    a = np.asarray(matrices, dtype=float)
    s01 = 0.5 * (a[..., 0, 1] + a[..., 1, 0])
    mean = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    radius = np.sqrt((0.5 * (a[..., 0, 0] - a[..., 1, 1])) ** 2 + s01 ** 2)
    return mean - radius


def is_admissible(matrix, params: AdmissibilityParams) -> bool:
    """True iff the symmetric part of ``matrix`` has lambda_min >= alpha."""
    return bool(sym_min_eig(as_matrix(matrix)) >= params.alpha)


class CoefficientField:
    """One 2x2 matrix per element, admissible at level ``params.alpha``."""

    def __init__(self, per_element, params: AdmissibilityParams):
        a = np.ascontiguousarray(np.asarray(per_element, dtype=float))
        if a.ndim != 3 or a.shape[1:] != (2, 2):
            raise ValueError(f"per_element must be (m, 2, 2), got {a.shape}")
        lam = sym_min_eig(a)
        if np.any(lam < params.alpha - _ADMISSIBILITY_SLACK):
            bad = int(np.argmin(lam))
            raise AdmissibilityError(
                f"element {bad}: lambda_min of symmetric part is {lam[bad]:.17g}"
                f", below alpha = {params.alpha:.17g}")
        self.per_element = a
        self.params = params
        self.per_element.setflags(write=False)

    @property
    def n_elements(self) -> int:
        return self.per_element.shape[0]

    def matches(self, mesh: Mesh) -> bool:
        return self.n_elements == mesh.n_elements

    def is_symmetric(self, tol: float = 1e-14) -> bool:
        a = self.per_element
        return bool(np.abs(a[:, 0, 1] - a[:, 1, 0]).max(initial=0.0) <= tol)


def isotropic_field(mesh: Mesh, values, params: AdmissibilityParams) -> CoefficientField:
    """Scalar multiples of the identity, one per element.

    ``values`` may be a single scalar or one scalar per element; every value
    must be at least ``params.alpha``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        v = np.full(mesh.n_elements, float(v))
    if v.shape != (mesh.n_elements,):
        raise ValueError(
            f"expected scalar or ({mesh.n_elements},) values, got {v.shape}")
    per = np.zeros((mesh.n_elements, 2, 2))
    per[:, 0, 0] = v
    per[:, 1, 1] = v
    return CoefficientField(per, params)


def isotropic_values(field: CoefficientField, tol: float = 1e-12):
    """Extract per-element scalars from an isotropic field.

    Raises ``ValueError`` if any element matrix deviates from a multiple of
    the identity by more than ``tol`` relative to its magnitude.
    """
    a = field.per_element
    c = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
    dev = np.abs(a - c[:, None, None] * np.eye(2)).max(axis=(1, 2))
    bad = dev > tol * np.maximum(1.0, np.abs(c))
    if np.any(bad):
        raise ValueError(
            f"{int(bad.sum())} element(s) are anisotropic "
            f"(max deviation {dev.max():.3g}); scalar extraction undefined")
    return c


@dataclass(frozen=True)
class PerturbationSpec:
    """Replace the coefficient on an inclusion by the matrix ``b``.

    ``b`` is stored as a 2x2 matrix; admissibility against the background
    field's level is checked when the perturbation is applied.
    """

    shape: InclusionShape
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", as_matrix(self.b))
        self.b.setflags(write=False)

    def scaled(self, radius: float) -> "PerturbationSpec":
        return PerturbationSpec(self.shape.scaled(radius), self.b)


def perturb(coeff: CoefficientField, mesh: Mesh, spec: PerturbationSpec,
            mode: str = "centroid") -> CoefficientField:
    """Apply an inclusion perturbation to a coefficient field.

    ``mode='centroid'`` replaces the matrix on elements whose centroid lies
    inside the inclusion.  ``mode='area_fraction'`` blends
    ``(1 - w) a + w b`` with the covered-area weight ``w``, which keeps the
    perturbed field admissible by convexity of the eigenvalue bound.
    """
    if not coeff.matches(mesh):
        raise ValueError(
            f"field has {coeff.n_elements} elements, mesh has {mesh.n_elements}")
    if not is_admissible(spec.b, coeff.params):
        raise AdmissibilityError(
            f"perturbation matrix is not admissible at alpha = "
            f"{coeff.params.alpha:.17g}")
    w = tag_inclusion(mesh, spec.shape, mode=mode)
    per = (1.0 - w)[:, None, None] * coeff.per_element + w[:, None, None] * spec.b
    return CoefficientField(per, coeff.params)


def write_field_csv(field: CoefficientField, path):
    """Write ``element_id,a11,a12,a21,a22`` rows."""
    rows = ((i, a[0, 0], a[0, 1], a[1, 0], a[1, 1])
            for i, a in enumerate(field.per_element))
    _io.write_csv(path, ["element_id", "a11", "a12", "a21", "a22"], rows)


def read_field_csv(path, params: AdmissibilityParams) -> CoefficientField:
    """Read a field written by :func:`write_field_csv`."""
    raw = np.genfromtxt(path, delimiter=",", skip_header=1, comments="#")
    raw = np.atleast_2d(raw)
    if raw.shape[1] != 5:
        raise ValueError(f"expected 5 columns, got {raw.shape[1]}")
    order = np.argsort(raw[:, 0].astype(np.int64))
    per = raw[order, 1:].reshape(-1, 2, 2)
    return CoefficientField(per, params)
