"""Closed-form topological derivatives of the tracking cost.

All formulas express the leading-order cost change per unit inclusion
measure when the coefficient jumps from ``a0`` to ``b`` on a small inclusion
centred at a point where the state gradient is ``gy`` and the adjoint
gradient is ``gp``.  Sign convention: a negative value means the cost
decreases when the inclusion is introduced.
"""

from dataclasses import dataclass, field

import numpy as np

from .mesh import rotation_matrix

__all__ = [
    "PointData",
    "Interval",
    "EllipseRange",
    "LAMBDA_GRID",
    "THETA_GRID",
    "delta_j_ball",
    "delta_j_ellipse",
    "delta_j_general",
    "polarization_delta_j",
    "rotation_range",
    "g_range",
    "delta_j_ellipse_range",
    "ellipse_sweep",
]

# default sampling grids for range sweeps; endpoints of the analytic range
# are limit points of the sweep, not attained values
LAMBDA_GRID = np.logspace(-3.0, 3.0, 64)
THETA_GRID = np.linspace(0.0, np.pi, 256, endpoint=False)
LAMBDA_GRID.setflags(write=False)
THETA_GRID.setflags(write=False)


def _coerce_coefficient(value, d, name):
    """Return (matrix, scalar-or-None) for a scalar or (d, d) input."""
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return float(v) * np.eye(d), float(v)
    if v.shape != (d, d):
        raise ValueError(f"{name} must be scalar or ({d}, {d}), got {v.shape}")
    c = float(np.trace(v)) / d
    if np.abs(v - c * np.eye(d)).max() <= 1e-12 * max(1.0, abs(c)):
        return v.copy(), c
    return v.copy(), None


@dataclass
class PointData:
    """Pointwise inputs of the expansion formulas.

    ``a0`` and ``b`` may be scalars or (d, d) matrices; formulas that are
    only available for isotropic coefficients raise ``ValueError`` when
    handed a genuinely anisotropic matrix.
    """

    a0: object
    b: object
    gy: np.ndarray
    gp: np.ndarray
    d: int = 2
    a0_matrix: np.ndarray = field(init=False, repr=False)
    b_matrix: np.ndarray = field(init=False, repr=False)
    a0_scalar: object = field(init=False, repr=False)
    b_scalar: object = field(init=False, repr=False)

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")
        self.gy = np.asarray(self.gy, dtype=float).reshape(self.d)
        self.gp = np.asarray(self.gp, dtype=float).reshape(self.d)
        self.a0_matrix, self.a0_scalar = _coerce_coefficient(self.a0, self.d, "a0")
        self.b_matrix, self.b_scalar = _coerce_coefficient(self.b, self.d, "b")

    def require_scalars(self, what: str):
        if self.a0_scalar is None or self.b_scalar is None:
            raise ValueError(f"{what} requires isotropic a0 and b")
        return self.a0_scalar, self.b_scalar


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        result = (x >= self.lo - tol) & (x <= self.hi + tol)
        return bool(result) if result.ndim == 0 else result


@dataclass(frozen=True)
class EllipseRange:
    """Closure of the ellipse-shape derivative values at one point.

    The interval is the closure over all aspect ratios and orientations;
    its endpoints are limits (needle-like ellipses), not attained by any
    finite aspect ratio, hence ``endpoints_are_limits``.
    """

    interval: Interval
    infimum: float
    endpoints_are_limits: bool = True


def delta_j_ball(data: PointData) -> float:
    """Ball inclusion: -(b - a0) * a0 * d / (b + a0 (d - 1)) * gy . gp."""
    a0, b = data.require_scalars("delta_j_ball")
    factor = a0 * data.d / (b + a0 * (data.d - 1))
    return -(b - a0) * factor * float(data.gy @ data.gp)


def _ellipse_axis_factors(a0, b, lam):
    """Factors paired with the rotated x- and y-axes of the ellipse.

    For the ellipse x^T diag(lam, 1/lam) x <= r^2 the semi-axis along x is
    r/sqrt(lam); the factor acting on the x-components of the gradients is
    (lam+1)/(a0 + b lam) and the y-factor is (lam+1)/(a0 lam + b).  (Check:
    the long axis carries the larger factor, and lam -> 1/lam swaps both
    the geometry axes and the factors.)
    """
    lam = np.asarray(lam, dtype=float)
    return (lam + 1.0) / (a0 + b * lam), (lam + 1.0) / (a0 * lam + b)


def delta_j_ellipse(data: PointData, lam: float, theta: float = 0.0) -> float:
    """Ellipse inclusion with shape matrix R^T diag(lam, 1/lam) R (d=2).

    The ellipse is {x : x^T R^T diag(lam, 1/lam) R x <= r^2} with
    R = rotation_matrix(theta), matching :func:`mesh.ellipse_shape`.
    ``lam = 1`` reduces to :func:`delta_j_ball`; ``lam <-> 1/lam`` is the
    same as rotating by pi/2.
    """
    if data.d != 2:
        raise ValueError("ellipse formula is two-dimensional")
    a0, b = data.require_scalars("delta_j_ellipse")
    lam = float(lam)
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    fx, fy = _ellipse_axis_factors(a0, b, lam)
    rot = rotation_matrix(theta)
    gy_r = rot @ data.gy
    gp_r = rot @ data.gp
    return -(b - a0) * a0 * float(fx * gy_r[0] * gp_r[0] + fy * gy_r[1] * gp_r[1])


def delta_j_general(data: PointData, q_moment, omega_measure: float) -> float:
    """Arbitrary inclusion shape via the corrector moment.

    ``q_moment`` is the integral of grad(Q) over the unit-measure-normalised
    inclusion omega and ``omega_measure`` its measure:

        delta_j = -(gp + q_moment / |omega|)^T (b - a0) gy.

    With ``q_moment = 0`` this degenerates to the plain two-gradient term.
    Anisotropic ``a0``/``b`` are allowed.
    """
    omega_measure = float(omega_measure)
    if omega_measure <= 0.0:
        raise ValueError(f"omega_measure must be positive, got {omega_measure}")
    m = np.asarray(q_moment, dtype=float).reshape(data.d)
    db = data.b_matrix - data.a0_matrix
    return -float((data.gp + m / omega_measure) @ (db @ data.gy))


def polarization_delta_j(a0: float, b: float, pol_matrix, gy, gp,
                         omega_measure: float) -> float:
    """Derivative from a polarization matrix (isotropic a0, b):

        delta_j = -(1 / |omega|) * (b - a0) * (a0 / b) * gy^T M gp.
    """
    a0 = float(a0)
    b = float(b)
    omega_measure = float(omega_measure)
    if omega_measure <= 0.0:
        raise ValueError(f"omega_measure must be positive, got {omega_measure}")
    m = np.asarray(pol_matrix, dtype=float).reshape(2, 2)
    gy = np.asarray(gy, dtype=float).reshape(2)
    gp = np.asarray(gp, dtype=float).reshape(2)
    return -(b - a0) * (a0 / b) / omega_measure * float(gy @ (m @ gp))


def rotation_range(lambda1: float, lambda2: float, y, p) -> Interval:
    """Range of p^T R^T diag(lambda1, lambda2) R y over all rotations R.

    Midpoint (lambda1 + lambda2)/2 * y.p, half-width
    |lambda1 - lambda2|/2 * |y| |p|; in two dimensions the whole interval is
    attained already by proper rotations.
    """
    y = np.asarray(y, dtype=float).reshape(2)
    p = np.asarray(p, dtype=float).reshape(2)
    mid = 0.5 * (lambda1 + lambda2) * float(y @ p)
    half = 0.5 * abs(lambda1 - lambda2) * float(np.linalg.norm(y) * np.linalg.norm(p))
    return Interval(mid - half, mid + half)


def g_range(a0: float, b: float, y, p) -> Interval:
    """Closure of the rotated-ellipse factor values over all aspect ratios.

    Equals 0.5 (1/a0 + 1/b) y.p + [-1, 1] * 0.5 |1/a0 - 1/b| |y| |p|; the
    half-width carries an absolute value so the formula is symmetric under
    swapping a0 and b.
    """
    if a0 <= 0.0 or b <= 0.0:
        raise ValueError("a0 and b must be positive")
    y = np.asarray(y, dtype=float).reshape(2)
    p = np.asarray(p, dtype=float).reshape(2)
    mid = 0.5 * (1.0 / a0 + 1.0 / b) * float(y @ p)
    half = 0.5 * abs(1.0 / a0 - 1.0 / b) * float(np.linalg.norm(y) * np.linalg.norm(p))
    return Interval(mid - half, mid + half)


def delta_j_ellipse_range(data: PointData) -> EllipseRange:
    """Closure of ellipse-shape derivatives over aspect ratio and rotation.

    With s = gy.gp and n = |gy| |p|:

        cl = -(b - a0) s + 0.5 (b - a0)^2 / b * (s + [-1, 1] n),

    and the infimum -(b - a0) s + 0.5 (b - a0)^2 / b * (s - n) is approached
    by needle-like ellipses aligned with the gradients.
    """
    if data.d != 2:
        raise ValueError("ellipse range is two-dimensional")
    a0, b = data.require_scalars("delta_j_ellipse_range")
    s = float(data.gy @ data.gp)
    n = float(np.linalg.norm(data.gy) * np.linalg.norm(data.gp))
    base = -(b - a0) * s
    spread = 0.5 * (b - a0) ** 2 / b
    interval = Interval(base + spread * (s - n), base + spread * (s + n))
    return EllipseRange(interval=interval, infimum=interval.lo)


def ellipse_sweep(data: PointData, lambdas=None, thetas=None):
    """Evaluate :func:`delta_j_ellipse` on a (lambda, theta) grid.

    Returns an array of shape (len(lambdas), len(thetas)).  Defaults to the
    module grids ``LAMBDA_GRID`` and ``THETA_GRID``.
    """
    if data.d != 2:
        raise ValueError("ellipse sweep is two-dimensional")
    a0, b = data.require_scalars("ellipse_sweep")
    lambdas = LAMBDA_GRID if lambdas is None else np.asarray(lambdas, dtype=float)
    thetas = THETA_GRID if thetas is None else np.asarray(thetas, dtype=float)
    fx, fy = _ellipse_axis_factors(a0, b, lambdas)
    c, s = np.cos(thetas), np.sin(thetas)
    gy1 = c * data.gy[0] - s * data.gy[1]
    gy2 = s * data.gy[0] + c * data.gy[1]
    gp1 = c * data.gp[0] - s * data.gp[1]
    gp2 = s * data.gp[0] + c * data.gp[1]
    return -(b - a0) * a0 * (np.outer(fx, gy1 * gp1) + np.outer(fy, gy2 * gp2))
