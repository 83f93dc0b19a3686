"""Conforming triangle meshes on rectangles and inclusion geometry.

The mesh data model is deliberately small: vertex coordinates, element
connectivity, and quantities derived once at construction (signed areas,
centroids, boundary nodes).  Arrays are frozen after construction; meshes are
treated as immutable values everywhere else in the package.
"""

import numpy as np

from . import _io

__all__ = [
    "MeshError",
    "PointLocationError",
    "Mesh",
    "InclusionShape",
    "ball_shape",
    "ellipse_shape",
    "rotation_matrix",
    "build_rect_mesh",
    "uniform_refine",
    "tag_inclusion",
    "locate_element",
    "write_mesh_csv",
    "write_vtk",
]


class MeshError(ValueError):
    """Invalid mesh data or invalid mesh operation."""


class PointLocationError(MeshError):
    """A query point lies outside the meshed domain."""


class Mesh:
    """Immutable conforming triangle mesh.

    Parameters
    ----------
    vertices : (n, 2) float array
        Vertex coordinates.
    elements : (m, 3) int array
        Vertex indices per triangle, counter-clockwise.

    Notes
    -----
    Construction validates that every element has positive signed area and
    that every interior edge is shared by exactly two elements.  Boundary
    nodes are detected topologically: vertices of edges that belong to a
    single element.
    """

    def __init__(self, vertices, elements):
        vertices = np.ascontiguousarray(np.asarray(vertices, dtype=float))
        elements = np.ascontiguousarray(np.asarray(elements, dtype=np.int64))
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must be (n, 2), got {vertices.shape}")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError(f"elements must be (m, 3), got {elements.shape}")
        if elements.size and (elements.min() < 0 or elements.max() >= len(vertices)):
            raise MeshError("element connectivity references missing vertices")

        p0 = vertices[elements[:, 0]]
        p1 = vertices[elements[:, 1]]
        p2 = vertices[elements[:, 2]]
        signed = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
        if np.any(signed <= 0.0):
            bad = int(np.argmin(signed))
            raise MeshError(
                f"element {bad} has non-positive signed area {signed[bad]:g}; "
                "vertices must be listed counter-clockwise")

        edges = elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        edges = np.sort(edges, axis=1)
        keys = edges[:, 0] * len(vertices) + edges[:, 1]
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-conforming mesh: an edge is shared by more "
                            "than two elements")
        bnd_keys = uniq[counts == 1]
        bnd_pairs = np.stack([bnd_keys // len(vertices),
                              bnd_keys % len(vertices)], axis=1)
        boundary = np.unique(bnd_pairs)

        self.vertices = vertices
        self.elements = elements
        self.element_areas = signed
        self.element_centroids = (p0 + p1 + p2) / 3.0
        self.boundary_nodes = boundary
        for arr in (self.vertices, self.elements, self.element_areas,
                    self.element_centroids, self.boundary_nodes):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_diameters(self):
        """Longest edge of each element."""
        p = self.vertices[self.elements]
        d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        return np.maximum(np.maximum(d01, d12), d20)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def rotation_matrix(theta: float):
    """Counter-clockwise rotation by ``theta``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class InclusionShape:
    """Scaled inclusion ``{x : (x - center)^T H (x - center) <= radius^2}``.

    ``H`` must be symmetric positive definite with unit determinant, so the
    shape has measure ``pi * radius^2`` regardless of its anisotropy.
    """

    def __init__(self, center, radius, shape_matrix=None):
        center = np.asarray(center, dtype=float).reshape(2)
        radius = float(radius)
        if shape_matrix is None:
            H = np.eye(2)
        else:
            H = np.asarray(shape_matrix, dtype=float).reshape(2, 2)
        if radius <= 0.0:
            raise ValueError(f"radius must be positive, got {radius}")
        if np.abs(H - H.T).max() > 1e-12:
            raise ValueError("shape matrix must be symmetric (within 1e-12)")
        det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
        if abs(det - 1.0) > 1e-10:
            raise ValueError(f"shape matrix must have unit determinant, got {det!r}")
        eigs = np.linalg.eigvalsh(0.5 * (H + H.T))
        if eigs[0] <= 0.0:
            raise ValueError("shape matrix must be positive definite")
        self.center = center
        self.radius = radius
        self.shape_matrix = H
        self._min_eig = float(eigs[0])
        for arr in (self.center, self.shape_matrix):
            arr.setflags(write=False)

    @property
    def circumradius(self) -> float:
        """Radius of the smallest disc containing the inclusion."""
        return self.radius / np.sqrt(self._min_eig)

    @property
    def measure(self) -> float:
        return np.pi * self.radius ** 2

    def contains(self, points):
        """Membership test, inclusive of the boundary (1e-12 relative slack)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        q = np.einsum("nk,kl,nl->n", pts, self.shape_matrix, pts)
        result = q <= self.radius ** 2 * (1.0 + 1e-12)
        if np.asarray(points).ndim == 1:
            return bool(result[0])
        return result

    def scaled(self, radius: float):
        """Same center and anisotropy, different radius."""
        return InclusionShape(self.center, radius, self.shape_matrix)


def ball_shape(center, radius: float) -> InclusionShape:
    return InclusionShape(center, radius)


def ellipse_shape(center, radius: float, lam: float, theta: float = 0.0) -> InclusionShape:
    """Ellipse with axis ratio ``lam``: H = R(theta)^T diag(lam, 1/lam) R(theta).

    ``lam > 0``; ``lam = 1`` gives a ball.  The semi-axes have lengths
    ``radius / sqrt(lam)`` and ``radius * sqrt(lam)`` along the rotated
    coordinate axes.
    """
    lam = float(lam)
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    rot = rotation_matrix(theta)
    H = rot.T @ np.diag([lam, 1.0 / lam]) @ rot
    H = 0.5 * (H + H.T)  # scrub rounding asymmetry
    return InclusionShape(center, radius, H)


def build_rect_mesh(bounds, n: int) -> Mesh:
    """Criss-cross triangulation of an axis-aligned rectangle.

    Parameters
    ----------
    bounds : (x0, y0, x1, y1) or ((x0, y0), (x1, y1))
        Rectangle corners.
    n : int
        Number of subdivisions along the shorter axis.  The longer axis gets
        proportionally more cells so elements stay close to unit aspect.
        Each grid cell is split into two triangles; the diagonal alternates
        in a checkerboard pattern.
    """
    b = np.asarray(bounds, dtype=float).ravel()
    if b.size != 4:
        raise MeshError(f"bounds must contain 4 numbers, got {b.size}")
    x0, y0, x1, y1 = b
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {tuple(b)}")
    n = int(n)
    if n < 1:
        raise MeshError(f"n must be >= 1, got {n}")

    w, h = x1 - x0, y1 - y0
    if w <= h:
        nx, ny = n, max(1, round(n * h / w))
    else:
        nx, ny = max(1, round(n * w / h)), n

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j = constant y
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii = ii.T.ravel()  # row-major over cells: j outer, i inner
    jj = jj.T.ravel()
    v00 = jj * (nx + 1) + ii
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    even = (ii + jj) % 2 == 0

    t1 = np.where(even[:, None],
                  np.column_stack([v00, v10, v11]),
                  np.column_stack([v00, v10, v01]))
    t2 = np.where(even[:, None],
                  np.column_stack([v00, v11, v01]),
                  np.column_stack([v10, v11, v01]))
    elements = np.empty((2 * len(v00), 3), dtype=np.int64)
    elements[0::2] = t1
    elements[1::2] = t2
    return Mesh(vertices, elements)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: each triangle is split into four via edge midpoints."""
    el = mesh.elements
    edges = el[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    edges = np.sort(edges, axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    mid_ids = mesh.n_vertices + np.arange(len(uniq))
    midpoints = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    m = inverse.reshape(-1, 3)  # per element: edge 01, 12, 20
    m01 = mid_ids[m[:, 0]]
    m12 = mid_ids[m[:, 1]]
    m20 = mid_ids[m[:, 2]]
    v0, v1, v2 = el[:, 0], el[:, 1], el[:, 2]
    children = np.empty((4 * mesh.n_elements, 3), dtype=np.int64)
    children[0::4] = np.column_stack([v0, m01, m20])
    children[1::4] = np.column_stack([m01, v1, m12])
    children[2::4] = np.column_stack([m20, m12, v2])
    children[3::4] = np.column_stack([m01, m12, m20])
    return Mesh(vertices, children)


# Barycentric weights of the 16 sub-triangle centroids obtained from two
# levels of red refinement of the reference triangle.  Used by the
# area_fraction tagging mode.
def _subcell_centroid_weights():
    rows = []
    k = 4
    for i in range(k):
        for j in range(k - i):
            # upward sub-triangle (i, j)
            rows.append([(i + 1.0 / 3.0) / k, (j + 1.0 / 3.0) / k])
            if i + j < k - 1:
                # downward sub-triangle
                rows.append([(i + 2.0 / 3.0) / k, (j + 2.0 / 3.0) / k])
    ab = np.array(rows)
    w = np.column_stack([1.0 - ab[:, 0] - ab[:, 1], ab[:, 0], ab[:, 1]])
    return w


_SUBCELL_W = _subcell_centroid_weights()


def tag_inclusion(mesh: Mesh, shape: InclusionShape, mode: str = "centroid"):
    """Per-element inclusion weights in [0, 1].

    ``mode='centroid'`` gives the indicator of the element centroid.
    ``mode='area_fraction'`` approximates the covered area fraction by
    sampling the centroids of 16 congruent sub-triangles.

    The inclusion must lie strictly inside the meshed domain; shapes that
    touch or cross the boundary are rejected.
    """
    if mode not in ("centroid", "area_fraction"):
        raise ValueError(f"unknown tagging mode {mode!r}")
    lo, hi = mesh.bounding_box()
    rc = shape.circumradius
    c = shape.center
    if not (np.all(c - rc > lo) and np.all(c + rc < hi)):
        raise MeshError(
            f"inclusion (center {tuple(c)}, circumradius {rc:g}) touches or "
            "crosses the domain boundary")

    weights = np.zeros(mesh.n_elements)
    if mode == "centroid":
        inside = shape.contains(mesh.element_centroids)
        weights[inside] = 1.0
        return weights

    # prefilter: elements whose circumscribed neighbourhood can intersect
    dist = np.linalg.norm(mesh.element_centroids - c, axis=1)
    cand = np.flatnonzero(dist <= rc + mesh.element_diameters())
    if cand.size == 0:
        return weights
    tri = mesh.vertices[mesh.elements[cand]]          # (k, 3, 2)
    pts = np.einsum("sj,kjd->ksd", _SUBCELL_W, tri)   # (k, 16, 2)
    inside = shape.contains(pts.reshape(-1, 2)).reshape(len(cand), -1)
    weights[cand] = inside.mean(axis=1)
    return weights


def locate_element(mesh: Mesh, point) -> int:
    """Index of the element containing ``point`` (lowest index on ties).

    Containment uses barycentric coordinates with 1e-12 slack, so points on
    shared edges are found; points outside the domain raise
    :class:`PointLocationError`.
    """
    x = np.asarray(point, dtype=float).reshape(2)
    p = mesh.vertices[mesh.elements]
    a2 = 2.0 * mesh.element_areas

    def cross_to(pa, pb):
        return ((pb[:, 0] - pa[:, 0]) * (x[1] - pa[:, 1])
                - (pb[:, 1] - pa[:, 1]) * (x[0] - pa[:, 0]))

    l0 = cross_to(p[:, 1], p[:, 2]) / a2
    l1 = cross_to(p[:, 2], p[:, 0]) / a2
    l2 = cross_to(p[:, 0], p[:, 1]) / a2
    inside = (l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12)
    if not inside.any():
        raise PointLocationError(f"point {tuple(x)} is outside the mesh")
    return int(np.argmax(inside))


def write_mesh_csv(mesh: Mesh, vertices_path, elements_path):
    """Write ``id,x,y`` and ``id,v0,v1,v2`` CSV files."""
    _io.write_csv(vertices_path, ["id", "x", "y"],
                  ((i, v[0], v[1]) for i, v in enumerate(mesh.vertices)))
    _io.write_csv(elements_path, ["id", "v0", "v1", "v2"],
                  ((i, e[0], e[1], e[2]) for i, e in enumerate(mesh.elements)))


def write_vtk(mesh: Mesh, path, point_data=None, cell_data=None,
              title="topoderiv mesh"):
    """Write the mesh (plus optional fields) as legacy ASCII VTK."""
    _io.write_vtk(path, mesh.vertices, mesh.elements,
                  point_data=point_data, cell_data=cell_data, title=title)
