"""Shared output helpers: deterministic CSV and legacy VTK writers.

All numeric output goes through :func:`fmt` (17 significant digits) so that
repeated runs with identical inputs produce byte-identical files.  Files are
written with LF line endings regardless of platform.
"""

import numpy as np


def fmt(value) -> str:
    """Format a number with 17 significant digits."""
    v = float(value)
    if v == 0.0:
        v = 0.0  # normalise -0.0
    return format(v, ".17g")


def _render(cell) -> str:
    if isinstance(cell, str):
        return cell
    if isinstance(cell, (bool, np.bool_)):
        return str(bool(cell)).lower()
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    return fmt(cell)


def write_csv(path, header, rows, footer=None):
    """Write a CSV file: comma separator, '.' decimal, LF endings.

    ``footer`` is an optional list of comment lines appended after the body,
    each prefixed with '# '.
    """
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_render(c) for c in row) + "\n")
        if footer:
            for line in footer:
                fh.write("# " + line + "\n")


def write_vtk(path, vertices, elements, point_data=None, cell_data=None,
              title="topoderiv output"):
    """Write a legacy ASCII VTK unstructured grid of triangles."""
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    n_pts = vertices.shape[0]
    n_el = elements.shape[0]
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n_pts} double\n")
        for x, y in vertices:
            fh.write(f"{fmt(x)} {fmt(y)} 0\n")
        fh.write(f"CELLS {n_el} {4 * n_el}\n")
        for tri in elements:
            fh.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n")
        fh.write(f"CELL_TYPES {n_el}\n")
        for _ in range(n_el):
            fh.write("5\n")
        if point_data:
            fh.write(f"POINT_DATA {n_pts}\n")
            for name, values in point_data.items():
                _write_vtk_field(fh, name, np.asarray(values, dtype=float))
        if cell_data:
            fh.write(f"CELL_DATA {n_el}\n")
            for name, values in cell_data.items():
                _write_vtk_field(fh, name, np.asarray(values, dtype=float))


def _write_vtk_field(fh, name, values):
    if values.ndim == 1:
        fh.write(f"SCALARS {name} double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for v in values:
            fh.write(fmt(v) + "\n")
    elif values.ndim == 2 and values.shape[1] == 2:
        fh.write(f"VECTORS {name} double\n")
        for vx, vy in values:
            fh.write(f"{fmt(vx)} {fmt(vy)} 0\n")
    else:
        raise ValueError(f"unsupported field shape for {name!r}: {values.shape}")
