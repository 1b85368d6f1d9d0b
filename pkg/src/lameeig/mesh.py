"""Simplicial meshes in two and three dimensions.

Provides the test geometries (unit square, rotated square with a hole,
3D L-shape), uniform refinement, and conforming adaptive bisection of
marked cells.  Cells carry a bisection tag so that repeated local
refinement stays conforming and shape regular; the scheme is
newest-vertex bisection in 2D and its tagged n-simplex analogue in 3D,
started from Kuhn-type initial meshes where possible.

A finished ``Mesh`` is immutable by convention: refinement operations
return new meshes and never mutate their input.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Mesh",
    "FacetGeometry",
    "build_unit_square",
    "build_square_with_hole",
    "build_lshape_3d",
    "uniform_refine",
    "refine_marked",
    "facet_geometry",
    "write_vtk",
]

BOUNDARY = -1

_MAX_CLOSURE_PASSES = 200


class Mesh:
    """Conforming simplicial mesh with facet connectivity.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    vertices : ndarray, shape (nv, dim)
        Vertex coordinates.
    cells : ndarray, shape (nc, dim+1)
        Cell connectivity in bisection-tag order: the refinement edge of
        cell ``c`` is ``(cells[c, 0], cells[c, tags[c]])``.
    tags : ndarray, shape (nc,)
        Per-cell bisection tag ``d`` in ``1..dim``.
    facets : ndarray, shape (nf, dim)
        Facet connectivity (sorted vertex indices).
    facet_cells : ndarray, shape (nf, 2)
        Adjacent cells per facet; ``facet_cells[f, 0]`` is the cell of
        smaller index (cell+), the second entry is ``BOUNDARY`` (-1) for
        boundary facets.
    boundary_facet : ndarray of bool, shape (nf,)
    cell_facets : ndarray, shape (nc, dim+1)
        Facet index opposite each cell vertex position.
    """

    def __init__(self, dim, vertices, cells, tags):
        self.dim = int(dim)
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        self.tags = np.ascontiguousarray(tags, dtype=np.int64)
        if self.vertices.shape[1] != self.dim:
            raise ValueError("vertex coordinate dimension mismatch")
        if self.cells.shape[1] != self.dim + 1:
            raise ValueError("cells must have dim+1 vertices")
        if np.any(self.tags < 1) or np.any(self.tags > self.dim):
            raise ValueError("bisection tags must lie in 1..dim")
        self._build_facets()

    # -- basic sizes ---------------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_facets(self):
        return self.facets.shape[0]

    @property
    def refinement_edges(self):
        """Global vertex pair (v0, vd) of each cell's refinement edge."""
        return np.column_stack(
            [self.cells[:, 0], self.cells[np.arange(self.n_cells), self.tags]]
        )

    # -- connectivity --------------------------------------------------

    def _build_facets(self):
        n = self.dim
        table = {}
        for c in range(self.n_cells):
            cell = self.cells[c]
            for j in range(n + 1):
                key = tuple(sorted(np.delete(cell, j)))
                table.setdefault(key, []).append((c, j))
        facets = np.empty((len(table), n), dtype=np.int64)
        facet_cells = np.full((len(table), 2), BOUNDARY, dtype=np.int64)
        cell_facets = np.empty((self.n_cells, n + 1), dtype=np.int64)
        for f, (key, adj) in enumerate(sorted(table.items())):
            if len(adj) > 2:
                raise ValueError(f"facet {key} shared by {len(adj)} cells")
            facets[f] = key
            adj.sort()
            for slot, (c, j) in enumerate(adj):
                facet_cells[f, slot] = c
                cell_facets[c, j] = f
        self.facets = facets
        self.facet_cells = facet_cells
        self.cell_facets = cell_facets
        self.boundary_facet = facet_cells[:, 1] == BOUNDARY

    @property
    def interior_facets(self):
        return np.flatnonzero(~self.boundary_facet)

    # -- geometry ------------------------------------------------------

    def edge_matrices(self):
        """Per-cell matrix of edge vectors x_i - x_0, shape (nc, dim, dim)."""
        v = self.vertices[self.cells]
        return np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)

    def signed_volumes(self):
        return np.linalg.det(self.edge_matrices()) / math.factorial(self.dim)

    def cell_volumes(self):
        vols = np.abs(self.signed_volumes())
        if np.any(vols <= 0.0):
            raise ValueError("mesh contains a degenerate (zero-volume) cell")
        return vols

    def cell_diameters(self):
        """Longest edge of each cell."""
        v = self.vertices[self.cells]
        h = np.zeros(self.n_cells)
        n = self.dim + 1
        for i in range(n):
            for j in range(i + 1, n):
                h = np.maximum(h, np.linalg.norm(v[:, i] - v[:, j], axis=1))
        return h

    def facet_measures(self):
        v = self.vertices[self.facets]
        if self.dim == 2:
            return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def facet_diameters(self):
        v = self.vertices[self.facets]
        if self.dim == 2:
            return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        h = np.zeros(self.n_facets)
        for i in range(3):
            for j in range(i + 1, 3):
                h = np.maximum(h, np.linalg.norm(v[:, i] - v[:, j], axis=1))
        return h

    def inradii(self):
        """Inscribed-sphere radius per cell (2 area/perimeter, 3 vol/surface)."""
        vols = self.cell_volumes()
        v = self.vertices[self.cells]
        surf = np.zeros(self.n_cells)
        for j in range(self.dim + 1):
            face = np.delete(v, j, axis=1)
            if self.dim == 2:
                surf += np.linalg.norm(face[:, 1] - face[:, 0], axis=1)
            else:
                cross = np.cross(face[:, 1] - face[:, 0], face[:, 2] - face[:, 0])
                surf += 0.5 * np.linalg.norm(cross, axis=1)
        return self.dim * vols / surf

    def shape_regularity(self):
        """Max over cells of diameter / inradius."""
        return float(np.max(self.cell_diameters() / self.inradii()))

    def positively_oriented_cells(self):
        """Connectivity with the last two vertices swapped where needed so
        that every signed volume is positive (the fixed ordering
        convention used for export and orientation checks)."""
        cells = self.cells.copy()
        neg = self.signed_volumes() < 0
        cells[neg, -2], cells[neg, -1] = (
            self.cells[neg, -1],
            self.cells[neg, -2],
        )
        return cells


class FacetGeometry:
    """Unit normals and diameters of the facet skeleton.

    ``normals[f]`` points outward from ``facet_cells[f, 0]`` (cell+,
    the adjacent cell of smaller index); the outward normal seen from
    cell- is its negative.
    """

    def __init__(self, normals, h_e, h_T):
        self.normals = normals
        self.h_e = h_e
        self.h_T = h_T


def facet_geometry(mesh):
    """Compute facet unit normals, facet diameters h_e and cell diameters h_T."""
    mesh.cell_volumes()  # raises on degenerate cells
    fverts = mesh.vertices[mesh.facets]
    if mesh.dim == 2:
        t = fverts[:, 1] - fverts[:, 0]
        normals = np.column_stack([t[:, 1], -t[:, 0]])
    else:
        normals = np.cross(fverts[:, 1] - fverts[:, 0], fverts[:, 2] - fverts[:, 0])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    # orient away from cell+
    plus = mesh.facet_cells[:, 0]
    cell_mid = mesh.vertices[mesh.cells[plus]].mean(axis=1)
    facet_mid = fverts.mean(axis=1)
    flip = np.einsum("fd,fd->f", normals, facet_mid - cell_mid) < 0
    normals[flip] *= -1.0
    return FacetGeometry(normals, mesh.facet_diameters(), mesh.cell_diameters())


# ----------------------------------------------------------------------
# geometry catalog
# ----------------------------------------------------------------------


def build_unit_square(N):
    """Structured criss-cross triangulation of (0,1)^2 with 2 N^2 cells.

    Grid squares are split along alternating diagonals (checkerboard
    pattern), so for even N the mesh carries the full symmetry group of
    the square and double eigenvalues of the continuous problem stay
    numerically double.  The diagonal is the refinement edge of both
    triangles, which makes the mesh compatible with the bisection rule.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be a positive integer")
    xs = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (N + 1) + j

    cells = []
    for i in range(N):
        for j in range(N):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                cells.append((v00, v10, v11))
                cells.append((v00, v01, v11))
            else:
                cells.append((v10, v11, v01))
                cells.append((v10, v00, v01))
    tags = np.full(len(cells), 2)
    return Mesh(2, vertices, np.array(cells), tags)


def build_square_with_hole(n_tangential=16, n_radial=2):
    """Rotated unit square minus the axis-aligned hole (129/400, 271/400)^2.

    The outer boundary is the unit square rotated by pi/4 about its
    centroid (1/2, 1/2).  The ring between hole and outer boundary is
    meshed deterministically by blending piecewise-linear loop
    parametrizations of the two boundary polygons, so that all eight
    polygon corners appear verbatim in the vertex set.
    """
    if n_tangential % 8 != 0 or n_tangential < 8:
        raise ValueError("n_tangential must be a positive multiple of 8")
    if n_radial < 1:
        raise ValueError("n_radial must be >= 1")
    a, b = 129.0 / 400.0, 271.0 / 400.0
    r = math.sqrt(2.0) / 2.0
    cx = cy = 0.5
    # corner loops, counter-clockwise, aligned so that parameter 0 points east
    inner = [
        (1.0 / 8.0, (b, b)),
        (3.0 / 8.0, (a, b)),
        (5.0 / 8.0, (a, a)),
        (7.0 / 8.0, (b, a)),
        (9.0 / 8.0, (b, b)),
    ]
    outer = [
        (0.0, (cx + r, cy)),
        (2.0 / 8.0, (cx, cy + r)),
        (4.0 / 8.0, (cx - r, cy)),
        (6.0 / 8.0, (cx, cy - r)),
        (8.0 / 8.0, (cx + r, cy)),
    ]

    def loop_point(corners, t):
        t = t % 1.0
        if t < corners[0][0]:
            t += 1.0
        for (t0, p0), (t1, p1) in zip(corners[:-1], corners[1:]):
            if t0 <= t <= t1:
                w = (t - t0) / (t1 - t0)
                p0, p1 = np.asarray(p0), np.asarray(p1)
                return p0 if w == 0.0 else (p1 if w == 1.0 else p0 + w * (p1 - p0))
        raise AssertionError("loop parameter out of range")

    nt, nr = n_tangential, n_radial
    vertices = np.empty(((nr + 1) * nt, 2))
    for i in range(nr + 1):
        s = i / nr
        for j in range(nt):
            t = j / nt
            p_in = loop_point(inner, t)
            p_out = loop_point(outer, t)
            vertices[i * nt + j] = (1.0 - s) * p_in + s * p_out

    def vid(i, j):
        return i * nt + (j % nt)

    cells = []
    for i in range(nr):
        for j in range(nt):
            q = [vid(i, j), vid(i, j + 1), vid(i + 1, j + 1), vid(i + 1, j)]
            # split along the shorter diagonal for better shaped cells
            d02 = np.linalg.norm(vertices[q[0]] - vertices[q[2]])
            d13 = np.linalg.norm(vertices[q[1]] - vertices[q[3]])
            if d02 <= d13:
                cells.append((q[0], q[1], q[2]))
                cells.append((q[0], q[2], q[3]))
            else:
                cells.append((q[0], q[1], q[3]))
                cells.append((q[1], q[2], q[3]))
    cells = np.array(cells)
    return Mesh(2, vertices, cells, _longest_edge_tags(vertices, cells))


def _longest_edge_tags(vertices, cells):
    """Reorder each cell in place so its longest edge is (v0, v_dim); returns tags."""
    dim = cells.shape[1] - 1
    tags = np.full(cells.shape[0], dim)
    for c in range(cells.shape[0]):
        cell = cells[c]
        best, pair = -1.0, (0, dim)
        for i in range(dim + 1):
            for j in range(i + 1, dim + 1):
                d = np.linalg.norm(vertices[cell[i]] - vertices[cell[j]])
                if d > best:
                    best, pair = d, (i, j)
        rest = [cell[m] for m in range(dim + 1) if m not in pair]
        cells[c] = [cell[pair[0]]] + rest + [cell[pair[1]]]
    return tags


def build_lshape_3d(n=2):
    """Tetrahedral mesh of the 3D L-shape.

    Domain (-1/2,1/2) x (0,1) x (-1/2,1/2) minus (0,1/2) x (0,1) x (0,1/2);
    the singular edge {x = z = 0, 0 <= y <= 1} lies in the mesh skeleton.
    Built from a uniform cube grid of spacing 1/(2n), each cube split into
    the six Kuhn tetrahedra sharing its main diagonal, which is the
    compatible starting point for the 3D bisection rule.  The default
    n = 2 is the coarsest resolution with interior Lagrange nodes, i.e.
    the coarsest mesh on which the eigenproblem is solvable.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    h = 0.5 / n
    nx = 2 * n  # cubes per axis in x and z; y likewise spans 2n cubes
    coords = {}
    vertices = []

    def vid(i, j, k):
        key = (i, j, k)
        if key not in coords:
            coords[key] = len(vertices)
            vertices.append((-0.5 + i * h, 0.0 + j * h, -0.5 + k * h))
        return coords[key]

    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    cells = []
    for i in range(nx):
        for j in range(nx):
            for k in range(nx):
                x0, z0 = -0.5 + i * h, -0.5 + k * h
                if x0 >= -1e-12 and z0 >= -1e-12:
                    continue  # the removed quadrant
                for p in perms:
                    idx = np.array([i, j, k])
                    chain = [idx.copy()]
                    for axis in p:
                        idx = idx.copy()
                        idx[axis] += 1
                        chain.append(idx)
                    cells.append(tuple(vid(*c) for c in chain))
    tags = np.full(len(cells), 3)
    return Mesh(3, np.array(vertices, dtype=float), np.array(cells), tags)


# ----------------------------------------------------------------------
# refinement
# ----------------------------------------------------------------------


def refine_marked(mesh, marked):
    """Bisect the marked cells and restore conformity by closure.

    Each marked cell is bisected once on its refinement edge; cells left
    with a hanging node (an edge whose midpoint entered the vertex set)
    are then bisected repeatedly until the mesh is conforming again.
    """
    marked = sorted(set(int(c) for c in marked))
    if marked and (marked[0] < 0 or marked[-1] >= mesh.n_cells):
        raise IndexError("marked cell index out of range")
    if not marked:
        return mesh

    dim = mesh.dim
    verts = list(map(tuple, mesh.vertices))
    cells = list(map(tuple, mesh.cells))
    tags = list(mesh.tags)
    midpoints = {}

    def bisect(i):
        v, d = cells[i], tags[i]
        a, bb = v[0], v[d]
        key = (a, bb) if a < bb else (bb, a)
        z = midpoints.get(key)
        if z is None:
            z = len(verts)
            verts.append(
                tuple(
                    0.5 * (va + vb)
                    for va, vb in zip(verts[a], verts[bb])
                )
            )
            midpoints[key] = z
        newtag = d - 1 if d > 1 else dim
        cells[i] = v[:d] + (z,) + v[d + 1 :]
        tags[i] = newtag
        cells.append(v[1 : d + 1] + (z,) + v[d + 1 :])
        tags.append(newtag)

    for i in marked:
        bisect(i)

    for _ in range(_MAX_CLOSURE_PASSES):
        hanging = []
        for i, cell in enumerate(cells):
            done = False
            for p in range(dim + 1):
                for q in range(p + 1, dim + 1):
                    a, bb = cell[p], cell[q]
                    key = (a, bb) if a < bb else (bb, a)
                    if key in midpoints:
                        hanging.append(i)
                        done = True
                        break
                if done:
                    break
        if not hanging:
            break
        for i in hanging:
            bisect(i)
    else:
        raise RuntimeError("bisection closure did not terminate")

    return Mesh(dim, np.array(verts), np.array(cells), np.array(tags))


def uniform_refine(mesh):
    """Refine every cell, multiplying the cell count by 2**dim.

    Implemented as ``dim`` sweeps of full bisection; on the structured
    meshes built here this reproduces the usual red refinement (four
    similar children in 2D, eight in 3D, with h halved).
    """
    m = mesh
    for _ in range(mesh.dim):
        m = refine_marked(m, range(m.n_cells))
    return m


# ----------------------------------------------------------------------
# export
# ----------------------------------------------------------------------

_VTK_CELL_TYPE = {2: 5, 3: 10}  # VTK_TRIANGLE, VTK_TETRA


def write_vtk(mesh, path, cell_data=None):
    """Write the mesh in legacy ASCII VTK unstructured-grid format.

    Floats are written with shortest round-trip formatting.  Optional
    ``cell_data`` maps field names to per-cell scalar arrays.
    """
    cells = mesh.positively_oriented_cells()
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = [
        "# vtk DataFile Version 3.0",
        "lameeig mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for p in mesh.vertices:
        coords = list(p) + [0.0] * (3 - mesh.dim)
        lines.append(" ".join(repr(float(x)) for x in coords))
    npc = mesh.dim + 1
    lines.append(f"CELLS {nc} {nc * (npc + 1)}")
    for cell in cells:
        lines.append(" ".join([str(npc)] + [str(int(v)) for v in cell]))
    lines.append(f"CELL_TYPES {nc}")
    lines.extend([str(_VTK_CELL_TYPE[mesh.dim])] * nc)
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, values in cell_data.items():
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(repr(float(v)) for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
