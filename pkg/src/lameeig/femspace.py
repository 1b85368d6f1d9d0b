"""Reference simplex elements, quadrature and degree-of-freedom maps.

The discretization uses continuous vector Lagrange polynomials of degree
k (1..3) for the displacement, with zero trace on the boundary, and
discontinuous degree k-1 polynomials for the rotation (scalar in 2D,
3-vector in 3D) and the pressure.

Curl conventions:
  * 2D vector field:  curl u = d1 u2 - d2 u1          (scalar)
  * 2D scalar field:  curl t = (d2 t, -d1 t)          (vector)
  * 3D:               standard vector curl
The 2D scalar rotation is the out-of-plane axial vector (0, 0, w), so
that w x n = (-w n2, w n1).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "QuadratureRule",
    "SpaceTriple",
    "tabulate_basis",
    "quadrature",
    "facet_quadrature",
    "build_spaces",
    "boundary_dofs",
    "evaluate_field",
    "interpolate_displacement",
    "interpolate_dg",
]

MAX_DEGREE = {1: 30, 2: 10, 3: 8}


# ----------------------------------------------------------------------
# Lagrange basis on the reference simplex
# ----------------------------------------------------------------------


def _monomial_exponents(k, dim):
    return [
        e
        for e in itertools.product(range(k + 1), repeat=dim)
        if sum(e) <= k
    ]


def reference_nodes(k, dim):
    """Equispaced Lagrange nodes of degree k on the reference simplex."""
    if k == 0:
        return np.full((1, dim), 1.0 / (dim + 1))
    nodes = [
        np.array(e, dtype=float) / k
        for e in itertools.product(range(k + 1), repeat=dim)
        if sum(e) <= k
    ]
    return np.array(nodes)


def _vandermonde(exps, points):
    points = np.atleast_2d(points)
    V = np.ones((points.shape[0], len(exps)))
    for j, e in enumerate(exps):
        for d, p in enumerate(e):
            if p:
                V[:, j] *= points[:, d] ** p
    return V


def _grad_vandermonde(exps, points):
    points = np.atleast_2d(points)
    dim = points.shape[1]
    G = np.zeros((points.shape[0], len(exps), dim))
    for j, e in enumerate(exps):
        for m in range(dim):
            if e[m] == 0:
                continue
            col = np.full(points.shape[0], float(e[m]))
            for d, p in enumerate(e):
                q = p - 1 if d == m else p
                if q:
                    col *= points[:, d] ** q
            G[:, j, m] = col
    return G


_COEFF_CACHE = {}


def _lagrange_coeffs(k, dim):
    key = (k, dim)
    if key not in _COEFF_CACHE:
        exps = _monomial_exponents(k, dim)
        nodes = reference_nodes(k, dim)
        C = np.linalg.inv(_vandermonde(exps, nodes))
        _COEFF_CACHE[key] = (exps, C)
    return _COEFF_CACHE[key]


def tabulate_basis(k, dim, points):
    """Lagrange basis values and reference gradients at the given points.

    Returns ``(values, grads)`` with shapes (npts, ndof) and
    (npts, ndof, dim).  Degree 0 is the single constant function.
    """
    if k not in (0, 1, 2, 3):
        raise ValueError(f"polynomial degree {k} not supported (0..3)")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if k == 0:
        return (
            np.ones((points.shape[0], 1)),
            np.zeros((points.shape[0], 1, dim)),
        )
    exps, C = _lagrange_coeffs(k, dim)
    vals = _vandermonde(exps, points) @ C
    grads = np.einsum("pjd,jn->pnd", _grad_vandermonde(exps, points), C)
    return vals, grads


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference simplex (cartesian and barycentric)."""

    dim: int
    degree: int
    points: np.ndarray  # (nq, dim) cartesian on the reference simplex
    weights: np.ndarray  # sums to the reference simplex measure

    @property
    def barycentric(self):
        lam0 = 1.0 - self.points.sum(axis=1)
        return np.column_stack([lam0, self.points])


def _gauss01(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(m, alpha):
    # nodes/weights for weight (1-x)^alpha on [0, 1]
    x, w = roots_jacobi(m, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def quadrature(dim, degree):
    """Collapsed Gauss-Jacobi rule on the reference simplex.

    Exact for all polynomials of total degree <= ``degree``; weights are
    positive and sum to the reference measure 1/dim!.
    """
    if degree < 0 or degree > MAX_DEGREE.get(dim, -1):
        raise ValueError(f"quadrature degree {degree} unsupported in dim {dim}")
    m = degree // 2 + 1
    if dim == 1:
        x, w = _gauss01(m)
        return QuadratureRule(1, degree, x[:, None], w)
    if dim == 2:
        xi, wxi = _gauss01(m)
        eta, weta = _jacobi01(m, 1.0)
        pts, wts = [], []
        for e, we in zip(eta, weta):
            for s, ws in zip(xi, wxi):
                pts.append((s * (1.0 - e), e))
                wts.append(ws * we)
        return QuadratureRule(2, degree, np.array(pts), np.array(wts))
    if dim == 3:
        xi, wxi = _gauss01(m)
        eta, weta = _jacobi01(m, 1.0)
        zeta, wzeta = _jacobi01(m, 2.0)
        pts, wts = [], []
        for z, wz in zip(zeta, wzeta):
            for e, we in zip(eta, weta):
                for s, ws in zip(xi, wxi):
                    pts.append((s * (1.0 - e) * (1.0 - z), e * (1.0 - z), z))
                    wts.append(ws * we * wz)
        return QuadratureRule(3, degree, np.array(pts), np.array(wts))
    raise ValueError("dim must be 1, 2 or 3")


def facet_quadrature(dim, degree):
    """Rule on the reference facet (interval in 2D, triangle in 3D)."""
    return quadrature(dim - 1, degree)


# ----------------------------------------------------------------------
# global spaces
# ----------------------------------------------------------------------


@dataclass
class SpaceTriple:
    """Displacement / rotation / pressure spaces on one mesh.

    Displacement dofs are numbered interior-first: ``node_dofs[node, c]``
    is the reduced global index of component ``c`` at a Lagrange node,
    or -1 for boundary nodes (eliminated).  Rotation and pressure are
    cell-wise discontinuous blocks following the displacement block.
    """

    mesh: object
    k: int
    node_coords: np.ndarray  # (n_nodes, dim)
    cell_nodes: np.ndarray  # (nc, n_loc)
    boundary_nodes: np.ndarray  # bool per node
    node_dofs: np.ndarray  # (n_nodes, dim), -1 on boundary
    n_u: int
    n_w: int
    n_p: int

    @property
    def dim(self):
        return self.mesh.dim

    @property
    def n_components_rotation(self):
        return self.dim * (self.dim - 1) // 2

    @property
    def n_loc_u(self):
        return self.cell_nodes.shape[1]

    @property
    def n_loc_dg(self):
        return len(_monomial_exponents(self.k - 1, self.dim))

    @property
    def n_total(self):
        return self.n_u + self.n_w + self.n_p

    @property
    def offsets(self):
        return (0, self.n_u, self.n_u + self.n_w)

    def rotation_dofs(self, cell):
        """Global indices of one cell's rotation dofs, component-major."""
        L = self.n_loc_dg
        m = self.n_components_rotation
        base = self.n_u + cell * m * L
        return np.arange(base, base + m * L).reshape(m, L)

    def pressure_dofs(self, cell):
        L = self.n_loc_dg
        base = self.n_u + self.n_w + cell * L
        return np.arange(base, base + L)

    def split(self, x):
        """Split a full coefficient vector into (u, w, p) blocks."""
        x = np.asarray(x)
        return (
            x[..., : self.n_u],
            x[..., self.n_u : self.n_u + self.n_w],
            x[..., self.n_u + self.n_w :],
        )


def build_spaces(mesh, k):
    """Number the degrees of freedom of the three spaces on a mesh."""
    if k not in (1, 2, 3):
        raise ValueError("polynomial degree k must be 1, 2 or 3")
    dim = mesh.dim
    ref = reference_nodes(k, dim)
    nloc = ref.shape[0]
    # reference barycentric coordinates of the nodes, exact multiples of 1/k
    bary = np.column_stack([1.0 - ref.sum(axis=1), ref])

    verts = mesh.vertices[mesh.cells]  # (nc, dim+1, dim)
    x0 = verts[:, 0, :]
    J = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)
    phys = x0[:, None, :] + np.einsum("cde,ne->cnd", J, ref)  # (nc, nloc, dim)

    node_index = {}
    coords = []
    cell_nodes = np.empty((mesh.n_cells, nloc), dtype=np.int64)
    keys = np.round(phys, 10)
    for c in range(mesh.n_cells):
        for a in range(nloc):
            key = tuple(keys[c, a])
            idx = node_index.get(key)
            if idx is None:
                idx = len(coords)
                node_index[key] = idx
                coords.append(phys[c, a])
            cell_nodes[c, a] = idx
    node_coords = np.array(coords)
    n_nodes = len(coords)

    boundary = np.zeros(n_nodes, dtype=bool)
    on_local_facet = [np.abs(bary[:, j]) < 1e-12 for j in range(dim + 1)]
    for c in range(mesh.n_cells):
        for j in range(dim + 1):
            f = mesh.cell_facets[c, j]
            if mesh.boundary_facet[f]:
                boundary[cell_nodes[c, on_local_facet[j]]] = True

    node_dofs = np.full((n_nodes, dim), -1, dtype=np.int64)
    free = np.flatnonzero(~boundary)
    node_dofs[free] = np.arange(free.size * dim).reshape(free.size, dim)
    n_u = free.size * dim

    n_comp_w = dim * (dim - 1) // 2
    nloc1 = len(_monomial_exponents(k - 1, dim))
    n_w = mesh.n_cells * n_comp_w * nloc1
    n_p = mesh.n_cells * nloc1

    return SpaceTriple(
        mesh=mesh,
        k=k,
        node_coords=node_coords,
        cell_nodes=cell_nodes,
        boundary_nodes=boundary,
        node_dofs=node_dofs,
        n_u=n_u,
        n_w=n_w,
        n_p=n_p,
    )


def boundary_dofs(mesh, spaces, which="displacement"):
    """Full-numbering displacement dofs whose node lies on the boundary.

    Only the displacement space carries a boundary condition; asking for
    the discontinuous spaces is an error.
    """
    if which != "displacement":
        raise ValueError(f"{which} space carries no boundary condition")
    nodes = np.flatnonzero(spaces.boundary_nodes)
    dim = spaces.dim
    return np.sort(
        np.concatenate([nodes * dim + c for c in range(dim)])
    )


# ----------------------------------------------------------------------
# interpolation and evaluation
# ----------------------------------------------------------------------


def interpolate_displacement(mesh, spaces, fn, reduced=False):
    """Nodal interpolation of a vector callable into the displacement space.

    Returns the full node-value vector (n_nodes * dim); with
    ``reduced=True`` boundary values are dropped, yielding a coefficient
    vector for the homogeneous space.
    """
    vals = np.array([fn(x) for x in spaces.node_coords], dtype=float)
    if reduced:
        out = np.zeros(spaces.n_u)
        free = ~spaces.boundary_nodes
        out[:] = vals[free].ravel()
        return out
    return vals.ravel()


def interpolate_dg(mesh, spaces, fn, which):
    """Interpolate a callable into the rotation or pressure block."""
    k1 = spaces.k - 1
    ref = reference_nodes(k1, spaces.dim)
    verts = mesh.vertices[mesh.cells]
    x0 = verts[:, 0, :]
    J = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)
    phys = x0[:, None, :] + np.einsum("cde,ne->cnd", J, ref)
    if which == "pressure":
        out = np.empty(spaces.n_p)
        for c in range(mesh.n_cells):
            out[c * spaces.n_loc_dg : (c + 1) * spaces.n_loc_dg] = [
                fn(x) for x in phys[c]
            ]
        return out
    if which == "rotation":
        m = spaces.n_components_rotation
        L = spaces.n_loc_dg
        out = np.empty(spaces.n_w)
        for c in range(mesh.n_cells):
            block = np.array([np.atleast_1d(fn(x)) for x in phys[c]], dtype=float)
            out[c * m * L : (c + 1) * m * L] = block.T.ravel()
        return out
    raise ValueError("which must be 'pressure' or 'rotation'")


class FieldValues:
    """Evaluated field data at points of one cell."""

    def __init__(self, values, grad=None, div=None, curl=None):
        self.values = values
        self.grad = grad
        self.div = div
        self.curl = curl


def _cell_map(mesh, cell):
    v = mesh.vertices[mesh.cells[cell]]
    J = (v[1:] - v[0]).T
    return v[0], J, np.linalg.inv(J)


def _u_local_coeffs(spaces, coeffs, cell):
    coeffs = np.asarray(coeffs, dtype=float)
    nodes = spaces.cell_nodes[cell]
    dim = spaces.dim
    if coeffs.size == spaces.n_u:
        loc = np.zeros((nodes.size, dim))
        dofs = spaces.node_dofs[nodes]
        inside = dofs[:, 0] >= 0
        loc[inside] = coeffs[dofs[inside]]
        return loc
    if coeffs.size == spaces.node_coords.shape[0] * dim:
        return coeffs.reshape(-1, dim)[nodes]
    raise ValueError("displacement coefficient vector has wrong length")


def evaluate_field(mesh, spaces, coeffs, cell, points, which="displacement"):
    """Evaluate a discrete field and its differential operators.

    ``points`` are reference-simplex coordinates.  Returns a
    :class:`FieldValues` whose members depend on the field:
    displacement -> values, grad, div, curl; rotation -> values, curl;
    pressure -> values, grad.
    """
    if cell < 0 or cell >= mesh.n_cells:
        raise IndexError("cell index out of range")
    points = np.atleast_2d(points)
    dim = mesh.dim
    x0, J, invJ = _cell_map(mesh, cell)

    if which == "displacement":
        vals, grads = tabulate_basis(spaces.k, dim, points)
        G = np.einsum("pnd,de->pne", grads, invJ)
        loc = _u_local_coeffs(spaces, coeffs, cell)
        u = vals @ loc  # (np, dim)
        gradu = np.einsum("nc,pnd->pcd", loc, G)
        div = np.trace(gradu, axis1=1, axis2=2)
        if dim == 2:
            curl = gradu[:, 1, 0] - gradu[:, 0, 1]
        else:
            curl = np.stack(
                [
                    gradu[:, 2, 1] - gradu[:, 1, 2],
                    gradu[:, 0, 2] - gradu[:, 2, 0],
                    gradu[:, 1, 0] - gradu[:, 0, 1],
                ],
                axis=1,
            )
        return FieldValues(u, grad=gradu, div=div, curl=curl)

    vals, grads = tabulate_basis(spaces.k - 1, dim, points)
    G = np.einsum("pnd,de->pne", grads, invJ)
    coeffs = np.asarray(coeffs, dtype=float)
    L = spaces.n_loc_dg

    if which == "pressure":
        if coeffs.size != spaces.n_p:
            raise ValueError("pressure coefficient vector has wrong length")
        loc = coeffs[cell * L : (cell + 1) * L]
        return FieldValues(vals @ loc, grad=np.einsum("n,pnd->pd", loc, G))

    if which == "rotation":
        if coeffs.size != spaces.n_w:
            raise ValueError("rotation coefficient vector has wrong length")
        m = spaces.n_components_rotation
        loc = coeffs[cell * m * L : (cell + 1) * m * L].reshape(m, L)
        w = np.einsum("pn,rn->pr", vals, loc)
        gradw = np.einsum("rn,pnd->prd", loc, G)
        if dim == 2:
            w = w[:, 0]
            curl = np.column_stack([gradw[:, 0, 1], -gradw[:, 0, 0]])
        else:
            curl = np.stack(
                [
                    gradw[:, 2, 1] - gradw[:, 1, 2],
                    gradw[:, 0, 2] - gradw[:, 2, 0],
                    gradw[:, 1, 0] - gradw[:, 0, 1],
                ],
                axis=1,
            )
        return FieldValues(w, curl=curl)

    raise ValueError(f"unknown field {which!r}")
