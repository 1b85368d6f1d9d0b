"""Assembly of the symmetric pencil (K, M) for the elasticity eigenproblem.

The discrete problem couples displacement u, scaled rotation w and
pressure p through

    a((w,p),(t,q)) = (w, t) + (2 mu + lam)^-1 (p, q)
    b((t,q), v)    = (div v, q) - sqrt(mu) (t, curl v)

and reads: find (u, w, p) with

    a((w,p),(t,q)) + b((t,q),u) + b((w,p),v) [+ stabilization]
        = -kappa (u, v)

for all test triples.  In matrix form K x = -kappa M x, where M carries
the displacement mass only (singular by construction) and physical
eigenvalues satisfy kappa > 0.

An optional interior-penalty term alpha_inv * sum_e h_e int_e [p][q]
stabilizes the discontinuous pressure near the incompressible limit.
The term is divided by the Young modulus internally so that scaling E
by c scales every eigenvalue by c exactly (at E = 1 it coincides with
the plain penalty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import femspace
from .mesh import BOUNDARY

__all__ = [
    "MaterialParams",
    "SystemPencil",
    "lame_from_poisson",
    "resolve_alpha_inv",
    "material",
    "assemble_pencil",
    "displacement_mass",
    "triple_norm",
    "mean_pressure",
    "export_matrix_market",
]

NU_MAX_DEFAULT = 0.4999


def lame_from_poisson(E, nu, nu_max=NU_MAX_DEFAULT):
    """Lame constants (mu_s, lambda_s) from Young modulus and Poisson ratio.

    Raises for nu outside (0, nu_max]; near-incompressible materials
    beyond nu_max should be run with the pressure-jump stabilization at
    the supported limit instead.
    """
    if E <= 0:
        raise ValueError("Young modulus must be positive")
    if not 0.0 < nu <= nu_max:
        raise ValueError(
            f"Poisson ratio {nu} outside (0, {nu_max}]; for the "
            "near-incompressible limit use nu <= "
            f"{nu_max} with pressure-jump stabilization"
        )
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def resolve_alpha_inv(nu, dim):
    """Default stabilization weight: off for nu <= 0.49, else 10 (2D) or 1/2 (3D)."""
    if nu <= 0.49:
        return 0.0
    return 10.0 if dim == 2 else 0.5


@dataclass(frozen=True)
class MaterialParams:
    """Material data: Young modulus, Poisson ratio, Lame constants, penalty."""

    young_E: float
    poisson_nu: float
    mu_s: float
    lambda_s: float
    alpha_inv: float

    def __post_init__(self):
        if self.mu_s <= 0 or self.lambda_s <= 0:
            raise ValueError("Lame constants must be positive")
        if self.alpha_inv < 0:
            raise ValueError("stabilization weight must be >= 0")


def material(E, nu, alpha_inv="auto", dim=2, nu_max=NU_MAX_DEFAULT):
    """Build MaterialParams, resolving alpha_inv='auto' per dimension."""
    mu, lam = lame_from_poisson(E, nu, nu_max=nu_max)
    if alpha_inv == "auto":
        alpha_inv = resolve_alpha_inv(nu, dim)
    return MaterialParams(E, nu, mu, lam, float(alpha_inv))


@dataclass(frozen=True)
class SystemPencil:
    """Assembled matrices K, M (CSR, exactly symmetric) and block layout."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    block_layout: tuple  # ((offset, size) for u, w, p)
    spaces: object
    params: MaterialParams

    @property
    def n(self):
        return self.K.shape[0]


def _cell_geometry(mesh):
    verts = mesh.vertices[mesh.cells]
    J = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)  # (nc, dim, dim)
    detJ = np.linalg.det(J)
    invJ = np.linalg.inv(J)
    return verts[:, 0, :], J, detJ, invJ


def _displacement_dof_table(spaces):
    """Reduced global dof per (cell, local node, component); -1 on boundary."""
    return spaces.node_dofs[spaces.cell_nodes]  # (nc, nloc, dim)


def _dg_dof_tables(spaces):
    nc = spaces.mesh.n_cells
    L = spaces.n_loc_dg
    m = spaces.n_components_rotation
    w = spaces.n_u + (
        np.arange(nc)[:, None, None] * m * L
        + np.arange(m)[None, :, None] * L
        + np.arange(L)[None, None, :]
    )  # (nc, m, L)
    p = spaces.n_u + spaces.n_w + (
        np.arange(nc)[:, None] * L + np.arange(L)[None, :]
    )
    return w, p


def _accumulate(rows, cols, vals, r, c, v):
    rows.append(np.asarray(r).ravel())
    cols.append(np.asarray(c).ravel())
    vals.append(np.asarray(v).ravel())


def assemble_pencil(mesh, spaces, params):
    """Assemble K and M on a mesh; Dirichlet dofs are eliminated.

    Accumulation is in fixed cell order, so repeated calls produce
    bitwise identical matrices.
    """
    if spaces.mesh is not mesh:
        raise ValueError("spaces were built on a different mesh")
    dim = mesh.dim
    k = spaces.k
    mu = params.mu_s
    sqmu = math.sqrt(mu)
    ce = 1.0 / (2.0 * mu + params.lambda_s)

    q = femspace.quadrature(dim, 2 * k)
    V, Gref = femspace.tabulate_basis(k, dim, q.points)
    W, _ = femspace.tabulate_basis(k - 1, dim, q.points)

    x0, J, detJ, invJ = _cell_geometry(mesh)
    if np.any(np.abs(detJ) < 1e-300):
        raise ValueError("zero-measure cell encountered")
    wq = q.weights[None, :] * np.abs(detJ)[:, None]  # (nc, nq)
    G = np.einsum("pne,ced->cpnd", Gref, invJ)  # physical gradients

    udof = _displacement_dof_table(spaces)  # (nc, nloc, dim)
    wdof, pdof = _dg_dof_tables(spaces)

    # element mass matrices (shared by u components, w components, p)
    Mu = np.einsum("cq,qa,qb->cab", wq, V, V)
    Mw = np.einsum("cq,qn,qm->cnm", wq, W, W)

    # divergence and curl of vector displacement basis (node a, component c)
    if dim == 2:
        # curl of e_0 phi = -d2 phi ; of e_1 phi = d1 phi   (scalar)
        Cu = np.stack([-G[..., 1], G[..., 0]], axis=-1)  # (nc,nq,nloc,comp)
        Kwu = -sqmu * np.einsum("cq,qn,cqad->cnad", wq, W, Cu)
        Kwu = Kwu[:, None, :, :, :]  # rotation component axis (size 1)
    else:
        eps = np.zeros((3, 3, 3))
        for i, jj, kk in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            eps[i, jj, kk] = 1.0
            eps[i, kk, jj] = -1.0
        # curl(e_d phi)_r = eps[r, s, d] d_s phi
        Cu = np.einsum("rsd,cqas->cqadr", eps, G)
        Kwu = -sqmu * np.einsum("cq,qn,cqadr->crnad", wq, W, Cu)
    Kpu = np.einsum("cq,qn,cqad->cnad", wq, W, G)  # div = d_d phi for comp d

    rows, cols, vals = [], [], []
    nloc = spaces.n_loc_u
    L = spaces.n_loc_dg
    mcomp = spaces.n_components_rotation

    # rotation mass: block diagonal over components
    for r in range(mcomp):
        rr = np.broadcast_to(wdof[:, r, :, None], Mw.shape)
        cc = np.broadcast_to(wdof[:, r, None, :], Mw.shape)
        _accumulate(rows, cols, vals, rr, cc, Mw)
    # pressure mass scaled by (2 mu + lam)^-1
    rr = np.broadcast_to(pdof[:, :, None], Mw.shape)
    cc = np.broadcast_to(pdof[:, None, :], Mw.shape)
    _accumulate(rows, cols, vals, rr, cc, ce * Mw)

    # couplings; u columns with dof -1 are filtered at the end
    ucols = np.broadcast_to(udof[:, None, None, :, :], (mesh.n_cells, mcomp, L, nloc, dim))
    wrows = np.broadcast_to(wdof[:, :, :, None, None], ucols.shape)
    _accumulate(rows, cols, vals, wrows, ucols, Kwu)
    _accumulate(rows, cols, vals, ucols, wrows, Kwu)
    ucols = np.broadcast_to(udof[:, None, :, :], (mesh.n_cells, L, nloc, dim))
    prows = np.broadcast_to(pdof[:, :, None, None], ucols.shape)
    _accumulate(rows, cols, vals, prows, ucols, Kpu)
    _accumulate(rows, cols, vals, ucols, prows, Kpu)

    if params.alpha_inv > 0.0:
        _accumulate(rows, cols, vals, *_stabilization(mesh, spaces, params, pdof))

    n = spaces.n_total
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    keep = (rows >= 0) & (cols >= 0)
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    K = (K + K.T) * 0.5  # exact symmetry
    K.sum_duplicates()

    mrow = np.broadcast_to(udof[:, :, None, :], (mesh.n_cells, nloc, nloc, dim))
    mcol = np.broadcast_to(udof[:, None, :, :], mrow.shape)
    mval = np.broadcast_to(Mu[:, :, :, None], mrow.shape)
    mr, mc, mv = mrow.ravel(), mcol.ravel(), mval.ravel()
    keep = (mr >= 0) & (mc >= 0)
    M = sp.coo_matrix((mv[keep], (mr[keep], mc[keep])), shape=(n, n)).tocsr()
    M = (M + M.T) * 0.5
    M.sum_duplicates()

    layout = ((0, spaces.n_u), (spaces.n_u, spaces.n_w), (spaces.n_u + spaces.n_w, spaces.n_p))
    return SystemPencil(K=K, M=M, block_layout=layout, spaces=spaces, params=params)


def _stabilization(mesh, spaces, params, pdof):
    """COO triplets of alpha_inv/E * sum_e h_e int_e [p][q]."""
    dim = mesh.dim
    k1 = spaces.k - 1
    fq = femspace.facet_quadrature(dim, 2 * spaces.k)
    scale = params.alpha_inv / params.young_E
    h_e = mesh.facet_diameters()
    measures = mesh.facet_measures()
    ref_measure = 1.0 / math.factorial(dim - 1)

    _, _, _, invJ = _cell_geometry(mesh)
    x0 = mesh.vertices[mesh.cells[:, 0]]

    rows, cols, vals = [], [], []
    for f in np.flatnonzero(~mesh.boundary_facet):
        fverts = mesh.vertices[list(mesh.facets[f])]
        phys = fverts[0] + fq.points @ (fverts[1:] - fverts[0])
        wts = fq.weights * (measures[f] / ref_measure)
        cplus, cminus = mesh.facet_cells[f]
        basis = []
        for c in (cplus, cminus):
            ref = (phys - x0[c]) @ invJ[c].T
            basis.append(femspace.tabulate_basis(k1, dim, ref)[0])
        coef = scale * h_e[f]
        for sa, ca in ((1.0, cplus), (-1.0, cminus)):
            for sb, cb in ((1.0, cplus), (-1.0, cminus)):
                Va = basis[0] if ca == cplus else basis[1]
                Vb = basis[0] if cb == cplus else basis[1]
                S = coef * sa * sb * np.einsum("q,qn,qm->nm", wts, Va, Vb)
                rr = np.broadcast_to(pdof[ca][:, None], S.shape)
                cc = np.broadcast_to(pdof[cb][None, :], S.shape)
                rows.append(rr.ravel())
                cols.append(cc.ravel())
                vals.append(S.ravel())
    if not rows:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def displacement_mass(mesh, spaces, eliminated=True):
    """Displacement L2 mass matrix, reduced (default) or with all nodes."""
    dim = mesh.dim
    q = femspace.quadrature(dim, 2 * spaces.k)
    V, _ = femspace.tabulate_basis(spaces.k, dim, q.points)
    _, _, detJ, _ = _cell_geometry(mesh)
    wq = q.weights[None, :] * np.abs(detJ)[:, None]
    Mu = np.einsum("cq,qa,qb->cab", wq, V, V)
    nloc = spaces.n_loc_u
    if eliminated:
        dofs = _displacement_dof_table(spaces)
        n = spaces.n_u
    else:
        dofs = (
            spaces.cell_nodes[:, :, None] * dim + np.arange(dim)[None, None, :]
        )
        n = spaces.node_coords.shape[0] * dim
    rr = np.broadcast_to(dofs[:, :, None, :], (mesh.n_cells, nloc, nloc, dim)).ravel()
    cc = np.broadcast_to(dofs[:, None, :, :], (mesh.n_cells, nloc, nloc, dim)).ravel()
    vv = np.broadcast_to(Mu[:, :, :, None], (mesh.n_cells, nloc, nloc, dim)).ravel()
    keep = (rr >= 0) & (cc >= 0)
    M = sp.coo_matrix((vv[keep], (rr[keep], cc[keep])), shape=(n, n)).tocsr()
    M = (M + M.T) * 0.5
    M.sum_duplicates()
    return M


def _domain_volume(mesh):
    return mesh.cell_volumes().sum()


def mean_pressure(mesh, spaces, p):
    """Volume average of a discrete pressure field."""
    dim = mesh.dim
    q = femspace.quadrature(dim, 2 * spaces.k)
    W, _ = femspace.tabulate_basis(spaces.k - 1, dim, q.points)
    _, _, detJ, _ = _cell_geometry(mesh)
    wq = q.weights[None, :] * np.abs(detJ)[:, None]
    loc = np.asarray(p).reshape(mesh.n_cells, spaces.n_loc_dg)
    total = np.einsum("cq,qn,cn->", wq, W, loc)
    return total / _domain_volume(mesh)


def triple_norm(mesh, spaces, params, u, w, p):
    """Energy norm of a discrete triple.

    Returns (mu ||curl u||^2 + mu ||div u||^2 + ||w||^2
             + (2 mu + lam)^-1 ||p||^2 + mu^-1 ||p0||^2)^(1/2)
    with p0 the zero-mean part of p.
    """
    dim = mesh.dim
    mu = params.mu_s
    q = femspace.quadrature(dim, 2 * spaces.k)
    wts = q.weights
    _, _, detJ, _ = _cell_geometry(mesh)
    pbar = mean_pressure(mesh, spaces, p)

    total = 0.0
    for c in range(mesh.n_cells):
        wqc = wts * abs(detJ[c])
        fu = femspace.evaluate_field(mesh, spaces, u, c, q.points, "displacement")
        fw = femspace.evaluate_field(mesh, spaces, w, c, q.points, "rotation")
        fp = femspace.evaluate_field(mesh, spaces, p, c, q.points, "pressure")
        curl2 = fu.curl**2 if dim == 2 else np.sum(fu.curl**2, axis=1)
        w2 = fw.values**2 if dim == 2 else np.sum(fw.values**2, axis=1)
        total += np.dot(wqc, mu * curl2 + mu * fu.div**2 + w2)
        total += np.dot(
            wqc,
            fp.values**2 / (2.0 * mu + params.lambda_s)
            + (fp.values - pbar) ** 2 / mu,
        )
    return math.sqrt(total)


def export_matrix_market(pencil, k_path, m_path):
    """Write K and M in symmetric Matrix Market coordinate format."""
    scipy.io.mmwrite(str(k_path), pencil.K, symmetry="symmetric")
    scipy.io.mmwrite(str(m_path), pencil.M, symmetry="symmetric")
