"""Residual a posteriori error estimator for computed eigenpairs.

For an eigenpair (kappa_h, (u_h, w_h, p_h)) the local indicator is

    zeta_T^2 = (h_T^2/mu) ||R1||_{0,T}^2 + ||R2||_{0,T}^2
             + [mu (2mu+lam) / (3mu+lam)] ||R3||_{0,T}^2
             + sum_{e in dT, interior} (h_e/mu) ||J_e||_{0,e}^2

with the strong residuals

    R1 = kappa_h u_h - grad p_h - sqrt(mu) curl w_h
    R2 = sqrt(mu) curl u_h - w_h
    R3 = (2mu+lam)^{-1} p_h + div u_h

and the inter-element jump

    J_e = 1/2 [[ p_h n + sqrt(mu) w_h x n ]]

(n fixed from cell+ toward cell-; J_e = 0 on boundary facets).  The
global estimator is zeta = (sum_T zeta_T^2)^{1/2}; each interior facet
contributes its full weighted jump to both adjacent cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import femspace
from .mesh import BOUNDARY

__all__ = [
    "EstimatorField",
    "estimate",
    "cell_residuals",
    "facet_jump",
    "local_estimator",
    "global_estimator",
]


@dataclass(frozen=True)
class EstimatorField:
    """Per-cell indicator addends, per-facet jumps, and the global value."""

    volume_residual: np.ndarray  # (h_T^2/mu) ||R1||^2 per cell
    rotation_residual: np.ndarray  # ||R2||^2 per cell
    divergence_residual: np.ndarray  # weighted ||R3||^2 per cell
    jump_sum: np.ndarray  # sum of (h_e/mu) ||J_e||^2 over the cell's facets
    facet_jumps: np.ndarray  # ||J_e||^2 per facet (0 on boundary)
    zeta_sq: np.ndarray  # per-cell total
    zeta: float

    @property
    def n_cells(self):
        return self.zeta_sq.size


def _r3_weight(params):
    mu, lam = params.mu_s, params.lambda_s
    return mu * (2.0 * mu + lam) / (3.0 * mu + lam)


def _cell_fields(mesh, spaces, params, solution):
    """All strong-residual ingredients at cell quadrature points.

    Returns (wq, R1, R2, R3) with shapes (nc, nq), (nc, nq, dim),
    (nc, nq[, 3]) and (nc, nq).
    """
    dim = mesh.dim
    k = spaces.k
    mu = params.mu_s
    sqmu = math.sqrt(mu)
    ce = 1.0 / (2.0 * mu + params.lambda_s)

    q = femspace.quadrature(dim, 2 * k)
    V, Gref = femspace.tabulate_basis(k, dim, q.points)
    W, Href = femspace.tabulate_basis(k - 1, dim, q.points)

    verts = mesh.vertices[mesh.cells]
    J = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)
    detJ = np.linalg.det(J)
    invJ = np.linalg.inv(J)
    wq = q.weights[None, :] * np.abs(detJ)[:, None]

    G = np.einsum("pne,ced->cpnd", Gref, invJ)  # displacement phys grads
    H = np.einsum("pne,ced->cpnd", Href, invJ)  # DG phys grads

    # local coefficients
    nloc = spaces.n_loc_u
    L = spaces.n_loc_dg
    m = spaces.n_components_rotation
    udof = spaces.node_dofs[spaces.cell_nodes]  # (nc, nloc, dim)
    if solution.u.size:
        uloc = np.where(udof >= 0, solution.u[np.clip(udof, 0, None)], 0.0)
    else:
        uloc = np.zeros(udof.shape)
    wloc = solution.w.reshape(mesh.n_cells, m, L)
    ploc = solution.p.reshape(mesh.n_cells, L)

    uval = np.einsum("pn,cnd->cpd", V, uloc)
    gradu = np.einsum("cnd,cpne->cpde", uloc, G)
    divu = np.trace(gradu, axis1=2, axis2=3)
    pval = np.einsum("pn,cn->cp", W, ploc)
    gradp = np.einsum("cn,cpnd->cpd", ploc, H)
    wval = np.einsum("pn,crn->cpr", W, wloc)
    gradw = np.einsum("crn,cpnd->cprd", wloc, H)

    if dim == 2:
        curlu = gradu[:, :, 1, 0] - gradu[:, :, 0, 1]  # (nc, nq)
        curlw = np.stack([gradw[:, :, 0, 1], -gradw[:, :, 0, 0]], axis=-1)
        R2 = sqmu * curlu - wval[:, :, 0]
    else:
        curlu = np.stack(
            [
                gradu[:, :, 2, 1] - gradu[:, :, 1, 2],
                gradu[:, :, 0, 2] - gradu[:, :, 2, 0],
                gradu[:, :, 1, 0] - gradu[:, :, 0, 1],
            ],
            axis=-1,
        )
        curlw = np.stack(
            [
                gradw[:, :, 2, 1] - gradw[:, :, 1, 2],
                gradw[:, :, 0, 2] - gradw[:, :, 2, 0],
                gradw[:, :, 1, 0] - gradw[:, :, 0, 1],
            ],
            axis=-1,
        )
        R2 = sqmu * curlu - wval

    R1 = solution.kappa * uval - gradp - sqmu * curlw
    R3 = ce * pval + divu
    return wq, R1, R2, R3


def _facet_trace_points(mesh, facet_ids, nq_points):
    """Physical facet quadrature points, shape (nf, nq, dim)."""
    fverts = mesh.vertices[np.array([mesh.facets[f] for f in facet_ids])]
    return fverts[:, 0, None, :] + np.einsum(
        "qe,fed->fqd", nq_points, fverts[:, 1:, :] - fverts[:, :1, :]
    )


def _side_traces(mesh, spaces, solution, facet_ids, phys, side_cells):
    """(p, w) traces of one side's cells at the facet points."""
    dim = mesh.dim
    L = spaces.n_loc_dg
    m = spaces.n_components_rotation
    verts = mesh.vertices[mesh.cells[side_cells]]
    J = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)
    invJ = np.linalg.inv(J)
    ref = np.einsum("fqd,fed->fqe", phys - verts[:, None, 0, :], invJ)
    nf, nq = ref.shape[:2]
    W, _ = femspace.tabulate_basis(spaces.k - 1, dim, ref.reshape(-1, dim))
    W = W.reshape(nf, nq, L)
    ploc = solution.p.reshape(mesh.n_cells, L)[side_cells]
    wloc = solution.w.reshape(mesh.n_cells, m, L)[side_cells]
    pval = np.einsum("fqn,fn->fq", W, ploc)
    wval = np.einsum("fqn,frn->fqr", W, wloc)
    return pval, wval


def _jump_integrand(dim, mu, dp, dw, normals):
    """|J_e|^2 at facet points; dp, dw are jumps, normals (nf, dim)."""
    sqmu = math.sqrt(mu)
    if dim == 2:
        n = normals
        tangential = np.stack([-n[:, 1], n[:, 0]], axis=-1)
        J = (
            0.5 * dp[:, :, None] * n[:, None, :]
            + 0.5 * sqmu * dw[:, :, 0, None] * tangential[:, None, :]
        )
    else:
        wxn = np.cross(dw, normals[:, None, :])
        J = 0.5 * (dp[:, :, None] * normals[:, None, :] + sqmu * wxn)
    return np.sum(J * J, axis=-1)


def _all_facet_jumps(mesh, spaces, params, solution):
    """||J_e||^2 for every facet (0 on boundary), vectorized."""
    dim = mesh.dim
    jumps = np.zeros(mesh.n_facets)
    interior = np.flatnonzero(~mesh.boundary_facet)
    if interior.size == 0:
        return jumps
    fq = femspace.facet_quadrature(dim, 2 * spaces.k)
    ref_measure = 1.0 / math.factorial(dim - 1)
    measures = mesh.facet_measures()[interior]
    wts = fq.weights[None, :] * (measures / ref_measure)[:, None]

    phys = _facet_trace_points(mesh, interior, fq.points)
    cells = mesh.facet_cells[interior]
    p_plus, w_plus = _side_traces(mesh, spaces, solution, interior, phys, cells[:, 0])
    p_minus, w_minus = _side_traces(mesh, spaces, solution, interior, phys, cells[:, 1])

    # unit normal from cell+ toward cell-
    fverts = mesh.vertices[np.array([mesh.facets[f] for f in interior])]
    mids = fverts.mean(axis=1)
    plus_mids = mesh.vertices[mesh.cells[cells[:, 0]]].mean(axis=1)
    if dim == 2:
        t = fverts[:, 1] - fverts[:, 0]
        normals = np.stack([t[:, 1], -t[:, 0]], axis=-1)
    else:
        normals = np.cross(fverts[:, 1] - fverts[:, 0], fverts[:, 2] - fverts[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    flip = np.sum(normals * (mids - plus_mids), axis=1) < 0
    normals[flip] *= -1.0

    integrand = _jump_integrand(
        dim, params.mu_s, p_plus - p_minus, w_plus - w_minus, normals
    )
    jumps[interior] = np.sum(wts * integrand, axis=1)
    return jumps


def estimate(mesh, spaces, params, solution):
    """Evaluate the full estimator field for one eigenpair."""
    mu = params.mu_s
    wq, R1, R2, R3 = _cell_fields(mesh, spaces, params, solution)
    h_T = mesh.cell_diameters()

    nrm1 = np.einsum("cq,cqd,cqd->c", wq, R1, R1)
    if R2.ndim == 2:
        nrm2 = np.einsum("cq,cq,cq->c", wq, R2, R2)
    else:
        nrm2 = np.einsum("cq,cqd,cqd->c", wq, R2, R2)
    nrm3 = np.einsum("cq,cq,cq->c", wq, R3, R3)

    facet_jumps = _all_facet_jumps(mesh, spaces, params, solution)
    h_e = mesh.facet_diameters()
    weighted = (h_e / mu) * facet_jumps
    jump_sum = np.zeros(mesh.n_cells)
    for f in np.flatnonzero(~mesh.boundary_facet):
        cp, cm = mesh.facet_cells[f]
        jump_sum[cp] += weighted[f]
        jump_sum[cm] += weighted[f]

    volume = (h_T**2 / mu) * nrm1
    divergence = _r3_weight(params) * nrm3
    zeta_sq = volume + nrm2 + divergence + jump_sum
    return EstimatorField(
        volume_residual=volume,
        rotation_residual=nrm2,
        divergence_residual=divergence,
        jump_sum=jump_sum,
        facet_jumps=facet_jumps,
        zeta_sq=zeta_sq,
        zeta=float(np.sqrt(zeta_sq.sum())),
    )


def cell_residuals(mesh, spaces, params, solution, cell):
    """Squared L2 norms (||R1||^2, ||R2||^2, ||R3||^2) on one cell."""
    if cell < 0 or cell >= mesh.n_cells:
        raise IndexError("cell index out of range")
    wq, R1, R2, R3 = _cell_fields(mesh, spaces, params, solution)
    nrm1 = float(np.einsum("q,qd,qd->", wq[cell], R1[cell], R1[cell]))
    if R2.ndim == 2:
        nrm2 = float(np.dot(wq[cell], R2[cell] ** 2))
    else:
        nrm2 = float(np.einsum("q,qd,qd->", wq[cell], R2[cell], R2[cell]))
    nrm3 = float(np.dot(wq[cell], R3[cell] ** 2))
    return nrm1, nrm2, nrm3


def facet_jump(mesh, spaces, params, solution, facet):
    """||J_e||^2 on one facet (0 for boundary facets)."""
    if mesh.boundary_facet[facet]:
        return 0.0
    return float(_all_facet_jumps(mesh, spaces, params, solution)[facet])


def local_estimator(residuals, jumps, h_T, h_e, params):
    """Combine one cell's residual norms and facet jumps into zeta_T^2.

    ``residuals`` is the (||R1||^2, ||R2||^2, ||R3||^2) triple; ``jumps``
    and ``h_e`` list the cell's interior-facet jump norms and diameters.
    """
    mu = params.mu_s
    nrm1, nrm2, nrm3 = residuals
    total = (h_T**2 / mu) * nrm1 + nrm2 + _r3_weight(params) * nrm3
    for j, he in zip(jumps, h_e):
        total += (he / mu) * j
    return total


def global_estimator(zeta_sq):
    """zeta = sqrt(sum of per-cell indicators)."""
    zeta_sq = np.asarray(zeta_sq, dtype=float)
    if np.any(zeta_sq < 0):
        raise ValueError("negative local indicator")
    return float(np.sqrt(zeta_sq.sum()))
