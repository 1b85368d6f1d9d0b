"""Generalized eigensolvers for the pencil K x = -kappa M x.

M is singular by construction (only the displacement block carries
mass), so the pencil has a large infinite branch.  Two independent
paths are provided:

* ``solve_dense`` eliminates the rotation/pressure block exactly (that
  block of K is symmetric positive definite) and solves the condensed
  displacement-sized problem S u = kappa M_u u densely.  This captures
  precisely the finite spectrum of the pencil.
* ``solve_shift_invert`` runs sparse shift-invert Lanczos on the full
  pencil near a negative shift sigma (physical eigenvalues sit at
  theta = -kappa < 0).

Both return the nev smallest kappa > 0 ascending, with eigenvectors
normalized to unit displacement mass and a deterministic sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "EigenRequest",
    "EigenSolution",
    "SpuriousModeError",
    "solve_dense",
    "solve_shift_invert",
    "normalize",
    "solve",
]

DENSE_THRESHOLD_DEFAULT = 3000


class SpuriousModeError(ValueError):
    """Eigenvector has (numerically) zero displacement block."""


@dataclass(frozen=True)
class EigenRequest:
    """Solver parameters; sigma targets theta = -kappa near sigma < 0."""

    nev: int = 1
    sigma: float | None = None
    tolerance: float = 1e-9
    max_iterations: int = 10000
    dense_threshold: int = DENSE_THRESHOLD_DEFAULT

    def __post_init__(self):
        if self.nev < 1:
            raise ValueError("nev must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class EigenSolution:
    """One converged eigenpair of K x = -kappa M x."""

    kappa: float
    u: np.ndarray
    w: np.ndarray
    p: np.ndarray
    residual: float
    normalization: dict = field(default_factory=dict)

    def vector(self):
        return np.concatenate([self.u, self.w, self.p])


def _split(pencil, x):
    (u0, nu), (w0, nw), (p0, npp) = pencil.block_layout
    return x[u0 : u0 + nu], x[w0 : w0 + nw], x[p0 : p0 + npp]


def _residual(pencil, kappa, x):
    kx = pencil.K @ x
    return float(np.linalg.norm(kx + kappa * (pencil.M @ x)) / np.linalg.norm(kx))


def normalize(solution, pencil):
    """Scale so the displacement has unit mass norm; fix the sign.

    The sign convention makes the displacement coefficient of largest
    magnitude positive, so eigenvectors are reproducible across solver
    paths.  A vanishing displacement block marks a spurious mode.
    """
    x = solution.vector()
    mnorm2 = float(x @ (pencil.M @ x))
    if mnorm2 <= 1e-24 * float(x @ x):
        raise SpuriousModeError(
            "eigenvector has no displacement mass (spurious mode)"
        )
    scale = 1.0 / np.sqrt(mnorm2)
    u = solution.u * scale
    # pick the reference entry rounding away ties between +x and -x so
    # the sign choice is stable under epsilon-level rescalings
    idx = np.argmax(np.round(np.abs(u), 12))
    sign = 1.0 if u[idx] > 0 else -1.0
    scale *= sign
    if abs(scale - 1.0) <= 1e-12:
        scale = 1.0  # already normalized: keep vectors bitwise identical
    return replace(
        solution,
        u=solution.u * scale,
        w=solution.w * scale,
        p=solution.p * scale,
        normalization={"scale": scale, "mass_norm": np.sqrt(mnorm2)},
    )


def _package(pencil, kappas, vectors, nev, tolerance):
    order = np.argsort(kappas)
    out = []
    for i in order:
        if len(out) == nev:
            break
        x = vectors[:, i]
        res = _residual(pencil, kappas[i], x)
        if res > tolerance:
            raise RuntimeError(
                f"eigenpair kappa={kappas[i]:.6g} residual {res:.3e} "
                f"exceeds tolerance {tolerance:.3e}; "
                f"{len(out)} pairs converged"
            )
        u, w, p = _split(pencil, x)
        out.append(
            normalize(
                EigenSolution(kappa=float(kappas[i]), u=u, w=w, p=p, residual=res),
                pencil,
            )
        )
    if len(out) < nev:
        raise RuntimeError(
            f"only {len(out)} positive eigenvalues available, {nev} requested"
        )
    return out


def solve_dense(pencil, nev, tolerance=1e-9):
    """Exact finite spectrum via block elimination and a dense solve.

    Writing x = (u, y) with y the rotation/pressure block, the pencil
    reduces to B^T A^{-1} B u = kappa M_u u with A the SPD lower-right
    block of K; eigenvectors are completed by y = -A^{-1} B u.
    """
    (u0, nu), _, _ = pencil.block_layout
    if nu == 0:
        raise ValueError("empty displacement block")
    K = pencil.K.tocsc()
    A = K[nu:, nu:]
    B = K[nu:, :nu].toarray()
    Mu = pencil.M[:nu, :nu].toarray()
    AinvB = spla.splu(A.tocsc()).solve(B)
    S = B.T @ AinvB
    S = (S + S.T) * 0.5
    kap, U = sla.eigh(S, Mu)
    # drop the kappa ~ 0 branch (nullspace of the condensed operator)
    scale = max(kap.max(), 1.0)
    pos = kap > 1e-10 * scale
    kap, U = kap[pos], U[:, pos]
    Y = -AinvB @ U
    X = np.vstack([U, Y])
    return _package(pencil, kap, X, nev, tolerance)


def _start_vector(n):
    """Deterministic generic Lanczos start vector.

    A fixed-seed random vector keeps runs bitwise reproducible without
    the symmetry pathologies of structured vectors (a constant vector on
    a symmetric mesh confines Arnoldi to the symmetric subspace).
    """
    return np.random.default_rng(20240817).standard_normal(n)


def _block_diag_inverse(A, block_size):
    """Inverse of a block-diagonal sparse matrix with uniform block size.

    Raises ValueError if the matrix has entries outside the diagonal
    blocks, so callers can fall back to a general factorization.
    """
    n = A.shape[0]
    if n % block_size:
        raise ValueError("matrix size is not a multiple of the block size")
    if block_size == 1:
        off_diag = A - sp.diags(A.diagonal())
        if off_diag.nnz and abs(off_diag).max() > 0:
            raise ValueError("matrix is not diagonal")
        return sp.diags(1.0 / A.diagonal()).tocsr()
    bsr = A.tobsr((block_size, block_size))
    nb = n // block_size
    if bsr.nnz and (np.diff(bsr.indptr).max() > 1 or np.any(
        bsr.indices != np.arange(nb)
    )):
        raise ValueError("matrix is not block diagonal")
    inv_blocks = np.linalg.inv(bsr.data)
    return sp.bsr_matrix(
        (inv_blocks, np.arange(nb), np.arange(nb + 1)), shape=A.shape
    ).tocsr()


def _condensed_operator(pencil):
    """Sparse Schur complement (S, B, Ainv, Mu) when A is block diagonal.

    Without jump stabilization the rotation/pressure block A of K is a
    block-diagonal mass matrix (one small block per cell and component),
    so S = B^T A^{-1} B is sparse and displacement-sized.  Raises
    ValueError when A carries cross-cell coupling (stabilized case).
    """
    (u0, nu), _, _ = pencil.block_layout
    if nu == 0:
        raise ValueError("empty displacement block")
    K = pencil.K.tocsr()
    A = K[nu:, nu:].tocsr()
    B = K[nu:, :nu].tocsc()
    Ainv = _block_diag_inverse(A, pencil.spaces.n_loc_dg)
    S = (B.T @ (Ainv @ B)).tocsc()
    S = (S + S.T) * 0.5
    Mu = pencil.M[:nu, :nu].tocsc()
    return S, B, Ainv, Mu


def _solve_qz(pencil, nev, tolerance):
    """Dense QZ on the full pencil; only sensible for tiny systems."""
    ab, vr = sla.eig(
        pencil.K.toarray(), -pencil.M.toarray(), homogeneous_eigvals=True
    )
    alpha, beta = ab
    finite = np.abs(beta) > 1e-12 * max(np.abs(alpha).max(), 1.0)
    kap = (alpha[finite] / beta[finite]).real
    X = vr[:, finite].real
    pos = kap > 1e-10 * max(kap.max(), 1.0)
    return _package(pencil, kap[pos], X[:, pos], nev, tolerance)


def solve_shift_invert(pencil, request):
    """Shift-invert Lanczos near a negative shift sigma.

    Without jump stabilization the rotation/pressure block is condensed
    out first and Lanczos runs on the sparse displacement-sized problem
    S u = kappa M_u u (same finite spectrum, far cheaper to factorize).
    Otherwise (K - sigma M) is factorized directly.  On factorization
    failure the shift is halved up to 3 times.  Asks for a few extra
    Ritz pairs so clustered (double) eigenvalues are fully resolved.
    """
    sigma = request.sigma
    if sigma is None:
        sigma = -0.01 * pencil.params.young_E
    if sigma >= 0:
        raise ValueError("shift sigma must be negative (theta = -kappa < 0)")
    (_, n_u), _, _ = pencil.block_layout
    if n_u < request.nev + 3:
        # too few finite eigenvalues for a stable Arnoldi iteration;
        # fall back to a QZ solve of the full (tiny) pencil
        return _solve_qz(pencil, request.nev, request.tolerance)
    condensed = None
    # the condensed problem has n_u finite eigenvalues; Lanczos needs
    # headroom beyond nev, otherwise stay on the full pencil
    if pencil.params.alpha_inv == 0:
        try:
            condensed = _condensed_operator(pencil)
        except ValueError:
            condensed = None
    n = pencil.n
    last = None
    for attempt in range(4):
        try:
            if condensed is not None:
                S, B, Ainv, Mu = condensed
                k = min(request.nev + 6, Mu.shape[0] - 1)
                kap, U = spla.eigsh(
                    S,
                    k=k,
                    M=Mu,
                    sigma=-sigma,
                    which="LM",
                    maxiter=request.max_iterations,
                    tol=0,
                    v0=_start_vector(Mu.shape[0]),
                )
                X = np.vstack([U, -(Ainv @ (B @ U))])
            else:
                # the pencil has only n_u finite eigenvalues (M has rank
                # n_u): both the requested count and the Krylov space
                # must stay below that, or Arnoldi breaks down
                k = min(request.nev + 6, n - 1, n_u - 1)
                ncv = min(n, max(2 * k + 1, 20), n_u)
                theta, X = spla.eigsh(
                    pencil.K,
                    k=k,
                    M=pencil.M,
                    sigma=sigma,
                    which="LM",
                    maxiter=request.max_iterations,
                    tol=0,
                    v0=_start_vector(n),
                    ncv=ncv,
                )
                kap = -theta
            break
        except (RuntimeError, spla.ArpackError) as exc:
            last = exc
            sigma *= 0.5
    else:
        raise RuntimeError(f"shift-invert factorization failed: {last}")

    keep = kap > 1e-10 * max(abs(kap).max(), 1.0)
    return _package(pencil, kap[keep], X[:, keep], request.nev, request.tolerance)


def solve(pencil, request):
    """Dispatch: dense below the dof threshold, shift-invert above."""
    if pencil.n <= request.dense_threshold:
        return solve_dense(pencil, request.nev, tolerance=request.tolerance)
    return solve_shift_invert(pencil, request)
