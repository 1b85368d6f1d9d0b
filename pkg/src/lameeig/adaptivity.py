"""Uniform and adaptive refinement studies.

A study is a sequence of levels; on each level the pencil is assembled,
the smallest eigenvalues are solved for, and the residual estimator is
evaluated for the lowest pair.  Adaptive studies mark cells by the
maximum criterion (zeta_T >= theta * max zeta_T) and refine by
bisection; uniform studies refine everywhere (or rebuild structured
meshes at prescribed resolutions).

Convergence orders are obtained by log-log least squares; reference
eigenvalues can be supplied or self-computed by fitting
kappa_h = kappa_extr + C h^t over the recorded levels.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import assembly, eigsolver, estimator, femspace, mesh as meshmod

__all__ = [
    "StudyRecord",
    "ConvergenceFit",
    "mark_cells",
    "solve_level",
    "uniform_study",
    "adaptive_loop",
    "fit_order",
    "extrapolate_eigenvalue",
    "eig_error",
    "effectivity",
    "attach_errors",
]


@dataclass
class StudyRecord:
    """One refinement level of a study."""

    iteration: int
    dof: int
    h_max: float
    cells: int
    kappas: list
    zeta: float
    errs: list = field(default_factory=list)  # per eigenvalue, may stay empty
    effs: list = field(default_factory=list)
    seconds: float = 0.0


@dataclass
class ConvergenceFit:
    """Fitted convergence model with its least-squares residual."""

    model: str
    C: float
    t: float
    residual: float
    kappa_extr: float | None = None


def mark_cells(zeta_sq, theta=0.5):
    """Cells whose indicator zeta_T reaches theta times the maximum.

    Comparison is on zeta_T (square roots).  An all-zero field marks
    nothing.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    zeta = np.sqrt(np.asarray(zeta_sq, dtype=float))
    if zeta.size == 0:
        raise ValueError("empty estimator field")
    zmax = zeta.max()
    if zmax == 0.0:
        return np.array([], dtype=np.int64)
    return np.flatnonzero(zeta >= theta * zmax)


def solve_level(msh, params, k, nev, request):
    """Assemble, solve and estimate on one mesh.

    Returns (record, solutions, pencil, spaces); the record's err/eff
    columns are left empty for later attachment.
    """
    t0 = time.perf_counter()
    spaces = femspace.build_spaces(msh, k)
    pencil = assembly.assemble_pencil(msh, spaces, params)
    sols = eigsolver.solve(pencil, request)
    ef = estimator.estimate(msh, spaces, params, sols[0])
    rec = StudyRecord(
        iteration=0,
        dof=spaces.n_total,
        h_max=float(msh.cell_diameters().max()),
        cells=msh.n_cells,
        kappas=[s.kappa for s in sols],
        zeta=ef.zeta,
        seconds=time.perf_counter() - t0,
    )
    return rec, sols, pencil, spaces, ef


def _with_shift(request, pencil, sols):
    """Fix the iterative shift from the coarsest level's kappa_1."""
    if request.sigma is not None:
        return request
    from dataclasses import replace

    return replace(request, sigma=-0.5 * sols[0].kappa)


def uniform_study(meshes, params, k, nev, request=None, on_level=None):
    """Run the pipeline over an explicit sequence of meshes.

    ``meshes`` is an iterable (e.g. structured meshes at several
    resolutions, or successive uniform refinements).  The shift for
    iterative levels is set from the coarsest solve.  ``on_level`` is
    called as on_level(record, mesh, estimator_field) per level.
    """
    request = request or eigsolver.EigenRequest(nev=nev)
    records = []
    for i, msh in enumerate(meshes):
        rec, sols, pencil, _, ef = solve_level(msh, params, k, nev, request)
        rec.iteration = i
        records.append(rec)
        if on_level is not None:
            on_level(rec, msh, ef)
        if i == 0:
            request = _with_shift(request, pencil, sols)
    return records


def adaptive_loop(
    msh, params, k, nev, max_iter=12, max_dof=None, theta=0.5, request=None, on_level=None
):
    """Solve-estimate-mark-refine until an iteration or dof budget.

    Returns (records, final mesh).  Deterministic for a fixed
    configuration; an all-zero estimator stops the loop with a warning.
    """
    request = request or eigsolver.EigenRequest(nev=nev)
    records = []
    for i in range(max_iter):
        rec, sols, pencil, spaces, ef = solve_level(msh, params, k, nev, request)
        rec.iteration = i
        records.append(rec)
        if on_level is not None:
            on_level(rec, msh, ef)
        if i == 0:
            request = _with_shift(request, pencil, sols)
        if max_dof is not None and rec.dof >= max_dof:
            break
        if i == max_iter - 1:
            break
        marked = mark_cells(ef.zeta_sq, theta)
        if marked.size == 0:
            warnings.warn("estimator vanished; stopping adaptive loop")
            break
        msh = meshmod.refine_marked(msh, marked)
    return records, msh


def fit_order(xs, errs):
    """Least-squares slope of log(err) against log(x).

    Non-positive errors (exact hits) are dropped with a warning; at
    least two usable levels are required.
    """
    xs = np.asarray(xs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    good = errs > 0
    if not np.all(good):
        warnings.warn("dropping non-positive errors from order fit")
    xs, errs = xs[good], errs[good]
    if xs.size < 2:
        raise ValueError("need at least two positive errors to fit an order")
    A = np.column_stack([np.log(xs), np.ones_like(xs)])
    coef, res, *_ = np.linalg.lstsq(A, np.log(errs), rcond=None)
    resid = float(np.sqrt(res[0])) if res.size else 0.0
    return ConvergenceFit(model="err=C*x^t", C=float(np.exp(coef[1])), t=float(coef[0]), residual=resid)


def extrapolate_eigenvalue(hs, kappas, t_max=7.0):
    """Fit kappa_h = kappa_extr + C h^t and return the extrapolated value.

    Nested search: a 1D minimization over the rate t (within
    [0.5, t_max]) with a linear least-squares solve for
    (kappa_extr, C) at each candidate t.
    """
    hs = np.asarray(hs, dtype=float)
    kappas = np.asarray(kappas, dtype=float)
    if hs.size < 4:
        raise ValueError("need at least 4 levels to extrapolate")

    def residual_at(t):
        A = np.column_stack([np.ones_like(hs), hs**t])
        coef, _, _, _ = np.linalg.lstsq(A, kappas, rcond=None)
        r = kappas - A @ coef
        return float(r @ r), coef

    grid = np.linspace(0.5, t_max, 131)
    r2 = [residual_at(t)[0] for t in grid]
    i = int(np.argmin(r2))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    opt = minimize_scalar(
        lambda t: residual_at(t)[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    t = float(opt.x)
    r2_best, coef = residual_at(t)
    resid = float(np.sqrt(r2_best))
    spread = float(kappas.max() - kappas.min())
    if spread > 0 and resid > 0.1 * spread:
        warnings.warn(
            f"extrapolation residual {resid:.3e} exceeds 10% of data range"
        )
    return ConvergenceFit(
        model="kappa=kappa_extr+C*h^t",
        C=float(coef[1]),
        t=t,
        residual=resid,
        kappa_extr=float(coef[0]),
    )


def eig_error(kappa_h, kappa_ref):
    """Frequency error |sqrt(kappa_h) - sqrt(kappa_ref)|."""
    if kappa_h < 0 or kappa_ref < 0:
        raise ValueError("eigenvalues must be nonnegative")
    return abs(np.sqrt(kappa_h) - np.sqrt(kappa_ref))


def effectivity(err, zeta):
    """Effectivity index err / zeta^2."""
    if zeta == 0.0:
        if err == 0.0:
            return 0.0
        raise ValueError("zero estimator with nonzero error")
    return err / zeta**2


def attach_errors(records, ref_kappas):
    """Fill err/eff columns of records from reference eigenvalues.

    ``ref_kappas`` may be shorter than the kappa list; missing entries
    leave the corresponding columns empty.
    """
    for rec in records:
        rec.errs = []
        rec.effs = []
        for i, kh in enumerate(rec.kappas):
            if i < len(ref_kappas) and ref_kappas[i] is not None:
                err = eig_error(kh, ref_kappas[i])
                rec.errs.append(err)
                rec.effs.append(effectivity(err, rec.zeta))
            else:
                rec.errs.append(None)
                rec.effs.append(None)
    return records
