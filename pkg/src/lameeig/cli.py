"""Configuration-driven command line front end.

Usage::

    lameeig solve --config study.json [--out DIR] [--jobs N]
    lameeig export-matrix --config study.json --level I [--out DIR]

A config file is a single JSON document describing one study (geometry,
mode, material, refinement budget, outputs).  ``solve`` writes a CSV
table, a JSON summary validating against the shipped schema, and
optionally per-level VTK fields.  Exit codes: 0 success, 1 runtime
failure, 2 invalid configuration.  The environment variable
LAMEEIG_THREADS caps the threads used by the underlying linear algebra.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import adaptivity, assembly, eigsolver, mesh as meshmod, reports

__all__ = ["main", "run_config", "validate_config", "ConfigError"]

GEOMETRIES = ("unit_square", "square_with_hole", "lshape_3d")
MODES = ("uniform", "adaptive")

DEFAULTS = {
    "E": 1.0,
    "alpha_inv": "auto",
    "theta": 0.5,
    "reference_kappas": None,
    "initial_N": 8,
    "solver": {
        "sigma": None,
        "tolerance": 1e-9,
        "max_iterations": 10000,
        "dense_threshold": eigsolver.DENSE_THRESHOLD_DEFAULT,
    },
    "output": {"csv": "study.csv", "json": "study.json", "vtk": False},
}


class ConfigError(ValueError):
    """Invalid study configuration; carries the offending keys."""

    def __init__(self, problems):
        self.problems = problems
        super().__init__(
            "invalid config: " + "; ".join(f"{k}: {v}" for k, v in problems)
        )


def _limit_threads():
    cap = os.environ.get("LAMEEIG_THREADS")
    if not cap:
        return
    try:
        n = int(cap)
    except ValueError:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def validate_config(raw):
    """Check a raw config dict and materialize defaults.

    Returns the resolved configuration; raises ConfigError listing every
    offending key.
    """
    if not isinstance(raw, dict):
        raise ConfigError([("<document>", "config must be a JSON object")])
    problems = []
    cfg = copy.deepcopy(DEFAULTS)
    for key in ("solver", "output"):
        sub = raw.get(key, {})
        if not isinstance(sub, dict):
            problems.append((key, "must be an object"))
            sub = {}
        unknown = set(sub) - set(cfg[key])
        if unknown:
            problems.append((key, f"unknown keys {sorted(unknown)}"))
        cfg[key].update({k: v for k, v in sub.items() if k in cfg[key]})
    for key, val in raw.items():
        if key in ("solver", "output"):
            continue
        cfg[key] = val

    for key in ("geometry", "mode", "k", "nu", "nev"):
        if key not in raw:
            problems.append((key, "required"))
    geometry = cfg.get("geometry")
    mode = cfg.get("mode")
    if geometry is not None and geometry not in GEOMETRIES:
        problems.append(("geometry", f"must be one of {GEOMETRIES}"))
    if mode is not None and mode not in MODES:
        problems.append(("mode", f"must be one of {MODES}"))
    k = cfg.get("k")
    if k is not None and k not in (1, 2, 3):
        problems.append(("k", "must be 1, 2 or 3"))
    if geometry == "lshape_3d" and k not in (None, 1):
        problems.append(("k", "3D geometry supports only k = 1"))
    nu = cfg.get("nu")
    if nu is not None and not (
        isinstance(nu, (int, float)) and 0.0 < nu <= assembly.NU_MAX_DEFAULT
    ):
        problems.append(("nu", f"must lie in (0, {assembly.NU_MAX_DEFAULT}]"))
    E = cfg.get("E")
    if not (isinstance(E, (int, float)) and E > 0):
        problems.append(("E", "must be a positive number"))
    nev = cfg.get("nev")
    if nev is not None and not (isinstance(nev, int) and nev >= 1):
        problems.append(("nev", "must be a positive integer"))
    theta = cfg.get("theta")
    if not (isinstance(theta, (int, float)) and 0.0 < theta <= 1.0):
        problems.append(("theta", "must lie in (0, 1]"))
    alpha = cfg.get("alpha_inv")
    if alpha != "auto" and not (isinstance(alpha, (int, float)) and alpha >= 0):
        problems.append(("alpha_inv", "must be 'auto' or a nonnegative number"))

    if mode == "uniform":
        levels = cfg.get("levels")
        if geometry == "unit_square":
            ok = (
                isinstance(levels, list)
                and len(levels) >= 1
                and all(isinstance(n, int) and n >= 1 for n in levels)
            )
            if not ok:
                problems.append(("levels", "list of mesh resolutions N required"))
        else:
            if not (isinstance(levels, int) and levels >= 1):
                problems.append(("levels", "number of uniform levels required"))
    elif mode == "adaptive":
        stop = cfg.get("stop", {})
        if not isinstance(stop, dict):
            problems.append(("stop", "must be an object"))
            stop = {}
        cfg["stop"] = {
            "max_iter": stop.get("max_iter", 12),
            "max_dof": stop.get("max_dof"),
        }
        if not (isinstance(cfg["stop"]["max_iter"], int) and cfg["stop"]["max_iter"] >= 1):
            problems.append(("stop.max_iter", "must be a positive integer"))

    if problems:
        raise ConfigError(problems)

    dim = 3 if geometry == "lshape_3d" else 2
    if cfg["alpha_inv"] == "auto":
        cfg["alpha_inv"] = assembly.resolve_alpha_inv(float(nu), dim)
    cfg["E"] = float(cfg["E"])
    cfg["nu"] = float(nu)
    cfg["alpha_inv"] = float(cfg["alpha_inv"])
    cfg["theta"] = float(cfg["theta"])
    return cfg


def _initial_mesh(cfg):
    geometry = cfg["geometry"]
    if geometry == "unit_square":
        return meshmod.build_unit_square(cfg.get("initial_N", 8))
    if geometry == "square_with_hole":
        return meshmod.build_square_with_hole()
    return meshmod.build_lshape_3d()


def _uniform_meshes(cfg):
    if cfg["geometry"] == "unit_square":
        return [meshmod.build_unit_square(N) for N in cfg["levels"]]
    meshes = [_initial_mesh(cfg)]
    for _ in range(cfg["levels"] - 1):
        meshes.append(meshmod.uniform_refine(meshes[-1]))
    return meshes


def _request(cfg):
    s = cfg["solver"]
    return eigsolver.EigenRequest(
        nev=cfg["nev"],
        sigma=s["sigma"],
        tolerance=s["tolerance"],
        max_iterations=s["max_iterations"],
        dense_threshold=s["dense_threshold"],
    )


def _dim(cfg):
    return 3 if cfg["geometry"] == "lshape_3d" else 2


def _self_reference(cfg, records):
    """Extrapolated reference eigenvalues, one per requested pair."""
    if len(records) < 4:
        return None
    if cfg["mode"] == "uniform":
        xs = np.array([r.h_max for r in records])
    else:
        xs = np.array([float(r.dof) for r in records]) ** (-1.0 / _dim(cfg))
    refs = []
    for i in range(cfg["nev"]):
        kappas = np.array([r.kappas[i] for r in records])
        fit = adaptivity.extrapolate_eigenvalue(xs, kappas)
        refs.append(fit.kappa_extr)
    return refs


def run_config(cfg, out_dir):
    """Execute one resolved study configuration; returns the summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = assembly.material(
        cfg["E"], cfg["nu"], alpha_inv=cfg["alpha_inv"], dim=_dim(cfg)
    )
    request = _request(cfg)
    vtk_fields = [] if cfg["output"]["vtk"] else None

    def on_level(rec, msh, ef):
        if vtk_fields is not None:
            path = out_dir / f"level_{rec.iteration:03d}.vtk"
            meshmod.write_vtk(msh, path, cell_data={"zeta_sq": ef.zeta_sq})
            vtk_fields.append(str(path))

    if cfg["mode"] == "uniform":
        records = adaptivity.uniform_study(
            _uniform_meshes(cfg), params, cfg["k"], cfg["nev"], request=request,
            on_level=on_level,
        )
    else:
        records, _ = adaptivity.adaptive_loop(
            _initial_mesh(cfg),
            params,
            cfg["k"],
            cfg["nev"],
            max_iter=cfg["stop"]["max_iter"],
            max_dof=cfg["stop"]["max_dof"],
            theta=cfg["theta"],
            request=request,
            on_level=on_level,
        )

    if cfg["reference_kappas"]:
        refs = list(cfg["reference_kappas"])
        reference = {"source": "config", "kappas": refs}
    else:
        refs = _self_reference(cfg, records)
        if refs is None:
            reference = {"source": "none", "kappas": []}
            refs = []
        else:
            reference = {"source": "extrapolation", "kappas": refs}
    adaptivity.attach_errors(records, refs)

    fits = {}
    dofs = np.array([float(r.dof) for r in records])
    if refs and all(r.errs[0] for r in records):
        errs1 = [r.errs[0] for r in records]
        if cfg["mode"] == "uniform":
            fits["err1_vs_h"] = adaptivity.fit_order([r.h_max for r in records], errs1)
        fits["err1_vs_dof"] = adaptivity.fit_order(dofs, errs1)
    fits["zeta_vs_dof"] = adaptivity.fit_order(dofs, [r.zeta for r in records]) if len(
        records
    ) >= 2 else None
    if reference["source"] == "extrapolation" and len(records) >= 4:
        xs = (
            np.array([r.h_max for r in records])
            if cfg["mode"] == "uniform"
            else dofs ** (-1.0 / _dim(cfg))
        )
        fits["extrapolation_kappa1"] = adaptivity.extrapolate_eigenvalue(
            xs, [r.kappas[0] for r in records]
        )

    csv_path = out_dir / cfg["output"]["csv"]
    json_path = out_dir / cfg["output"]["json"]
    reports.write_csv(csv_path, records, cfg["nev"])
    doc = reports.write_json_summary(json_path, cfg, records, fits, reference)
    try:
        import jsonschema

        jsonschema.validate(doc, reports.load_schema())
    except ImportError:
        pass
    return doc


def _run_config_file(path, out_dir):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([("<document>", f"not valid JSON ({exc})")])
    cfg = validate_config(raw)
    return run_config(cfg, out_dir)


def _cmd_solve(args):
    paths = args.config
    out = Path(args.out)
    if len(paths) == 1:
        _run_config_file(paths[0], out)
        return 0
    if args.jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(_run_config_file, p, out / Path(p).stem): p for p in paths
            }
            for fut in concurrent.futures.as_completed(futures):
                fut.result()
    else:
        for p in paths:
            _run_config_file(p, out / Path(p).stem)
    return 0


def _cmd_export_matrix(args):
    from . import assembly as asm, femspace

    with open(args.config) as fh:
        cfg = validate_config(json.load(fh))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = asm.material(cfg["E"], cfg["nu"], alpha_inv=cfg["alpha_inv"], dim=_dim(cfg))
    level = args.level
    if cfg["mode"] == "uniform":
        meshes = _uniform_meshes(cfg)
        if level >= len(meshes):
            raise ConfigError([("--level", f"study has {len(meshes)} levels")])
        msh = meshes[level]
    else:
        msh = _initial_mesh(cfg)
        request = _request(cfg)
        for _ in range(level):
            spaces = femspace.build_spaces(msh, cfg["k"])
            pencil = asm.assemble_pencil(msh, spaces, params)
            sols = eigsolver.solve(pencil, request)
            from . import estimator

            ef = estimator.estimate(msh, spaces, params, sols[0])
            marked = adaptivity.mark_cells(ef.zeta_sq, cfg["theta"])
            if marked.size == 0:
                break
            msh = meshmod.refine_marked(msh, marked)
            if request.sigma is None:
                from dataclasses import replace

                request = replace(request, sigma=-0.5 * sols[0].kappa)
    spaces = femspace.build_spaces(msh, cfg["k"])
    pencil = asm.assemble_pencil(msh, spaces, params)
    asm.export_matrix_market(
        pencil, out / f"K_level{level}.mtx", out / f"M_level{level}.mtx"
    )
    return 0


def main(argv=None):
    _limit_threads()
    parser = argparse.ArgumentParser(prog="lameeig", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one or more studies")
    p_solve.add_argument("--config", nargs="+", required=True)
    p_solve.add_argument("--out", default=".")
    p_solve.add_argument("--jobs", type=int, default=1)
    p_solve.set_defaults(func=_cmd_solve)

    p_exp = sub.add_parser("export-matrix", help="export one level's pencil")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--level", type=int, required=True)
    p_exp.add_argument("--out", default=".")
    p_exp.set_defaults(func=_cmd_export_matrix)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver or I/O failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
