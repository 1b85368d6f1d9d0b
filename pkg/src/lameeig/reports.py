"""CSV and JSON study reports.

CSV schema (one data row per level)::

    iter,dof,h_max,cells,kappa_1..kappa_nev,zeta,err_1..err_nev,eff_1..eff_nev,seconds

Unavailable err/eff entries are written as empty strings.  Floats use
shortest round-trip formatting, so reports are byte-stable across runs
(except the wall-time column).  The JSON summary carries the fully
resolved configuration, the records, the convergence fits and the
provenance of the reference eigenvalues; its schema ships with the
package as report_schema.json.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
from dataclasses import asdict

__all__ = [
    "csv_header",
    "write_csv",
    "read_csv",
    "write_json_summary",
    "load_schema",
]


def csv_header(nev):
    cols = ["iter", "dof", "h_max", "cells"]
    cols += [f"kappa_{i+1}" for i in range(nev)]
    cols += ["zeta"]
    cols += [f"err_{i+1}" for i in range(nev)]
    cols += [f"eff_{i+1}" for i in range(nev)]
    cols += ["seconds"]
    return cols


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int,)):
        return str(x)
    return repr(float(x))


def write_csv(path, records, nev):
    """Write study records to CSV with the fixed column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(nev))
        for rec in records:
            kappas = list(rec.kappas) + [None] * (nev - len(rec.kappas))
            errs = list(rec.errs) + [None] * (nev - len(rec.errs))
            effs = list(rec.effs) + [None] * (nev - len(rec.effs))
            row = [rec.iteration, rec.dof, _fmt(rec.h_max), rec.cells]
            row += [_fmt(k) for k in kappas[:nev]]
            row += [_fmt(rec.zeta)]
            row += [_fmt(e) for e in errs[:nev]]
            row += [_fmt(e) for e in effs[:nev]]
            row += [_fmt(rec.seconds)]
            writer.writerow(row)


def read_csv(path):
    """Parse a study CSV back into a list of column dictionaries."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for key, val in raw.items():
                if val == "" or val is None:
                    row[key] = None
                elif key in ("iter", "dof", "cells"):
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            rows.append(row)
    return rows


def _fit_dict(fit):
    if fit is None:
        return None
    d = asdict(fit)
    return d


def write_json_summary(path, config, records, fits, reference):
    """Write the self-describing JSON study summary.

    ``fits`` maps fit names to ConvergenceFit objects (or None);
    ``reference`` records where the reference eigenvalues came from.
    """
    doc = {
        "config": config,
        "records": [
            {
                "iteration": r.iteration,
                "dof": r.dof,
                "h_max": r.h_max,
                "cells": r.cells,
                "kappas": list(r.kappas),
                "zeta": r.zeta,
                "errs": list(r.errs),
                "effs": list(r.effs),
                "seconds": r.seconds,
            }
            for r in records
        ],
        "fits": {name: _fit_dict(f) for name, f in fits.items()},
        "reference": reference,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc


def load_schema():
    """The shipped JSON schema for the study summary document."""
    text = (
        importlib.resources.files("lameeig").joinpath("report_schema.json").read_text()
    )
    return json.loads(text)
