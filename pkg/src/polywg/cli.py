"""Command-line driver: single solves, convergence studies, robustness
diagnostics, and the structural property suite.

Options may come from flags or from a single JSON config file (flags win).
Independent (level, scheme) runs fan out over threads when POLYWG_THREADS
is set above 1; ``--serial`` forces single-threaded execution and zeroes
the wall-time column so identical configs produce byte-identical CSV.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis
from .assembly import dump_matrix
from .solver import SolverError

DEFAULTS = {
    "case": "poly_bubble",
    "mesh": "rect",
    "level": 4,
    "levels": [4, 8, 16, 32],
    "k": 0,
    "nu": [1.0],
    "scheme": "robust",
    "out": ".",
    "seed": 0,
    "amplitude": 0.2,
    "quad_degree": None,
    "vtk": False,
    "dump_matrix": False,
    "serial": False,
}


def _parse_floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _parse_ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _add_common(p):
    p.add_argument("--config", help="JSON file with option values; explicit flags override it")
    p.add_argument("--case", choices=sorted(analysis.CASES), help="manufactured solution")
    p.add_argument("--mesh", choices=analysis.MESH_FAMILIES, help="mesh family")
    p.add_argument("--k", type=int, choices=(0, 1, 2), help="polynomial order")
    p.add_argument("--nu", type=_parse_floats, help="viscosity, or comma list for robustness")
    p.add_argument("--scheme", choices=("robust", "standard", "both"), help="which algorithm(s)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed for deformed meshes / random checks")
    p.add_argument("--amplitude", type=float, help="deformed-mesh jitter as a fraction of h")
    p.add_argument("--quad-degree", dest="quad_degree", type=int, help="data quadrature degree override")
    p.add_argument("--serial", action="store_true", default=None, help="single thread, zeroed wall times")


def build_parser():
    ap = argparse.ArgumentParser(prog="polywg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one configuration and report errors")
    _add_common(p)
    p.add_argument("--level", type=int, help="mesh level (1/h for rect families)")
    p.add_argument("--vtk", action="store_true", default=None, help="write velocity/pressure samples as legacy VTK")
    p.add_argument("--dump-matrix", dest="dump_matrix", action="store_true", default=None, help="write the condensed system in MatrixMarket form")

    p = sub.add_parser("convergence", help="refinement study with rates")
    _add_common(p)
    p.add_argument("--levels", type=_parse_ints, help="comma-separated mesh levels, strictly increasing")

    p = sub.add_parser("robustness", help="viscosity sweep for both algorithms")
    _add_common(p)
    p.add_argument("--level", type=int, help="mesh level (1/h for rect families)")

    p = sub.add_parser("props", help="run the structural property suite")
    _add_common(p)
    p.add_argument("--level", type=int, help="mesh level for the random-function checks")
    return ap


def resolve(args):
    """Layer builtin defaults, then the JSON config, then explicit flags;
    cfg["explicit"] records which keys the user actually set."""
    cfg = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(DEFAULTS) - {"command"}
        if unknown:
            raise SystemExit(f"config keys not recognized: {sorted(unknown)}")
        cfg.update(loaded)
        explicit |= set(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
            explicit.add(key)
    if isinstance(cfg["nu"], (int, float)):
        cfg["nu"] = [float(cfg["nu"])]
    cfg["levels"] = sorted(set(int(x) for x in cfg["levels"]))
    cfg["command"] = args.command
    cfg["explicit"] = explicit
    return cfg


def _workers(cfg):
    if cfg["serial"]:
        return 1
    try:
        return max(1, int(os.environ.get("POLYWG_THREADS", "1")))
    except ValueError:
        return 1


def _schemes(cfg):
    return ("robust", "standard") if cfg["scheme"] == "both" else (cfg["scheme"],)


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")


def write_vtk(path, disc, sol):
    """Velocity/pressure samples at the sub-triangle quadrature points as a
    legacy-ASCII VTK vertex cloud."""
    pts, vel, prs = [], [], []
    for ci, cs in enumerate(disc.spaces):
        pts.append(cs.all_pts)
        vel.append(
            np.column_stack(
                [cs.eval_cell_poly(sol.u0[ci, 0], cs.all_pts), cs.eval_cell_poly(sol.u0[ci, 1], cs.all_pts)]
            )
        )
        prs.append(cs.eval_cell_poly(sol.p[ci], cs.all_pts))
    pts = np.vstack(pts)
    vel = np.vstack(vel)
    prs = np.concatenate(prs)
    n = len(pts)
    lines = [
        "# vtk DataFile Version 3.0",
        "polywg field samples",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [f"{x:.10e} {y:.10e} 0.0" for x, y in pts]
    lines.append(f"CELLS {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    lines.append(f"CELL_TYPES {n}")
    lines += ["1"] * n
    lines.append(f"POINT_DATA {n}")
    lines.append("VECTORS velocity double")
    lines += [f"{u:.10e} {v:.10e} 0.0" for u, v in vel]
    lines.append("SCALARS pressure double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [f"{p:.10e}" for p in prs]
    _write(path, "\n".join(lines) + "\n")


def cmd_solve(cfg):
    disc = analysis.discretize(
        analysis.make_mesh(cfg["mesh"], cfg["level"], seed=cfg["seed"], amplitude=cfg["amplitude"]),
        cfg["k"],
        data_degree=cfg["quad_degree"],
    )
    results = []
    for scheme in _schemes(cfg):
        res = analysis.run_case(cfg["case"], disc, cfg["nu"][0], scheme, level=cfg["level"], keep_solution=True)
        results.append(res)
        print(
            f"{cfg['case']} {scheme} k={cfg['k']} nu={cfg['nu'][0]:g} level={cfg['level']}: "
            f"energy={res.err_energy:.6e} uL2={res.err_ul2:.6e} pL2={res.err_pl2:.6e} "
            f"(residual {res.residual:.1e})"
        )
        if cfg["vtk"]:
            write_vtk(os.path.join(cfg["out"], f"solution_{scheme}.vtk"), disc, res.solution)
        if cfg["dump_matrix"]:
            case = analysis.CASES[cfg["case"]]
            from .assembly import build_system

            system = build_system(
                disc.mesh,
                disc.spaces,
                disc.dofmap,
                cfg["nu"][0],
                lambda p: case.body_force(p, cfg["nu"][0]),
                scheme,
                recon_ops=disc.recon_ops,
                g=None if case.zero_boundary else case.velocity,
            )
            dump_matrix(system, os.path.join(cfg["out"], f"system_{scheme}.mtx"))
        res.solution = None
    _write(
        os.path.join(cfg["out"], "results.csv"),
        analysis.results_to_csv([results], zero_walltime=cfg["serial"]),
    )
    return 0


def cmd_convergence(cfg):
    nu = cfg["nu"][0]
    schemes = _schemes(cfg)

    def run_level(level):
        disc = analysis.discretize(
            analysis.make_mesh(cfg["mesh"], level, seed=cfg["seed"], amplitude=cfg["amplitude"]),
            cfg["k"],
            data_degree=cfg["quad_degree"],
        )
        return {scheme: analysis.run_case(cfg["case"], disc, nu, scheme, level=level) for scheme in schemes}

    workers = min(_workers(cfg), len(cfg["levels"]))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            by_level = dict(zip(cfg["levels"], pool.map(run_level, cfg["levels"])))
    else:
        by_level = {level: run_level(level) for level in cfg["levels"]}
    tables = [analysis.RateTable([by_level[lv][scheme] for lv in cfg["levels"]]) for scheme in schemes]
    for scheme, table in zip(schemes, tables):
        for i, r in enumerate(table.results):
            rates = tuple(
                "  -  " if table.rates[c][i] is None else f"{table.rates[c][i]:5.2f}"
                for c in ("err_energy", "err_ul2", "err_pl2")
            )
            print(
                f"{scheme:8s} level={r.level:3d} energy={r.err_energy:.3e} ({rates[0]}) "
                f"uL2={r.err_ul2:.3e} ({rates[1]}) pL2={r.err_pl2:.3e} ({rates[2]})"
            )
    _write(os.path.join(cfg["out"], "results.csv"), analysis.results_to_csv(tables, zero_walltime=cfg["serial"]))
    return 0


def cmd_robustness(cfg):
    results, diag = analysis.robustness_study(
        cfg["case"], cfg["mesh"], cfg["level"], cfg["k"], cfg["nu"], schemes=("robust", "standard"), seed=cfg["seed"]
    )
    rows = [results[key] for key in sorted(results, key=lambda t: (t[0], -t[1]))]
    _write(os.path.join(cfg["out"], "results.csv"), analysis.results_to_csv([rows], zero_walltime=cfg["serial"]))
    ok = True
    agree = diag.get("robust_velocity_agreement")
    if agree is not None:
        good = agree <= 1e-6
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} robust velocity viscosity-independence: rel {agree:.2e} (<= 1e-6)")
    nus = cfg["nu"]
    if len(nus) > 1:
        perr = diag["robust_pressure_errors"]
        for i in range(1, len(nus)):
            step = nus[i] / nus[i - 1]
            good = abs(perr[i] / perr[i - 1] / step - 1.0) <= 0.01
            ok &= good
            print(
                f"{'PASS' if good else 'FAIL'} robust pressure error scales with viscosity: "
                f"ratio {perr[i] / perr[i - 1]:.4e} vs {step:g} (within 1%)"
            )
        serr = diag["standard_energy_errors"]
        for i in range(1, len(nus)):
            step = nus[i - 1] / nus[i]
            good = abs(serr[i] / serr[i - 1] / step - 1.0) <= 0.05
            ok &= good
            print(
                f"{'PASS' if good else 'FAIL'} standard velocity error grows as 1/viscosity: "
                f"ratio {serr[i] / serr[i - 1]:.4e} vs {step:g} (within 5%)"
            )
    return 0 if ok else 1


def cmd_props(cfg):
    families = (cfg["mesh"],) if "mesh" in cfg["explicit"] else analysis.MESH_FAMILIES
    korders = (cfg["k"],) if "k" in cfg["explicit"] else (0, 1)
    level = cfg["level"] if "level" in cfg["explicit"] else 1
    checks = analysis.property_suite(seed=cfg["seed"], families=families, korders=korders, level=level)
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.observed} (requirement: {c.requirement})" for c in checks]
    nfail = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - nfail}/{len(checks)} checks passed")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    _write(os.path.join(cfg["out"], "props.txt"), text)
    return 0 if nfail == 0 else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        os.makedirs(cfg["out"], exist_ok=True)
        handler = {
            "solve": cmd_solve,
            "convergence": cmd_convergence,
            "robustness": cmd_robustness,
            "props": cmd_props,
        }[cfg["command"]]
        return handler(cfg)
    except (SolverError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
