"""Command line entry point: ``maxreg-fem <subcommand> [--config FILE] [--out DIR] [--seed N]``.

Exit status: 0 when every check passes, 2 on threshold violations, 1 on errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .coefficients import CATALOGUE, make_sample
from .fespace import assemble, build_space, export_triplets, validate_coefficient
from .geometry import domain_metrics, measure_quality, write_mesh

SWEEPS = {
    "semigroup": harness.run_semigroup_sweep,
    "maxreg": harness.run_maxreg_sweep,
    "gradreg": harness.run_gradient_maxreg_sweep,
    "converge": harness.run_error_convergence,
    "green": harness.run_green_diagnostics,
    "superapprox": harness.run_superapprox_sweep,
}


def _config(args) -> harness.ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    if getattr(args, "C_star", None):
        data["C_star"] = args.C_star
    return harness.ExperimentConfig.from_dict(data)


def _write_json(out: Path, payload: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(harness._round(payload), sort_keys=True, indent=2) + "\n")


def cmd_mesh(cfg) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meshes = harness.nested_meshes(cfg)
    levels = []
    for n in cfg.levels:
        m = meshes[n]
        m.validate()
        write_mesh(m, out / f"mesh_{n}.txt")
        q = measure_quality(m)
        levels.append({"n": n, "vertices": m.n_vertices, "triangles": m.n_triangles,
                       "h": q.h, "rho_min": q.rho_min, "K": q.K})
    met = domain_metrics(cfg.polygon())
    _write_json(out, {"sweep": "mesh", "passed": True, "levels": levels,
                      "domain_metrics": {"R0": met.R0, "K0": met.K0, "formula": met.formula}})
    return 0


def cmd_assemble(cfg) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.coefficient_field()
    meshes = harness.nested_meshes(cfg)
    levels = []
    for n in cfg.levels:
        space = build_space(meshes[n], cfg.degree)
        pair = assemble(space, a)
        export_triplets(pair.M, out / f"M_{n}.txt")
        export_triplets(pair.A, out / f"A_{n}.txt")
        rep = validate_coefficient(a, space)
        levels.append({"n": n, "n_interior": space.n_interior, "nnz_M": pair.M.nnz, "nnz_A": pair.A.nnz,
                       "min_eig": rep.min_eig, "max_eig": rep.max_eig})
    _write_json(out, {"sweep": "assemble", "passed": True, "levels": levels, "coefficient": a.certificate()})
    return 0


def cmd_catalogue(cfg) -> int:
    entries = {}
    for name, desc in sorted(CATALOGUE.items()):
        entries[name] = {"description": desc, "certificate": make_sample(name, None, cfg.polygon()).certificate()}
    for name, e in entries.items():
        print(f"{name:20s} {e['description']}")
    _write_json(Path(cfg.out), {"sweep": "catalogue", "passed": True, "catalogue": entries})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxreg-fem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ["mesh", "assemble", "catalogue", *SWEEPS]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        if name == "green":
            p.add_argument("--C-star", dest="C_star", type=float, nargs="+", help="shell constants C*")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.command == "mesh":
            return cmd_mesh(cfg)
        if args.command == "assemble":
            return cmd_assemble(cfg)
        if args.command == "catalogue":
            return cmd_catalogue(cfg)
        report = SWEEPS[args.command](cfg)
        harness.write_outputs(report, cfg.out)
        for c in report.checks:
            status = "PASS" if c["passed"] else "FAIL"
            print(f"{status} {c['quantity']} {c['kind']}={c['value']} threshold={c['threshold']}")
        return 0 if report.passed else 2
    except Exception as exc:  # any failure to execute maps to status 1
        logging.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
