"""Command-line entry point for validation, convergence, spectra, sparsity
and stability-certificate studies.

Exit codes: 0 when every requested check passes, 1 when a study ran but a
check failed (or an internal error occurred), 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np
import scipy.io

from . import analysis, assembly, mapping, mesh, refelem, sat, solve

USAGE_ERROR = 2


@dataclass
class RunConfig:
    """Resolved options for one study run."""

    command: str
    family: str = "gamma"
    p: int = 2
    sat: str = "br2"
    levels: tuple[int, ...] = (64, 256, 1024)
    curved: bool = False
    pmap: int = 2
    nx: int = 8
    ny: int = 4
    solver: str = "auto"
    tol: float | None = None
    out: Path = Path("reports")
    dump: bool = False

    def __post_init__(self):
        if self.family not in refelem.FAMILIES:
            raise ValueError(f"unknown family '{self.family}'")
        if not 1 <= self.p <= refelem.MAX_DEGREE:
            raise ValueError(f"degree {self.p} out of range 1..4")
        if self.sat not in sat.VARIANTS:
            raise ValueError(f"unknown SAT variant '{self.sat}'; choose from "
                             + ", ".join(sat.VARIANTS))


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML file with defaults; flags override it")
    parser.add_argument("--family", choices=refelem.FAMILIES)
    parser.add_argument("--p", type=int, choices=range(1, refelem.MAX_DEGREE + 1))
    parser.add_argument("--sat", choices=sat.VARIANTS, metavar="VARIANT",
                        help="one of: " + ", ".join(sat.VARIANTS))
    parser.add_argument("--levels", type=str,
                        help="comma-separated element counts, e.g. 64,256,1024")
    parser.add_argument("--curved", action="store_true", default=None)
    parser.add_argument("--pmap", type=int)
    parser.add_argument("--nx", type=int)
    parser.add_argument("--ny", type=int)
    parser.add_argument("--solver", choices=("auto", "dense", "cg", "gmres"))
    parser.add_argument("--tol", type=float)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--dump", action="store_true", default=None,
                        help="write the assembled matrix (Matrix Market) and "
                        "right-hand side (plain text)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbpsat",
        description="Verification studies for penalized multidimensional "
                    "derivative discretizations of diffusion problems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
            ("validate", "check operator exactness and norm properties"),
            ("converge", "grid-refinement study with rate fits"),
            ("spectra", "dense eigenvalues and conditioning"),
            ("sparsity", "nonzero-count estimate vs measurement"),
            ("certify", "energy-stability certificate"),
            ("all", "run every study with the same configuration")):
        _add_common(sub.add_parser(name, help=doc))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config-file values and explicit flags."""
    values: dict = {}
    if args.config is not None:
        with open(args.config, "rb") as fh:
            values.update(tomllib.load(fh))
    for name in ("family", "p", "sat", "curved", "pmap", "nx", "ny",
                 "solver", "tol", "out", "dump"):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "levels", None) is not None:
        values["levels"] = tuple(int(v) for v in args.levels.split(","))
    elif "levels" in values:
        values["levels"] = tuple(int(v) for v in values["levels"])
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    if "out" in values:
        values["out"] = Path(values["out"])
    return RunConfig(command=args.command, **values)


def _build_system(cfg: RunConfig, n_e: int | None = None):
    problem = assembly.manufactured_problem()
    refop = refelem.load_operator(cfg.family, cfg.p)
    if n_e is None:
        m = mesh.generate_rect_mesh(cfg.nx, cfg.ny)
    else:
        nx, ny = analysis.level_grid(n_e)
        m = mesh.generate_rect_mesh(nx, ny)
    nodes = mesh.curve_mesh(m, p_map=cfg.pmap,
                            mode="perturbed" if cfg.curved else "affine")
    ops = mapping.build_all_operators(refop, m, nodes, problem.diffusivity)
    perms = mesh.match_facet_nodes(m, nodes, refop)
    spec = sat.SatSpec(cfg.sat)
    coeffs = sat.build_mesh_coefficients(spec, m, ops, perms)
    system = assembly.assemble_primal(m, ops, coeffs, problem)
    return m, ops, spec, coeffs, system


def _dump_system(system: assembly.GlobalSystem, outdir: Path, tag: str):
    outdir.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(outdir / f"{tag}_matrix.mtx"), system.A)
    np.savetxt(outdir / f"{tag}_rhs.txt", system.b, fmt="%.17e")
    print(f"wrote {outdir / (tag + '_matrix.mtx')} and "
          f"{outdir / (tag + '_rhs.txt')}")


def cmd_validate(cfg: RunConfig) -> bool:
    report = refelem.validate_operator(refelem.load_operator(cfg.family, cfg.p))
    for name, (passed, residual) in report.checks.items():
        status = "PASS" if passed else "FAIL"
        print(f"[{status}] {cfg.family} p={cfg.p} {name} ({residual:.3e})")
    return report.ok


def cmd_converge(cfg: RunConfig) -> bool:
    record = analysis.run_convergence_study(
        cfg.family, cfg.p, cfg.sat, levels=cfg.levels, curved=cfg.curved,
        p_map=cfg.pmap, solver=cfg.solver, tol=cfg.tol)
    expect = analysis.expected_rates(cfg.sat, cfg.p)
    analysis.emit_reports([record], cfg.out, expected_rate=expect["u"])
    for lvl in record.levels:
        print(f"n_e={lvl.n_e:5d} h={lvl.h:.4f} err_u={lvl.err_u:.4e} "
              f"err_psi={lvl.err_psi:.4e} err_I={lvl.err_i:.4e}")
    print(f"rates: u={record.rate_u:.3f} psi={record.rate_psi:.3f} "
          f"I={record.rate_i:.3f}")
    ok = analysis.rates_pass(record)
    print("rate check:", "PASS" if ok else "FAIL")
    if cfg.dump:
        _, _, _, _, system = _build_system(cfg, n_e=cfg.levels[-1])
        _dump_system(system, cfg.out, f"converge_{cfg.sat}_{cfg.family}_p{cfg.p}")
    return ok


def cmd_spectra(cfg: RunConfig) -> bool:
    m, ops, spec, coeffs, system = _build_system(cfg)
    report = solve.compute_spectrum(system)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"spectrum_{cfg.sat}_{cfg.family}_p{cfg.p}.csv"
    path.write_text(report.to_csv())
    print(f"n={system.n} rho={report.spectral_radius:.6e} "
          f"max_re={report.max_real:.6e} cond={report.condition_number:.6e}")
    print(f"wrote {path}")
    if cfg.dump:
        _dump_system(system, cfg.out, f"spectra_{cfg.sat}_{cfg.family}_p{cfg.p}")
    cert = sat.certify_stability(spec, coeffs, m)
    if cert.applicable and cert.passed:
        ok = report.max_real <= 1e-8 * report.spectral_radius
        print("spectrum sign check:", "PASS" if ok else "FAIL")
        return ok
    return True


def cmd_sparsity(cfg: RunConfig) -> bool:
    m, ops, spec, coeffs, system = _build_system(cfg)
    refop = ops[0].refop
    est = analysis.measure_nnz(
        analysis.estimate_nnz(cfg.sat, cfg.family, refop.n_p,
                              len(refop.B[0]), m.n_e), system)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"sparsity_{cfg.sat}_{cfg.family}_p{cfg.p}.csv"
    path.write_text(analysis.sparsity_csv([est]))
    print(f"estimated={est.estimated} measured={est.measured} "
          f"error={est.percent_error:.2f}%")
    print(f"wrote {path}")
    if cfg.dump:
        _dump_system(system, cfg.out, f"sparsity_{cfg.sat}_{cfg.family}_p{cfg.p}")
    ok = est.measured <= est.estimated
    print("sparsity bound check:", "PASS" if ok else "FAIL")
    return ok


def cmd_certify(cfg: RunConfig) -> bool:
    m, ops, spec, coeffs, system = _build_system(cfg)
    cert = sat.certify_stability(spec, coeffs, m)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / f"certificate_{cfg.sat}_{cfg.family}_p{cfg.p}.json"
    path.write_text(cert.to_json())
    print(f"wrote {path}")
    if not cert.applicable:
        print(f"certificate not applicable to '{cfg.sat}' "
              "(empirical spectral check applies instead)")
        report = solve.compute_spectrum(system, mode="eigen")
        ok = report.max_real <= 1e-8 * report.spectral_radius
        print("spectral stability check:", "PASS" if ok else "FAIL")
        return ok
    failed = [c for c in cert.checks if not c.passed]
    print(f"certificate: {'PASS' if cert.passed else 'FAIL'} "
          f"({len(cert.checks)} checks, {len(failed)} failed)")
    return cert.passed


def cmd_all(cfg: RunConfig) -> bool:
    ok = cmd_validate(cfg)
    suite = analysis.run_property_suite(cfg.family, cfg.p, cfg.sat,
                                        n_e=2 * cfg.nx * cfg.ny,
                                        curved=cfg.curved, p_map=cfg.pmap)
    for check in suite.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] property {check.name} = {check.value:.3e}")
    ok = ok and suite.passed
    ok = cmd_converge(cfg) and ok
    ok = cmd_spectra(cfg) and ok
    ok = cmd_sparsity(cfg) and ok
    ok = cmd_certify(cfg) and ok
    return ok


COMMANDS = {
    "validate": cmd_validate,
    "converge": cmd_converge,
    "spectra": cmd_spectra,
    "sparsity": cmd_sparsity,
    "certify": cmd_certify,
    "all": cmd_all,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError, tomllib.TOMLDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    try:
        ok = COMMANDS[cfg.command](cfg)
    except (analysis.AnalysisError, solve.SolverError, solve.SpectrumSizeError,
            assembly.AssemblyError, sat.SatVariantError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
