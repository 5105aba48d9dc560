"""Command-line front end.

    ddjj [--threads N] validate CONFIG
    ddjj [--threads N] evolve CONFIG [-o PATH]
    ddjj [--threads N] steady CONFIG [-o PATH]
    ddjj [--threads N] sweep CONFIG [-o PATH]
    ddjj [--threads N] lindblad CONFIG [-o PATH]
    ddjj fit TABLE [--j-column NAME] [--gamma-column NAME] [-o PATH]

Exit status: 0 on success, 1 on a runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as cio
from . import lindblad, meanfield, sweep, twomode
from .core import DomainError, InitialCondition, Solver

log = logging.getLogger("ddjj")


def _out_path(args, cfg: Optional[cio.RunConfig]):
    if getattr(args, "output", None):
        return args.output
    return cfg.output_path if cfg is not None else None


def _sibling(path, tag: str):
    """``run.csv`` -> ``run_<tag>.csv``; stdout stays stdout."""
    if path is None or str(path) == "-":
        return path
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def _kinds(cfg: cio.RunConfig) -> List[InitialCondition]:
    if cfg.initial_condition is not None:
        return [cfg.initial_condition]
    return [InitialCondition.FULL, InitialCondition.EMPTY]


def cmd_validate(args, cfg):
    sys.stdout.write(f"# config_sha256 = {cio.config_hash(cfg)}\n")
    sys.stdout.write(cio.dump_config(cfg))
    return 0


def cmd_evolve(args, cfg):
    head = cio.header_lines(cfg, {"kind": "trajectory"})
    path, fmt = _out_path(args, cfg), cfg.output_format
    kind = cfg.initial_condition or InitialCondition.FULL
    rows = []
    if cfg.solver is Solver.TWOMODE:
        p = cfg.rate_params()
        t_final = cfg.t_final or p.default_t_max()
        traj = twomode.evolve(twomode.initial_state(p, kind), p, t_final, n_samples=cfg.n_samples,
                              rtol=min(cfg.tolerances.tol, 1e-6))
        for t, n, ph in zip(traj.t, traj.n, traj.delta_phi):
            rows.append({"t": float(t), "filling": float(n), "filling_ratio": float(n / p.n0),
                         "delta_phi": float(twomode.wrap_phase(ph))})
    elif cfg.solver is Solver.MEANFIELD:
        lat = cfg.params
        t_final = cfg.t_final or 100.0 / lat.j_coupling
        state = meanfield.prepare_initial(lat, kind)
        traj = meanfield.evolve(state, lat, cfg.coupling, t_final, tol=cfg.tolerances.tol,
                                n_samples=cfg.n_samples, clamp_edges=cfg.clamp_edges)
        current = meanfield.site_current(traj)
        for k, t in enumerate(traj.times):
            for site in range(lat.n_sites):
                psi = traj.amplitudes[k, site]
                rows.append({"t": float(t), "site": site, "filling": float(abs(psi) ** 2),
                             "phase": float(np.angle(psi)),
                             "current": float(current[k]) if site == lat.lossy_site else None})
    else:
        raise DomainError("use the lindblad subcommand for the lindblad solver")
    cio.emit_records(rows, fmt, path, head)
    return 0


def cmd_steady(args, cfg):
    path, fmt = _out_path(args, cfg), cfg.output_format
    head = cio.header_lines(cfg, {"kind": "steady_states"})
    records = []
    if cfg.solver is Solver.TWOMODE:
        p = cfg.rate_params()
        for kind in _kinds(cfg):
            records.append(twomode.steady_record(p, kind, epsilon=cfg.tolerances.epsilon))
        fps = twomode.find_fixed_points(p)
        rows = [{"gamma": p.lattice.gamma, "filling": fp.state.n, "filling_ratio": fp.state.n / p.n0,
                 "delta_phi": fp.state.delta_phi, "stability": fp.stability.value} for fp in fps]
        fp_path = _sibling(path, "fixed_points")
        if fp_path is None or str(fp_path) == "-":
            head_fp = cio.header_lines(cfg, {"kind": "fixed_points"})
            cio.emit_records([r.as_row() for r in records], fmt, path, head)
            cio.emit_records(rows, fmt, path, head_fp)
            return 0
        cio.emit_records(rows, fmt, fp_path, cio.header_lines(cfg, {"kind": "fixed_points"}))
    elif cfg.solver is Solver.MEANFIELD:
        for kind in _kinds(cfg):
            records.append(meanfield.steady_record(cfg.params, cfg.coupling, kind, t_final=cfg.t_final,
                                                   epsilon=cfg.tolerances.epsilon, tol=cfg.tolerances.tol,
                                                   clamp_edges=cfg.clamp_edges))
    else:
        raise DomainError("use the lindblad subcommand for the lindblad solver")
    cio.emit_records([r.as_row() for r in records], fmt, path, head)
    return 0


def cmd_sweep(args, cfg):
    if cfg.solver is Solver.LINDBLAD:
        raise DomainError("sweeps need the twomode or meanfield solver")
    path, fmt = _out_path(args, cfg), cfg.output_format
    tol = cfg.tolerances
    if cfg.scan is None:
        j_grid = sweep.default_j_grid()
        gamma_grid = sweep.default_gamma_grid
    else:
        j_grid = cfg.scan.j_grid
        rel = np.asarray(cfg.scan.gamma_grid)
        gamma_grid = (lambda j: rel * j) if cfg.scan.gamma_relative else rel
    pd = sweep.build_phase_diagram(j_grid, gamma_grid, cfg.solver, cfg.rate_params(), threads=args.threads,
                                   threshold_high=tol.threshold_high, threshold_agree=tol.threshold_agree,
                                   clamp_edges=cfg.clamp_edges)
    rows = []
    for pt in pd.points:
        for rec in pt.records:
            row = rec.as_row()
            row["label"] = pt.label.value if pt.label is not None else None
            row["error"] = pt.error
            rows.append(row)
    cio.emit_records(rows, fmt, path, cio.header_lines(cfg, {"kind": "phase_diagram"}))
    crit_path = _sibling(path, "critical_rates")
    cio.emit_records([r.as_row() for r in pd.critical_rates], fmt, crit_path,
                     cio.header_lines(cfg, {"kind": "critical_rates"}))
    return 0


def cmd_lindblad(args, cfg):
    path, fmt = _out_path(args, cfg), cfg.output_format
    lat, lb = cfg.params, cfg.lindblad
    basis = lindblad.FockBasis(lat.n_sites, lb.n_max, lb.n_total_cap)
    jumps = lindblad.default_jumps(lat)
    occ = lb.occupation or tuple(min(1, lb.n_max) for _ in range(lat.n_sites))
    psi0 = basis.fock_state(occ)
    t_final = cfg.t_final or (5.0 / lat.gamma if lat.gamma > 0 else 10.0 / lat.j_coupling)
    times = np.linspace(0.0, t_final, cfg.n_samples)
    cols = {"t": times}
    if lb.method in (cio.LindbladMethod.MASTER, cio.LindbladMethod.BOTH):
        liou = lindblad.build_liouvillian_apply(lat, basis, jumps)
        tr = lindblad.evolve_master(lindblad.DensityMatrix.pure(psi0), liou, t_final, times=times)
        occ_me = tr.occupations()
        traces = tr.traces()
        for i in range(lat.n_sites):
            cols[f"n{i}_master"] = occ_me[:, i]
        cols["trace"] = traces
    if lb.method in (cio.LindbladMethod.TRAJECTORIES, cio.LindbladMethod.BOTH):
        av = lindblad.evolve_trajectories(psi0, lat, basis, jumps, t_final, lb.n_traj, cfg.rng_seed, times=times)
        for i in range(lat.n_sites):
            cols[f"n{i}_traj"] = av.mean[:, i]
            cols[f"n{i}_stderr"] = av.stderr[:, i]
    names = list(cols)
    rows = [{c: float(cols[c][k]) for c in names} for k in range(times.size)]
    cio.emit_records(rows, fmt, path, cio.header_lines(cfg, {"kind": "lindblad", "basis_dim": basis.dim}))
    return 0


def _pick(cols, preferred, fallback_index):
    for name in preferred:
        if name in cols:
            return name
    if len(cols) > fallback_index:
        return cols[fallback_index]
    raise DomainError("table has too few columns")


def cmd_fit(args):
    rows = cio.read_records(args.table)
    if not rows:
        raise DomainError(f"{args.table} has no data rows")
    cols = list(rows[0])
    jc = args.j_column or _pick(cols, ["j_coupling", "J", "j"], 0)
    gc = args.gamma_column or _pick(cols, ["gamma_rb", "gamma_crit", "gamma"], 1)
    for c in (jc, gc):
        if c not in cols:
            raise DomainError(f"column {c!r} not found in {args.table}")
    pairs = [(r[jc], r[gc]) for r in rows if isinstance(r[jc], (int, float)) and isinstance(r[gc], (int, float))
             and math.isfinite(r[jc]) and math.isfinite(r[gc])]
    fit = sweep.fit_power_law(pairs)
    if args.output:
        cio.emit_records([dict(fit.as_row(), n_points=len(pairs))], cio.OutputFormat.CSV, args.output,
                         [f"source = {args.table}", f"columns = {jc}, {gc}"])
    else:
        sys.stdout.write(f"points = {len(pairs)}\n")
        sys.stdout.write(f"amplitude = {fit.amplitude:.17g}\n")
        sys.stdout.write(f"exponent = {fit.exponent:.17g}\n")
        sys.stdout.write(f"exponent_stderr = {fit.exponent_stderr:.17g}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddjj", description="Dissipation-driven Josephson junction solvers.")
    ap.add_argument("--threads", type=int, default=1, help="worker processes for sweeps (default 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "validate": "check a configuration and print its normalised form",
        "evolve": "time evolution from the configured initial condition",
        "steady": "steady states (and two-mode fixed points)",
        "sweep": "phase diagram and critical rates over (J, gamma)",
        "lindblad": "exact few-site master equation and quantum trajectories",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("config")
        if name != "validate":
            sp.add_argument("-o", "--output", help="output file (default: config output_path, else stdout)")
    sp = sub.add_parser("fit", help="power-law fit gamma = a J^b to a table")
    sp.add_argument("table")
    sp.add_argument("--j-column")
    sp.add_argument("--gamma-column")
    sp.add_argument("-o", "--output")
    return ap


_COMMANDS = {"validate": cmd_validate, "evolve": cmd_evolve, "steady": cmd_steady, "sweep": cmd_sweep,
             "lindblad": cmd_lindblad}


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        ap.print_usage(sys.stderr)
        sys.stderr.write("ddjj: error: --threads must be >= 1\n")
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(args)
        cfg = cio.load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except (cio.ConfigError, cio.OutputError, DomainError, ValueError, RuntimeError) as exc:
        sys.stderr.write(f"ddjj: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
