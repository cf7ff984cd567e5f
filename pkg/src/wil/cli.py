"""Command-line front end: ``wil <subcommand> --config run.cfg [--out DIR] [--seed N] [--threads N]``.

Every subcommand except ``compare`` writes its CSV artifacts and a
``run.manifest`` into the output directory. The manifest's first line is the
timestamp; everything after it is a function of the configuration and seed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, MissingConfig, load_config
from .evolution import (EvolutionError, EvolutionOperator, age_cap, convergence_check, evolve_until,
                        grid_error_bound, on_grid, pilot_horizon as evolution_pilot, point_start)
from .grids import GridMismatchError, l1_distance, marginal_status, read_csv, write_csv_1d, write_csv_2d
from .model import (FlowIntegrationError, SamplingError, hazard_from_density, horizon, support_interval,
                    survival, validate_assumptions)
from .presets import build_preset, density_mode
from .simulator import occupation_histogram, pilot_horizon, simulate_ensemble, simulate_jumps
from .stationary import (TransferError, build_joint_stationary, drift_report, solve_stationary,
                         to_state_coordinates)

log = logging.getLogger("wil")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_MISMATCH = 3
EXIT_USAGE = 64
EXIT_CONFIG = 65
EXIT_MISSING = 66

COMMANDS = ("validate", "simulate", "stationary", "evolve", "sweep-check", "hazard-table", "compare")
NUMERIC_ERRORS = (EvolutionError, TransferError, FlowIntegrationError, SamplingError, ArithmeticError)


class UsageError(Exception):
    pass


class NumericFailure(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    p = _Parser(prog="wil", description="Waning-immunity renewal model toolkit.")
    p.add_argument("--version", action="version", version=f"wil {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "compare":
            sp.add_argument("first", help="density CSV")
            sp.add_argument("second", help="density CSV on the same grid")
            continue
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", help="output directory (default: $WIL_OUT, then output.dir, then ./wil_out)")
        sp.add_argument("--seed", type=_u64, help="override sim.seed")
        sp.add_argument("--threads", type=_positive, default=os.cpu_count() or 1, help="worker cap")
    return p


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


# ---------------------------------------------------------------- shared plumbing


class Run:
    """Configuration, model and output location of one invocation."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config)
        self.seed = args.seed if args.seed is not None else self.cfg["sim.seed"]
        self.threads = args.threads
        self.model = build_preset(self.cfg.preset_params())
        out = args.out or os.environ.get("WIL_OUT") or self.cfg["output.dir"] or "wil_out"
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.notes = []

    def path(self, name):
        return self.out / name

    @property
    def start_status(self):
        x0 = self.cfg["sim.x0"]
        return float(self.model.G(self.model.domain_floor)) if x0 is None else float(x0)

    def initial_note(self):
        if self.cfg["sim.x0"] is None:
            return f"point mass at post-jump status G(floor) = {_num(self.start_status)}, age 0 (default convention)"
        return f"point mass at post-jump status {_num(self.start_status)}, age 0 (sim.x0)"

    def x_min(self):
        v = self.cfg["grid.status_min"]
        return support_interval(self.model).x_min if v is None else v

    def status_cap(self, x_min):
        v = self.cfg["grid.status_cap"]
        if v is not None:
            return v
        sup = support_interval(self.model)
        if sup.unbounded or sup.x_max <= max(x_min, self.model.domain_floor):
            return 4.0 * max(x_min, self.start_status, 1.0)
        return sup.x_max * 1.05

    def write_manifest(self, command, extra=()):
        lines = [
            f"timestamp = {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
            f"command = {command}",
            f"config_path = {self.cfg.path}",
            f"config_sha256 = {self.cfg.digest}",
            f"seed = {self.seed}",
            f"version = {version_string()}",
            f"initial_condition = {self.initial_note()}",
        ]
        lines += [f"{k} = {v}" for k, v in extra]
        lines += [f"note = {n}" for n in self.notes]
        lines += [f"param.{k} = {_fmt(v)}" for k, v in sorted(self.cfg.values.items())]
        self.path("run.manifest").write_text("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return "auto" if v is None else (repr(v) if isinstance(v, float) else str(v))


def version_string():
    """``git describe`` of the source checkout when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _num(v):
    """Shortest round-trip text of a number, whatever its numpy type."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_text(path, pairs):
    path.write_text("".join(f"{k} = {v}\n" if isinstance(v, str) else f"{k} = {_num(v)}\n" for k, v in pairs))


# ---------------------------------------------------------------- subcommands


def cmd_validate(run):
    x_min = run.x_min()
    cap = run.status_cap(x_min)
    lo = run.cfg["grid.probe_min"]
    if lo is None:
        # a support collapsed onto the floor carries no information; probe from the start status
        lo = x_min if x_min > run.model.domain_floor else run.start_status
    hi = run.cfg["grid.probe_max"] if run.cfg["grid.probe_max"] is not None else cap
    probes = np.linspace(lo, hi, run.cfg["grid.probe_count"])
    report = validate_assumptions(run.model, probes)
    sup = support_interval(run.model)
    text = report.to_text() + (f"support_x_min = {_num(sup.x_min)}\nsupport_x_max = {_num(sup.x_max)}\n"
                               f"support_unbounded = {sup.unbounded}\nsupport_converged = {sup.converged}\n")
    run.path("assumptions.txt").write_text(text)
    sys.stdout.write(text)
    run.write_manifest("validate")
    if report.failures():
        log.error("assumption checks failed: %s", ", ".join(report.failures()))
        return EXIT_VALIDATION
    return EXIT_OK


def _hist_grids(run):
    x_min = run.x_min()
    cap = run.status_cap(x_min)
    floor = run.model.domain_floor
    x_edges = np.linspace(floor, cap, run.cfg["grid.hist_cells"] + 1)
    xb_edges = np.linspace(x_min, cap, run.cfg["grid.hist_cells"] + 1)
    a_top = run.cfg["grid.age_cap"] or age_cap(run.model, xb_edges)
    a_edges = np.linspace(0.0, a_top, run.cfg["grid.hist_age_cells"] + 1)
    return x_edges, xb_edges, a_edges


def cmd_simulate(run):
    cfg = run.cfg
    x_edges, xb_edges, a_edges = _hist_grids(run)
    stamps = cfg["sim.stamps"] or (cfg["sim.horizon"],)
    ens = simulate_ensemble(run.model, cfg["sim.n"], stamps, run.seed, x_edges, xb_edges, a_edges,
                            x0=run.start_status, threads=run.threads)
    for k, t in enumerate(ens.stamps):
        write_csv_1d(ens.xi[k], run.path(f"xi_{k:03d}.csv"))
        write_csv_2d(ens.eta[k], run.path(f"eta_{k:03d}.csv"))
        write_csv_2d(ens.zeta[k], run.path(f"zeta_{k:03d}.csv"))
        write_csv_2d(to_state_coordinates(run.model, ens.eta[k], x_edges), run.path(f"eta_pushed_{k:03d}.csv"))
    rows = ["stamp,t,mean_events\n"] + [f"{k},{_num(t)},{_num(e)}\n"
                                         for k, (t, e) in enumerate(zip(ens.stamps, ens.mean_events))]
    run.path("stamps.csv").write_text("".join(rows))
    extra = [("trajectories", cfg["sim.n"]), ("stamps", len(stamps))]
    if cfg["sim.jumps"] > 0:
        traj = simulate_jumps(run.model, run.start_status, cfg["sim.jumps"], run.seed)
        occ = occupation_histogram(traj, x_edges, run.model)
        write_csv_1d(occ, run.path("occupation.csv"))
        extra.append(("occupation_jumps", cfg["sim.jumps"]))
    run.write_manifest("simulate", extra)
    return EXIT_OK


def _solve(run, n_cells=None):
    cfg = run.cfg
    x_min = run.x_min()
    sol = solve_stationary(run.model, n_cells=n_cells or cfg["grid.status_cells"], x_min=x_min,
                           cap=cfg["grid.status_cap"], overflow_tol=cfg["solver.overflow_tol"], tol=cfg["solver.tol"],
                           max_iter=cfg["solver.max_iter"], nodes=cfg["solver.nodes"], threads=run.threads)
    pw = sol.power
    if not pw.converged:
        raise NumericFailure(f"power iteration stopped at residual {pw.residual:g} after {pw.iterations} iterations")
    if pw.overflow >= cfg["solver.overflow_tol"]:
        raise NumericFailure(f"mass above the status cap is {pw.overflow:g}")
    return sol


def _age_edges(run, x_edges):
    a_top = run.cfg["grid.age_cap"] or age_cap(run.model, x_edges)
    return np.linspace(0.0, a_top, run.cfg["grid.age_cells"] + 1)


def cmd_stationary(run):
    sol = _solve(run)
    h = sol.h
    a_edges = _age_edges(run, h.edges)
    f = build_joint_stationary(run.model, h, a_edges, nodes=run.cfg["solver.nodes"])
    # state-coordinate densities live on the histogram grids of ``simulate`` so the two compare directly
    x_edges, _, hist_a = _hist_grids(run)
    f_hist = build_joint_stationary(run.model, h, hist_a, nodes=run.cfg["solver.nodes"])
    g = to_state_coordinates(run.model, f_hist, x_edges)
    write_csv_1d(h, run.path("h_star.csv"))
    write_csv_2d(f, run.path("f_star.csv"))
    write_csv_2d(g, run.path("g_star.csv"))
    write_csv_1d(marginal_status(g), run.path("g_tilde.csv"))
    pw = sol.power
    _write_text(run.path("solver.txt"), [
        ("x_min", sol.x_min), ("cap", sol.cap), ("cells", h.mass.size), ("residual", pw.residual),
        ("iterations", pw.iterations), ("converged", str(pw.converged)), ("lazy", str(pw.lazy)),
        ("overflow", pw.overflow), ("interior_positive", str(pw.interior_positive)),
        ("row_sum_error", float(np.max(np.abs(sol.transfer.row_sums() - 1.0)))),
        ("normalizer", f.normalizer)])
    rep = drift_report(run.model)
    run.path("drift.txt").write_text(rep.to_text())
    if rep.TV is not None:
        rows = ["x,TV\n"] + [f"{_num(x)},{_num(v)}\n" for x, v in zip(rep.probes, rep.TV)]
        run.path("drift_probes.csv").write_text("".join(rows))
    run.write_manifest("stationary", [("caps_tried", ";".join(f"{_num(c)}:{_num(o)}" for c, o in sol.caps_tried))])
    return EXIT_OK


def cmd_evolve(run):
    sol = _solve(run)
    a_edges = _age_edges(run, sol.h.edges)
    f = build_joint_stationary(run.model, sol.h, a_edges, nodes=run.cfg["solver.nodes"])
    op = EvolutionOperator(run.model, sol.h.edges, a_edges, nodes=run.cfg["solver.nodes"])
    f_grid = on_grid(f, op)
    start = run.cfg["evolve.start"]
    if start == "point":
        u0 = point_start(op.x_edges, a_edges, max(run.start_status, sol.x_min))
    else:
        u0 = f_grid
        run.notes.append("evolution starts at the stationary density")
    t_end = run.cfg["evolve.t_end"]
    if t_end is None:
        t_end = evolution_pilot(run.model, f, max(run.start_status, sol.x_min))
        run.notes.append(f"run horizon {_num(t_end)} from the coarse-grid pilot")
    series = evolve_until(run.model, u0, t_end, operator=op)
    table = convergence_check(series, f_grid)
    picks = np.unique(np.linspace(0, len(series) - 1, run.cfg["evolve.stamps"]).round().astype(int))
    for k, j in enumerate(picks):
        write_csv_2d(series[j].u, run.path(f"u_{k:03d}.csv"))
    rows = ["step,t,l1_to_stationary\n"] + [f"{s.steps},{_num(t)},{_num(d)}\n"
                                            for s, t, d in zip(series, table.times, table.distances)]
    run.path("convergence.csv").write_text("".join(rows))
    # refinement estimate of the discretization error of f_*
    fine_sol = solve_stationary(run.model, n_cells=2 * sol.h.mass.size, x_min=sol.x_min, cap=sol.cap,
                                overflow_tol=run.cfg["solver.overflow_tol"], tol=run.cfg["solver.tol"],
                                max_iter=run.cfg["solver.max_iter"], nodes=run.cfg["solver.nodes"],
                                threads=run.threads)
    fine = build_joint_stationary(run.model, fine_sol.h, np.linspace(0.0, a_edges[-1], 2 * a_edges.size - 1))
    bound = grid_error_bound(f, fine)
    pairs = [("t_end", float(table.times[-1])), ("dt", op.dt), ("steps", len(series) - 1),
             ("final_distance", table.final), ("max_increase", table.max_increase),
             ("mass_defect", series[-1].defect), ("grid_error_bound", bound)]
    pairs += [(f"first_below_{_num(thr)}", v if v is not None else "never") for thr, v in table.first_crossing.items()]
    _write_text(run.path("evolve.txt"), pairs)
    run.write_manifest("evolve", [("start", start)])
    return EXIT_OK


def cmd_sweep_check(run):
    cfg = run.cfg
    rep = drift_report(run.model, gamma=cfg["sweep.gamma"], b=cfg["sweep.b"], c=cfg["sweep.c"])
    run.path("sweep.txt").write_text(rep.to_text())
    x0 = run.start_status
    R = cfg["sweep.R"] if cfg["sweep.R"] is not None else 10.0 * max(x0, 1.0)
    t, series = pilot_horizon(run.model, R, cfg["sweep.target"], cfg["sweep.n"], run.seed, x0=x0)
    ts = np.linspace(0.0, t, series.size)
    rows = ["t,region_mass\n"] + [f"{_num(a)},{_num(m)}\n" for a, m in zip(ts, series)]
    run.path("region_mass.csv").write_text("".join(rows))
    _write_text(run.path("region.txt"), [("R", R), ("target", cfg["sweep.target"]), ("pilot_horizon", t),
                                         ("final_mass", float(series[-1]))])
    run.write_manifest("sweep-check", [("region_R", repr(R))])
    return EXIT_OK


def cmd_hazard_table(run):
    cfg = run.cfg
    x_b = cfg["hazard.x_b"] if cfg["hazard.x_b"] is not None else run.start_status
    a_max = cfg["hazard.a_max"] if cfg["hazard.a_max"] is not None else horizon(run.model, x_b)
    a_peak, q_peak = density_mode(run.model, x_b)
    ages = np.linspace(0.0, a_max, cfg["hazard.points"])
    if 0.0 < a_peak < a_max:
        ages = np.unique(np.append(ages, a_peak))
    q = np.asarray(run.model.q(x_b, ages), dtype=float)
    phi = np.asarray(survival(run.model, x_b)(ages), dtype=float)
    p = np.asarray(hazard_from_density(run.model, x_b)(ages), dtype=float)
    rows = ["a,q,p,Phi\n"] + [f"{_num(a)},{_num(qq)},{_num(pp)},{_num(ff)}\n" for a, qq, pp, ff in zip(ages, q, p, phi)]
    run.path("hazard_table.csv").write_text("".join(rows))
    _write_text(run.path("hazard_peak.txt"), [("x_b", x_b), ("peak_age", a_peak), ("peak_density", q_peak)])
    run.write_manifest("hazard-table", [("x_b", repr(x_b))])
    return EXIT_OK


def cmd_compare(args):
    try:
        f, g = read_csv(Path(args.first)), read_csv(Path(args.second))
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except ValueError as exc:
        log.error("unreadable density CSV: %s", exc)
        return EXIT_CONFIG
    try:
        d = l1_distance(f, g)
    except GridMismatchError as exc:
        log.error("grid mismatch: %s", exc)
        return EXIT_MISMATCH
    print(f"l1 = {_num(d)}")
    return EXIT_OK


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "evolve": cmd_evolve,
    "sweep-check": cmd_sweep_check,
    "hazard-table": cmd_hazard_table,
}


def run(argv=None):
    """Parse ``argv``, execute the subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_help(), file=sys.stderr)
        return EXIT_USAGE
    if args.command == "compare":
        return cmd_compare(args)
    try:
        r = Run(args)
        return HANDLERS[args.command](r)
    except MissingConfig as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except ConfigError as exc:
        log.error("malformed config: %s", exc)
        return EXIT_CONFIG
    except (NumericFailure, *NUMERIC_ERRORS) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        # invalid preset parameters surface here from the model builders
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG


def main():
    logging.basicConfig(level=os.environ.get("WIL_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
