"""Command-line driver: ``chns run`` and ``chns converge``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .assembly import spaces_for
from .config import ConfigError, RunConfig, compile_expression, help_text, parse_config
from .linalg import SolverError
from .mesh import build_rect_mesh
from .scheme import SchemeBreakdown, Sources, advance, energy_report, initial_state
from .verification import (ConvergenceAborted, ExactSolution, RateTable, convergence_study,
                           manufactured_sources)
from .vtk import atomic_write_text, write_vtk

log = logging.getLogger("chns")

CSV_HEADER = "step,time,E_modified,E_theorem,dissipation_bound,mass,rho,sav_ratio"
RATE_HEADER = "h,norm,error,rate"


def _fmt(v: float) -> str:
    return repr(float(v))


def ellipse_phi0(x, y):
    return np.tanh(x ** 2 / 0.01 + y ** 2 / 0.0225 - 1.0)


def square_phi0(x, y):
    inside = (x >= 0.25) & (x <= 0.75) & (y >= 0.25) & (y <= 0.75)
    return np.where(inside, 1.0, -1.0)


def problem_setup(cfg: RunConfig):
    """Initial data and sources of a configuration."""
    u0 = None
    sources = None
    if cfg.initial_condition == "manufactured":
        ex = ExactSolution(cfg.params)
        phi0 = lambda x, y: ex.phi(0.0, x, y)  # noqa: E731
        u0 = lambda x, y: tuple(ex.u(0.0, x, y))  # noqa: E731
        sources = manufactured_sources(cfg.params)
    elif cfg.initial_condition == "ellipse":
        phi0 = ellipse_phi0
    elif cfg.initial_condition == "square":
        phi0 = square_phi0
    else:
        phi0 = compile_expression(cfg.initial_condition[len("expr:"):])
    if cfg.body_force is not None:
        fx, fy = cfg.body_force
        base_u = sources.u if sources is not None else None

        def f_u(t, x, y):
            gx, gy = (0.0, 0.0) if base_u is None else base_u(t, x, y)
            return gx + fx * np.ones_like(x), gy + fy * np.ones_like(x)

        sources = Sources(phi=None if sources is None else sources.phi, u=f_u)
    return phi0, u0, sources


def _snapshot_steps(cfg: RunConfig, n_steps: int) -> dict:
    steps = {}
    for k, t in enumerate(cfg.snapshot_times):
        n = min(n_steps, int(round(t / cfg.params.tau)))
        steps.setdefault(n, []).append(k)
    return steps


def _csv_row(step: int, t: float, r) -> str:
    vals = (t, r.E_modified, r.E_theorem, r.dissipation_bound, r.mass, r.rho, r.sav_ratio)
    return ",".join([str(step)] + [_fmt(v) for v in vals])


def cmd_run(cfg: RunConfig) -> int:
    """Run a simulation, writing ``energy.csv`` and VTK snapshots to ``output_dir``."""
    out = cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write-test")
        with open(probe, "w") as fh:
            fh.write("")
        os.unlink(probe)
    except OSError as exc:
        print(f"error: output directory {out!r} is not writable: {exc}", file=sys.stderr)
        return 1

    mesh = build_rect_mesh(cfg.domain, cfg.nx, cfg.ny)
    S = spaces_for(mesh)
    params = cfg.params
    phi0, u0, sources = problem_setup(cfg)
    n_steps = cfg.n_steps
    snaps = _snapshot_steps(cfg, n_steps)

    def snapshot(state):
        for k in snaps.get(state.step, ()):
            path = os.path.join(out, f"snapshot_{k:02d}.vtk")
            write_vtk(mesh, [("phi", state.phi), ("mu", state.mu), ("p", state.p),
                             ("u", state.u)], path,
                      title=f"chns step {state.step} time {_fmt(state.t)}")

    csv_path = os.path.join(out, "energy.csv")
    part = csv_path + ".part"
    status = 0
    with open(part, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        step = 0
        try:
            state = initial_state(S, params, phi0, u0)
            fh.write(_csv_row(0, state.t, energy_report(state, params)) + "\n")
            snapshot(state)
            log.info("running %d steps of tau = %g on %d x %d cells", n_steps, params.tau,
                     cfg.nx, cfg.ny)
            for n in range(1, n_steps + 1):
                step = n
                state, report, _ = advance(state, params, sources)
                state = replace(state, t=n * params.tau)  # no accumulated drift
                if n % cfg.csv_stride == 0 or n == n_steps:
                    fh.write(_csv_row(n, state.t, report) + "\n")
                snapshot(state)
                if n % max(1, n_steps // 20) == 0:
                    log.info("step %d / %d  E_modified = %.6e", n, n_steps, report.E_modified)
        except (SolverError, SchemeBreakdown) as exc:
            print(f"error: step {step} failed: {exc}", file=sys.stderr)
            status = 2
    os.replace(part, csv_path)
    return status


def rate_csv(table: RateTable) -> str:
    lines = [RATE_HEADER]
    for h, norm, e, r in table.rows():
        lines.append(f"{_fmt(h)},{norm},{_fmt(e)},{'' if r is None else _fmt(r)}")
    return "\n".join(lines) + "\n"


def cmd_converge(cfg: RunConfig, h_list: Sequence[float]) -> int:
    """Manufactured-solution study; prints the table and writes ``rates.csv``."""
    if cfg.initial_condition != "manufactured":
        print("error: converge needs preset = manufactured", file=sys.stderr)
        return 1
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {cfg.output_dir!r}: {exc}", file=sys.stderr)
        return 1

    def progress(h, errs):
        log.info("h = 1/%d done (%d steps)", round(1 / h), errs["n_steps"])

    status = 0
    try:
        table = convergence_study(h_list, cfg.params, cfg.T, progress=progress)
    except ConvergenceAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        table, status = exc.table, 2
    print(table.format())
    atomic_write_text(os.path.join(cfg.output_dir, "rates.csv"), rate_csv(table))
    return status


def parse_h_list(s: str) -> list:
    try:
        ns = [int(p) for p in s.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not ns or any(n < 1 for n in ns):
        raise argparse.ArgumentTypeError("mesh counts must be positive")
    return ns


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chns",
        description="Finite element Cahn-Hilliard-Navier-Stokes solver.",
        epilog=help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="time-step a configuration", epilog=help_text(),
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("config", help="configuration file")
    conv = sub.add_parser("converge", help="manufactured-solution convergence study",
                          epilog=help_text(),
                          formatter_class=argparse.RawDescriptionHelpFormatter)
    conv.add_argument("config", help="configuration file (preset = manufactured)")
    conv.add_argument("--h-list", type=parse_h_list, default=[4, 8, 16, 32],
                      help="comma-separated values of 1/h (default: 4,8,16,32)")
    conv.add_argument("--fine", action="store_true", help="append 1/h = 64")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 1
    if args.command == "run":
        return cmd_run(cfg)
    ns = list(args.h_list)
    if args.fine and 64 not in ns:
        ns.append(64)
    return cmd_converge(cfg, [1.0 / n for n in ns])


if __name__ == "__main__":
    sys.exit(main())
