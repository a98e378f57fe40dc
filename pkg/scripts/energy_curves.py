#!/usr/bin/env python
"""Energy histories of the square bubble for several step sizes.

Writes ``energy_tau<tau>.csv`` per step size into ``--out`` with columns
``step,time,E_modified,E_theorem,dissipation_bound,mass``.  A run that hits
an SAV breakdown keeps the rows computed so far and reports the step.
"""
import argparse
import os

from chns import cli
from chns.assembly import spaces_for
from chns.config import parse_config
from chns.mesh import build_rect_mesh
from chns.scheme import SchemeBreakdown, advance, energy_report, initial_state


def history(nx, tau, n_steps):
    cfg = parse_config(f"preset = square\nnx = {nx}\nny = {nx}\ntau = {tau!r}\nT = {n_steps * tau!r}\n")
    S = spaces_for(build_rect_mesh(cfg.domain, nx, nx))
    phi0, u0, src = cli.problem_setup(cfg)
    st = initial_state(S, cfg.params, phi0, u0)
    rows = [(0, 0.0, energy_report(st, cfg.params))]
    try:
        for n in range(1, n_steps + 1):
            st, rep, _ = advance(st, cfg.params, src)
            rows.append((n, n * tau, rep))
    except SchemeBreakdown as exc:
        print(f"tau = {tau:g}: stopped at step {len(rows)}: {exc}")
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--nx", type=int, default=32)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--taus", default="1e-5,1e-4,1e-3")
    ap.add_argument("--out", default="energy_curves")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    for tau in (float(s) for s in args.taus.split(",")):
        rows = history(args.nx, tau, args.steps)
        path = os.path.join(args.out, f"energy_tau{tau:g}.csv")
        with open(path, "w") as fh:
            fh.write("step,time,E_modified,E_theorem,dissipation_bound,mass\n")
            for n, t, r in rows:
                fh.write(f"{n},{t!r},{r.E_modified!r},{r.E_theorem!r},{r.dissipation_bound!r},{r.mass!r}\n")
        first, last = rows[0][2], rows[-1][2]
        print(f"tau = {tau:g}: {len(rows) - 1} steps, E_modified {first.E_modified:.6e} -> "
              f"{last.E_modified:.6e}, written to {path}")


if __name__ == "__main__":
    main()
