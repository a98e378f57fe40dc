#!/usr/bin/env python
"""Second-moment ratio Ixx/Iyy of the ellipse bubble at its snapshot times.

    python scripts/ellipse_anisotropy.py --nx 48      # about five minutes
"""
import argparse
import time

from chns import cli
from chns.assembly import spaces_for
from chns.config import parse_config
from chns.mesh import build_rect_mesh
from chns.scheme import advance, initial_state
from chns.verification import anisotropy


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--nx", type=int, default=48)
    ap.add_argument("--tau", type=float, default=None, help="override the preset step")
    args = ap.parse_args()
    text = f"preset = ellipse\nnx = {args.nx}\nny = {args.nx}\n"
    if args.tau is not None:
        text += f"tau = {args.tau!r}\n"
    cfg = parse_config(text)
    S = spaces_for(build_rect_mesh(cfg.domain, cfg.nx, cfg.ny))
    phi0, u0, src = cli.problem_setup(cfg)
    st = initial_state(S, cfg.params, phi0, u0)
    snaps = {round(t / cfg.params.tau): t for t in cfg.snapshot_times}
    t0 = time.time()
    print(f"{'time':>10}  {'Ixx/Iyy':>8}  wall")
    for n in range(cfg.n_steps + 1):
        if n in snaps:
            print(f"{snaps[n]:10.2e}  {anisotropy(st.phi, S):8.4f}  {time.time() - t0:.0f} s", flush=True)
        if n < cfg.n_steps:
            st, _, _ = advance(st, cfg.params, src)


if __name__ == "__main__":
    main()
