"""Epsilon study for the centered-box cell; prints the L2 error table.

    python3 scripts/run_convergence.py --theta 2
"""

import argparse

from dualpor.cell import build_geometry
from dualpor.convergence import StudyConfig, run_study
from dualpor.petrophysics import reference_pair


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--theta", type=float, default=2.0)
    ap.add_argument("--epsilons", default="0.125,0.0625,0.03125")
    args = ap.parse_args()
    cfg = StudyConfig(epsilons=tuple(float(e) for e in args.epsilons.split(",")), theta=args.theta)
    geom = build_geometry("centered-box", 8, 2, side=0.5)
    print(f"{'epsilon':>10} {'err_fracture':>14} {'err_matrix':>14} {'seconds':>8}")
    for r in run_study(geom, reference_pair(), cfg):
        print(f"{r.epsilon:10.5f} {r.err_fracture:14.6e} {r.err_matrix:14.6e} {r.runtime_s:8.1f}")


if __name__ == "__main__":
    main()
