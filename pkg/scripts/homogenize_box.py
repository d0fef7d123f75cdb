"""Effective tensor of the centered-box cell under refinement, with Richardson extrapolation."""

import argparse

import numpy as np

from dualpor.cell import build_geometry, effective_tensor


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--side", type=float, default=0.5)
    ap.add_argument("--n", default="16,32,64,128")
    ap.add_argument("--order", type=float, default=4 / 3, help="assumed convergence order")
    args = ap.parse_args()
    ns = [int(k) for k in args.n.split(",")]
    diag = []
    f = 2.0**args.order
    for n in ns:
        k, _, _ = effective_tensor(build_geometry("centered-box", n, 2, side=args.side))
        diag.append(k[0, 0])
        line = f"n={n:4d}  K11={k[0, 0]:.8f}  K22={k[1, 1]:.8f}  K12={k[0, 1]:+.1e}"
        if len(diag) > 1:
            line += f"  richardson={(f * diag[-1] - diag[-2]) / (f - 1):.8f}"
        if len(diag) > 2:
            line += f"  observed order={np.log2((diag[-3] - diag[-2]) / (diag[-2] - diag[-1])):.3f}"
        print(line)


if __name__ == "__main__":
    main()
