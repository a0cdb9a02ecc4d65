"""Cubic-update root versus the bracket value x for several lambda, both root branches.

    python scripts/root_scan.py --out roots_scan.csv

Columns: lambda, x, selected root (closest to E_old = 0, the one the optimizer uses),
largest-magnitude root. Coefficients come from the spectral radii of the z_full coupling
operators, as in ``rotcontrol scan-roots``.
"""
import argparse
import csv
import sys

import numpy as np

from rotcontrol.cli import coupling_magnitudes, largest_branch_scan
from rotcontrol.optim import root_sensitivity_scan


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--lambdas", default="1e2,1e4,1e7")
    p.add_argument("--n-x", type=int, default=401)
    p.add_argument("--j-max", type=int, default=15)
    p.add_argument("--out", default="roots_scan.csv")
    a = p.parse_args(argv)
    lams = [float(v) for v in a.lambdas.split(",")]
    xs = np.linspace(-1.0, 1.0, a.n_x)
    mags = coupling_magnitudes("z_full", a.j_max)
    im0, im1, im2 = (2.0 * k * mags[k] for k in (1, 2, 3))
    sel = root_sensitivity_scan(lams, xs, im2, im1, im0)
    big = largest_branch_scan(lams, xs, im2, im1, im0)
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "x", "root_selected", "root_largest"])
        for (lam, x, r1), (_, _, r2) in zip(sel, big):
            w.writerow([f"{lam:.15g}", f"{x:.15g}", f"{r1:.15g}", f"{r2:.15g}"])
    for name, rows in (("selected", sel), ("largest", big)):
        roots = np.array([r[2] for r in rows]).reshape(len(lams), xs.size)
        slope = np.max(np.abs(np.diff(roots, axis=1) / np.diff(xs)), axis=1)
        print(f"{name:9s} " + "  ".join(f"lambda={l:g}: {s:.4g}" for l, s in zip(lams, slope)))
    print(f"-> {a.out}")


if __name__ == "__main__":
    sys.exit(main())
