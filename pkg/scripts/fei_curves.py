"""FEI coefficient per step for every catalogue noise-scale function.

    python3 scripts/fei_curves.py --steps 100 --out fei.csv

Also prints, per function, the largest gap to the ODE curve.
"""

import argparse
import sys

import numpy as np

from ersde.cli import main as cli_main
from ersde.noise_scale import CATALOGUE_NAMES, catalogue, fei_curve
from ersde.schedules import edm_step_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--out", default="-")
    args = ap.parse_args()

    grid = edm_step_grid(args.steps)
    ode = np.array([v for _, v in fei_curve(catalogue("ode"), grid)])
    for name in CATALOGUE_NAMES[1:]:
        curve = np.array([v for _, v in fei_curve(catalogue(name), grid)])
        gap = curve - ode
        print(f"{name:>4}: max gap {gap.max():.4f}, min gap {gap.min():.2e}", file=sys.stderr)
    return cli_main(["fei", "--steps", str(args.steps), "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
