"""Deterministic (phi = ODE) global error vs number of steps.

    python3 scripts/convergence.py --quadrature left

Compares the solver's terminal law with the exact flow of a 1-D Gaussian and
reports log-log slopes for orders 1-3.
"""

import argparse
import sys

from ersde.noise_scale import catalogue
from ersde.reference import convergence_study
from ersde.schedules import edm_to_vp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", default="10,20,40,80,160")
    ap.add_argument("--quadrature", choices=("midpoint", "left"), default="midpoint")
    ap.add_argument("--quad-points", type=int, default=100)
    ap.add_argument("--param", choices=("ve", "vp"), default="ve")
    args = ap.parse_args()

    steps = tuple(int(m) for m in args.steps.split(","))
    schedule = edm_to_vp() if args.param == "vp" else None
    print("order,M,error")
    for order in (1, 2, 3):
        res = convergence_study(order, steps=steps, phi=catalogue("ode"), param=args.param,
                                schedule=schedule, quad_points=args.quad_points,
                                quadrature=args.quadrature)
        for m, e in zip(res.steps, res.errors):
            print(f"{order},{m},{e:.17g}")
        print(f"order {order}: slope {res.slope:.3f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
