"""Worst-case ratios of the two Hoelder-type Lorentz inequalities on random
step functions (dyadic 8^3 grid), including non-conjugate second indices."""

import argparse

import numpy as np

from yamabelab.grid import Domain, GridFunction
from yamabelab.lorentz import INFINITY, LorentzExponents, grid_lorentz_norm

DS = [1.0, 1.5, 2.0, 3.0, 7.0, INFINITY]


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def field(dom, rng):
    v = rng.standard_normal(dom.size) * np.exp(rng.normal(0, 1.5, dom.size))
    v[rng.random(dom.size) < rng.uniform(0, 0.8)] = 0.0
    v[rng.integers(dom.size)] = 1.0
    return GridFunction(dom, v)


def main():
    args = parse_args()
    rng = np.random.default_rng(args.seed)
    dom = Domain.box(3, -0.5, 0.5, 0.125)
    vol = dom.interior_volumes
    worst1 = worst2 = 0.0
    n1 = n2 = 0
    while n1 < args.trials or n2 < args.trials:
        f, g = field(dom, rng), field(dom, rng)
        s = rng.uniform(1.05, 8)
        d1, d2 = rng.choice(DS, 2)
        if 1 / d1 + 1 / d2 >= 1 and n1 < args.trials:
            lhs = np.dot(np.abs(f.interior * g.interior), vol)
            rhs = (grid_lorentz_norm(f, LorentzExponents(s, d1))
                   * grid_lorentz_norm(g, LorentzExponents(s / (s - 1), d2)))
            worst1, n1 = max(worst1, lhs / rhs), n1 + 1
        q, r = rng.uniform(1, 12, 2)
        e1, e2, e3 = rng.choice(DS, 3)
        if 1 / q + 1 / r < 1 and 1 / e2 + 1 / e3 >= 1 / e1 and n2 < args.trials:
            s = 1 / (1 / q + 1 / r)
            lhs = grid_lorentz_norm(GridFunction(dom, f.values * g.values), LorentzExponents(s, e1))
            rhs = (s / (s - 1) * grid_lorentz_norm(f, LorentzExponents(q, e2))
                   * grid_lorentz_norm(g, LorentzExponents(r, e3)))
            worst2, n2 = max(worst2, lhs / rhs), n2 + 1
    print(f"integral inequality: worst lhs/rhs = {worst1:.4f} over {n1} pairs")
    print(f"product inequality:  worst lhs/rhs = {worst2:.4f} over {n2} pairs")


if __name__ == "__main__":
    main()
