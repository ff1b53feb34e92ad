"""Deficit fits over dimensions and cutoff radii.

Prints the fitted exponent and constant for lambda = -1 (and the lambda = 0
control) for n = 4..8, and the ratio A / lambda, which should not depend on mu.
"""

import argparse

import numpy as np

from yamabelab.bubbles import deficit_expansion, deficit_expansion_4d
from yamabelab.errors import FitQualityError


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dims", type=int, nargs="+", default=[4, 5, 6, 7, 8])
    ap.add_argument("--mus", type=float, nargs="+", default=[1.0, 0.5])
    ap.add_argument("--levels", type=int, default=5, help="number of eps halvings from 0.1")
    return ap.parse_args()


def main():
    args = parse_args()
    eps = 0.1 / 2.0 ** np.arange(args.levels)
    print("n,mu,lambda,model,q,A,residual")
    for n in args.dims:
        for mu in args.mus:
            for lam in (-1.0, 0.0):
                try:
                    f = (deficit_expansion_4d(lam, mu, eps) if n == 4
                         else deficit_expansion(n, lam, mu, eps))
                except FitQualityError as exc:
                    print(f"{n},{mu!r},{lam!r},failed,,,{exc}")
                    continue
                print(f"{n},{mu!r},{lam!r},{f.model},{f.fitted_exponent!r},"
                      f"{f.fitted_constant!r},{f.residual!r}")


if __name__ == "__main__":
    main()
