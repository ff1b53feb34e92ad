"""Potentials a(x) and their discretization on a Domain.

In radial mode potentials are cell averages over each node's shell (exact
for wells and for |x|^-2, which keeps the Hardy potential finite at the
origin). In Cartesian mode they are sampled at cell centres.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, PreconditionError, StructuralError
from .grid import Domain, GridFunction, ball_volume
from .lorentz import LorentzExponents


@dataclass(frozen=True)
class Well:
    radius: float
    depth: float
    center: tuple[float, ...] | None = None  # None: origin


@dataclass(frozen=True)
class PotentialSpec:
    """kind is one of 'constant', 'well', 'hardy', 'sampled'.

    ``well`` holds one or more wells (indicator functions times depth, summed).
    ``hardy`` is a(x) = -coupling * |x|^-2. ``floor`` applies max(a, floor)
    pointwise after sampling; ``cap`` is the upper bound M that a must stay
    strictly below (checked, not clipped).
    """

    kind: str
    value: float = 0.0
    wells: tuple[Well, ...] = ()
    coupling: float = 0.0
    samples: GridFunction | None = field(default=None, compare=False, repr=False)
    exponents: LorentzExponents | None = None
    cap: float | None = None
    floor: float | None = None

    @classmethod
    def constant(cls, value: float, **kw) -> "PotentialSpec":
        return cls("constant", value=float(value), **kw)

    @classmethod
    def well(cls, radius: float, depth: float, center=None, **kw) -> "PotentialSpec":
        if depth >= 0:
            raise DomainError("well depth must be negative")
        c = None if center is None else tuple(float(x) for x in center)
        return cls("well", wells=(Well(float(radius), float(depth), c),), **kw)

    @classmethod
    def multi_well(cls, wells, **kw) -> "PotentialSpec":
        return cls("well", wells=tuple(wells), **kw)

    @classmethod
    def hardy(cls, coupling: float, **kw) -> "PotentialSpec":
        return cls("hardy", coupling=float(coupling), **kw)

    @classmethod
    def sampled(cls, samples: GridFunction, **kw) -> "PotentialSpec":
        return cls("sampled", samples=samples, **kw)

    def with_floor(self, floor: float) -> "PotentialSpec":
        if self.floor is not None:
            floor = max(floor, self.floor)
        return replace(self, floor=float(floor))

    def sample(self, domain: Domain) -> np.ndarray:
        """Flat array of potential values on every cell of ``domain``."""
        vals = _raw_values(self, domain)
        if self.floor is not None:
            vals = np.maximum(vals, self.floor)
        if self.cap is not None:
            inside = domain.unknown_mask
            if np.any(vals[inside] >= self.cap):
                raise PreconditionError(
                    f"potential reaches {vals[inside].max():.6g}, not below cap M={self.cap:g}")
        return vals

    def on(self, domain: Domain) -> GridFunction:
        return GridFunction(domain, self.sample(domain))


def _raw_values(a: PotentialSpec, dom: Domain) -> np.ndarray:
    if a.kind == "constant":
        return np.full(dom.size, a.value)
    if a.kind == "sampled":
        if a.samples is None or not a.samples.domain.same_grid(dom):
            raise StructuralError("sampled potential lives on a different grid")
        return a.samples.values.ravel().copy()
    if a.kind == "well":
        out = np.zeros(dom.size)
        for w in a.wells:
            out += w.depth * _ball_fraction(dom, w.radius, w.center)
        return out
    if a.kind == "hardy":
        return -a.coupling * _inverse_square(dom)
    raise StructuralError(f"unknown potential kind {a.kind!r}")


def _ball_fraction(dom: Domain, radius: float, center) -> np.ndarray:
    """Fraction of each cell inside B_radius(center)."""
    if dom.mode == "radial":
        if center is not None and any(c != 0 for c in center):
            raise StructuralError("radial meshes only carry wells centred at the origin")
        lo, hi = dom.shell_bounds
        n = dom.dim
        inner = np.clip(hi, None, radius) ** n - lo**n
        frac = np.where(hi > lo, np.clip(inner, 0, None) / np.where(hi > lo, hi**n - lo**n, 1.0), 0.0)
        return frac
    c = np.zeros(dom.dim) if center is None else np.asarray(center, float)
    pts = dom.cell_centers()
    d2 = np.einsum("ij,ij->i", pts - c, pts - c)
    return (d2 < radius**2).astype(float)


def _inverse_square(dom: Domain) -> np.ndarray:
    n = dom.dim
    if dom.mode == "radial":
        lo, hi = dom.shell_bounds
        # shell average of r^-2: (n/(n-2)) (hi^{n-2} - lo^{n-2}) / (hi^n - lo^n)
        num = n / (n - 2) * (hi ** (n - 2) - lo ** (n - 2))
        den = hi**n - lo**n
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    r = dom.cell_radii.copy()
    # a cell centred at the origin gets the average over the ball of equal volume
    rho = (dom.h**n / ball_volume(n)) ** (1.0 / n)
    with np.errstate(divide="ignore"):
        out = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0) ** 2, n / (n - 2) / rho**2)
    return out


def hardy_coercivity_bound(n: int) -> float:
    """Sharp Hardy constant ((n-2)/2)^2."""
    return ((n - 2) / 2.0) ** 2


def default_exponents(n: int) -> LorentzExponents:
    return LorentzExponents(n / 2.0, 1.0)


