"""Distribution functions, decreasing rearrangements and Lorentz norms of
grid data, plus the bounded / small-tail splitting of a potential.

All Lorentz computations go through :class:`StepProfile`, the decreasing
rearrangement of a grid function stored as a step function. For step data
the defining integrals are evaluated exactly, step by step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import DomainError, NoConvergenceError, StructuralError, UnsupportedExponentError

if TYPE_CHECKING:
    from .grid import GridFunction

INFINITY = math.inf


@dataclass(frozen=True)
class LorentzExponents:
    p: float
    d: float = INFINITY

    def __post_init__(self):
        if not (1.0 <= self.p < INFINITY):
            raise UnsupportedExponentError(f"Lorentz exponent p must lie in [1, inf), got {self.p}")
        if not self.d >= 1.0:
            raise UnsupportedExponentError(f"Lorentz exponent d must be >= 1 or inf, got {self.d}")


@dataclass(frozen=True, eq=False)
class StepProfile:
    """g*(t) = values[i] on [t_{i-1}, t_i), t_i = cumsum(widths); 0 beyond."""

    values: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float)
        w = np.asarray(self.widths, float)
        if v.shape != w.shape or v.ndim != 1:
            raise StructuralError("values and widths must be 1-d arrays of equal length")
        if np.any(w <= 0) or np.any(v < 0):
            raise StructuralError("widths must be positive and values nonnegative")
        if np.any(np.diff(v) >= 0):
            raise StructuralError("step values must be strictly decreasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "widths", w)

    @classmethod
    def from_samples(cls, values, weights) -> "StepProfile":
        """Rearrange |values| with cell measures ``weights``; zero values dropped
        and equal values merged."""
        a = np.abs(np.asarray(values, float)).ravel()
        w = np.broadcast_to(np.asarray(weights, float), a.shape).ravel()
        keep = a > 0
        a, w = a[keep], w[keep]
        if a.size == 0:
            return cls(np.empty(0), np.empty(0))
        order = np.argsort(-a, kind="stable")
        a, w = a[order], w[order]
        starts = np.flatnonzero(np.r_[True, a[1:] != a[:-1]])
        return cls(a[starts], np.add.reduceat(w, starts))

    @property
    def breakpoints(self) -> np.ndarray:
        """Right endpoints t_i."""
        return np.cumsum(self.widths)

    @property
    def total_measure(self) -> float:
        return float(self.widths.sum())

    def __len__(self) -> int:
        return self.values.size

    def __call__(self, t):
        """Evaluate g*(t) (right-continuous steps)."""
        t = np.asarray(t, float)
        idx = np.searchsorted(self.breakpoints, t, side="right")
        vals = np.r_[self.values, 0.0]
        return vals[np.minimum(idx, self.values.size)]

    def measure_above(self, sigma: float) -> float:
        """meas{t : g*(t) > sigma}."""
        return float(self.widths[self.values > sigma].sum())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "width"])
        for v, wd in zip(self.values, self.widths):
            w.writerow([repr(float(v)), repr(float(wd))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "StepProfile":
        text = Path(source).read_text() if isinstance(source, Path) else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["value", "width"]:
            raise StructuralError("step profile CSV must start with header 'value,width'")
        data = [(float(r[0]), float(r[1])) for r in rows[1:] if r]
        if not data:
            return cls(np.empty(0), np.empty(0))
        v, w = zip(*data)
        return cls(np.array(v), np.array(w))


def _cells(f: "GridFunction") -> tuple[np.ndarray, np.ndarray]:
    dom = f.domain
    return f.interior, dom.interior_volumes


def distribution_function(f: "GridFunction", sigma: float) -> float:
    """meas{x : |f(x)| > sigma}."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    vals, vol = _cells(f)
    return float(vol[np.abs(vals) > sigma].sum())


def decreasing_rearrangement(f: "GridFunction") -> StepProfile:
    vals, vol = _cells(f)
    return StepProfile.from_samples(vals, vol)


def lorentz_norm(profile: StepProfile, exps: LorentzExponents) -> float:
    """||g||_{L^{p,d}} computed exactly on the steps of g*.

    d < inf:  (sum_i v_i^d (p/d) (t_i^{d/p} - t_{i-1}^{d/p}))^{1/d}
    d = inf:  max_i v_i t_i^{1/p}
    """
    if len(profile) == 0:
        return 0.0
    p, d = exps.p, exps.d
    t = profile.breakpoints
    v = profile.values
    if d == INFINITY:
        return float(np.max(v * t ** (1.0 / p)))
    # scale out the largest value so v^d cannot overflow for large d
    vmax = v[0]
    incr = _power_increments(t, profile.widths, d / p)
    total = float(np.sum((v / vmax) ** d * incr)) * (p / d)
    return vmax * total ** (1.0 / d)


def _power_increments(t: np.ndarray, widths: np.ndarray, q: float) -> np.ndarray:
    """t_i^q - t_{i-1}^q without cancellation when widths << t."""
    prev = np.r_[0.0, t[:-1]]
    out = np.empty_like(t)
    out[0] = t[0] ** q
    pp = prev[1:]
    out[1:] = pp**q * np.expm1(q * np.log1p(widths[1:] / pp))
    return out


def grid_lorentz_norm(f: "GridFunction", exps: LorentzExponents) -> float:
    return lorentz_norm(decreasing_rearrangement(f), exps)


def weighted_l2_norm(f: "GridFunction", a) -> float:
    """(sum |a| f^2 vol)^{1/2}; ``a`` is a PotentialSpec or a GridFunction."""
    dom = f.domain
    if hasattr(a, "domain"):
        if not a.domain.same_grid(dom):
            raise StructuralError("potential and function live on different grids")
        av = a.interior
    else:
        av = a.sample(dom)[dom.unknowns]
    return math.sqrt(float(np.dot(np.abs(av) * f.interior**2, dom.interior_volumes)))


@dataclass(frozen=True, eq=False)
class SplitResult:
    inner_mask: np.ndarray
    outer_mask: np.ndarray
    bound_k: int
    tail_norm: float
    history: tuple[tuple[int, float], ...] = ()

    @property
    def inner_count(self) -> int:
        return int(self.inner_mask.sum())

    @property
    def outer_count(self) -> int:
        return int(self.outer_mask.sum())


def split_domain(a: "GridFunction", exps: LorentzExponents, tol: float,
                 max_doublings: int = 64) -> SplitResult:
    """Split Omega into Omega_k = {|a| < k, |x| < k} and its complement.

    k runs through 1, 2, 4, ... and the first k with
    ||a chi_{Omega \\ Omega_k}||_{L^{p,d}} < tol is returned. Masks are flat
    boolean arrays over the domain's cells.
    """
    if exps.d == INFINITY:
        raise UnsupportedExponentError(
            "splitting needs d < inf; a potential in L^{p,inf} only need not have small tails")
    if not tol > 0:
        raise DomainError("tol must be positive")
    dom = a.domain
    inside = dom.unknown_mask
    absa = np.abs(a.values.ravel())
    radii = dom.cell_radii
    vol = dom.volumes
    history = []
    tail = math.inf
    k = 1
    for _ in range(max_doublings):
        inner = inside & (absa < k) & (radii < k)
        outer = inside & ~inner
        tail = lorentz_norm(StepProfile.from_samples(absa[outer], vol[outer]), exps)
        history.append((k, tail))
        if tail < tol:
            return SplitResult(inner, outer, k, tail, tuple(history))
        k *= 2
    raise NoConvergenceError(
        f"split_domain: tail norm {tail:.6g} still >= tol={tol:g} at k={k // 2}", tail)
