"""Talenti bubbles, their cutoffs, and quadrature of bubble energies.

The bubble of scale eps centred at x0 is

    u_eps(x) = [n(n-2) eps^2]^{(n-2)/4} / (eps^2 + |x - x0|^2)^{(n-2)/2},

optionally multiplied by eta((x - x0)/mu) where eta is a C^2 radial cutoff
equal to 1 on |y| <= 1 and 0 on |y| >= 2.

All integrals are one-dimensional radial integrals evaluated by adaptive
quadrature. Cutoff quantities are assembled as (whole-space value) plus a
correction supported on |x - x0| >= mu, so that the small differences
entering the eps-asymptotics are integrated directly instead of being
recovered by subtracting two nearly equal numbers.
"""

from __future__ import annotations

import csv
import io
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (DivergentIntegralError, DomainError, FitQualityError,
                     NoConvergenceError, UnsupportedError)
from .grid import critical_exponent, sphere_measure
from .quadrature import integrate, integrate_radial

QUAD_RTOL = 1e-10
OMEGA3 = sphere_measure(4)  # |S^3| = 2 pi^2


@dataclass(frozen=True)
class BubbleSpec:
    n: int
    eps: float
    center: tuple[float, ...] | None = None
    cutoff_radius: float | None = None

    def __post_init__(self):
        if self.n < 3:
            raise UnsupportedError(f"bubbles need n >= 3, got {self.n}")
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if self.cutoff_radius is not None and not self.cutoff_radius > 0:
            raise DomainError("cutoff radius must be positive")

    @property
    def support_radius(self) -> float:
        return math.inf if self.cutoff_radius is None else 2.0 * self.cutoff_radius


def cutoff(s):
    """eta(s) and eta'(s): quintic C^2 transition from 1 (s <= 1) to 0 (s >= 2)."""
    s = np.asarray(s, float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    eta = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    deta = -30.0 * t * t * (1.0 - t) ** 2
    return eta, deta


CUTOFF_GRAD_MAX = 30.0 / 16.0  # sup |eta'|, attained at s = 3/2


def _amplitude(n: int) -> float:
    return (n * (n - 2.0)) ** ((n - 2.0) / 4.0)


def talenti(r, n: int, eps: float):
    """u_eps(r) and du_eps/dr for the uncut, origin-centred bubble."""
    r = np.asarray(r, float)
    c = _amplitude(n) * eps ** ((n - 2.0) / 2.0)
    q = eps * eps + r * r
    u = c * q ** (-(n - 2.0) / 2.0)
    du = -(n - 2.0) * c * r * q ** (-n / 2.0)
    return u, du


def bubble_profile(spec: BubbleSpec, r):
    """Radial profile of u_eps * eta_mu (and its r-derivative) at distances r."""
    u, du = talenti(r, spec.n, spec.eps)
    if spec.cutoff_radius is None:
        return u, du
    mu = spec.cutoff_radius
    eta, deta = cutoff(np.asarray(r, float) / mu)
    return u * eta, du * eta + u * deta / mu


def bubble_eval(spec: BubbleSpec, x) -> np.ndarray | float:
    """Value of the (cut) bubble at point(s) x, shape (..., n)."""
    x = np.asarray(x, float)
    c = np.zeros(spec.n) if spec.center is None else np.asarray(spec.center, float)
    r = np.sqrt(np.sum((x - c) ** 2, axis=-1))
    val = bubble_profile(spec, r)[0]
    return float(val) if np.ndim(val) == 0 else val


# -- quadrature pieces ----------------------------------------------------------


@dataclass(frozen=True)
class EnergyParts:
    """Radial integrals (including the sphere measure) for one BubbleSpec.

    full_energy: int |grad u_eps|^2 over R^n
    full_mass:   int u_eps^{2*} over R^n
    cut_energy_correction: int (|grad(u eta)|^2 - |grad u|^2), zero without cutoff
    cut_mass_correction:   int ((u eta)^{2*} - u^{2*}), zero without cutoff
    l2: int (u eta)^2 (inf when divergent)
    errors: quadrature error estimates, same keys
    """

    full_energy: float
    full_mass: float
    cut_energy_correction: float
    cut_mass_correction: float
    l2: float
    errors: dict = field(default_factory=dict, compare=False)

    def energy(self, lam: float = 0.0) -> float:
        val = self.full_energy + self.cut_energy_correction
        if lam != 0.0:
            val += lam * self.l2
        return val

    def energy_deficit(self, lam: float = 0.0) -> float:
        """energy - S^{n/2}, using that the whole-space energy equals S^{n/2}."""
        val = self.cut_energy_correction
        if lam != 0.0:
            val += lam * self.l2
        return val

    @property
    def mass(self) -> float:
        return self.full_mass + self.cut_mass_correction


def energy_parts(spec: BubbleSpec, rtol: float = QUAD_RTOL, need_l2: bool = True) -> EnergyParts:
    n, eps = spec.n, spec.eps
    om = sphere_measure(n)
    p = critical_exponent(n)

    def dens_grad(r):
        _, du = talenti(r, n, eps)
        return om * du * du * r ** (n - 1)

    def dens_mass(r):
        u, _ = talenti(r, n, eps)
        return om * u**p * r ** (n - 1)

    fe = integrate_radial(dens_grad, 0.0, math.inf, eps, rtol)
    fm = integrate_radial(dens_mass, 0.0, math.inf, eps, rtol)
    errors = {"full_energy": fe.error, "full_mass": fm.error}

    mu = spec.cutoff_radius
    if mu is None:
        ce = cm = 0.0
        if need_l2:
            if n <= 4:
                l2 = math.inf
                errors["l2"] = math.inf
            else:
                q = integrate_radial(lambda r: om * talenti(r, n, eps)[0] ** 2 * r ** (n - 1),
                                     0.0, math.inf, eps, rtol)
                l2, errors["l2"] = q.value, q.error
        else:
            l2 = math.nan
        return EnergyParts(fe.value, fm.value, ce, cm, l2, errors)

    def dens_cut_grad(r):
        _, d = bubble_profile(spec, r)
        return om * d * d * r ** (n - 1)

    def dens_cut_mass_loss(r):
        u, _ = talenti(r, n, eps)
        eta, _ = cutoff(r / mu)
        return om * u**p * (1.0 - eta**p) * r ** (n - 1)

    # grad correction = int_mu^2mu |grad(u eta)|^2 - int_mu^inf |grad u|^2
    annulus = integrate(dens_cut_grad, np.linspace(mu, 2 * mu, 9), rtol=rtol)
    outer = integrate_radial(dens_grad, mu, math.inf, eps, rtol)
    ce = annulus.value - outer.value
    loss = integrate(dens_cut_mass_loss, np.linspace(mu, 2 * mu, 9), rtol=rtol)
    tail = integrate_radial(dens_mass, 2 * mu, math.inf, eps, rtol)
    cm = -(loss.value + tail.value)
    errors["cut_energy_correction"] = annulus.error + outer.error
    errors["cut_mass_correction"] = loss.error + tail.error
    if need_l2:
        inner = integrate_radial(lambda r: om * talenti(r, n, eps)[0] ** 2 * r ** (n - 1),
                                 0.0, mu, eps, rtol)
        ann = integrate(lambda r: om * bubble_profile(spec, r)[0] ** 2 * r ** (n - 1),
                        np.linspace(mu, 2 * mu, 9), rtol=rtol)
        l2 = inner.value + ann.value
        errors["l2"] = inner.error + ann.error
    else:
        l2 = math.nan
    return EnergyParts(fe.value, fm.value, ce, cm, l2, errors)


def bubble_energy(spec: BubbleSpec, lam: float = 0.0, rtol: float = QUAD_RTOL) -> float:
    """int |grad(u eta)|^2 + lam (u eta)^2 over R^n."""
    if lam != 0.0 and spec.cutoff_radius is None and spec.n <= 4:
        raise DivergentIntegralError(
            f"u_eps is not square integrable in dimension {spec.n}; use a cutoff")
    return energy_parts(spec, rtol, need_l2=(lam != 0.0)).energy(lam)


def bubble_energy_error(spec: BubbleSpec, lam: float = 0.0, rtol: float = QUAD_RTOL) -> tuple[float, float]:
    """(value, error estimate) of bubble_energy."""
    if lam != 0.0 and spec.cutoff_radius is None and spec.n <= 4:
        raise DivergentIntegralError(f"u_eps is not square integrable in dimension {spec.n}")
    parts = energy_parts(spec, rtol, need_l2=(lam != 0.0))
    err = parts.errors["full_energy"] + parts.errors.get("cut_energy_correction", 0.0)
    if lam != 0.0:
        err += abs(lam) * parts.errors["l2"]
    return parts.energy(lam), err


def bubble_mass(spec: BubbleSpec, rtol: float = QUAD_RTOL) -> float:
    """int (u eta)^{2*} over R^n."""
    return energy_parts(spec, rtol, need_l2=False).mass


def bubble_l2_shell(n: int, eps: float, inner: float, outer: float, rtol: float = QUAD_RTOL) -> float:
    """int_{inner < |x| < outer} u_eps^2 dx (finite for every n)."""
    om = sphere_measure(n)
    return integrate_radial(lambda r: om * talenti(r, n, eps)[0] ** 2 * r ** (n - 1),
                            inner, outer, eps, rtol).value


_S_CACHE: dict[int, float] = {}
_S_LOCK = threading.Lock()


def sobolev_constant(n: int, refresh: bool = False) -> float:
    """S = (int |grad u_1|^2)^{2/n}, computed by quadrature and cached per n."""
    if not 3 <= n <= 8:
        raise UnsupportedError(f"sobolev_constant supports 3 <= n <= 8, got {n}")
    with _S_LOCK:
        if refresh or n not in _S_CACHE:
            _S_CACHE[n] = bubble_energy(BubbleSpec(n, 1.0), 0.0, rtol=1e-13) ** (2.0 / n)
        return _S_CACHE[n]


# -- eps-asymptotics ----------------------------------------------------------


@dataclass(frozen=True)
class DeficitFit:
    lam: float
    mu: float
    n: int
    eps_list: np.ndarray
    energies: np.ndarray
    deficits: np.ndarray
    model: str  # "power", "power+remainder" or "log"
    fitted_exponent: float
    fitted_constant: float
    residual: float
    alt_residual: float = math.nan  # residual of the pure A eps^2 model ("log" fits)
    remainder: tuple[tuple[float, float], ...] = ()  # (exponent, coefficient) pairs
    extras: dict = field(default_factory=dict, compare=False)

    def model_values(self) -> np.ndarray:
        e = self.eps_list
        if self.model == "log":
            return self.fitted_constant * e**2 * np.abs(np.log(e))
        out = self.fitted_constant * e**self.fitted_exponent
        for k, b in self.remainder:
            out = out + b * e**k
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "energy", "deficit", "model_value"])
        for row in zip(self.eps_list, self.energies, self.deficits, self.model_values()):
            w.writerow([repr(float(x)) for x in row])
        params = (f"# n={self.n} lambda={self.lam!r} mu={self.mu!r} model={self.model} "
                  f"fitted_exponent={self.fitted_exponent!r} fitted_constant={self.fitted_constant!r} "
                  f"residual={self.residual!r}")
        if not math.isnan(self.alt_residual):
            params += f" alt_residual={self.alt_residual!r}"
        for k, b in self.remainder:
            params += f" remainder_eps^{k:g}={b!r}"
        for key in ("cutoff_constant", "bracket_radius", "bracket_value"):
            if key in self.extras:
                params += f" {key}={float(self.extras[key])!r}"
        buf.write(params + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def fit_power_law(eps, values) -> tuple[float, float, float]:
    """Least squares of log|values| = log|A| + q log eps; returns (q, A, rms residual)."""
    eps = np.asarray(eps, float)
    v = np.asarray(values, float)
    sign = np.sign(v[0])
    if np.any(np.sign(v) != sign) or sign == 0:
        raise FitQualityError("deficits change sign; no power law fits")
    x, y = np.log(eps), np.log(np.abs(v))
    q, c = np.polyfit(x, y, 1)
    res = y - (q * x + c)
    return float(q), float(sign * math.exp(c)), float(np.sqrt(np.mean(res**2)))


def fit_fixed_shape(values, shape) -> tuple[float, float]:
    """One-parameter fit values ~ A * shape in log space; returns (A, rms residual)."""
    v = np.asarray(values, float)
    s = np.asarray(shape, float)
    ratio = v / s
    if not (np.all(ratio < 0) or np.all(ratio > 0)):
        raise FitQualityError("deficits change sign; no one-term model fits")
    y = np.log(np.abs(ratio))
    c = float(np.mean(y))
    return float(np.sign(ratio[0]) * math.exp(c)), float(np.sqrt(np.mean((y - c) ** 2)))


def _check_eps(eps_list, mu):
    eps = np.asarray(eps_list, float)
    if eps.ndim != 1 or eps.size < 3:
        raise DomainError("need at least three eps values")
    if np.any(np.diff(eps) >= 0) or np.any(eps <= 0):
        raise DomainError("eps_list must be positive and strictly decreasing")
    if eps[0] > mu / 4:
        raise DomainError(f"eps_list must stay in the asymptotic regime eps <= mu/4 = {mu / 4:g}")
    return eps


def _sweep(n, lam, mu, eps, rtol):
    parts = [energy_parts(BubbleSpec(n, float(e), cutoff_radius=mu), rtol) for e in eps]
    energies = np.array([p.energy(lam) for p in parts])
    deficits = np.array([p.energy_deficit(lam) for p in parts])
    return parts, energies, deficits


def _check_monotone(energies):
    step = np.diff(energies)
    if not (np.all(step > 0) or np.all(step < 0)):
        raise FitQualityError("energies are not monotone in eps")


MAX_FIT_RESIDUAL = 1e-2


def fit_power_with_remainder(eps, values, remainder_exponents, q_bounds=(1.0, None)):
    """Fit values ~ A eps^q + sum_k B_k eps^k with the remainder exponents k fixed.

    For each q the coefficients solve a linear least-squares problem in
    relative residuals; q minimizes the rms relative residual. Returns
    (q, A, [(k, B_k)], rms residual).
    """
    eps = np.asarray(eps, float)
    v = np.asarray(values, float)
    ks = list(remainder_exponents)
    if len(ks) + 2 > eps.size:
        raise FitQualityError("not enough eps values for the remainder model")
    scale = np.abs(v)
    if np.any(scale == 0):
        raise FitQualityError("zero deficit; relative fit undefined")
    rhs = v / scale

    def solve(q):
        X = np.stack([eps**q] + [eps**k for k in ks], axis=1) / scale[:, None]
        coef, *_ = np.linalg.lstsq(X, rhs, rcond=None)
        return coef, float(np.sqrt(np.mean((X @ coef - rhs) ** 2)))

    hi = q_bounds[1] if q_bounds[1] is not None else min(ks) - 0.25
    opt = minimize_scalar(lambda q: solve(q)[1], bounds=(q_bounds[0], hi),
                          method="bounded", options={"xatol": 1e-12})
    coef, res = solve(opt.x)
    return float(opt.x), float(coef[0]), [(float(k), float(b)) for k, b in zip(ks, coef[1:])], res


def deficit_expansion(n: int, lam: float, mu: float, eps_list, rtol: float = QUAD_RTOL) -> DeficitFit:
    """Fit energy(eps) - S^{n/2} of the cut bubble (n >= 5).

    lam < 0: model A eps^q + B eps^{n-2} + C eps^n. The leading term is
    lam * c(n) * eps^2; the other two are the mu-dependent remainder, which
    is far from negligible once eps/mu exceeds a few percent.
    lam = 0: only the remainder is left; free power law A eps^q (q ~ n-2).
    """
    if n < 5:
        raise UnsupportedError("deficit_expansion needs n >= 5; use deficit_expansion_4d for n = 4")
    if lam > 0:
        raise DomainError("lambda must be <= 0")
    eps = _check_eps(eps_list, mu)
    parts, energies, deficits = _sweep(n, lam, mu, eps, rtol)
    extras = {"l2": [p.l2 for p in parts]}
    if lam == 0:
        _check_monotone(energies)
        q, a, res = fit_power_law(eps, deficits)
        return DeficitFit(lam, mu, n, eps, energies, deficits, "power", q, a, res, extras=extras)
    q, a, rem, res = fit_power_with_remainder(eps, deficits, [n - 2, n])
    if res > MAX_FIT_RESIDUAL or a >= 0:
        raise FitQualityError(f"deficit model does not fit (rms residual {res:.3g}, A = {a:.6g})")
    extras["c_over_lambda"] = a / lam
    return DeficitFit(lam, mu, n, eps, energies, deficits, "power+remainder", q, a, res,
                      remainder=tuple(rem), extras=extras)


def phi(R: float, rtol: float = QUAD_RTOL) -> float:
    """phi(R) = int_{|x| < R} (1 + |x|^2)^{-2} dx in R^4."""
    return integrate_radial(lambda r: OMEGA3 * r**3 / (1.0 + r * r) ** 2, 0.0, R, 1.0, rtol).value


def bracket(R: float, lam: float, mu: float, C: float) -> float:
    """8 phi(R) lam + C / mu^2 + 8 omega_3 |lam| ln 2."""
    return 8.0 * phi(R) * lam + C / mu**2 + 8.0 * OMEGA3 * abs(lam) * math.log(2.0)


def bracket_radius(lam: float, mu: float, C: float, max_doublings: int = 200):
    """Smallest R in 1, 2, 4, ... with a negative bracket, and the phi table."""
    table = []
    R = 1.0
    for _ in range(max_doublings):
        table.append((R, phi(R)))
        if bracket(R, lam, mu, C) < 0:
            return R, table
        R *= 2.0
    raise NoConvergenceError(f"bracket still nonnegative at R = {R / 2:g}")


def cutoff_cost_constant(mu: float, eps_list, rtol: float = QUAD_RTOL) -> float:
    """Sharp constant C with int |grad(u_eps eta_mu)|^2 <= S^2 + C eps^2 / mu^2 on eps_list (n = 4)."""
    vals = [energy_parts(BubbleSpec(4, float(e), cutoff_radius=mu), rtol, need_l2=False)
            .cut_energy_correction * mu**2 / e**2 for e in eps_list]
    return max(max(vals), 0.0)


def deficit_expansion_4d(lam: float, mu: float, eps_list, rtol: float = QUAD_RTOL) -> DeficitFit:
    """n = 4: fit energy(eps) - S^2 against A eps^2 |ln eps| (lam < 0) and
    report the phi(R) table with the first R making the bracket negative.

    For lam = 0 the fit falls back to a free power law (expected slope 2).
    """
    if lam > 0:
        raise DomainError("lambda must be <= 0 (n = 4 potentials satisfy a <= 0)")
    eps = _check_eps(eps_list, mu)
    parts, energies, deficits = _sweep(4, lam, mu, eps, rtol)
    _check_monotone(energies)
    C = cutoff_cost_constant(mu, eps, rtol)
    extras = {"cutoff_constant": C}
    if lam == 0:
        q, a, res = fit_power_law(eps, deficits)
        return DeficitFit(lam, mu, 4, eps, energies, deficits, "power", q, a, res, extras=extras)
    logshape = eps**2 * np.abs(np.log(eps))
    a, res = fit_fixed_shape(deficits, logshape)
    _, alt = fit_fixed_shape(deficits, eps**2)
    q, _, _ = fit_power_law(eps, deficits / np.abs(np.log(eps)))
    R, table = bracket_radius(lam, mu, C)
    extras.update(bracket_radius=R, phi_table=table,
                  bracket_value=bracket(R, lam, mu, C))
    return DeficitFit(lam, mu, 4, eps, energies, deficits, "log", q, a, res, alt, extras=extras)
