"""The critical quotient Q_a(u) = (int |grad u|^2 + a u^2) / ||u||_{2*}^2 on a
Domain, its minimization, and the test-function constructions used to show
S_a < S.

Everything here works on the discrete space of a Domain: the energy is
``u @ K @ u``, the potential term ``sum a u^2 vol`` and the critical norm
``(sum |u|^{2*} vol)^{1/2*}``. Gradients are Riesz representatives in the
volume-weighted L^2 inner product, so ``inner(grad, w)`` is the directional
derivative along w.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse.linalg import LinearOperator, lobpcg

from .bubbles import BubbleSpec, bubble_eval, bracket_radius, cutoff_cost_constant, energy_parts, sobolev_constant
from .errors import DomainError, GeometryError, NonCoerciveError, PreconditionError
from .grid import Domain, GridFunction, cg_solve, load_grid
from .potentials import PotentialSpec

CONCENTRATION_THRESHOLD = 0.5
CONCENTRATION_CELLS = 4  # the flag looks at radius 4h


def critical_power(n: int) -> Fraction:
    """2* = 2n/(n-2) as an exact rational."""
    return Fraction(2 * n, n - 2)


def _exps(n: int) -> tuple[float, float]:
    p = critical_power(n)
    return float(p), float(p - 2)


def potential_values(a, dom: Domain) -> np.ndarray:
    """Potential on the unknown cells; ``a`` is a PotentialSpec, a GridFunction,
    a number or None (a = 0)."""
    if a is None:
        return np.zeros(dom.unknowns.size)
    if isinstance(a, PotentialSpec):
        return a.sample(dom)[dom.unknowns]
    if isinstance(a, GridFunction):
        if not a.domain.same_grid(dom):
            raise DomainError("potential and field live on different grids")
        return a.interior
    return np.full(dom.unknowns.size, float(a))


# -- quotient and gradient --------------------------------------------------------


class _Quotient:
    """Quotient pieces on a fixed domain and potential (plain vectors)."""

    def __init__(self, dom: Domain, avals: np.ndarray):
        self.dom = dom
        self.K = dom.stiffness
        self.vol = dom.interior_volumes
        self.avol = avals * self.vol
        self.p, self.pm2 = _exps(dom.dim)

    def numerator(self, x):
        return float(x @ (self.K @ x)) + float(np.dot(self.avol, x * x))

    def norm(self, x):
        return float(np.dot(np.abs(x) ** self.p, self.vol)) ** (1.0 / self.p)

    def value(self, x):
        nrm = self.norm(x)
        if nrm == 0.0:
            raise DomainError("quotient undefined for u = 0")
        return self.numerator(x) / nrm**2

    def residual(self, x, q):
        """(-Lap x + a x - q |x|^{p-2} x / ||x||^{p-2}) as a vector on the cells."""
        nrm = self.norm(x)
        return ((self.K @ x) + self.avol * x) / self.vol - q * np.abs(x) ** self.pm2 * x / nrm**self.pm2

    def gradient(self, x):
        q = self.value(x)
        return 2.0 * self.residual(x, q) / self.norm(x) ** 2, q

    def change(self, x, d, tau, q):
        """Q(x - tau d) - Q(x), assembled from small terms so that decreases far
        below the rounding level of Q itself are still resolved."""
        Ad = (self.K @ d) + self.avol * d
        b = float(np.dot(x, Ad))
        c = float(np.dot(d, Ad))
        step = -tau * d
        ratio = np.divide(step, x, out=np.full_like(x, np.inf), where=x != 0)
        small = np.abs(ratio) < 0.5
        dm = np.empty_like(x)
        z = x + step
        dm[~small] = np.abs(z[~small]) ** self.p - np.abs(x[~small]) ** self.p
        xs = np.abs(x[small]) ** self.p
        dm[small] = xs * np.expm1(self.p * np.log1p(ratio[small]))
        m = float(np.dot(np.abs(x) ** self.p, self.vol))
        rel = float(np.dot(dm, self.vol)) / m
        numer_x = q * m ** (2.0 / self.p)
        dz = numer_x * np.expm1(2.0 / self.p * np.log1p(rel))
        growth = -2.0 * tau * b + tau * tau * c - dz
        return growth / (m ** (2.0 / self.p) * (1.0 + rel) ** (2.0 / self.p))

    def l2(self, g):
        return math.sqrt(float(np.dot(g * g, self.vol)))


def rayleigh_quotient(u: GridFunction, a=None) -> float:
    """(dirichlet energy + sum a u^2 vol) / ||u||_{2*}^2."""
    dom = u.domain
    return _Quotient(dom, potential_values(a, dom)).value(u.interior)


def quotient_gradient(u: GridFunction, a=None) -> GridFunction:
    """2 (-Lap u + a u - Q(u) |u|^{2*-2} u / ||u||^{2*-2}) / ||u||^2, the
    volume-weighted L^2 gradient of the quotient."""
    dom = u.domain
    g, _ = _Quotient(dom, potential_values(a, dom)).gradient(u.interior)
    return GridFunction.from_interior(dom, g)


# -- coercivity -------------------------------------------------------------------


def coercivity_constant(a, dom: Domain, tol: float = 1e-10, maxiter: int = 500, seed: int = 0) -> float:
    """c = inf_u (E(u) + sum a u^2 vol) / E(u), with E the Dirichlet energy.

    c - 1 is the smallest eigenvalue of the pencil (diag(a vol), K), found by
    LOBPCG preconditioned with K^{-1}. Raises NonCoerciveError when c <= 0.
    """
    avals = potential_values(a, dom)
    if np.all(avals >= 0):
        # E(u) + sum a u^2 vol >= E(u), and the infimum of the ratio tends to 1
        # as h -> 0; 1 is the mesh-independent bound
        return 1.0
    vol = dom.interior_volumes
    K = dom.stiffness
    A = sp.diags(avals * vol)
    m = avals.size
    if dom.mode == "radial":
        precond = dom.solve_stiffness
    else:
        def precond(r):
            return cg_solve(K, r, tol=1e-8)
    rng = np.random.default_rng(seed)
    block = 3 if m > 15 else 1
    if m <= 15 * block:
        from scipy.linalg import eigh
        lam = float(eigh(A.toarray(), K.toarray(), eigvals_only=True)[0])
    else:
        # start from a field concentrated where a is most negative, plus noise
        x0 = rng.standard_normal((m, block))
        x0[:, 0] = np.maximum(-avals, 0) + 1e-3
        M = LinearOperator((m, m), matvec=lambda r: precond(np.ravel(r)), dtype=float)
        vals, _ = lobpcg(A, x0, B=K, M=M, tol=tol, maxiter=maxiter, largest=False)
        lam = float(np.min(vals))
    c = 1.0 + lam
    if c <= 0:
        raise NonCoerciveError(c)
    return c


# -- potentials used by the test-function construction ---------------------------


def truncate_potential(a: PotentialSpec, n0: float | None = None, floor: float | None = None) -> PotentialSpec:
    """max(a, -n0) (``n0`` given) or max(a, floor) (``floor`` given)."""
    if (n0 is None) == (floor is None):
        raise DomainError("give exactly one of n0 and floor")
    if n0 is not None:
        if not (n0 > 0 and math.isfinite(n0)):
            raise DomainError("n0 must be positive and finite")
        return a.with_floor(-float(n0))
    if not math.isfinite(floor):
        raise DomainError("floor must be finite")
    return a.with_floor(float(floor))


def _ball_offsets(dim: int, r_cells: float) -> np.ndarray:
    k = int(math.floor(r_cells))
    ax = np.arange(-k, k + 1)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    d2 = sum(g.astype(float) ** 2 for g in grids)
    return (d2 <= r_cells**2 + 1e-9).astype(float)


def _ball_sums(field: np.ndarray, dim: int, r_cells: float) -> np.ndarray:
    kernel = _ball_offsets(dim, r_cells)
    return fftconvolve(field, kernel, mode="same")


def _dyadic_radii(dom: Domain, levels: int | None) -> list[float]:
    if dom.mode == "radial":
        top = dom.radius / 2
    else:
        top = min(dom.shape) * dom.h / 4
    radii = [dom.h]
    while radii[-1] * 2 <= top and (levels is None or len(radii) < levels):
        radii.append(radii[-1] * 2)
    return radii


def local_averages(a, dom: Domain, radii) -> np.ndarray:
    """Averages of a over B_r(x) ∩ Omega for every cell x (rows: radii).

    Radial meshes only admit the origin as a centre; the returned array then
    has one column.
    """
    full = np.zeros(dom.size)
    full[dom.unknowns] = potential_values(a, dom)
    vol = np.where(dom.unknown_mask, dom.volumes, 0.0)
    if dom.mode == "radial":
        out = []
        for r in radii:
            sel = dom.node_radii <= r + 1e-12 * dom.h
            out.append([np.dot(full[sel], vol[sel]) / vol[sel].sum()])
        return np.array(out)
    out = []
    av = (full * vol).reshape(dom.shape)
    vv = vol.reshape(dom.shape)
    for r in radii:
        num = _ball_sums(av, dom.dim, r / dom.h).ravel()
        den = _ball_sums(vv, dom.dim, r / dom.h).ravel()
        with np.errstate(invalid="ignore", divide="ignore"):
            out.append(np.where(den > 0.5 * dom.h**dom.dim, num / np.maximum(den, 1e-300), np.nan))
    return np.array(out)


def select_negativity_center(a, dom: Domain, stability: float = 0.25,
                             levels: int | None = None) -> tuple[np.ndarray, float]:
    """Approximate Lebesgue point of {a < 0}: (x0, a0).

    Averages of a over balls of dyadic radii h, 2h, 4h, ... are computed at
    every cell of Omega. Candidates are cells whose finest average is negative
    and differs from the next scale by at most ``stability`` (relative). The
    most negative finest average wins; ties go to the more negative average
    at the next larger scale, and so on, and finally to the smallest grid
    index. If no candidate is stable, all negative cells compete.
    """
    avals = potential_values(a, dom)
    if not np.any(avals < 0):
        raise PreconditionError("the potential has no negative cell")
    radii = _dyadic_radii(dom, levels)
    avg = local_averages(a, dom, radii)
    if dom.mode == "radial":
        a0 = float(avg[0, 0])
        if not a0 < 0:
            raise PreconditionError(
                "radial mesh: the average of a near the origin is not negative")
        return np.zeros(dom.dim), a0
    inside = dom.unknown_mask
    fine = avg[0]
    neg = inside & (fine < 0)
    if len(radii) > 1:
        stable = neg & (np.abs(fine - avg[1]) <= stability * np.abs(fine))
        if stable.any():
            neg = stable
    idx = np.flatnonzero(neg)
    # quantize so that summation-order rounding cannot decide ties
    scale = float(np.max(np.abs(avals)))
    keys = [np.round(np.nan_to_num(row[idx], nan=np.inf) / scale, 10) for row in avg]
    order = np.lexsort([idx] + keys[::-1])
    best = idx[order[0]]
    return dom.cell_centers()[best], float(fine[best])


# -- bubble test ----------------------------------------------------------------


@dataclass(frozen=True)
class BubbleTestResult:
    min_quotient: float
    strict: bool
    center: np.ndarray
    a0: float
    eps_list: np.ndarray
    quotients: np.ndarray
    margin: float
    sobolev: float
    bracket_radius: float | None = None

    def __iter__(self):
        yield self.min_quotient
        yield self.strict


def _check_support(dom: Domain, x0, mu: float):
    reach = 2 * mu
    if dom.mode == "radial":
        if reach > dom.radius * (1 + 1e-12):
            raise GeometryError(f"cutoff support radius {reach:g} exceeds the ball radius {dom.radius:g}")
        return
    pts = dom.cell_centers()
    lo = np.array(dom.origin) - dom.h / 2
    hi = lo + dom.h * np.array(dom.shape)
    if np.any(x0 - reach < lo - 1e-12) or np.any(x0 + reach > hi + 1e-12):
        raise GeometryError("cutoff support B_{2mu}(x0) leaves the grid box")
    d2 = np.einsum("ij,ij->i", pts - x0, pts - x0)
    if np.any((d2 < reach**2) & ~dom.unknown_mask):
        raise GeometryError("cutoff support B_{2mu}(x0) leaves Omega")


def brezis_nirenberg_bubble_test(a, dom: Domain, eps_list, mu: float) -> BubbleTestResult:
    """Quotients of cut bubbles u_{eps,x0} eta_{mu,x0} centred at the selected
    negativity point x0.

    ``strict`` is min_quotient < S (1 - margin), where the margin is the
    largest relative gap between the discrete and the quadrature quotient of
    the same fields with a = 0 (the grid-resolution error of the test
    itself). For n = 4 the bracket radius R of the energy estimate is
    reported as well.
    """
    n = dom.dim
    eps = np.asarray(eps_list, float)
    if eps.size == 0 or np.any(eps <= 0):
        raise DomainError("eps_list must hold positive values")
    if np.any(eps > mu / 4):
        raise DomainError("eps must not exceed mu/4")
    x0, a0 = select_negativity_center(a, dom)
    _check_support(dom, x0, mu)
    S = sobolev_constant(n)
    avals = potential_values(a, dom)
    pts = dom.cell_centers()[dom.unknowns]
    with_a = _Quotient(dom, avals)
    flat = _Quotient(dom, np.zeros_like(avals))
    p = float(critical_power(n))
    quotients = []
    margin = 0.0
    for e in eps:
        spec = BubbleSpec(n, float(e), tuple(x0), mu)
        vals = bubble_eval(spec, pts)
        quotients.append(with_a.value(vals))
        parts = energy_parts(spec, need_l2=False)
        exact = parts.energy(0.0) / parts.mass ** (2.0 / p)
        margin = max(margin, abs(flat.value(vals) - exact) / S)
    quotients = np.array(quotients)
    qmin = float(quotients.min())
    R = None
    if n == 4:
        C = cutoff_cost_constant(mu, eps)
        R, _ = bracket_radius(a0, mu, C)
    return BubbleTestResult(qmin, bool(qmin < S * (1 - margin)), x0, a0, eps, quotients,
                            margin, S, R)


# -- concentration ---------------------------------------------------------------


@dataclass(frozen=True)
class ConcentrationDiagnostic:
    radii: np.ndarray
    max_mass_fraction: np.ndarray
    concentration_flag: bool
    fraction_4h: float


def _mass_density(u: GridFunction) -> np.ndarray:
    dom = u.domain
    p = float(critical_power(dom.dim))
    m = np.abs(u.values.ravel()) ** p * dom.volumes
    m[~dom.unknown_mask] = 0.0
    return m


def _max_fraction(u: GridFunction, m: np.ndarray, total: float, r: float) -> float:
    dom = u.domain
    if dom.mode == "radial":
        sel = dom.node_radii <= r + 1e-12 * dom.h
        return float(min(1.0, m[sel].sum() / total))
    sums = _ball_sums(m.reshape(dom.shape), dom.dim, r / dom.h)
    cand = np.zeros(dom.shape, dtype=bool)
    cand[tuple(slice(0, None, 4) for _ in range(dom.dim))] = True
    cand = cand.ravel() & dom.unknown_mask
    cand[int(np.argmax(np.abs(u.values.ravel())))] = True
    return float(np.clip(sums.ravel()[cand].max() / total, 0.0, 1.0))


def concentration_profile(u: GridFunction, radii=None) -> ConcentrationDiagnostic:
    """Largest share of the 2*-mass of u inside a ball of each radius.

    Centres: the origin on radial meshes; on Cartesian grids every 4th grid
    point along each axis plus the cell where |u| is largest. A cell counts
    as inside B_r(c) when its centre does. Default radii: 4h * 2^k down to 4h.
    """
    dom = u.domain
    m = _mass_density(u)
    total = float(m.sum())
    if total == 0.0:
        raise DomainError("concentration profile undefined for u = 0")
    r4 = CONCENTRATION_CELLS * dom.h
    if radii is None:
        top = dom.radius if dom.mode == "radial" else min(dom.shape) * dom.h / 2
        radii = [r4]
        while radii[-1] * 2 <= top:
            radii.append(radii[-1] * 2)
    radii = np.sort(np.asarray(radii, float))[::-1]
    if np.any(radii <= 0):
        raise DomainError("radii must be positive")
    fracs = np.array([_max_fraction(u, m, total, r) for r in radii])
    f4 = _max_fraction(u, m, total, r4)
    return ConcentrationDiagnostic(radii, fracs, bool(f4 > CONCENTRATION_THRESHOLD), f4)


# -- minimization -----------------------------------------------------------------


@dataclass
class MinimizeOptions:
    tol: float = 1e-6
    max_iter: int = 10_000
    tau0: float = 1.0
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_tau: float = 1e-12
    cg_tol: float = 1e-10
    check_coercivity: bool = True
    seed: int = 0  # start block of the coercivity eigensolver
    callback: Callable | None = field(default=None, repr=False)


@dataclass(frozen=True)
class MinimizationReport:
    quotient_trajectory: tuple[float, ...]
    s_a_estimate: float
    lagrange_multiplier: float
    el_residual: float
    concentration: ConcentrationDiagnostic
    status: str  # converged | concentrating | iteration_cap
    solution: GridFunction = field(repr=False)
    residual_trajectory: tuple[float, ...] = ()
    mass_fraction_trajectory: tuple[float, ...] = ()
    sobolev: float = math.nan
    coercivity: float = math.nan
    stalled: bool = False

    @property
    def iterations(self) -> int:
        return len(self.quotient_trajectory) - 1

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "quotient", "el_residual", "mass_frac_4h"])
        for k, (q, r, f) in enumerate(zip(self.quotient_trajectory, self.residual_trajectory,
                                          self.mass_fraction_trajectory)):
            w.writerow([k, repr(q), repr(r), repr(f)])
        buf.write("# s_a,S,status,lagrange_multiplier\n")
        buf.write(f"# {self.s_a_estimate!r},{self.sobolev!r},{self.status},{self.lagrange_multiplier!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def ground_state(dom: Domain, iters: int = 60) -> GridFunction:
    """First Dirichlet eigenfunction of -Lap on Omega (inverse iteration), positive."""
    vol = dom.interior_volumes
    x = np.ones(dom.unknowns.size)
    for _ in range(iters):
        if dom.mode == "radial":
            x = dom.solve_stiffness(vol * x)
        else:
            x = cg_solve(dom.stiffness, vol * x, tol=1e-10)
        x /= math.sqrt(float(np.dot(x * x, vol)))
    return GridFunction.from_interior(dom, np.abs(x))


def _initial_field(init, dom: Domain) -> GridFunction:
    if isinstance(init, GridFunction):
        if not init.domain.same_grid(dom):
            raise DomainError("initial field lives on a different grid")
        return init
    if isinstance(init, BubbleSpec):
        if init.n != dom.dim:
            raise DomainError("bubble dimension does not match the domain")
        return GridFunction.from_callable(dom, lambda x: bubble_eval(init, x))
    if isinstance(init, (str, Path)):
        if str(init) == "ground":
            return ground_state(dom)
        u = load_grid(init)
        if not u.domain.same_grid(dom):
            raise DomainError("initial field file does not match the domain")
        return u
    raise DomainError(f"unsupported initial field {init!r}")


def minimize_quotient(a, dom: Domain, init="ground", opts: MinimizeOptions | None = None) -> MinimizationReport:
    """Projected Sobolev-gradient descent on the 2*-sphere.

    u <- (u - tau d) / ||u - tau d||_{2*} with d = (-2 Lap)^{-1} grad Q(u) and tau
    halved from tau0 until the quotient drops by at least armijo * tau * <grad, d>.
    Stops when the Euler-Lagrange residual reaches ``tol`` (converged), when
    more than half of the 2*-mass sits within 4h of a point (concentrating),
    or after ``max_iter`` steps or a failed line search (iteration_cap, with
    ``stalled`` set in the latter case).
    """
    opts = opts or MinimizeOptions()
    c = coercivity_constant(a, dom, seed=opts.seed) if opts.check_coercivity else math.nan
    avals = potential_values(a, dom)
    Q = _Quotient(dom, avals)
    u0 = _initial_field(init, dom)
    x = u0.interior.copy()
    nrm = Q.norm(x)
    if nrm == 0.0:
        raise DomainError("initial field is zero")
    x /= nrm

    if dom.mode == "radial":
        precond = dom.solve_stiffness
    else:
        def precond(b):
            return cg_solve(Q.K, b, tol=opts.cg_tol)

    def frac4(vec):
        return concentration_profile(GridFunction.from_interior(dom, vec), [4 * dom.h]).fraction_4h

    q = Q.value(x)
    res = Q.l2(Q.residual(x, q))
    qs, rs, fs = [q], [res], [frac4(x)]
    status = "iteration_cap"
    stalled = False
    for it in range(1, opts.max_iter + 1):
        g = 2.0 * Q.residual(x, q)  # ||x||_{2*} = 1
        # P inverts the Hessian 2(-Lap) of the energy, so tau = 1 is a
        # nonlinear inverse-iteration step
        d = 0.5 * precond(g * Q.vol)
        slope = float(np.dot(g * d, Q.vol))
        tau = opts.tau0
        while True:
            y = x - tau * d
            ny = Q.norm(y)
            if ny > 0:
                dq = Q.change(x, d, tau, q)
                if dq < -opts.armijo * tau * slope:
                    break
            tau *= opts.backtrack
            if tau < opts.min_tau:
                stalled = True
                break
        if stalled:
            break
        x = y / ny
        q = min(q, Q.value(x))
        res = Q.l2(Q.residual(x, q))
        f = frac4(x)
        qs.append(q)
        rs.append(res)
        fs.append(f)
        if opts.callback is not None:
            opts.callback(it, q, res, f)
        if res <= opts.tol:
            status = "converged"
            break
        if f > CONCENTRATION_THRESHOLD:
            status = "concentrating"
            break
    u = GridFunction.from_interior(dom, x)
    return MinimizationReport(tuple(qs), q, q, res, concentration_profile(u), status, u,
                              tuple(rs), tuple(fs), sobolev_constant(dom.dim), c, stalled)
