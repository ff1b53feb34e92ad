"""Discrete domains and grid functions standing in for H^1_0(Omega).

Two layouts are supported:

* ``cartesian``: a box of cubic cells of side ``h`` with a boolean mask; a
  cell belongs to Omega when its mask bit is set. Functions vanish outside
  the mask (homogeneous Dirichlet condition).
* ``radial``: radially symmetric functions on the ball ``B_R(0)``, sampled at
  nodes ``r_i = i*h``, ``i = 0..N-1`` with ``r_{N-1} = R``. Each node owns the
  spherical shell between its neighbouring half-nodes; the outermost node is
  pinned to zero.

Every discrete quantity is expressed through two objects cached on the
domain: the vector of cell measures ``volumes`` and a symmetric stiffness
matrix ``K`` acting on the unknown (interior) cells, so that the Dirichlet
energy is ``u @ K @ u`` and ``-Lap u = (K u) / volumes``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NoConvergenceError, StructuralError

GRID_MAGIC = "# cql-grid v1"


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int, r: float = 1.0) -> float:
    return sphere_measure(n) * r**n / n


def critical_exponent(n: int) -> float:
    """2* = 2n/(n-2)."""
    return 2.0 * n / (n - 2)


@dataclass(eq=False)
class Domain:
    mode: str
    dim: int
    h: float
    shape: tuple[int, ...]
    origin: tuple[float, ...] = ()
    mask: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.dim < 3:
            raise DomainError(f"dimension must be >= 3, got {self.dim}")
        if self.h <= 0:
            raise DomainError("grid spacing must be positive")
        self.shape = tuple(int(k) for k in self.shape)
        if self.mode == "cartesian":
            if len(self.shape) != self.dim:
                raise StructuralError(f"shape {self.shape} does not match dim={self.dim}")
            if len(self.origin) != self.dim:
                raise StructuralError("origin must have one coordinate per axis")
            self.origin = tuple(float(c) for c in self.origin)
            if self.mask is None:
                self.mask = np.ones(self.shape, dtype=bool)
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.shape:
                raise StructuralError("mask shape does not match grid shape")
        elif self.mode == "radial":
            if len(self.shape) != 1 or self.shape[0] < 3:
                raise StructuralError("radial mesh needs at least 3 nodes")
            if self.radius is None:
                self.radius = self.h * (self.shape[0] - 1)
            self.origin = (0.0,) * self.dim
        else:
            raise StructuralError(f"unknown mode {self.mode!r}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def radial_ball(cls, dim: int, radius: float = 1.0, nodes: int = 1001) -> "Domain":
        return cls("radial", dim, radius / (nodes - 1), (nodes,), radius=radius)

    @classmethod
    def box(cls, dim: int, lower, upper, h: float, mask_fn=None) -> "Domain":
        """Cell-centred box; ``mask_fn(points) -> bool array`` selects Omega."""
        lower = np.broadcast_to(np.asarray(lower, float), (dim,))
        upper = np.broadcast_to(np.asarray(upper, float), (dim,))
        shape = tuple(int(round((hi - lo) / h)) for lo, hi in zip(lower, upper))
        origin = tuple(lo + h / 2 for lo in lower)
        dom = cls("cartesian", dim, h, shape, origin=origin)
        if mask_fn is not None:
            dom.mask = np.asarray(mask_fn(dom.cell_centers()), bool).reshape(shape)
        return dom

    @classmethod
    def cartesian_ball(cls, dim: int, radius: float, h: float) -> "Domain":
        """Ball of radius ``radius`` (cells whose centre lies inside), in a
        box padded by one ring of zero cells."""
        half = math.ceil(radius / h) * h + h
        return cls.box(dim, -half, half, h,
                       mask_fn=lambda x: np.einsum("ij,ij->i", x, x) < radius**2)

    # -- geometry ---------------------------------------------------------

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def sphere_measure(self) -> float:
        return sphere_measure(self.dim)

    @cached_property
    def unknown_mask(self) -> np.ndarray:
        """Flat boolean array of cells carrying unknowns."""
        if self.mode == "radial":
            m = np.ones(self.shape[0], dtype=bool)
            m[-1] = False
            return m
        return self.mask.ravel().copy()

    @cached_property
    def unknowns(self) -> np.ndarray:
        return np.flatnonzero(self.unknown_mask)

    @cached_property
    def node_radii(self) -> np.ndarray:
        """Radial mode: node positions r_i."""
        return self.h * np.arange(self.shape[0], dtype=float)

    @cached_property
    def shell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.node_radii
        lo = np.maximum(r - self.h / 2, 0.0)
        hi = np.minimum(r + self.h / 2, self.radius)
        return lo, hi

    @cached_property
    def volumes(self) -> np.ndarray:
        """Flat array of cell measures (shell volumes in radial mode)."""
        if self.mode == "radial":
            lo, hi = self.shell_bounds
            return self.sphere_measure * (hi**self.dim - lo**self.dim) / self.dim
        return np.full(self.size, self.h**self.dim)

    def axes(self) -> list[np.ndarray]:
        return [o + self.h * np.arange(k) for o, k in zip(self.origin, self.shape)]

    def cell_centers(self) -> np.ndarray:
        """(size, dim) array of cell centres, row-major."""
        if self.mode == "radial":
            pts = np.zeros((self.size, self.dim))
            pts[:, 0] = self.node_radii
            return pts
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def cell_radii(self) -> np.ndarray:
        """Flat array of |x| at cell centres (or nodes)."""
        if self.mode == "radial":
            return self.node_radii
        sq = np.zeros(self.shape)
        for axis, coords in enumerate(self.axes()):
            view = [1] * self.dim
            view[axis] = -1
            sq = sq + coords.reshape(view) ** 2
        return np.sqrt(sq).ravel()

    @property
    def measure(self) -> float:
        return float(self.volumes[self.unknown_mask].sum())

    # -- discrete operators ------------------------------------------------

    @cached_property
    def face_weights(self) -> np.ndarray:
        """Radial mode: weights of the links (r_i, r_{i+1}),
        w_i = omega * (r_{i+1}^n - r_i^n) / (n h^2).

        This integrates r^{n-1} exactly over the link, so the energy is exact
        for piecewise linear profiles. The midpoint value omega r_{i+1/2}^{n-1}/h
        underweights the first links by a large factor and lets a spike at
        the origin undercut the Sobolev constant.
        """
        r = self.node_radii
        n = self.dim
        return self.sphere_measure * (r[1:] ** n - r[:-1] ** n) / (n * self.h**2)

    @cached_property
    def stiffness(self) -> sp.csc_matrix:
        """Symmetric positive definite matrix of the Dirichlet form on unknowns."""
        if self.mode == "radial":
            w = self.face_weights
            m = self.shape[0] - 1  # unknown nodes 0..N-2
            diag = np.zeros(m)
            diag += w[:m]
            diag[1:] += w[: m - 1]
            off = -w[: m - 1]
            return sp.diags([off, diag, off], [-1, 0, 1], format="csc")
        eye = [sp.identity(k, format="csr") for k in self.shape]
        full = None
        for axis, k in enumerate(self.shape):
            t = sp.diags([-np.ones(k - 1), 2 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1])
            factors = list(eye)
            factors[axis] = t
            term = factors[0]
            for f in factors[1:]:
                term = sp.kron(term, f, format="csr")
            full = term if full is None else full + term
        idx = self.unknowns
        return (self.h ** (self.dim - 2) * full[idx][:, idx]).tocsc()

    @cached_property
    def interior_volumes(self) -> np.ndarray:
        return self.volumes[self.unknowns]

    @cached_property
    def _factorized(self) -> Callable[[np.ndarray], np.ndarray]:
        return spla.factorized(self.stiffness)

    def solve_stiffness(self, b: np.ndarray) -> np.ndarray:
        """Direct solve K x = b on the unknowns (factorization cached)."""
        return self._factorized(np.asarray(b, float))

    def embed(self, vec: np.ndarray) -> np.ndarray:
        full = np.zeros(self.size)
        full[self.unknowns] = vec
        return full.reshape(self.shape)

    def same_grid(self, other: "Domain") -> bool:
        if other is self:
            return True
        return (self.mode == other.mode and self.dim == other.dim
                and self.shape == other.shape
                and math.isclose(self.h, other.h, rel_tol=1e-12)
                and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * self.h)
                and (self.mode == "radial" or np.array_equal(self.mask, other.mask)))


@dataclass(eq=False)
class GridFunction:
    """Real values on the cells of a domain, zero outside Omega."""

    domain: Domain
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != self.domain.size:
            raise StructuralError(
                f"{vals.size} values for a grid of {self.domain.size} cells")
        vals = vals.reshape(self.domain.shape)
        if not np.all(np.isfinite(vals)):
            raise DomainError("grid function has non-finite values")
        flat = vals.reshape(-1)
        flat[~self.domain.unknown_mask] = 0.0
        self.values = vals

    @classmethod
    def from_interior(cls, domain: Domain, vec: np.ndarray) -> "GridFunction":
        return cls(domain, domain.embed(vec))

    @classmethod
    def from_callable(cls, domain: Domain, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Sample ``fn`` on cell centres; ``fn`` receives an (N, dim) array."""
        return cls(domain, np.asarray(fn(domain.cell_centers()), float))

    @classmethod
    def from_radial_profile(cls, domain: Domain, fn: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        return cls(domain, np.asarray(fn(domain.cell_radii), float))

    @property
    def interior(self) -> np.ndarray:
        return self.values.reshape(-1)[self.domain.unknowns]

    def _check(self, other: "GridFunction"):
        if not self.domain.same_grid(other.domain):
            raise StructuralError("grid functions live on different grids")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.domain, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.domain, self.values - other.values)

    def __mul__(self, t: float) -> "GridFunction":
        return GridFunction(self.domain, t * self.values)

    __rmul__ = __mul__


def inner(u: GridFunction, v: GridFunction) -> float:
    """Volume-weighted L^2 inner product."""
    u._check(v)
    return float(np.dot(u.interior * v.interior, u.domain.interior_volumes))


def laplacian_apply(u: GridFunction) -> GridFunction:
    """Return -Lap u with homogeneous Dirichlet data outside Omega."""
    dom = u.domain
    return GridFunction.from_interior(dom, dom.stiffness @ u.interior / dom.interior_volumes)


def dirichlet_energy(u: GridFunction) -> float:
    """Sum over cell faces of |forward difference|^2 times the face measure.

    Computed face by face, independently of the stiffness matrix; summation
    by parts makes it equal to ``inner(u, laplacian_apply(u))``.
    """
    dom = u.domain
    if dom.mode == "radial":
        du = np.diff(u.values)
        return float(np.dot(dom.face_weights, du * du))
    total = 0.0
    vals = u.values
    for axis in range(dom.dim):
        pad = [(0, 0)] * dom.dim
        pad[axis] = (1, 1)
        du = np.diff(np.pad(vals, pad), axis=axis)
        total += float(np.sum(du * du))
    return dom.h ** (dom.dim - 2) * total


def lp_norm(u: GridFunction, p: float) -> float:
    if p < 1:
        raise DomainError(f"lp_norm needs p >= 1, got {p}")
    dom = u.domain
    return float(np.dot(np.abs(u.interior) ** p, dom.interior_volumes)) ** (1.0 / p)


def cg_solve(operator, rhs, tol: float = 1e-10, maxiter: int | None = None,
             x0=None, precondition=None):
    """Conjugate gradients for a symmetric positive definite operator.

    ``operator`` is either a matrix-like object acting on plain vectors
    (Euclidean inner product) or a callable mapping GridFunction to
    GridFunction, in which case the iteration runs in the volume-weighted
    inner product of the grid (where -Lap is self-adjoint).

    Returns the solution in the same representation as ``rhs``. Raises
    NoConvergenceError with the final relative residual if ``maxiter``
    iterations do not reach ``tol``.
    """
    if isinstance(rhs, GridFunction):
        dom = rhs.domain
        w = dom.interior_volumes

        def matvec(x):
            return operator(GridFunction.from_interior(dom, x)).interior

        def dot(x, y):
            return float(np.dot(x * y, w))

        b = rhs.interior
        start = None if x0 is None else x0.interior
        x, _ = _cg(matvec, b, dot, tol, maxiter, start, precondition)
        return GridFunction.from_interior(dom, x)

    if callable(operator) and not hasattr(operator, "shape"):
        matvec = operator
    else:
        matvec = operator.__matmul__ if hasattr(operator, "__matmul__") else operator.dot
    b = np.asarray(rhs, float)
    x, _ = _cg(matvec, b, lambda x, y: float(np.dot(x, y)), tol, maxiter, x0, precondition)
    return x


def _cg(matvec, b, dot, tol, maxiter, x0, precondition):
    n = b.size
    if maxiter is None:
        maxiter = 10 * n + 100
    bnorm = math.sqrt(dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = np.zeros_like(b) if x0 is None else np.array(x0, float)
    r = b - matvec(x) if x0 is not None else b.copy()
    z = precondition(r) if precondition else r
    p = z.copy()
    rz = dot(r, z)
    for it in range(1, maxiter + 1):
        if math.sqrt(dot(r, r)) <= tol * bnorm:
            return x, it - 1
        ap = matvec(p)
        alpha = rz / dot(p, ap)
        x += alpha * p
        r -= alpha * ap
        z = precondition(r) if precondition else r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = math.sqrt(dot(r, r)) / bnorm
    if res <= tol:
        return x, maxiter
    raise NoConvergenceError(
        f"cg did not reach tol={tol:g} in {maxiter} iterations "
        f"(relative residual {res:.3e})", res)


def solve_laplace(rhs: GridFunction, tol: float = 1e-10, method: str = "direct") -> GridFunction:
    """Solve -Lap x = rhs on Omega with zero Dirichlet data."""
    dom = rhs.domain
    if method == "direct":
        return GridFunction.from_interior(dom, dom.solve_stiffness(rhs.interior * dom.interior_volumes))
    return cg_solve(laplacian_apply, rhs, tol=tol)


# -- file I/O ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def store_grid(u: GridFunction, path) -> None:
    dom = u.domain
    lines = [GRID_MAGIC]
    if dom.mode == "radial":
        lines.append(f"mode=radial dim={dom.dim} shape={dom.shape[0]} "
                     f"R={_fmt(dom.radius)} h={_fmt(dom.h)}")
    else:
        lines.append(f"mode=cartesian dim={dom.dim} shape={'x'.join(map(str, dom.shape))} "
                     f"h={_fmt(dom.h)} origin={','.join(_fmt(c) for c in dom.origin)}")
        if not dom.mask.all():
            lines.append("mask=inline")
            lines.append("".join("1" if m else "0" for m in dom.mask.ravel()))
    lines.extend(_fmt(v) for v in u.values.ravel())
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for tok in line.split():
        if "=" not in tok:
            raise StructuralError(f"malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    return fields


def load_grid(path) -> GridFunction:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if len(lines) < 2 or lines[0] != GRID_MAGIC:
        raise StructuralError(f"{path}: missing '{GRID_MAGIC}' header")
    try:
        hdr = _parse_header(lines[1])
        mode = hdr["mode"]
        dim = int(hdr["dim"])
        shape = tuple(int(k) for k in hdr["shape"].split("x"))
    except (KeyError, ValueError) as exc:
        raise StructuralError(f"{path}: malformed header: {exc}") from None
    body = lines[2:]
    if mode == "radial":
        if len(shape) != 1 or "R" not in hdr:
            raise StructuralError(f"{path}: radial header needs shape=<nodes> R=<radius>")
        dom = Domain.radial_ball(dim, float(hdr["R"]), shape[0])
        if "h" in hdr and not math.isclose(float(hdr["h"]), dom.h, rel_tol=1e-9):
            raise StructuralError(f"{path}: h={hdr['h']} inconsistent with R and node count")
    elif mode == "cartesian":
        if len(shape) != dim:
            raise StructuralError(f"{path}: shape {shape} has {len(shape)} axes but dim={dim}")
        try:
            origin = tuple(float(c) for c in hdr["origin"].split(","))
            h = float(hdr["h"])
        except (KeyError, ValueError) as exc:
            raise StructuralError(f"{path}: malformed header: {exc}") from None
        mask = None
        if body and body[0] == "mask=inline":
            if len(body) < 2:
                raise StructuralError(f"{path}: mask row missing")
            bits = body[1].replace(" ", "").replace(",", "")
            if len(bits) != int(np.prod(shape)) or set(bits) - {"0", "1"}:
                raise StructuralError(f"{path}: mask row does not match shape")
            mask = np.frombuffer(bits.encode(), dtype=np.uint8).reshape(shape) == ord("1")
            body = body[2:]
        dom = Domain("cartesian", dim, h, shape, origin=origin, mask=mask)
    else:
        raise StructuralError(f"{path}: unknown mode {mode!r}")
    if len(body) != dom.size:
        raise StructuralError(f"{path}: header shape needs {dom.size} values, found {len(body)}")
    try:
        vals = np.array([float(v) for v in body])
    except ValueError as exc:
        raise StructuralError(f"{path}: bad value: {exc}") from None
    return GridFunction(dom, vals)
