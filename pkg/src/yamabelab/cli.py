"""Command-line front end.

    yamabelab [--out DIR] [--jobs N] [--seed S] [--quad-tol TOL] COMMAND ...

Commands: bubble-verify, deficit, minimize, lorentz, split. Each command
builds a CSV table. Without --out it goes to stdout; with --out it is
written atomically to DIR/<name>.csv and a one-line summary is printed.

Exit codes: 0 success, 1 numerical failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bubbles
from .bubbles import BubbleSpec
from .errors import ConfigError, PreconditionError, UnsupportedError
from .grid import Domain, load_grid
from .lorentz import INFINITY, LorentzExponents, decreasing_rearrangement, lorentz_norm, split_domain
from .minimize import MinimizeOptions, minimize_quotient
from .potentials import PotentialSpec, Well


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(",", " ").split()]


def _exponent(text: str) -> float:
    t = str(text).strip().lower()
    return INFINITY if t in ("inf", "infinity") else float(t)


# -- scenarios ----------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    domain: Domain
    potential: PotentialSpec
    init: object
    options: MinimizeOptions
    params: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.domain.dim


def _get(sec, key, conv=str, default=None, required=False):
    if key not in sec:
        if required:
            raise ConfigError(f"missing key '{key}' in section [{sec.name}]")
        return default
    try:
        return conv(sec[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}' in [{sec.name}]: {sec[key]!r}") from exc


def _resolve(base: Path, text: str) -> Path:
    path = Path(text)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(f"referenced file does not exist: {path}")
    return path


def _domain_from(sec) -> Domain:
    mode = _get(sec, "mode", default="radial")
    dim = _get(sec, "dim", int, required=True)
    if not 3 <= dim <= 8:
        raise ConfigError(f"dim must lie in 3..8, got {dim}")
    if mode == "radial":
        radius = _get(sec, "radius", float, 1.0)
        nodes = _get(sec, "nodes", int, 1001)
        if radius <= 0 or nodes < 3:
            raise ConfigError("radial domain needs radius > 0 and nodes >= 3")
        return Domain.radial_ball(dim, radius, nodes)
    if mode == "cartesian":
        h = _get(sec, "h", float, required=True)
        if h <= 0:
            raise ConfigError("h must be positive")
        if "radius" in sec:
            return Domain.cartesian_ball(dim, _get(sec, "radius", float), h)
        lower = _get(sec, "lower", _floats, required=True)
        upper = _get(sec, "upper", _floats, required=True)
        return Domain.box(dim, lower, upper, h)
    raise ConfigError(f"unknown domain mode {mode!r}")


def _potential_from(sec, dom: Domain, base: Path) -> PotentialSpec:
    kind = _get(sec, "kind", default="constant")
    extra = {}
    if "cap" in sec:
        extra["cap"] = _get(sec, "cap", float)
    if "floor" in sec:
        extra["floor"] = _get(sec, "floor", float)
    if kind == "constant":
        a = PotentialSpec.constant(_get(sec, "value", float, 0.0), **extra)
    elif kind == "well":
        depths = _get(sec, "depth", _floats, required=True)
        radii = _get(sec, "radius", _floats, required=True)
        centers = _get(sec, "center", lambda t: [_floats(c) for c in t.split(";")], None)
        if len(depths) != len(radii):
            raise ConfigError("well: depth and radius lists differ in length")
        if any(d >= 0 for d in depths) or any(r <= 0 for r in radii):
            raise ConfigError("well: depths must be negative and radii positive")
        centers = centers or [None] * len(depths)
        if len(centers) != len(depths):
            raise ConfigError("well: one center per well")
        wells = [Well(r, d, None if c is None else tuple(c)) for r, d, c in zip(radii, depths, centers)]
        a = PotentialSpec.multi_well(wells, **extra)
    elif kind == "hardy":
        coupling = _get(sec, "coupling", float, required=True)
        if coupling <= 0:
            raise ConfigError("hardy: coupling must be positive")
        a = PotentialSpec.hardy(coupling, **extra)
    elif kind == "file":
        samples = load_grid(_resolve(base, _get(sec, "path", required=True)))
        if not samples.domain.same_grid(dom):
            raise ConfigError("potential file does not match the domain grid")
        a = PotentialSpec.sampled(samples, **extra)
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")
    if dom.dim == 4:
        # four-dimensional scenarios require a <= 0
        if a.cap not in (None, 0.0):
            raise ConfigError("4D scenarios require cap = 0")
        # cap = 0 here means a <= 0, not the strict a < M of PotentialSpec.cap
        a = replace(a, cap=None)
        if np.any(a.sample(dom)[dom.unknown_mask] > 0):
            raise PreconditionError("4D scenarios require a(x) <= 0")
    return a


def load_scenario(path, seed: int = 0) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for sec in ("domain", "potential"):
        if sec not in cp:
            raise ConfigError(f"missing section [{sec}] in {path}")
    base = path.parent
    dom = _domain_from(cp["domain"])
    a = _potential_from(cp["potential"], dom, base)
    solver = cp["solver"] if "solver" in cp else cp["DEFAULT"]
    opts = MinimizeOptions(tol=_get(solver, "tol", float, 1e-6),
                           max_iter=_get(solver, "max_iter", int, 10_000), seed=seed)
    if opts.tol <= 0 or opts.max_iter < 1:
        raise ConfigError("solver: tol must be positive and max_iter >= 1")
    init_kind = _get(solver, "init", default="ground")
    if init_kind == "ground":
        init = "ground"
    elif init_kind == "bubble":
        eps = _get(solver, "bubble_eps", float, required=True)
        cut = _get(solver, "bubble_cutoff", float, None)
        center = _get(solver, "bubble_center", _floats, None)
        if eps <= 0 or (cut is not None and cut <= 0):
            raise ConfigError("bubble init needs eps > 0 and cutoff > 0")
        init = BubbleSpec(dom.dim, eps, None if center is None else tuple(center), cut)
    elif init_kind == "file":
        init = _resolve(base, _get(solver, "init_path", required=True))
    else:
        raise ConfigError(f"unknown init {init_kind!r}")
    name = cp["DEFAULT"].get("name", path.stem)
    return Scenario(name, dom, a, init, opts, {"seed": seed})


# -- output -------------------------------------------------------------------------


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _emit(args, name: str, text: str, summary: str) -> None:
    if args.out:
        _write_atomic(Path(args.out) / f"{name}.csv", text)
        print(summary)
    else:
        sys.stdout.write(text)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _pmap(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- commands -----------------------------------------------------------------------


def _bubble_row(job):
    n, eps, tol = job
    spec = BubbleSpec(n, eps)
    return eps, bubbles.bubble_energy(spec, 0.0, rtol=tol), bubbles.bubble_mass(spec, rtol=tol)


def cmd_bubble_verify(args) -> int:
    n = args.n
    if not 3 <= n <= 8:
        raise UnsupportedError(f"n must lie in 3..8, got {n}")
    eps = _floats(args.eps)
    if not eps or any(e <= 0 for e in eps):
        raise ConfigError("eps values must be positive")
    rows = _pmap(_bubble_row, [(n, e, args.quad_tol) for e in eps], args.jobs)
    vals = np.array([[r[1], r[2]] for r in rows])
    ref = vals[0, 0]
    spread = float(np.max(np.abs(vals - ref)) / ref)
    text = _table(["eps", "energy", "mass"], rows)
    text += f"# n={n} S={float(ref ** (2.0 / n))!r} max_rel_spread={spread!r} quad_tol={args.quad_tol!r}\n"
    ok = spread <= max(10 * args.quad_tol, 1e-12)
    _emit(args, f"bubble_verify_n{n}", text,
          f"bubble-verify n={n}: S={float(ref ** (2.0 / n))!r} spread={spread:.3e} {'ok' if ok else 'FAILED'}")
    if not ok:
        print(f"energy/mass not eps-invariant: spread {spread:.3e}", file=sys.stderr)
        return 1
    return 0


def cmd_deficit(args) -> int:
    n = args.n
    if n < 4:
        raise UnsupportedError("deficit expansions are defined for n >= 4")
    eps = _floats(args.eps)
    if n == 4:
        fit = bubbles.deficit_expansion_4d(args.lam, args.mu, eps, rtol=args.quad_tol)
    else:
        fit = bubbles.deficit_expansion(n, args.lam, args.mu, eps, rtol=args.quad_tol)
    text = fit.to_csv()
    summary = (f"deficit n={n} lambda={args.lam!r} mu={args.mu!r}: model={fit.model} "
               f"q={fit.fitted_exponent!r} A={fit.fitted_constant!r} residual={fit.residual!r}")
    if fit.model == "log":
        summary += f" alt_residual={fit.alt_residual!r} R={fit.extras['bracket_radius']!r}"
    _emit(args, f"deficit_n{n}", text, summary)
    return 0


def _run_scenario(job):
    path, seed = job
    sc = load_scenario(path, seed)
    rep = minimize_quotient(sc.potential, sc.domain, sc.init, sc.options)
    return sc.name, rep.to_csv(), rep.s_a_estimate, rep.sobolev, rep.status


def cmd_minimize(args) -> int:
    for p in args.config:
        load_scenario(p, args.seed)  # validate everything before running anything
    results = _pmap(_run_scenario, [(p, args.seed) for p in args.config], args.jobs)
    for name, text, s_a, S, status in results:
        _emit(args, name, text, f"{name}: s_a={s_a!r} S={S!r} status={status}")
    return 0


def cmd_lorentz(args) -> int:
    u = load_grid(args.grid)
    prof = decreasing_rearrangement(u)
    rows = []
    for p in _floats(args.p):
        for d in [_exponent(t) for t in str(args.d).replace(",", " ").split()]:
            rows.append([p, d if math.isfinite(d) else "inf",
                         lorentz_norm(prof, LorentzExponents(p, d))])
    text = _table(["p", "d", "norm"], rows)
    text += f"# measure={prof.total_measure!r} steps={len(prof)}\n"
    _emit(args, Path(args.grid).stem + "_lorentz", text, f"lorentz {args.grid}: {len(rows)} norms")
    return 0


def cmd_split(args) -> int:
    u = load_grid(args.grid)
    exps = LorentzExponents(float(args.p), _exponent(args.d))
    res = split_domain(u, exps, args.tol)
    text = _table(["bound_k", "tail_norm", "inner_count", "outer_count"],
                  [[res.bound_k, res.tail_norm, res.inner_count, res.outer_count]])
    text += "# history " + " ".join(f"{k}:{t!r}" for k, t in res.history) + "\n"
    _emit(args, Path(args.grid).stem + "_split", text,
          f"split {args.grid}: bound_k={res.bound_k} tail_norm={res.tail_norm!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    def globals_(parser, defaults: bool):
        kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
        parser.add_argument("--out", help="write CSV reports into this directory", **kw(None))
        parser.add_argument("--jobs", type=int, help="parallel workers across scenarios / eps points", **kw(1))
        parser.add_argument("--seed", type=int, **kw(0))
        parser.add_argument("--quad-tol", type=float, dest="quad_tol", **kw(bubbles.QUAD_RTOL))

    ap = argparse.ArgumentParser(prog="yamabelab", description=__doc__.split("\n\n")[0])
    globals_(ap, True)
    common = argparse.ArgumentParser(add_help=False)
    globals_(common, False)  # the same flags are also accepted after the command
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bubble-verify", parents=[common], help="eps-invariance of the bubble energy and mass")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", default="1,0.1,0.01")
    p.set_defaults(func=cmd_bubble_verify)

    p = sub.add_parser("deficit", parents=[common], help="eps-asymptotics of the cut-bubble energy")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--lam", type=float, default=-1.0)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--eps", default="0.1,0.05,0.025,0.0125,0.00625")
    p.set_defaults(func=cmd_deficit)

    p = sub.add_parser("minimize", parents=[common], help="run minimization scenarios")
    p.add_argument("config", nargs="+")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("lorentz", parents=[common], help="Lorentz norms of a grid file")
    p.add_argument("grid")
    p.add_argument("--p", required=True)
    p.add_argument("--d", default="inf")
    p.set_defaults(func=cmd_lorentz)

    p = sub.add_parser("split", parents=[common], help="bounded / small-tail splitting of a grid file")
    p.add_argument("grid")
    p.add_argument("--p", required=True)
    p.add_argument("--d", required=True)
    p.add_argument("--tol", type=float, required=True)
    p.set_defaults(func=cmd_split)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.jobs < 1 or not args.quad_tol > 0 or args.seed < 0:
        print("error: --jobs >= 1, --quad-tol > 0 and --seed >= 0 required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
