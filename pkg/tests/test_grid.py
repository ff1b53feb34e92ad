import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_field
from yamabelab.bubbles import BubbleSpec, bubble_energy, bubble_eval, bubble_mass
from yamabelab.errors import DomainError, NoConvergenceError, StructuralError
from yamabelab.grid import (Domain, GridFunction, ball_volume, cg_solve, critical_exponent,
                            dirichlet_energy, inner, laplacian_apply, load_grid, lp_norm,
                            solve_laplace, store_grid)
from yamabelab.lorentz import LorentzExponents, grid_lorentz_norm


def test_laplacian_of_zero(radial5, ball3):
    for dom in (radial5, ball3):
        z = GridFunction(dom, np.zeros(dom.size))
        assert np.all(laplacian_apply(z).values == 0)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_laplacian_symmetric(seed):
    rng = np.random.default_rng(seed)
    for dom in (Domain.radial_ball(4, 1.0, 101), Domain.cartesian_ball(3, 1.0, 0.2)):
        u, v = random_field(dom, rng), random_field(dom, rng)
        lhs = inner(laplacian_apply(u), v)
        rhs = inner(u, laplacian_apply(v))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


def test_laplacian_positive(rng):
    dom = Domain.cartesian_ball(3, 1.0, 0.2)
    for _ in range(10):
        u = random_field(dom, rng)
        assert inner(u, laplacian_apply(u)) > 0


def _lowest_eigenvalue(nodes):
    dom = Domain.radial_ball(3, 1.0, nodes)
    x = np.ones(dom.unknowns.size)
    vol = dom.interior_volumes
    lam = 0.0
    for _ in range(200):  # inverse power iteration
        y = dom.solve_stiffness(vol * x)
        lam = float(np.dot(x * x, vol) / np.dot(x * y, vol))
        x = y / math.sqrt(np.dot(y * y, vol))
    return lam


def test_ball_ground_state_eigenvalue():
    # ground state of the unit ball in R^3 is sin(pi r)/r with eigenvalue pi^2
    e1 = abs(_lowest_eigenvalue(101) - math.pi**2)
    e2 = abs(_lowest_eigenvalue(201) - math.pi**2)
    assert e1 < 1e-2 * math.pi**2
    assert 3.0 < e1 / e2 < 5.0  # second order


def test_energy_zero_and_scaling(rng, radial5, ball3):
    for dom in (radial5, ball3):
        assert dirichlet_energy(GridFunction(dom, np.zeros(dom.size))) == 0
        u = random_field(dom, rng)
        e = dirichlet_energy(u)
        for t in (0.5, 3.0, -2.0):
            assert math.isclose(dirichlet_energy(u * t), t * t * e, rel_tol=1e-13)


@pytest.mark.parametrize("dom", [Domain.radial_ball(5, 1.0, 301), Domain.cartesian_ball(3, 1.0, 0.1),
                                 Domain.box(4, -1, 1, 0.25)])
def test_summation_by_parts(dom, rng):
    u = random_field(dom, rng)
    e = dirichlet_energy(u)
    assert math.isclose(e, inner(u, laplacian_apply(u)), rel_tol=1e-12)


def test_sampled_bubble_energy_and_mass(radial5):
    spec = BubbleSpec(5, 0.1, cutoff_radius=0.5)
    u = GridFunction.from_callable(radial5, lambda x: bubble_eval(spec, x))
    assert math.isclose(dirichlet_energy(u), bubble_energy(spec), rel_tol=1e-2)
    p = critical_exponent(5)
    assert math.isclose(lp_norm(u, p) ** p, bubble_mass(spec), rel_tol=1e-2)


def test_lp_norm_unit_volume():
    dom = Domain.box(3, 0.0, 1.0, 0.25)
    one = GridFunction(dom, np.ones(dom.size))
    for p in (1.0, 2.0, 10 / 3, 7.5):
        assert math.isclose(lp_norm(one, p), 1.0, rel_tol=1e-14)


def test_lp_norm_rejects_small_p(box3):
    with pytest.raises(DomainError):
        lp_norm(GridFunction(box3, np.ones(box3.size)), 0.5)


def test_l2_matches_lorentz_22(rng, box3, radial5):
    for dom in (box3, radial5):
        u = random_field(dom, rng)
        a = lp_norm(u, 2.0)
        b = grid_lorentz_norm(u, LorentzExponents(2.0, 2.0))
        assert abs(a - b) <= 1e-12 * a


@given(seed=st.integers(0, 2**32 - 1), p=st.floats(1.0, 8.0))
@settings(max_examples=30, deadline=None)
def test_norms_invariant_under_relabeling(seed, p):
    dom = Domain.box(3, -0.5, 0.5, 0.125)
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(dom.size)
    u = GridFunction(dom, vals)
    v = GridFunction(dom, rng.permutation(vals))
    assert math.isclose(lp_norm(u, p), lp_norm(v, p), rel_tol=1e-12)


def test_radial_and_cartesian_agree_in_3d():
    prof = lambda r: np.clip(1 - r**2, 0, None)  # noqa: E731
    rad = Domain.radial_ball(3, 1.0, 801)
    car = Domain.cartesian_ball(3, 1.0, 0.04)
    exact = 16 * math.pi / 5  # int_0^1 (2r)^2 4 pi r^2 dr
    er = dirichlet_energy(GridFunction.from_radial_profile(rad, prof))
    ec = dirichlet_energy(GridFunction.from_radial_profile(car, prof))
    assert math.isclose(er, exact, rel_tol=1e-4)
    assert math.isclose(ec, exact, rel_tol=0.08)


def test_radial_volumes_sum_to_ball():
    dom = Domain.radial_ball(5, 2.0, 257)
    assert math.isclose(dom.volumes.sum(), ball_volume(5, 2.0), rel_tol=1e-13)


# -- cg -------------------------------------------------------------------------------


def test_cg_zero_rhs(box3):
    x = cg_solve(laplacian_apply, GridFunction(box3, np.zeros(box3.size)))
    assert np.all(x.values == 0)


def test_cg_identity(rng, box3):
    b = random_field(box3, rng)
    x = cg_solve(lambda u: u, b, tol=1e-14)
    assert np.allclose(x.values, b.values, rtol=0, atol=1e-14)


@pytest.mark.parametrize("h", [0.125, 1 / 15])
def test_cg_matches_dense_solve(rng, h):
    dom = Domain.box(3, 0.0, 1.0, h)  # at most 15^3 cells
    b = random_field(dom, rng)
    x = cg_solve(laplacian_apply, b, tol=1e-10)
    K = dom.stiffness.toarray()
    ref = sla.solve(K, b.interior * dom.interior_volumes, assume_a="pos")
    # cond(K) < 1e2 here, so a 1e-10 residual bounds the error by ~1e-8
    assert np.linalg.norm(x.interior - ref) <= 1e-7 * np.linalg.norm(ref)
    # residual contract in the grid norm
    r = laplacian_apply(x) - b
    assert math.sqrt(inner(r, r)) <= 1e-10 * math.sqrt(inner(b, b))


def test_cg_reports_cap(rng, box3):
    b = random_field(box3, rng)
    with pytest.raises(NoConvergenceError) as err:
        cg_solve(laplacian_apply, b, tol=1e-14, maxiter=3)
    assert err.value.last_value > 1e-14


def test_solve_laplace_methods_agree(rng, ball3):
    b = random_field(ball3, rng)
    x1 = solve_laplace(b, method="direct")
    x2 = solve_laplace(b, tol=1e-12, method="cg")
    assert np.allclose(x1.values, x2.values, rtol=0, atol=1e-10 * np.abs(x1.values).max())


# -- files ------------------------------------------------------------------------------


@pytest.mark.parametrize("dom", [Domain.radial_ball(5, 1.0, 64), Domain.cartesian_ball(3, 1.0, 0.25),
                                 Domain.box(4, -1, 1, 0.5)])
def test_grid_round_trip(tmp_path, rng, dom):
    u = random_field(dom, rng)
    store_grid(u, tmp_path / "u.grid")
    v = load_grid(tmp_path / "u.grid")
    assert v.domain.same_grid(dom)
    assert np.array_equal(u.values, v.values)


def test_shape_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_text("# cql-grid v1\nmode=cartesian dim=4 shape=2x2x2 h=0.5 origin=0,0,0,0\n"
                    + "0.0\n" * 8)
    with pytest.raises(StructuralError):
        load_grid(path)
    path.write_text("# cql-grid v1\nmode=cartesian dim=4 shape=2x2x2x2 h=0.5 origin=0,0,0,0\n"
                    + "0.0\n" * 15)
    with pytest.raises(StructuralError):
        load_grid(path)


def test_malformed_header_rejected(tmp_path):
    path = tmp_path / "bad.grid"
    path.write_text("# cql-grid v1\nmode=radial dim=five shape=3 R=1\n0\n0\n0\n")
    with pytest.raises(StructuralError):
        load_grid(path)
    path.write_text("cql grid\n")
    with pytest.raises(StructuralError):
        load_grid(path)


def test_radial_file_spacing(tmp_path):
    path = tmp_path / "r.grid"
    path.write_text("# cql-grid v1\nmode=radial dim=5 shape=1001 R=1\n" + "1.0\n" * 1001)
    u = load_grid(path)
    assert u.domain.h == pytest.approx(1e-3, rel=1e-12)
    assert u.values[-1] == 0.0  # Dirichlet node
