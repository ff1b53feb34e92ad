import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabelab.errors import DomainError, NoConvergenceError, StructuralError, UnsupportedExponentError
from yamabelab.bubbles import BubbleSpec, bubble_eval
from yamabelab.grid import Domain, GridFunction, ball_volume, dirichlet_energy, lp_norm
from yamabelab.lorentz import (INFINITY, LorentzExponents, StepProfile, decreasing_rearrangement,
                               distribution_function, grid_lorentz_norm, lorentz_norm, split_domain,
                               weighted_l2_norm)
from yamabelab.potentials import PotentialSpec

D_CHOICES = [1.0, 1.5, 2.0, 3.0, 7.0, INFINITY]


def dyadic_box():
    return Domain.box(3, -0.5, 0.5, 0.125)  # cell volume 2^-9


def rough_field(dom, rng, zero_frac=None):
    vals = rng.standard_normal(dom.size) * np.exp(rng.normal(0.0, 1.5, dom.size))
    zero_frac = rng.uniform(0, 0.8) if zero_frac is None else zero_frac
    vals[rng.random(dom.size) < zero_frac] = 0.0
    vals[rng.integers(dom.size)] = 1.0  # never identically zero
    return GridFunction(dom, vals)


def norm(f, p, d):
    return grid_lorentz_norm(f, LorentzExponents(p, d))


# -- types -------------------------------------------------------------------------


@pytest.mark.parametrize("p,d", [(0.5, 2.0), (INFINITY, 2.0), (2.0, 0.5), (2.0, float("nan"))])
def test_bad_exponents(p, d):
    with pytest.raises(UnsupportedExponentError):
        LorentzExponents(p, d)


def test_step_profile_validation():
    with pytest.raises(StructuralError):
        StepProfile(np.array([1.0, 2.0]), np.array([1.0, 1.0]))
    with pytest.raises(StructuralError):
        StepProfile(np.array([2.0, 1.0]), np.array([1.0, 0.0]))


def test_from_samples_merges_and_drops_zeros():
    prof = StepProfile.from_samples([0.0, -3.0, 1.0, 3.0, 1.0], [5.0, 1.0, 0.5, 2.0, 0.25])
    assert np.array_equal(prof.values, [3.0, 1.0])
    assert np.array_equal(prof.widths, [3.0, 0.75])
    assert prof(0.0) == 3.0 and prof(2.99) == 3.0 and prof(3.0) == 1.0 and prof(10.0) == 0.0


def test_profile_csv_round_trip(tmp_path, rng):
    prof = decreasing_rearrangement(rough_field(dyadic_box(), rng))
    path = tmp_path / "g.csv"
    prof.to_csv(path)
    back = StepProfile.from_csv(path)
    assert np.array_equal(back.values, prof.values) and np.array_equal(back.widths, prof.widths)
    with pytest.raises(StructuralError):
        StepProfile.from_csv("val,w\n1,1\n")


def test_distribution_rejects_nonpositive_sigma(rng):
    f = rough_field(dyadic_box(), rng)
    for s in (0.0, -1.0):
        with pytest.raises(DomainError):
            distribution_function(f, s)


# -- equimeasurability -------------------------------------------------------------------


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_equimeasurable(seed):
    rng = np.random.default_rng(seed)
    dom = dyadic_box()
    f = rough_field(dom, rng)
    prof = decreasing_rearrangement(f)
    vals = np.abs(f.interior)
    levels = np.unique(np.r_[vals[vals > 0], vals[vals > 0] * 0.999, vals.max() * 2])
    for s in levels:
        assert distribution_function(f, s) == prof.measure_above(s)
    assert prof.total_measure == distribution_function(f, np.min(vals[vals > 0]) / 2)


def test_rearrangement_is_nonincreasing(rng):
    prof = decreasing_rearrangement(rough_field(dyadic_box(), rng))
    t = np.linspace(0, prof.total_measure * 1.1, 997)
    assert np.all(np.diff(prof(t)) <= 0)


# -- norms --------------------------------------------------------------------------------


@given(seed=st.integers(0, 2**32 - 1), p=st.floats(1.0, 12.0))
@settings(max_examples=60, deadline=None)
def test_lpp_equals_lp(seed, p):
    rng = np.random.default_rng(seed)
    f = rough_field(dyadic_box(), rng)
    a, b = norm(f, p, p), lp_norm(f, p)
    assert abs(a - b) <= 1e-12 * b


@given(c=st.floats(1e-3, 1e3), p=st.floats(1.0, 10.0), d=st.sampled_from(D_CHOICES))
@settings(max_examples=60, deadline=None)
def test_constant_closed_form(c, p, d):
    dom = Domain.box(3, 0, 1, 0.25)
    f = GridFunction(dom, np.full(dom.size, c))
    # chi_V: ||.||^d = int_0^V t^{d/p - 1} dt = (p/d) V^{d/p}; here V = 1
    expected = c if d == INFINITY else c * (p / d) ** (1 / d)
    assert math.isclose(norm(f, p, d), expected, rel_tol=1e-13)


def test_weak_norm_is_sup():
    prof = StepProfile(np.array([4.0, 2.0, 1.0]), np.array([1.0, 3.0, 12.0]))
    # sup_t g*(t) t^{1/2} over right endpoints t = 1, 4, 16
    assert lorentz_norm(prof, LorentzExponents(2.0)) == 4.0
    assert lorentz_norm(StepProfile(np.empty(0), np.empty(0)), LorentzExponents(2.0, 1.0)) == 0.0


def test_norm_homogeneous_and_triangle(rng):
    dom = dyadic_box()
    for _ in range(50):
        f, g = rough_field(dom, rng), rough_field(dom, rng)
        p = rng.uniform(1, 6)
        d = rng.uniform(1, p)  # d <= p: the functional is a norm
        assert math.isclose(norm(f * 3.5, p, d), 3.5 * norm(f, p, d), rel_tol=1e-13)
        assert norm(f + g, p, d) <= (norm(f, p, d) + norm(g, p, d)) * (1 + 1e-12)


def test_large_d_no_overflow():
    prof = StepProfile(np.array([1e200, 1.0]), np.array([1.0, 1.0]))
    val = lorentz_norm(prof, LorentzExponents(2.0, 50.0))
    assert math.isfinite(val) and val > 1e199


# -- Hoelder-type inequalities ------------------------------------------------------------


def _pair(dom, rng):
    f = rough_field(dom, rng)
    if rng.random() < 0.5:
        return f, rough_field(dom, rng)
    # co-monotone partner: pushes the rearrangement inequality towards equality
    return f, GridFunction(dom, np.abs(f.values) ** rng.uniform(0.2, 3.0))


def _draw_d(rng):
    return D_CHOICES[rng.integers(len(D_CHOICES))]


def holder_trials(seed, trials):
    rng = np.random.default_rng(seed)
    dom = dyadic_box()
    vol = dom.interior_volumes
    bad_int, bad_prod, done_int, done_prod = 0, 0, 0, 0
    while done_int < trials or done_prod < trials:
        f, g = _pair(dom, rng)
        s = rng.uniform(1.05, 8.0)
        s_conj = s / (s - 1)
        d1, d2 = _draw_d(rng), _draw_d(rng)
        if done_int < trials and 1 / d1 + 1 / d2 >= 1:
            lhs = float(np.dot(np.abs(f.interior * g.interior), vol))
            rhs = norm(f, s, d1) * norm(g, s_conj, d2)
            bad_int += lhs > rhs * (1 + 1e-12)
            done_int += 1
        q, r = rng.uniform(1.0, 12.0, 2)
        e1, e2, e3 = _draw_d(rng), _draw_d(rng), _draw_d(rng)
        if done_prod < trials and 1 / q + 1 / r < 1 and 1 / e2 + 1 / e3 >= 1 / e1:
            s = 1 / (1 / q + 1 / r)
            fg = GridFunction(dom, f.values * g.values)
            lhs = norm(fg, s, e1)
            rhs = s / (s - 1) * norm(f, q, e2) * norm(g, r, e3)
            bad_prod += lhs > rhs * (1 + 1e-12)
            done_prod += 1
    return bad_int, bad_prod


def test_holder_inequalities():
    assert holder_trials(7, 200) == (0, 0)


def test_holder_tight_case():
    dom = dyadic_box()
    chi = GridFunction(dom, np.ones(dom.size))
    vol = dom.measure
    assert math.isclose(norm(chi, 2, 2) ** 2, vol, rel_tol=1e-14)  # int chi*chi = ||chi||_{2,2}^2


# -- truncation sequences ------------------------------------------------------------------


def test_monotone_truncations_rearrange_monotonically(rng):
    dom = dyadic_box()
    f = GridFunction(dom, np.abs(rough_field(dom, rng, 0.0).values))
    t = np.linspace(0, dom.measure, 501)[1:]
    prev_star, prev_norm = None, math.inf
    for k in range(1, 40):
        fk = GridFunction(dom, np.maximum(f.values - 0.05 * k * k, 0.0) * 0.9**k)
        star = decreasing_rearrangement(fk)(t)
        nk = norm(fk, 2.5, 1.0)
        if prev_star is not None:
            assert np.all(star <= prev_star)
            assert nk <= prev_norm
        prev_star, prev_norm = star, nk
    assert prev_norm < 1e-2 * norm(f, 2.5, 1.0)


# -- weighted norm --------------------------------------------------------------------------


def test_weighted_norm_accepts_spec_or_grid(rng):
    dom = Domain.cartesian_ball(3, 1.0, 0.125)
    a = PotentialSpec.well(0.5, -2.0)
    u = rough_field(dom, rng)
    assert weighted_l2_norm(u, a) == weighted_l2_norm(u, a.on(dom))
    ref = math.sqrt(sum(2.0 * v * v * w for v, w, x in zip(u.interior, dom.interior_volumes,
                                                            dom.cell_radii[dom.unknowns]) if x < 0.5))
    assert math.isclose(weighted_l2_norm(u, a), ref, rel_tol=1e-12)


def test_weighted_norm_sharp_bound(rng):
    # int |a| u^2 <= 4 / ((n-2)^2 V_n^{2/n}) ||a||_{n/2,inf} int |grad u|^2
    for n in (3, 4, 5, 6):
        dom = Domain.radial_ball(n, 1.0, 401)
        const = 4 / ((n - 2) ** 2 * ball_volume(n, 1.0) ** (2 / n))
        for a in (PotentialSpec.hardy(1.0), PotentialSpec.well(0.3, -5.0), PotentialSpec.well(0.05, -1.0)):
            weak = grid_lorentz_norm(a.on(dom), LorentzExponents(n / 2))
            for _ in range(20):
                eps = 10 ** rng.uniform(-2.5, 0)
                prof = lambda s: (eps * eps + s * s) ** (1 - n / 2) - (eps * eps + 1) ** (1 - n / 2)  # noqa: E731
                for u in (GridFunction.from_radial_profile(dom, prof),
                          GridFunction.from_interior(dom, rng.standard_normal(dom.unknowns.size))):
                    lhs = weighted_l2_norm(u, a) ** 2
                    assert lhs <= const * weak * dirichlet_energy(u)


def _weighted_share(a, eps):
    dom = Domain.radial_ball(5, 1.0, 4001)
    u = GridFunction.from_callable(dom, lambda x: bubble_eval(BubbleSpec(5, eps, cutoff_radius=0.5), x))
    return weighted_l2_norm(u, a) ** 2 / dirichlet_energy(u)


def test_bounded_potential_loses_bubbles():
    # a in L^{n/2,d}, d < inf: the weighted term vanishes along concentrating bubbles
    shares = [_weighted_share(PotentialSpec.well(0.5, -4.0), e) for e in (0.1, 0.03, 0.01)]
    assert shares[0] > shares[1] > shares[2] and shares[2] < 0.05 * shares[0]


def test_hardy_keeps_bubbles():
    # the weak-space potential sees every scale equally
    shares = [_weighted_share(PotentialSpec.hardy(1.0), e) for e in (0.1, 0.03, 0.01)]
    assert max(shares) < 1.2 * min(shares) and min(shares) > 0.1


# -- splitting -------------------------------------------------------------------------------


def test_split_rejects_weak_space():
    dom = Domain.radial_ball(5, 1.0, 101)
    with pytest.raises(UnsupportedExponentError):
        split_domain(PotentialSpec.hardy(1.0).on(dom), LorentzExponents(2.5, INFINITY), 1.0)


def hardy_tail_oracle(n, h, k, p):
    """||a chi_{|a| >= k}||_{p,1} for a sampled as shell averages of |x|^-2 on B_1."""
    # shell [lo, hi] has value (n/(n-2)) (hi^{n-2} - lo^{n-2}) / (hi^n - lo^n), decreasing in r,
    # measure V (hi^n - lo^n), so it contributes value * p * V^{1/p} (hi^{n/p} - lo^{n/p})
    i = np.arange(round(1 / h))
    lo, hi = np.maximum((i - 0.5) * h, 0.0), (i + 0.5) * h
    val = n / (n - 2) * (hi ** (n - 2) - lo ** (n - 2)) / (hi**n - lo**n)
    part = val * p * ball_volume(n, 1.0) ** (1 / p) * (hi ** (n / p) - lo ** (n / p))
    return float(part[val >= k].sum())


def hardy_bound_oracle(n, h, tol, p):
    k = 1
    while hardy_tail_oracle(n, h, k, p) >= tol:
        k *= 2
    return k


def test_hardy_oracle_against_continuum():
    # away from the cap the tail follows c V^{2/n} (n/2) ln(k2/k1) between thresholds
    n, h, p = 5, 1e-3, 2.5
    t1, t2 = hardy_tail_oracle(n, h, 2.0**4, p), hardy_tail_oracle(n, h, 2.0**12, p)
    slope = ball_volume(n, 1.0) ** (2 / n) * n / 2 * math.log(2.0**8)
    assert math.isclose(t1 - t2, slope, rel_tol=2e-2)


@pytest.mark.parametrize("tol", [10.0, 30.0, 50.0])
def test_split_hardy_matches_oracle(tol):
    n, nodes, p = 5, 1001, 2.5
    dom = Domain.radial_ball(n, 1.0, nodes)
    res = split_domain(PotentialSpec.hardy(1.0).on(dom), LorentzExponents(p, 1.0), tol)
    assert res.tail_norm < tol
    assert abs(math.log2(res.bound_k) - math.log2(hardy_bound_oracle(n, dom.h, tol, p))) <= 1
    assert np.all(np.diff([t for _, t in res.history]) <= 0)


def test_split_bounded_support_has_empty_outer():
    dom = Domain.cartesian_ball(3, 1.0, 0.125)
    res = split_domain(PotentialSpec.well(0.5, -0.5).on(dom), LorentzExponents(1.5, 1.0), 1e-3)
    assert res.bound_k == 1 and res.outer_count == 0 and res.tail_norm == 0.0
    assert res.inner_count == int(dom.unknown_mask.sum())


def test_split_partition_and_bound(rng):
    dom = Domain.box(3, -4.0, 4.0, 0.25)
    a = GridFunction(dom, rng.standard_normal(dom.size) * 50 / (1 + dom.cell_radii**4))
    res = split_domain(a, LorentzExponents(1.5, 2.0), 1e-1)
    assert np.all(res.inner_mask ^ res.outer_mask)
    k = res.bound_k
    inner = res.inner_mask
    assert np.all(np.abs(a.values.ravel()[inner]) < k) and np.all(dom.cell_radii[inner] < k)
    assert res.tail_norm < 1e-1
    ks = [h[0] for h in res.history]
    assert ks == [2**j for j in range(len(ks))]


def test_split_exhausted_schedule():
    dom = Domain.radial_ball(5, 1.0, 101)
    with pytest.raises(NoConvergenceError):
        split_domain(PotentialSpec.hardy(1.0).on(dom), LorentzExponents(2.5, 1.0), 1e-6,
                     max_doublings=3)
