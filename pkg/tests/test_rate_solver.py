import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedcap.gaussian_estimation import filter_theory
from feedcap.noise_model import ArModel
from feedcap.params import Sk2Params
from feedcap.rate_solver import (
    SearchOptions,
    _power_delta,
    ar1_capacity,
    combined_rate,
    g_function,
    limit_identity_check,
    sk1_power,
    sk1_rate,
    sk2_power,
    sk2_power_distinct,
    sk2_power_repeated,
    sk2_rate,
)

# SK(1) rate for beta = [0.5], P = 1: -log of the root in (0, 1) of
# x^2 (1 + x/2)^2 - (1 - x^2), from 40-digit mpmath polyroots
AR1_HALF_P1 = 0.49681527627555227702


def test_sk1_power_examples():
    assert sk1_power(ArModel(()), 2.0) == pytest.approx(3.0)
    assert sk1_power(ArModel((0.5,)), 2.0) == pytest.approx(1.92)
    assert sk1_power(ArModel((0.5,)), -2.0) == pytest.approx(16 / 3)
    with pytest.raises(ValueError):
        sk1_power(ArModel(()), 0.9)


def test_sk1_rate_awgn():
    res = sk1_rate(ArModel(()), 3.0)
    assert res.rate_nats == pytest.approx(math.log(2.0), abs=1e-12)
    assert abs(res.params) == pytest.approx(2.0, abs=1e-9)
    assert res.rate_bits == pytest.approx(1.0, abs=1e-12)


def test_sk1_rate_small_power_goes_to_zero():
    assert sk1_rate(ArModel((0.5,)), 1e-8).rate_nats < 1e-7


def test_sk1_rate_ar1_against_mpmath_roots():
    mpmath.mp.dps = 40
    roots = mpmath.polyroots([0.25, 1.0, 2.0, 0.0, -1.0], maxsteps=200, extraprec=60)
    x = min(abs(r.real) for r in roots if abs(r.imag) < 1e-25 and 0 < r.real < 1)
    assert float(-mpmath.log(x)) == pytest.approx(AR1_HALF_P1, abs=1e-15)
    assert sk1_rate(ArModel((0.5,)), 1.0).rate_nats == pytest.approx(AR1_HALF_P1, abs=1e-12)


@pytest.mark.parametrize("P", [0.0, -1.0, float("nan"), float("inf")])
def test_power_validation(P):
    with pytest.raises(ValueError, match="power must be positive"):
        sk1_rate(ArModel(()), P)


def test_ar1_capacity_examples():
    assert ar1_capacity(0.0, 3.0) == pytest.approx(math.log(2.0), abs=1e-12)
    assert ar1_capacity(0.5, 1.0) == pytest.approx(AR1_HALF_P1, abs=1e-11)
    assert ar1_capacity(-0.7, 1e-9) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0.05, 20.0))
def test_ar1_capacity_equals_sk1(beta, P):
    assert abs(sk1_rate(ArModel((beta,)), P).rate_nats - ar1_capacity(beta, P)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), max_size=3), st.floats(0.05, 20.0))
def test_sk1_solution_meets_power_with_equality(betas, P):
    model = ArModel(tuple(betas))
    res = sk1_rate(model, P)
    assert res.power_at_solution == pytest.approx(P, rel=1e-8)
    assert sk1_power(model, res.params) == pytest.approx(P, rel=1e-8)


# -- SK(2) power map ---------------------------------------------------------


def test_sk2_power_awgn_examples():
    assert sk2_power_distinct(ArModel(()), 2.0, 1.5) == pytest.approx(8.0)
    g = Sk2Params.conjugate(math.sqrt(2.0), math.pi / 3)
    assert sk2_power(ArModel(()), g) == pytest.approx(3.0)
    assert sk2_power_repeated(ArModel(()), 1.7) == pytest.approx(1.7 ** 4 - 1)


@pytest.mark.parametrize("betas,params", [
    ((0.5,), Sk2Params.real(1.5, 1.2)),
    ((0.5,), Sk2Params.repeated(1.5)),
    ((0.3, 0.4), Sk2Params.repeated(-1.4)),
    ((0.3, 0.4), Sk2Params.conjugate(1.4, 1.0)),
    ((-0.6, 0.2, 0.5), Sk2Params.real(-1.3, 1.6)),
])
def test_sk2_power_is_prediction_error_limit(betas, params):
    """The power map is the steady-state prediction error of ``V_n``."""
    model = ArModel(betas)
    power, _ = filter_theory(model, params, 800)
    assert sk2_power(model, params) == pytest.approx(power[-1], rel=1e-10)


def test_coincident_roots_rejected():
    with pytest.raises(ValueError, match="coincide"):
        sk2_power_distinct(ArModel((0.5,)), 1.5, 1.5 + 1e-8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), max_size=3),
       st.floats(1.05, 2.5), st.floats(1.05, 2.5), st.sampled_from([(1, 1), (1, -1), (-1, 1), (-1, -1)]))
def test_power_forms_agree_real(betas, r1, r2, signs):
    g1, g2 = signs[0] * r1, signs[1] * r2
    if abs(g1 - g2) < 1e-2:
        return
    model = ArModel(tuple(betas))
    fg = sk2_power_distinct(model, g1, g2, form="fg")
    for form in ("delta", "series"):
        assert sk2_power_distinct(model, g1, g2, form=form) == pytest.approx(fg, rel=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), max_size=3), st.floats(1.05, 2.5), st.floats(0.05, 3.09))
def test_power_forms_agree_conjugate(betas, r, theta):
    model = ArModel(tuple(betas))
    p = Sk2Params.conjugate(r, theta)
    fg = sk2_power_distinct(model, p.gamma1, p.gamma2, form="fg")
    for form in ("delta", "series"):
        assert sk2_power_distinct(model, p.gamma1, p.gamma2, form=form) == pytest.approx(fg, rel=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), max_size=3), st.floats(1.05, 2.5), st.sampled_from([1, -1]),
       st.floats(2e-6, 1e-3))
def test_near_diagonal_is_continuous(betas, r, sign, gap):
    model = ArModel(tuple(betas))
    g = sign * r
    near = sk2_power_distinct(model, g + sign * gap, g)
    rep = sk2_power_repeated(model, g)
    # first-order merge: |f(g+e, g) - f_rep(g)| = O(e)
    assert abs(near - rep) <= 50 * gap * max(1.0, rep)


# -- merging-root limit --------------------------------------------------------


def test_limit_awgn_is_linear_in_eps():
    g = 1.5
    for e in (1e-3, 1e-4, 1e-5):
        assert sk2_power_distinct(ArModel(()), g + e, g) == pytest.approx((g + e) ** 2 * g * g - 1, rel=1e-12)
    rep = limit_identity_check(ArModel(()), g)
    assert rep.passed


@pytest.mark.parametrize("betas,g", [((0.5,), 1.5), ((0.3, 0.4), -1.4), ((0.3, 0.4), 1.3)])
def test_limit_identity(betas, g):
    rep = limit_identity_check(ArModel(betas), g)
    assert rep.passed
    assert rep.richardson_error < 1e-8
    # the distinct-root map approaches the repeated one at first order in eps
    assert rep.raw_errors[1] / rep.raw_errors[2] == pytest.approx(10.0, rel=1e-2)


def test_g_vanishes_on_diagonal():
    assert abs(complex(g_function(ArModel((0.3, 0.4)), 1.3, 1.3))) < 1e-12


def test_limit_check_validation():
    with pytest.raises(ValueError):
        limit_identity_check(ArModel(()), 0.5)
    with pytest.raises(ValueError):
        limit_identity_check(ArModel(()), 1.5, eps_sequence=(1e-3, 1e-4))


# -- searches --------------------------------------------------------------------


@pytest.mark.parametrize("P", [0.5, 1.0, 3.0, 10.0])
def test_sk2_awgn(P):
    res = sk2_rate(ArModel(()), P)
    assert res.rate_nats == pytest.approx(0.5 * math.log1p(P), abs=1e-8)
    assert abs(res.params.gamma1) == pytest.approx((1 + P) ** 0.25, abs=1e-4)
    assert abs(res.params.gamma2) == pytest.approx((1 + P) ** 0.25, abs=1e-4)
    assert res.power_at_solution <= P * (1 + 1e-9)


def test_sk2_below_ar1_capacity():
    assert sk2_rate(ArModel((0.5,)), 1.0).rate_nats <= ar1_capacity(0.5, 1.0) + 1e-9


def test_sk2_against_dense_scan():
    """Independent scan of both root families with the Delta/L_ij power form."""
    model, P = ArModel((0.5,)), 1.0

    def best_real(g1, g2):
        G1, G2 = np.meshgrid(g1, g2, indexing="ij")
        with np.errstate(all="ignore"):
            pw = np.real(_power_delta(model, G1.astype(complex), G2.astype(complex)))
        ok = (np.abs(G1 - G2) > 1e-6) & (pw <= P)
        rate = np.where(ok, 2 * np.log(np.minimum(np.abs(G1), np.abs(G2))), -np.inf)
        i = np.unravel_index(np.argmax(rate), rate.shape)
        return rate[i], G1[i], G2[i]

    side = np.arange(1.001, 2.2, 1e-3)
    grid = np.concatenate([-side, side])
    coarse, c1, c2 = best_real(grid, grid)
    fine = best_real(np.arange(c1 - 3e-3, c1 + 3e-3, 1e-5), np.arange(c2 - 3e-3, c2 + 3e-3, 1e-5))[0]

    R, T = np.meshgrid(side, np.arange(1e-3, math.pi, 1e-3), indexing="ij")
    Z = R * np.exp(1j * T)
    with np.errstate(all="ignore"):
        pw = np.real(_power_delta(model, Z, np.conj(Z)))
    conj = np.max(np.where(pw <= P, 2 * np.log(R), -np.inf))

    scan = max(fine, coarse, conj)
    assert abs(sk2_rate(model, P).rate_nats - scan) < 1e-4


def test_sk2_result_respects_budget_and_reports_family():
    res = sk2_rate(ArModel((-0.5, 0.9)), 1.0)
    assert res.power_at_solution <= 1.0 + 1e-8
    assert res.diagnostics["family"] in ("conjugate_pair", "real_distinct", "repeated")
    assert res.params.rate_nats == pytest.approx(res.rate_nats)


def test_search_options_validation():
    with pytest.raises(ValueError):
        SearchOptions(n_theta=1)
    with pytest.raises(ValueError):
        SearchOptions(tol=0.0)


def test_sk2_grid_refinement_is_stable():
    model = ArModel((0.3, 0.4))
    a = sk2_rate(model, 2.0).rate_nats
    b = sk2_rate(model, 2.0, SearchOptions(n_theta=2000, n_real=400)).rate_nats
    assert a == pytest.approx(b, abs=1e-8)


def test_combined_awgn_tie_goes_to_sk1():
    res = combined_rate(ArModel(()), 2.0)
    d = res.diagnostics
    assert abs(d["rate_sk1_nats"] - d["rate_sk2_nats"]) < 1e-9
    assert res.rate_nats == pytest.approx(0.5 * math.log(3.0), abs=1e-9)


def test_combined_ar1_sk1_wins():
    res = combined_rate(ArModel((0.5,)), 1.0)
    assert res.diagnostics["winner"] == "SK1"
    assert res.rate_nats == pytest.approx(AR1_HALF_P1, abs=1e-12)


def test_combined_ar2_sk2_wins_by_margin():
    res = combined_rate(ArModel((-0.95, 0.9)), 1.0)
    d = res.diagnostics
    assert d["winner"] == "SK2"
    assert d["rate_sk2_nats"] - d["rate_sk1_nats"] >= 0.01


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), min_size=1, max_size=2), st.floats(0.2, 5.0))
def test_combined_is_max_of_both(betas, P):
    model = ArModel(tuple(betas))
    res = combined_rate(model, P)
    d = res.diagnostics
    assert res.rate_nats == max(d["rate_sk1_nats"], d["rate_sk2_nats"])


@pytest.mark.parametrize("P", [1e-3, 1e-6])
def test_tiny_budget_stays_feasible(P):
    # powers vanish as the roots approach the unit circle, so tiny budgets still admit a rate
    res = sk2_rate(ArModel((0.9,)), P)
    assert 0 < res.rate_nats <= sk1_rate(ArModel((0.9,)), P).rate_nats * (1 + 1e-3)
    assert res.power_at_solution <= P * (1 + 1e-8)
