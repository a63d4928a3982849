import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feedcap.gaussian_estimation import (
    DCoeffs,
    GramState,
    MessageFilter,
    d_coeffs,
    dense_mmse_u,
    dense_mmse_v,
    dense_posterior,
    det_leading_order,
    filter_theory,
    gram_closed_forms,
    gram_from_d,
    lemma1_brute,
    lemma1_quadratic,
    log_mmse_u,
    log_mmse_v,
    mmse_u,
    mmse_v,
    observation_row,
    s_sums,
    sk1_d,
    sk1_mmse,
    transition,
)
from feedcap.noise_model import ArModel, whiten
from feedcap.params import Sk2Params, message_coeffs
from feedcap.verify import cauchy_binet_det

CASES = [
    ((), Sk2Params.real(2.0, -2.0)),
    ((), Sk2Params.conjugate(math.sqrt(2.0), math.pi / 3)),
    ((0.5,), Sk2Params.real(1.5, 1.2)),
    ((0.5,), Sk2Params.repeated(1.5)),
    ((0.3, 0.4), Sk2Params.conjugate(1.4, 1.0)),
    ((0.3, 0.4), Sk2Params.repeated(-1.4)),
    ((0.2, -0.5, 0.7), Sk2Params.real(1.25, -1.5)),
]


def _random_matrix(rng, n, m):
    return rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))


# -- quadratic forms of (I + U U*)^{-1} ------------------------------------


def test_lemma1_single_column():
    U = np.array([[1.0], [0.0]])
    assert lemma1_quadratic(U, 1, 1) == pytest.approx(0.5)
    assert lemma1_brute(U, 1, 1) == pytest.approx(0.5)


def test_lemma1_zero_matrix():
    U = np.zeros((4, 3))
    for i in range(1, 4):
        for j in range(1, 4):
            assert lemma1_quadratic(U, i, j) == 0


def test_lemma1_orthonormal_columns():
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 3)))
    for i in range(1, 4):
        for j in range(1, 4):
            assert lemma1_brute(Q, i, j) == pytest.approx(0.5 if i == j else 0.0, abs=1e-12)
            assert lemma1_quadratic(Q, i, j) == pytest.approx(0.5 if i == j else 0.0, abs=1e-12)


def test_lemma1_random_all_pairs():
    U = _random_matrix(np.random.default_rng(3), 6, 3)
    for i in range(1, 4):
        for j in range(1, 4):
            assert abs(lemma1_quadratic(U, i, j) - lemma1_brute(U, i, j)) < 1e-10


@settings(max_examples=60)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 10_000))
def test_lemma1_property(n, m, seed):
    U = _random_matrix(np.random.default_rng(seed), n, m)
    rng = np.random.default_rng(seed + 1)
    i, j = int(rng.integers(1, m + 1)), int(rng.integers(1, m + 1))
    assert abs(lemma1_quadratic(U, i, j) - lemma1_brute(U, i, j)) < 1e-9


def test_lemma1_index_validation():
    with pytest.raises(IndexError):
        lemma1_quadratic(np.ones((2, 2)), 3, 1)
    with pytest.raises(ValueError):
        lemma1_quadratic(np.ones((0, 2)), 1, 1)


# -- whitened gains -----------------------------------------------------------


def test_d_coeffs_white_real_pair():
    dc = d_coeffs(ArModel(()), Sk2Params.real(2.0, -2.0), 3)
    np.testing.assert_allclose(dc.d1, [1.0, 0.0, 4.0], atol=1e-12)


def test_d_coeffs_white_repeated():
    n = np.arange(1, 9)
    dc = d_coeffs(ArModel(()), Sk2Params.repeated(2.0), 8)
    np.testing.assert_allclose(dc.d1, (2.0 - n) * 2.0 ** (n - 1), atol=1e-12)
    np.testing.assert_allclose(dc.d2, (n - 1.0) * 2.0 ** (n - 2), atol=1e-12)


@pytest.mark.parametrize("betas,params", CASES)
def test_d_coeffs_match_whitened_message(betas, params):
    model = ArModel(betas)
    n, p = 25, model.order
    a, b = message_coeffs(params, n)
    dc = d_coeffs(model, params, n)
    np.testing.assert_allclose(dc.d1[p:], whiten(model, a), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(dc.d2[p:], whiten(model, b), rtol=1e-10, atol=1e-10)


def test_sk1_d_matches_whitened_message():
    model = ArModel((0.3, -0.6))
    g = -1.7
    c = g ** np.arange(20.0)
    np.testing.assert_allclose(sk1_d(model, g, 20)[2:], whiten(model, c), rtol=1e-12)


# -- MMSE ---------------------------------------------------------------------


def test_mmse_u_single_observation():
    d, e = 0.7, -1.3
    dc = DCoeffs(np.array([d]), np.array([e]))
    assert mmse_u(dc, 1, 1) == pytest.approx((1 + e * e) / (1 + d * d + e * e))


def test_mmse_u_no_information():
    dc = DCoeffs(np.zeros(5), np.zeros(5))
    assert mmse_u(dc, 5, 1) == pytest.approx(1.0)
    assert mmse_u(dc, 5, 2) == pytest.approx(1.0)


def test_mmse_u_random_against_dense():
    rng = np.random.default_rng(11)
    dc = DCoeffs(rng.standard_normal(12), rng.standard_normal(12))
    for which in (1, 2):
        assert abs(mmse_u(dc, 12, which) - dense_mmse_u(dc, 12, which)) < 1e-10


def test_mmse_v_one_observation_by_hand():
    params = Sk2Params.real(1.6, -1.3)
    dc = d_coeffs(ArModel(()), params, 2)
    # V_2 = U_2 given y_1 = d_{1,1} U_1 + d_{2,1} U_2 + W_1
    d, e = dc.d1[0], dc.d2[0]
    assert mmse_v(ArModel(()), params, dc, 2) == pytest.approx(1 - e * e / (1 + d * d + e * e))


def test_mmse_v_white_noise_limit():
    params = Sk2Params.real(2.0, 1.5)
    dc = d_coeffs(ArModel(()), params, 60)
    assert mmse_v(ArModel(()), params, dc, 60) == pytest.approx(4.0 * 2.25 - 1.0, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_mmse_v_random_params_against_dense(seed):
    rng = np.random.default_rng(seed)
    model = ArModel(tuple(rng.uniform(-0.8, 0.8, size=int(rng.integers(0, 3)))))
    kind = seed % 3
    if kind == 0:
        params = Sk2Params.real(rng.uniform(1.05, 1.6), -rng.uniform(1.05, 1.6))
    elif kind == 1:
        params = Sk2Params.conjugate(rng.uniform(1.05, 1.6), rng.uniform(0.2, 2.9))
    else:
        params = Sk2Params.repeated(rng.choice([-1, 1]) * rng.uniform(1.05, 1.6))
    dc = d_coeffs(model, params, 15)
    start = model.order + 1
    assert mmse_v(model, params, dc, 15, start) == pytest.approx(dense_mmse_v(params, dc, 15, start), rel=1e-9)


def test_sk1_mmse_white_closed_form():
    assert sk1_mmse(ArModel(()), 2.0, 20) == pytest.approx(1.0 / (1.0 + (4.0 ** 20 - 1) / 3.0), rel=1e-12)


def test_sk1_mmse_single_observation():
    model = ArModel((0.5,))
    L = 1 + 0.5 / 1.8
    assert sk1_mmse(model, 1.8, 1) == pytest.approx(1.0 / (1.0 + L * L))


# -- closed forms ---------------------------------------------------------------


def test_gram_closed_forms_n1():
    model, params = ArModel(()), Sk2Params.real(1.7, -1.2)
    dc = d_coeffs(model, params, 1)
    f = gram_closed_forms(model, params, 1)
    assert f.d1d1 == pytest.approx(dc.d1[0] ** 2)
    assert f.d2d2 == pytest.approx(dc.d2[0] ** 2)
    assert f.d1d2 == pytest.approx(dc.d1[0] * dc.d2[0], abs=1e-14)


def test_gram_closed_forms_white_opposite_roots():
    model, params = ArModel(()), Sk2Params.real(2.0, -2.0)
    dc = d_coeffs(model, params, 5)
    f = gram_closed_forms(model, params, 5)
    g11, g22, g12 = gram_from_d(dc, 5)
    assert f.d1d1 == pytest.approx(g11, rel=1e-12)
    assert f.d2d2 == pytest.approx(g22, rel=1e-12)
    assert f.d1d2 == pytest.approx(g12, abs=1e-9)
    assert f.det == pytest.approx(cauchy_binet_det(dc.d1, dc.d2), rel=1e-12)


def test_s_sums_brute_force():
    g, n = 1.5, 10
    s1, s2 = s_sums(g, n)
    k = np.arange(1, n)
    assert s1 == pytest.approx(np.sum(k * g ** (2 * k)), rel=1e-14)
    assert s2 == pytest.approx(np.sum(k * k * g ** (2 * k)), rel=1e-14)


def test_repeated_root_forms_against_direct_sums():
    model, params = ArModel((0.5,)), Sk2Params.repeated(1.5)
    dc = d_coeffs(model, params, 10)
    f = gram_closed_forms(model, params, 10)
    g11, g22, g12 = gram_from_d(dc, 10)
    assert f.d1d1 == pytest.approx(g11, rel=1e-10)
    assert f.d2d2 == pytest.approx(g22, rel=1e-10)
    assert f.d1d2 == pytest.approx(g12, rel=1e-10)
    assert f.det == pytest.approx(cauchy_binet_det(dc.d1, dc.d2), rel=1e-10)


@pytest.mark.parametrize("betas,params", CASES)
def test_exact_closed_forms_agree_with_float(betas, params):
    model = ArModel(betas)
    a = gram_closed_forms(model, params, 30)
    b = gram_closed_forms(model, params, 30, exact=True)
    assert float(b.det) == pytest.approx(a.det, rel=1e-9)
    assert float(b.d1d1) == pytest.approx(a.d1d1, rel=1e-9)


@pytest.mark.parametrize("betas,params", CASES)
def test_determinant_leading_order(betas, params):
    model = ArModel(betas)
    n = 600
    ratio = gram_closed_forms(model, params, n, exact=True).det / det_leading_order(model, params, n, exact=True)
    assert float(ratio) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("betas,params", CASES)
def test_log_mmse_matches_linear_domain(betas, params):
    model = ArModel(betas)
    n = 20
    dc = d_coeffs(model, params, n)
    for which in (1, 2):
        assert log_mmse_u(model, params, n, which) == pytest.approx(math.log(mmse_u(dc, n, which)), rel=1e-9)
    assert log_mmse_v(model, params, n) == pytest.approx(math.log(mmse_v(model, params, dc, n)), rel=1e-8, abs=1e-10)


# -- state-space recursion ------------------------------------------------------


@pytest.mark.parametrize("betas,params", CASES)
def test_observation_row_reproduces_gains(betas, params):
    model = ArModel(betas)
    dc = d_coeffs(model, params, 20)
    B, h = transition(params), observation_row(model, params)
    for k in range(model.order + 1, 21):
        d = np.linalg.matrix_power(B, k - 1).T @ h
        np.testing.assert_allclose(d, [dc.d1[k - 1], dc.d2[k - 1]], rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("betas,params", CASES)
def test_filter_theory_matches_closed_forms(betas, params):
    model = ArModel(betas)
    n, start = 25, model.order + 1
    power, logs = filter_theory(model, params, n)
    dc = d_coeffs(model, params, n)
    for k in range(start + 1, n + 1):
        assert power[k - 1] == pytest.approx(mmse_v(model, params, dc, k, start), rel=1e-8)
    for which in (1, 2):
        assert logs[which - 1] == pytest.approx(mmse_u(dc, n, which, start, log=True), rel=1e-9)


@pytest.mark.parametrize("betas,params", CASES)
def test_filter_theory_long_horizon_matches_exact(betas, params):
    """Far past double range the recursion still agrees with the 60-digit closed forms (start 1)."""
    model = ArModel(betas)
    n = 400
    f = MessageFilter(model, params)
    for k in range(1, n + 1):
        f.gain()  # observe from the first output, as the closed forms do
        if k < n:
            f.advance()
    rho = params.min_modulus
    M = f.back_map(n - 1, rho)
    cov_u = M @ f.cov @ M.T
    logs = np.log(np.diag(cov_u)) - 2.0 * (n - 1) * math.log(rho)
    for which in (1, 2):
        assert logs[which - 1] == pytest.approx(log_mmse_u(model, params, n, which), rel=1e-9)


def test_filter_sk1():
    model = ArModel((0.3,))
    power, logs = filter_theory(model, 1.6, 30)
    assert logs[0] == pytest.approx(math.log(sk1_mmse(model, 1.6, 30, start=2)), rel=1e-10)
    for k in range(3, 31):
        assert power[k - 1] == pytest.approx(1.6 ** (2 * (k - 1)) * sk1_mmse(model, 1.6, k - 1, start=2), rel=1e-9)


# -- information-form accumulator ------------------------------------------------


def test_gram_state_prior():
    state = GramState(2)
    np.testing.assert_array_equal(state.posterior_mean(), [0.0, 0.0])
    np.testing.assert_allclose(state.posterior_cov(), np.eye(2))


def test_gram_state_matches_dense_conditioning():
    rng = np.random.default_rng(5)
    D = rng.standard_normal((20, 2)) * 3
    y = rng.standard_normal(20)
    state = GramState(2)
    for d, v in zip(D, y):
        state.update(d, v)
    mean, cov = dense_posterior(D, y)
    np.testing.assert_allclose(state.posterior_mean(), mean, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(state.posterior_cov(), cov, rtol=1e-9, atol=1e-12)


def test_gram_state_rescaling_is_transparent():
    model, params = ArModel((0.5,)), Sk2Params.real(1.3, -1.2)
    dc = d_coeffs(model, params, 30)
    y = np.random.default_rng(2).standard_normal(30) * 10
    plain, scaled = GramState(2), GramState(2, threshold=1e4)
    for k in range(30):
        d = [dc.d1[k], dc.d2[k]]
        plain.update(d, y[k])
        scaled.update(d, y[k])
    assert scaled.log_scale > 0
    np.testing.assert_allclose(scaled.posterior_mean(), plain.posterior_mean(), rtol=1e-10)
    np.testing.assert_allclose(scaled.posterior_cov(), plain.posterior_cov(), rtol=1e-10)
