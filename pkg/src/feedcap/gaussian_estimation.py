"""Gaussian estimation of the two-dimensional message from whitened outputs.

After whitening, observation ``k`` is ``d_{1,k} U_1 + d_{2,k} U_2 + W_k``.
This module provides

* the minor-based quadratic form identity (:func:`lemma1_quadratic`) and its
  dense-inversion oracle,
* the whitened message gains :func:`d_coeffs`,
* MMSE of ``U_1``, ``U_2`` and of the one-step prediction of ``V_n``, from
  accumulated Gram entries or from closed forms (:func:`gram_closed_forms`),
* :class:`GramState`, the O(1)-per-step information-form recursion used by
  the simulator.

Closed forms can be evaluated in mpmath (``exact=True``) so that log-domain
values stay accurate when ``gamma^n`` leaves double range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .noise_model import ArModel
from .params import Sk2Params, message_coeffs, real_part_checked

__all__ = [
    "lemma1_quadratic",
    "lemma1_brute",
    "DCoeffs",
    "d_coeffs",
    "d_coeffs_scaled",
    "sk1_d",
    "gram_from_d",
    "mmse_u",
    "mmse_v",
    "sk1_mmse",
    "GramForms",
    "gram_closed_forms",
    "s_sums",
    "det_leading_order",
    "log_mmse_u",
    "log_mmse_v",
    "dense_mmse_u",
    "dense_mmse_v",
    "dense_posterior",
    "GramState",
    "l_matrix",
    "transition",
    "observation_row",
    "MessageFilter",
    "filter_theory",
]

_EXACT_DPS = 60


# --------------------------------------------------------------------------
# Quadratic forms of (I + U U*)^{-1}


def _check_indices(U: np.ndarray, i: int, j: int) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    n, m = U.shape
    if n < 1 or m < 1:
        raise ValueError("U must have at least one row and one column")
    if not (1 <= i <= m and 1 <= j <= m):
        raise IndexError(f"column indices ({i}, {j}) out of range 1..{m}")
    return U


def _minor(A: np.ndarray, row: int, col: int) -> complex:
    sub = np.delete(np.delete(A, row, axis=0), col, axis=1)
    return complex(np.linalg.det(sub)) if sub.size else 1.0 + 0.0j


def lemma1_quadratic(U, i: int, j: int) -> complex:
    """``u_i^* (I_n + U U^*)^{-1} u_j`` from minors of ``A = I_m + U^* U``.

    Indices are 1-based.  Diagonal: ``1 - M_ii/|A|``; off-diagonal:
    ``(-1)^(i+j+1) M_ji/|A|``.
    """
    U = _check_indices(U, i, j)
    m = U.shape[1]
    A = np.eye(m) + U.conj().T @ U
    det_A = complex(np.linalg.det(A))
    if i == j:
        return 1.0 - _minor(A, i - 1, i - 1) / det_A
    return (-1) ** (i + j + 1) * _minor(A, j - 1, i - 1) / det_A


def lemma1_brute(U, i: int, j: int) -> complex:
    """Same quantity by explicit inversion of the ``n x n`` matrix."""
    U = _check_indices(U, i, j)
    n = U.shape[0]
    inv = np.linalg.inv(np.eye(n) + U @ U.conj().T)
    return complex(U[:, i - 1].conj() @ inv @ U[:, j - 1])


# --------------------------------------------------------------------------
# Whitened message gains


@dataclass(frozen=True)
class DCoeffs:
    """Gains ``d_{1,k}, d_{2,k}`` for ``k = 1..n`` (index ``k`` at position ``k-1``)."""

    d1: np.ndarray
    d2: np.ndarray

    def __len__(self) -> int:
        return len(self.d1)

    def matrix(self, start: int = 1, stop: int | None = None) -> np.ndarray:
        """Rows ``start..stop`` of ``D = [D_1 D_2]``."""
        stop = len(self) if stop is None else stop
        return np.column_stack([self.d1[start - 1: stop], self.d2[start - 1: stop]])


def d_coeffs_scaled(model: ArModel, params: Sk2Params, n: int, rho: float | None = None):
    """``(d_{1,k}/rho^k, d_{2,k}/rho^k)`` for ``k = 1..n``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rho = params.max_modulus if rho is None else rho
    k = np.arange(1, n + 1, dtype=float)
    if params.is_repeated:
        g = params.gamma1.real
        L = model.L(1.0 / g).real
        Lp = model.L_prime(1.0 / g).real
        unit = np.sign(g) ** (k - 1) * (abs(g) / rho) ** k / abs(g)  # gamma^(k-1) / rho^k
        d1 = ((2.0 - k) * L + Lp / g) * unit
        d2 = ((k - 1.0) * L - Lp / g) * unit / g
        return d1, d2
    g1, g2 = params.gamma1, params.gamma2
    t1 = params.c1 * complex(model.L(1.0 / g1)) * (g1 / rho) ** k
    t2 = params.c2 * complex(model.L(1.0 / g2)) * (g2 / rho) ** k
    d1 = -g2 * t1 - g1 * t2
    d2 = t1 + t2
    d1 = real_part_checked(d1, np.abs(g2 * t1) + np.abs(g1 * t2), "gain d_1")
    d2 = real_part_checked(d2, np.abs(t1) + np.abs(t2), "gain d_2")
    return d1, d2


def d_coeffs(model: ArModel, params: Sk2Params, n: int) -> DCoeffs:
    """Whitened gains of ``U_1, U_2``; valid as observation gains from ``k = p+1`` on."""
    d1, d2 = d_coeffs_scaled(model, params, n, rho=1.0)
    return DCoeffs(d1=d1, d2=d2)


def sk1_d(model: ArModel, gamma: float, n: int) -> np.ndarray:
    """First-order gains ``d_k = gamma^(k-1) L(1/gamma)``."""
    return float(gamma) ** np.arange(n, dtype=float) * model.L(1.0 / gamma).real


# --------------------------------------------------------------------------
# MMSE from accumulated Gram entries


def gram_from_d(dc: DCoeffs, n: int, start: int = 1):
    """``(D1'D1, D2'D2, D1'D2)`` over rows ``start..n``; zeros when the range is empty."""
    d1 = dc.d1[start - 1: n]
    d2 = dc.d2[start - 1: n]
    return float(d1 @ d1), float(d2 @ d2), float(d1 @ d2)


def mmse_u(dc: DCoeffs, n: int, which: int = 1, start: int = 1, log: bool = False) -> float:
    """Posterior variance of ``U_which`` given observations ``start..n``.

    ``(1 + D_other' D_other) / |I_2 + D'D|``.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    g11, g22, g12 = gram_from_d(dc, n, start)
    det = (1.0 + g11) * (1.0 + g22) - g12 * g12
    num = 1.0 + (g22 if which == 1 else g11)
    if log:
        return math.log(num) - math.log(det)
    return num / det


def mmse_v(model: ArModel, params: Sk2Params, dc: DCoeffs, n: int, start: int = 1,
           log: bool = False) -> float:
    """Prediction error of ``V_n`` given observations ``start..n-1``.

    ``(a_n^2 + b_n^2 + ||a_n D_2 - b_n D_1||^2) / |I_2 + D'D|``.
    """
    if n < 2:
        raise ValueError("prediction needs n >= 2")
    a, b = message_coeffs(params, n)
    an, bn = a[-1], b[-1]
    g11, g22, g12 = gram_from_d(dc, n - 1, start)
    det = (1.0 + g11) * (1.0 + g22) - g12 * g12
    num = an * an + bn * bn + an * an * g22 + bn * bn * g11 - 2.0 * an * bn * g12
    if log:
        return math.log(num) - math.log(det)
    return num / det


def sk1_mmse(model: ArModel, gamma: float, n: int, start: int = 1) -> float:
    """``1 / (1 + sum_{k=start}^n d_k^2)`` for the first-order scheme.

    For ``start = 1`` this is ``[1 + L^2 (gamma^{2n} - 1)/(gamma^2 - 1)]^{-1}``.
    """
    L = float(model.L(1.0 / gamma).real)
    g2 = gamma * gamma
    total = L * L * (g2 ** n - g2 ** (start - 1)) / (g2 - 1.0) if n >= start else 0.0
    return 1.0 / (1.0 + total)


# --------------------------------------------------------------------------
# Closed forms


@dataclass(frozen=True)
class GramForms:
    d1d1: float
    d2d2: float
    d1d2: float
    det: float


def _L_scalar(model: ArModel, z):
    out = 1
    for b in model.betas:
        out = out * (1 + b * z)
    return out


def _Lp_scalar(model: ArModel, z):
    out = 0
    for k, bk in enumerate(model.betas):
        term = bk
        for j, bj in enumerate(model.betas):
            if j != k:
                term = term * (1 + bj * z)
        out = out + term
    return out


def s_sums(gamma, n: int):
    """``S1_n = sum_{k=1}^{n-1} k gamma^{2k}`` and ``S2_n = sum_{k=1}^{n-1} k^2 gamma^{2k}`` in closed form."""
    g2 = gamma * gamma
    q = g2 - 1
    s1 = n * g2 ** n / q - g2 ** 2 * g2 ** (n - 1) / q ** 2 + g2 / q ** 2
    s2 = (n * n * g2 ** n / q - 2 * g2 * n * g2 ** n / q ** 2
          + g2 ** 2 * (g2 + 1) * g2 ** (n - 1) / q ** 3 - (g2 + 1) * g2 / q ** 3)
    return s1, s2


def l_matrix(model, g1, g2):
    """``(L11, L22, L12)`` with ``Lij = c_i c_j L(1/g_i) L(1/g_j) / (g_i g_j - 1)``."""
    c1 = 1 / (g1 * (g1 - g2))
    c2 = 1 / (g2 * (g2 - g1))
    l1 = _L_scalar(model, 1 / g1)
    l2 = _L_scalar(model, 1 / g2)
    L11 = c1 * c1 * l1 * l1 / (g1 * g1 - 1)
    L22 = c2 * c2 * l2 * l2 / (g2 * g2 - 1)
    L12 = c1 * c2 * l1 * l2 / (g1 * g2 - 1)
    return L11, L22, L12


def _case_a_forms(model, g1, g2, n):
    L11, L22, L12 = l_matrix(model, g1, g2)
    m11 = L11 * g1 * g1 * (g1 ** (2 * n) - 1)
    m22 = L22 * g2 * g2 * (g2 ** (2 * n) - 1)
    m12 = L12 * g1 * g2 * ((g1 * g2) ** n - 1)

    def quad(u, v):
        return u[0] * v[0] * m11 + (u[0] * v[1] + u[1] * v[0]) * m12 + u[1] * v[1] * m22

    d1d1 = quad((g2, g1), (g2, g1))
    d2d2 = quad((1, 1), (1, 1))
    d1d2 = quad((-g2, -g1), (1, 1))
    delta = (g1 - g2) ** 2 * (L11 * L22 - L12 * L12)
    p = g1 * g1 * g2 * g2
    cross = (delta * p * ((g1 * g2) ** (2 * n) + 1)
             + 2 * L12 * L12 * p * (g1 - g2) ** 2 * (g1 * g2) ** n
             - (g1 * g2 - 1) ** 2 * delta * p / (g1 - g2) ** 2 * (g1 ** (2 * n) + g2 ** (2 * n)))
    det = 1 + d1d1 + d2d2 + cross
    return d1d1, d2d2, d1d2, det


def _case_b_forms(model, g, n):
    L = _L_scalar(model, 1 / g)
    Lp = _Lp_scalar(model, 1 / g)
    q = g * g - 1
    s1m, s2m = s_sums(g, n - 1)
    s1, s2 = s_sums(g, n)
    geo = (g ** (2 * n) - 1) / q
    d1d1 = (L * L * g * g * s2m - 2 * L * Lp * g * s1m + L * L
            + Lp * Lp / (g * g) * geo + 2 * L * Lp / g)
    d2d2 = L * L / (g * g) * s2 - 2 * L * Lp / g ** 3 * s1 + Lp * Lp / g ** 4 * geo
    d1d2 = (L * (Lp + Lp / (g * g) - L * g) * s1m + L * Lp / g ** 4 * g ** (2 * n) * (n - 1)
            - L * L * g * s2m - Lp * Lp / g ** 3 * geo - L * Lp / (g * g))
    det = (1 + d1d1) * (1 + d2d2) - d1d2 * d1d2
    return d1d1, d2d2, d1d2, det


def _to_mp(z):
    z = complex(z)
    return mpmath.mpf(z.real) if z.imag == 0 else mpmath.mpc(z.real, z.imag)


def _raw_forms(model: ArModel, params: Sk2Params, n: int, exact: bool):
    if exact:
        g1, g2 = _to_mp(params.gamma1), _to_mp(params.gamma2)
    else:
        g1, g2 = params.gamma1, params.gamma2
    if params.is_repeated:
        g = g1.real if not exact else mpmath.re(g1)
        return _case_b_forms(model, g, n)
    return _case_a_forms(model, g1, g2, n)


def _real(value, exact: bool):
    if exact:
        return mpmath.re(value)
    return float(real_part_checked(np.asarray(value), abs(value), "closed form"))


def gram_closed_forms(model: ArModel, params: Sk2Params, n: int, exact: bool = False) -> GramForms:
    """``(D1'D1, D2'D2, D1'D2, |I_2 + D'D|)`` over observations ``1..n`` in closed form.

    The determinant uses the expanded cross term
    ``Delta g1^2 g2^2 ((g1 g2)^{2n} + 1) + 2 L12^2 g1^2 g2^2 (g1-g2)^2 (g1 g2)^n
    - (g1 g2 - 1)^2 Delta g1^2 g2^2 (g1^{2n} + g2^{2n}) / (g1-g2)^2``,
    which avoids subtracting two nearly equal products.  ``exact=True`` evaluates in mpmath and
    returns mpmath reals.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    with mpmath.workdps(_EXACT_DPS):
        raw = _raw_forms(model, params, n, exact)
        return GramForms(*(_real(v, exact) for v in raw))


def det_leading_order(model: ArModel, params: Sk2Params, n: int, exact: bool = False):
    """Leading asymptotic term of ``|I_2 + D_n'D_n|``.

    Distinct roots: ``Delta gamma_1^2 gamma_2^2 (gamma_1 gamma_2)^{2n}``;
    repeated root: ``L^4 gamma^{4n} / (gamma^2 - 1)^4``.
    """
    with mpmath.workdps(_EXACT_DPS):
        g1 = _to_mp(params.gamma1) if exact else params.gamma1
        g2 = _to_mp(params.gamma2) if exact else params.gamma2
        if params.is_repeated:
            g = g1.real if not exact else mpmath.re(g1)
            L = _L_scalar(model, 1 / g)
            value = L ** 4 * g ** (4 * n) / (g * g - 1) ** 4
        else:
            L11, L22, L12 = l_matrix(model, g1, g2)
            delta = (g1 - g2) ** 2 * (L11 * L22 - L12 * L12)
            value = delta * g1 * g1 * g2 * g2 * (g1 * g2) ** (2 * n)
        return _real(value, exact)


def log_mmse_u(model: ArModel, params: Sk2Params, n: int, which: int = 1) -> float:
    """Natural log of the ``U_which`` posterior variance after ``n`` observations, exact arithmetic."""
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    with mpmath.workdps(_EXACT_DPS):
        f = gram_closed_forms(model, params, n, exact=True)
        num = 1 + (f.d2d2 if which == 1 else f.d1d1)
        return float(mpmath.log(num) - mpmath.log(f.det))


def _pred_numerator(model, params, n, exact):
    """``||a_n D_2 - b_n D_1||^2`` over rows ``1..n-1`` plus ``a_n^2 + b_n^2``."""
    m = n - 1
    if exact:
        g1, g2 = _to_mp(params.gamma1), _to_mp(params.gamma2)
    else:
        g1, g2 = params.gamma1, params.gamma2
    if params.is_repeated:
        g = mpmath.re(g1) if exact else g1.real
        L = _L_scalar(model, 1 / g)
        Lp = _Lp_scalar(model, 1 / g)
        h = (L, -(n * L + Lp / g))
        s1, s2 = s_sums(g, n)
        s0 = (g ** (2 * n) - g * g) / (g * g - 1)
        quad = h[0] * h[0] * s2 + 2 * h[0] * h[1] * s1 + h[1] * h[1] * s0
        an = (2 - n) * g ** (n - 1)
        bn = (n - 1) * g ** (n - 2)
        return an * an + bn * bn + g ** (2 * (n - 3)) * quad
    L11, L22, L12 = l_matrix(model, g1, g2)
    c1 = 1 / (g1 * (g1 - g2))
    c2 = 1 / (g2 * (g2 - g1))
    an = -(c1 * g2 * g1 ** n + c2 * g1 * g2 ** n)
    bn = c1 * g1 ** n + c2 * g2 ** n
    quad = (L11 * g1 * g1 * g2 ** (2 * m) * (g1 ** (2 * m) - 1)
            + L22 * g2 * g2 * g1 ** (2 * m) * (g2 ** (2 * m) - 1)
            + 2 * L12 * g1 * g2 * g1 ** m * g2 ** m * (g1 ** m * g2 ** m - 1))
    return an * an + bn * bn + quad


def log_mmse_v(model: ArModel, params: Sk2Params, n: int) -> float:
    """Natural log of the ``V_n`` prediction error given observations ``1..n-1``, exact arithmetic."""
    if n < 2:
        raise ValueError("prediction needs n >= 2")
    with mpmath.workdps(_EXACT_DPS):
        num = _real(_pred_numerator(model, params, n, True), True)
        det = gram_closed_forms(model, params, n - 1, exact=True).det
        return float(mpmath.log(num) - mpmath.log(det))


# --------------------------------------------------------------------------
# Dense oracles


def dense_posterior(D: np.ndarray, y: np.ndarray | None = None, noise_var: float = 1.0):
    """Condition ``U ~ N(0, I)`` on ``y = D U + sqrt(noise_var) W`` by joint-covariance algebra."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    n, m = D.shape
    if n == 0:
        return np.zeros(m), np.eye(m)
    cov_y = D @ D.T + noise_var * np.eye(n)
    gain = np.linalg.solve(cov_y, D).T  # Cov(U, y) Cov(y)^{-1}
    cov = np.eye(m) - gain @ D
    mean = gain @ y if y is not None else np.zeros(m)
    return mean, cov


def dense_mmse_u(dc: DCoeffs, n: int, which: int = 1, start: int = 1) -> float:
    """``1 - D_which'(I + D_1 D_1' + D_2 D_2')^{-1} D_which`` by dense inversion."""
    D = dc.matrix(start, n)
    col = D[:, which - 1]
    if len(col) == 0:
        return 1.0
    M = np.eye(len(col)) + D @ D.T
    return float(1.0 - col @ np.linalg.solve(M, col))


def dense_mmse_v(params: Sk2Params, dc: DCoeffs, n: int, start: int = 1) -> float:
    """Conditional variance of ``V_n`` from the joint covariance of ``(V_n, Y_start..Y_{n-1})``."""
    a, b = message_coeffs(params, n)
    c = np.array([a[-1], b[-1]])
    D = dc.matrix(start, n - 1)
    var_v = float(c @ c)
    if D.shape[0] == 0:
        return var_v
    cross = D @ c
    cov_y = D @ D.T + np.eye(D.shape[0])
    return float(var_v - cross @ np.linalg.solve(cov_y, cross))


# --------------------------------------------------------------------------
# Incremental recursion

_LN2 = math.log(2.0)


class GramState:
    """Running information-form posterior of a ``dim``-vector message.

    Observations are ``y_k = d_k' U + sigma W_k`` with ``U ~ N(0, I)``.  The
    precision scaled by ``sigma^2`` is ``J = sigma^2 I + G``, ``G = sum d_k d_k'``,
    and ``s = sum d_k y_k``; the posterior mean is ``J^{-1} s`` and the
    covariance ``sigma^2 J^{-1}``.

    Storage is rescaled by powers of two once any entry passes
    ``threshold``: the true ``J`` is ``exp(log_scale) * (prior I + G)`` and
    the true ``s`` is ``exp(s_log_scale) * s`` row by row.  ``s`` may carry a
    leading batch axis (one row per Monte Carlo trial); ``G`` is shared
    because it does not depend on the data.
    """

    def __init__(self, dim: int = 2, noise_var: float = 1.0, batch: int | None = None,
                 threshold: float = 1e100, s0: np.ndarray | None = None):
        if dim not in (1, 2):
            raise ValueError("GramState supports dim 1 or 2")
        if noise_var < 0:
            raise ValueError("noise variance must be non-negative")
        self.dim = dim
        self.noise_var = float(noise_var)
        self.threshold = float(threshold)
        self._log_threshold = math.log(threshold)
        self.prior = float(noise_var)
        self.G = np.zeros((dim, dim))
        self.log_scale = 0.0
        shape = (dim,) if batch is None else (batch, dim)
        self.s = np.zeros(shape) if s0 is None else np.array(s0, dtype=float).reshape(shape)
        self.s_log_scale = np.zeros(shape[:-1])
        self.n = 0

    # -- rescaling -------------------------------------------------------

    def _shift_precision(self, steps: int) -> None:
        if steps:
            self.G = np.ldexp(self.G, -steps)
            self.prior = math.ldexp(self.prior, -steps)
            self.log_scale += steps * _LN2

    def _shift_s(self, steps: np.ndarray) -> None:
        steps = np.asarray(steps, dtype=int)
        if np.any(steps):
            self.s = np.ldexp(self.s, -steps[..., None])
            self.s_log_scale = self.s_log_scale + steps * _LN2

    # -- updates ---------------------------------------------------------

    def update(self, d, y=None, d_log: float = 0.0) -> "GramState":
        """Absorb one observation with gain ``exp(d_log) * d`` and value(s) ``y``.

        ``y=None`` updates only the precision (deterministic bookkeeping).
        """
        d = np.asarray(d, dtype=float).reshape(self.dim)
        if not np.all(np.isfinite(d)) or not math.isfinite(d_log):
            raise FloatingPointError("non-finite observation gain")
        self.n += 1
        dmax = float(np.max(np.abs(d)))
        if dmax == 0.0:
            return self
        exp2 = math.frexp(dmax)[1]
        d = np.ldexp(d, -exp2)
        d_log = d_log + exp2 * _LN2
        # precision
        excess = 2.0 * d_log - self.log_scale - self._log_threshold
        if excess > 0:
            self._shift_precision(int(math.ceil(excess / _LN2)) + 1)
        self.G = self.G + math.exp(2.0 * d_log - self.log_scale) * np.outer(d, d)
        gmax = float(np.max(np.abs(self.G)))
        if gmax > self.threshold:
            self._shift_precision(math.frexp(gmax)[1])
        if y is None:
            return self
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite observation")
        ymag = np.maximum(np.abs(y), np.finfo(float).tiny)
        excess = d_log + np.log(ymag) - self.s_log_scale - self._log_threshold
        steps = np.where(excess > 0, np.ceil(np.maximum(excess, 0) / _LN2) + 1, 0)
        self._shift_s(steps)
        factor = np.exp(d_log - self.s_log_scale)
        self.s = self.s + (factor * y)[..., None] * d
        smax = np.max(np.abs(self.s), axis=-1)
        big = smax > self.threshold
        if np.any(big):
            self._shift_s(np.where(big, np.frexp(np.where(big, smax, 1.0))[1], 0))
        return self

    # -- queries ---------------------------------------------------------

    def _precision(self) -> np.ndarray:
        return self.prior * np.eye(self.dim) + self.G

    def _inverse(self) -> np.ndarray:
        J = self._precision()
        if self.dim == 1:
            return np.array([[1.0 / J[0, 0]]]) if J[0, 0] > 0 else np.zeros((1, 1))
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det > 0 and self.prior > 0:
            return np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
        return np.linalg.pinv(J)

    def log_det(self) -> float:
        """``log |sigma^2 I + G|`` including the tracked scale (``log |I + G|`` for unit noise)."""
        sign, logdet = np.linalg.slogdet(self._precision())
        if sign <= 0:
            return -math.inf
        return logdet + self.dim * self.log_scale

    def posterior_mean_parts(self):
        """``(mantissa, log_factor)`` with mean ``= exp(log_factor)[..., None] * mantissa``."""
        K = self._inverse()
        s = self.s
        if self.dim == 1:
            mant = K[0, 0] * s
        else:
            mant = np.stack([K[0, 0] * s[..., 0] + K[0, 1] * s[..., 1],
                             K[1, 0] * s[..., 0] + K[1, 1] * s[..., 1]], axis=-1)
        return mant, self.s_log_scale - self.log_scale

    def posterior_mean(self) -> np.ndarray:
        mant, log_factor = self.posterior_mean_parts()
        return np.exp(log_factor)[..., None] * mant

    def posterior_cov(self) -> np.ndarray:
        return self.noise_var * math.exp(-self.log_scale) * self._inverse()

    def log_mmse(self, which: int = 1) -> float:
        """Natural log of the posterior variance of component ``which`` (1-based)."""
        k = self._inverse()[which - 1, which - 1]
        return math.log(self.noise_var) - self.log_scale + math.log(k)

    def log_prediction_error(self, c, c_log: float = 0.0) -> float:
        """Log of ``c' Cov c`` for gain ``exp(c_log) * c`` (one-step prediction error of ``c'U``)."""
        c = np.asarray(c, dtype=float).reshape(self.dim)
        q = float(c @ self._inverse() @ c)
        return math.log(self.noise_var) - self.log_scale + 2.0 * c_log + math.log(q)


# --------------------------------------------------------------------------
# State-space recursion


def transition(params: Sk2Params | float) -> np.ndarray:
    """Companion matrix ``B`` with ``t_{k+1} = B t_k``, ``t_k = (V_k, V_{k+1})`` (``V_k`` for SK(1))."""
    if not isinstance(params, Sk2Params):
        return np.array([[float(params)]])
    return np.array([[0.0, 1.0], [params.b, params.a]])


def observation_row(model: ArModel, params: Sk2Params | float) -> np.ndarray:
    """``h`` with ``sum_j phi_j V_{k-j} = h' t_k``, the noiseless whitened output."""
    B = transition(params)
    back = np.linalg.inv(B)
    row = np.zeros(B.shape[0])
    row[0] = 1.0
    h = np.zeros(B.shape[0])
    for coeff in model.phi:
        h = h + coeff * row
        row = row @ back
    return h


class MessageFilter:
    """Kalman recursion for the message state ``t_k`` given whitened outputs.

    The state starts at ``t_1 = U ~ N(0, I)`` and evolves by
    :func:`transition` without process noise; outputs ``p+1..`` observe
    ``h' t_k + sigma W_k``.  ``cov`` is the error covariance of the current
    estimate, O(1) at every step, which is why this recursion stays
    accurate where an information-form accumulation in ``U`` coordinates
    loses digits to cancellation.
    """

    def __init__(self, model: ArModel, params: Sk2Params | float, noise_var: float = 1.0):
        if noise_var < 0:
            raise ValueError("noise variance must be non-negative")
        self.B = transition(params)
        self.h = observation_row(model, params)
        self.noise_var = float(noise_var)
        self.cov = np.eye(self.B.shape[0])

    @property
    def prediction_variance(self) -> float:
        """Variance of ``V_k - E[V_k | outputs so far]``."""
        return float(self.cov[0, 0])

    def gain(self) -> np.ndarray:
        """Absorb one output into ``cov`` and return the gain ``K`` (zero if uninformative)."""
        ch = self.cov @ self.h
        denom = float(self.h @ ch) + self.noise_var
        if not denom > 0:
            return np.zeros_like(ch)
        K = ch / denom
        # Joseph form keeps cov symmetric positive semi-definite
        A = np.eye(len(K)) - np.outer(K, self.h)
        self.cov = A @ self.cov @ A.T + self.noise_var * np.outer(K, K)
        return K

    def advance(self) -> None:
        self.cov = self.B @ self.cov @ self.B.T

    def back_map(self, steps: int, rho: float) -> np.ndarray:
        """``(rho B^{-1})^steps``; ``U = rho^{-steps} (rho B^{-1})^steps t_{steps+1}``."""
        step = rho * np.linalg.inv(self.B)
        out = np.eye(self.B.shape[0])
        for _ in range(steps):
            out = out @ step
        return out


def filter_theory(model: ArModel, params: Sk2Params | float, n: int, noise_var: float = 1.0):
    """Per-step prediction variances of ``V_1..V_n`` and final log-MMSE of each component of ``U``."""
    f = MessageFilter(model, params, noise_var)
    p = model.order
    power = np.empty(n)
    for k in range(1, n + 1):
        power[k - 1] = f.prediction_variance
        if k >= p + 1:
            f.gain()
        if k < n:
            f.advance()
    rho = abs(params) if not isinstance(params, Sk2Params) else params.min_modulus
    M = f.back_map(n - 1, rho)
    cov_u = M @ f.cov @ M.T
    logs = np.log(np.diag(cov_u)) - 2.0 * (n - 1) * math.log(rho)
    return power, logs
