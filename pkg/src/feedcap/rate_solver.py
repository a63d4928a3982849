"""Achievable rates of the first- and second-order SK schemes over AR(p) noise.

Rates are in nats.  SK(1) maximises ``log|gamma|`` subject to
``(gamma^2 - 1)/L^2(1/gamma) = P``; SK(2) maximises
``2 log min(|gamma_1|, |gamma_2|)`` subject to the second-order power map
staying at or below ``P``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import brentq, minimize_scalar
from scipy.signal import lfilter

from .gaussian_estimation import l_matrix
from .noise_model import ArModel
from .params import CONJUGATE_PAIR, REAL_DISTINCT, REPEATED, Sk2Params, real_part_checked

__all__ = [
    "Sk2Params",
    "RateResult",
    "SearchOptions",
    "InfeasibleError",
    "sk1_power",
    "sk1_rate",
    "ar1_capacity",
    "sk2_power_distinct",
    "sk2_power_repeated",
    "sk2_power",
    "g_function",
    "sk2_rate",
    "combined_rate",
    "LimitReport",
    "limit_identity_check",
]

COINCIDENT_GAP = 1e-6  # distinct-root formulas refuse closer roots
NEAR_GAP = 1e-3  # below this the cancellation-free series form is used
POWER_SLACK = 1e-8


class InfeasibleError(RuntimeError):
    """No admissible root configuration meets the power budget."""


@dataclass(frozen=True)
class RateResult:
    """Solution of a rate maximisation.

    ``params`` is the SK(1) root ``gamma`` (a float) or an :class:`Sk2Params`.
    ``scheme`` is one of ``SK1``, ``SK2_caseA``, ``SK2_caseB``; a combined
    result carries the winner's scheme and ``diagnostics["combined"] = True``.
    """

    rate_nats: float
    params: float | Sk2Params
    power_at_solution: float
    scheme: str
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def rate_bits(self) -> float:
        return self.rate_nats / math.log(2.0)


@dataclass(frozen=True)
class SearchOptions:
    """Grid sizes and tolerances for :func:`sk2_rate`.

    ``gamma_max`` defaults to ``sqrt(1 + P) + 2``.
    """

    n_theta: int = 1000
    n_real: int = 200
    n_radial: int = 64
    tol: float = 1e-10
    gamma_max: float | None = None
    refine: bool = True

    def __post_init__(self) -> None:
        if self.n_theta < 3 or self.n_real < 3 or self.n_radial < 4:
            raise ValueError("search grids need at least 3 (angle/real) and 4 (radial) points")
        if not 0 < self.tol < 1e-2:
            raise ValueError("tolerance must lie in (0, 1e-2)")
        if self.gamma_max is not None and self.gamma_max <= 1.0:
            raise ValueError("gamma_max must exceed 1")

    def box(self, P: float) -> float:
        return self.gamma_max if self.gamma_max is not None else math.sqrt(1.0 + P) + 2.0


def _check_power(P: float) -> float:
    P = float(P)
    if not (P > 0 and math.isfinite(P)):
        raise ValueError("power must be positive")
    return P


# --------------------------------------------------------------------------
# First-order scheme


def sk1_power(model: ArModel, gamma: float) -> float:
    """``(gamma^2 - 1) / L^2(1/gamma)``."""
    gamma = float(gamma)
    if not abs(gamma) > 1.0:
        raise ValueError("SK(1) root must satisfy |gamma| > 1")
    L = float(model.L(1.0 / gamma).real)
    if L == 0.0:  # impossible for |beta| < 1
        raise ArithmeticError("L(1/gamma) vanished")
    return (gamma * gamma - 1.0) / (L * L)


def _sk1_poly(model: ArModel, P: float) -> np.ndarray:
    """Ascending coefficients of ``P x^2 L(x)^2 - (1 - x^2)``."""
    coeffs = P * np.concatenate([[0.0, 0.0], np.convolve(model.phi, model.phi)])
    coeffs[0] -= 1.0
    coeffs[2] += 1.0
    # negligible betas leave top coefficients that would blow up the companion matrix
    return npoly.polytrim(coeffs, tol=np.finfo(float).eps * np.max(np.abs(coeffs)))


def sk1_rate(model: ArModel, P: float) -> RateResult:
    """Largest ``log|gamma|`` meeting the SK(1) power equation.

    In ``x = 1/gamma`` the constraint is a polynomial of degree ``2p+2``;
    the answer is ``-log|x|`` for the real root of smallest modulus in (0, 1).
    """
    P = _check_power(P)
    coeffs = _sk1_poly(model, P)
    h = lambda x: float(npoly.polyval(x, coeffs))  # noqa: E731
    roots = npoly.polyroots(coeffs)
    real = [r.real for r in roots if abs(r.imag) <= 1e-7 * (1.0 + abs(r)) and 0.0 < abs(r.real) < 1.0]
    polished = []
    for x in real:
        lo, hi = x * (1 - 1e-6), x * (1 + 1e-6)
        lo, hi = min(lo, hi), max(lo, hi)
        lo, hi = max(lo, -1.0 + 1e-15), min(hi, 1.0 - 1e-15)
        if h(lo) * h(hi) < 0:
            x = brentq(h, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
        polished.append(x)
    if not polished:  # a sign change on (0, 1) always exists; fall back to it
        polished.append(brentq(h, 0.0, 1.0, xtol=1e-16))
    x_min = min(polished, key=abs)
    # guard: no sign change strictly inside (-|x_min|, |x_min|)
    grid = np.linspace(-abs(x_min), abs(x_min), 2001)[1:-1]
    vals = npoly.polyval(grid, coeffs)
    flips = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
    if flips.size:
        i = flips[np.argmin(np.abs(grid[flips]))]
        x_min = brentq(h, grid[i], grid[i + 1], xtol=1e-16)
    gamma = 1.0 / x_min
    return RateResult(
        rate_nats=-math.log(abs(x_min)),
        params=gamma,
        power_at_solution=sk1_power(model, gamma),
        scheme="SK1",
        diagnostics={"real_roots": sorted(polished, key=abs)},
    )


def ar1_capacity(beta1: float, P: float, tol: float = 1e-12) -> float:
    """``-log x0`` with ``x0`` the positive root of ``P x^2 (1+|beta1| x)^2 = 1 - x^2``."""
    P = _check_power(P)
    beta1 = float(beta1)
    if not abs(beta1) < 1.0:
        raise ValueError("AR(1) coefficient must satisfy |beta| < 1")
    b = abs(beta1)

    def h(x):
        return P * x * x * (1.0 + b * x) ** 2 - (1.0 - x * x)

    grid = np.linspace(0.0, 1.0, 1001)
    vals = h(grid)
    # an exact zero on the grid counts with the positive side, not twice
    negative = vals < 0
    changes = int(np.count_nonzero(negative[:-1] != negative[1:]))
    if changes != 1:
        raise ArithmeticError(f"expected one positive root, found {changes} sign changes")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    return -math.log(0.5 * (lo + hi))


# --------------------------------------------------------------------------
# Second-order power maps


def _power_delta(model: ArModel, g1, g2):
    L11, L22, L12 = l_matrix(model, g1, g2)
    delta = (g1 - g2) ** 2 * (L11 * L22 - L12 * L12)
    return (L11 / (g2 * g2) + L22 / (g1 * g1) + 2 * L12 / (g1 * g2)) / delta


def g_function(model: ArModel, g1, g2):
    """``l1^2/(g1^2-1) + l2^2/(g2^2-1) - 2 l1 l2/(g1 g2 - 1)`` with ``li = L(1/g_i)``."""
    g1 = np.asarray(g1, dtype=complex)
    g2 = np.asarray(g2, dtype=complex)
    l1 = model.L(1.0 / g1)
    l2 = model.L(1.0 / g2)
    return l1 * l1 / (g1 * g1 - 1) + l2 * l2 / (g2 * g2 - 1) - 2 * l1 * l2 / (g1 * g2 - 1)


def _power_fg(model: ArModel, g1, g2):
    l1 = model.L(1.0 / g1)
    l2 = model.L(1.0 / g2)
    pre = (g1 * g1 - 1) * (g2 * g2 - 1) * (g1 * g2 - 1) ** 2 / ((g1 - g2) ** 2 * l1 * l1 * l2 * l2)
    return pre * g_function(model, g1, g2)


def _power_series(model: ArModel, g1: complex, g2: complex, rtol: float = 1e-17,
                  max_terms: int = 5_000_000) -> complex:
    """Power map written as a sum of squares, free of cancellation as ``g1 -> g2``.

    With ``x = 1/g`` the bracket ``g`` equals ``sum_k (l1 x1^k - l2 x2^k)^2``,
    and each term is ``(x1 - x2)^2`` times the squared divided difference of
    ``L(x) x^k``.  Valid for ``g1 == g2`` as well.
    """
    x1, x2 = 1.0 / complex(g1), 1.0 / complex(g2)
    m = max(abs(x1), abs(x2))
    terms = min(max_terms, int(math.ceil(math.log(rtol) / (2.0 * math.log(m)))) + 2)
    k = np.arange(1, terms + 1)
    q = lfilter([1.0], [1.0, -x1], x2 ** (k - 1.0))  # q_k = x1 q_{k-1} + x2^(k-1)
    h = complex(model.L_divided_difference(x1, x2)) * x1 ** k + complex(model.L(x2)) * q
    total = np.sum(h * h)
    l1, l2 = complex(model.L(x1)), complex(model.L(x2))
    g1, g2 = complex(g1), complex(g2)
    pre = (g1 * g1 - 1) * (g2 * g2 - 1) * (g1 * g2 - 1) ** 2 / (g1 * g1 * g2 * g2 * l1 * l1 * l2 * l2)
    return pre * total


def _validate_pair(gamma1: complex, gamma2: complex) -> tuple[complex, complex]:
    g1, g2 = complex(gamma1), complex(gamma2)
    if not (abs(g1) > 1.0 and abs(g2) > 1.0):
        raise ValueError("characteristic roots must satisfy |gamma| > 1")
    real_pair = g1.imag == 0.0 and g2.imag == 0.0
    if not real_pair and g2 != g1.conjugate():
        raise ValueError("roots must be two reals or a complex-conjugate pair")
    return g1, g2


def sk2_power_distinct(model: ArModel, gamma1: complex, gamma2: complex, form: str = "stable") -> float:
    """Second-order power map for distinct roots.

    ``form`` selects ``"delta"`` (``Delta``/``L_ij`` expression), ``"fg"``
    (``f = prefactor * g``), ``"series"`` (sum of squares) or ``"stable"``
    (``fg`` away from the diagonal, ``series`` within ``NEAR_GAP``).
    """
    g1, g2 = _validate_pair(gamma1, gamma2)
    if abs(g1 - g2) < COINCIDENT_GAP:
        raise ValueError("roots nearly coincide; use sk2_power_repeated")
    if form == "stable":
        form = "series" if abs(g1 - g2) < NEAR_GAP else "fg"
    if form == "delta":
        value = _power_delta(model, g1, g2)
    elif form == "fg":
        value = complex(_power_fg(model, g1, g2))
    elif form == "series":
        value = _power_series(model, g1, g2)
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(real_part_checked(np.asarray(value), abs(value), "SK(2) power"))


def sk2_power_repeated(model: ArModel, gamma: float) -> float:
    """Limit of the second-order power map as both roots merge at real ``gamma``."""
    gamma = float(gamma)
    if not abs(gamma) > 1.0:
        raise ValueError("repeated root must satisfy |gamma| > 1")
    L = float(model.L(1.0 / gamma).real)
    Lp = float(model.L_prime(1.0 / gamma).real)
    q = gamma * gamma - 1.0
    return (q ** 3 * Lp * Lp / (gamma ** 4 * L ** 4)
            + 2.0 * q * q * Lp / (gamma * L ** 3)
            + (gamma ** 4 - 1.0) / (L * L))


def _power_repeated_array(model: ArModel, gamma: np.ndarray) -> np.ndarray:
    L = model.L(1.0 / gamma).real
    Lp = model.L_prime(1.0 / gamma).real
    q = gamma * gamma - 1.0
    return q ** 3 * Lp * Lp / (gamma ** 4 * L ** 4) + 2.0 * q * q * Lp / (gamma * L ** 3) + (gamma ** 4 - 1.0) / (L * L)


def sk2_power(model: ArModel, params: Sk2Params) -> float:
    """Power map at ``params``, dispatching on the root configuration."""
    if params.is_repeated:
        return sk2_power_repeated(model, params.gamma1.real)
    g1, g2 = params.gamma1, params.gamma2
    if abs(g1 - g2) < NEAR_GAP:
        value = _power_series(model, g1, g2)
        return float(real_part_checked(np.asarray(value), abs(value), "SK(2) power"))
    return sk2_power_distinct(model, g1, g2, form="fg")


# --------------------------------------------------------------------------
# Second-order search


def _feasible(values: np.ndarray, P: float) -> np.ndarray:
    return np.isfinite(values) & (values > 0) & (values <= P)


def _ray_max(power_fn, r_hi: np.ndarray, P: float, n_radial: int, tol: float):
    """Largest feasible radius on each ray ``r in (1, r_hi]``.

    ``power_fn(r)`` maps an array of radii (one row per ray) to powers.
    Returns ``(r_best, boundary_hit)``; rays with no feasible grid point give NaN.
    """
    r_hi = np.asarray(r_hi, dtype=float)
    u = np.linspace(0.0, 1.0, n_radial + 1)[1:]
    # log-spaced radii, denser near 1
    grid = np.exp(np.log(r_hi)[:, None] * u[None, :] ** 2)
    # tiny budgets are only met very close to the unit circle
    near = 1.0 + (grid[:, :1] - 1.0) * np.geomspace(1e-8, 0.5, 16)[None, :]
    grid = np.hstack([near, grid])
    n_radial = grid.shape[1]
    feas = _feasible(power_fn(grid), P)
    any_feas = feas.any(axis=1)
    last = n_radial - 1 - np.argmax(feas[:, ::-1], axis=1)
    boundary = any_feas & (last == n_radial - 1)
    rows = np.arange(len(r_hi))
    lo = np.where(any_feas, grid[rows, last], np.nan)
    hi = np.where(boundary | ~any_feas, lo, grid[rows, np.minimum(last + 1, n_radial - 1)])
    active = any_feas & ~boundary
    while np.any(active & (hi - lo > tol)):
        mid = np.where(active, 0.5 * (lo + hi), r_hi)  # idle rays get a harmless probe
        ok = _feasible(power_fn(mid[:, None])[:, 0], P)
        lo = np.where(active & ok, mid, lo)
        hi = np.where(active & ~ok, mid, hi)
    return lo, boundary


def _conj_powers(model: ArModel, theta: np.ndarray):
    def fn(r):
        g1 = r * np.exp(1j * theta[:, None])
        return _power_fg(model, g1, np.conj(g1)).real

    return fn


def _real_powers(model: ArModel, s1: float, s2: float, t: np.ndarray):
    def fn(r):
        return _power_fg(model, s1 * r + 0j, s2 * r * t[:, None] + 0j).real

    return fn


def _rep_powers(model: ArModel, sign: float):
    def fn(r):
        return _power_repeated_array(model, sign * r)

    return fn


@dataclass(frozen=True)
class _Candidate:
    rate: float
    params: Sk2Params
    family: str
    boundary: bool
    sign_code: int


def _rank_key(c: _Candidate):
    return (-c.rate, round(c.params.min_modulus, 12), round(c.params.max_modulus, 12), c.sign_code)


def _conjugate_search(model, P, opts, gmax) -> list[_Candidate]:
    n = opts.n_theta
    theta = math.pi * np.arange(1, n + 1) / (n + 1)
    r, boundary = _ray_max(_conj_powers(model, theta), np.full(n, gmax), P, opts.n_radial, opts.tol)
    if np.all(np.isnan(r)):
        return []
    i = int(np.nanargmax(r))
    best_r, best_theta, hit = r[i], theta[i], bool(boundary[i])
    if opts.refine:
        lo_t = theta[i - 1] if i > 0 else 0.5 * theta[0]
        hi_t = theta[i + 1] if i < n - 1 else 0.5 * (theta[-1] + math.pi)

        def neg_r(th):
            rr, _ = _ray_max(_conj_powers(model, np.array([th])), np.array([gmax]), P, opts.n_radial, opts.tol)
            return -rr[0] if np.isfinite(rr[0]) else 0.0

        res = minimize_scalar(neg_r, bounds=(lo_t, hi_t), method="bounded", options={"xatol": 1e-10})
        if -res.fun > best_r:
            best_r, best_theta = -res.fun, float(res.x)
    params = Sk2Params.conjugate(best_r, best_theta)
    return [_Candidate(2.0 * math.log(best_r), params, CONJUGATE_PAIR, hit, 4)]


def _real_search(model, P, opts, gmax) -> list[_Candidate]:
    out = []
    t_grid = np.exp(np.linspace(0.0, math.log(gmax), opts.n_real + 1)[:-1])
    for code, (s1, s2) in enumerate(((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))):
        t = t_grid[1:] if s1 == s2 else t_grid
        r, boundary = _ray_max(_real_powers(model, s1, s2, t), gmax / t, P, opts.n_radial, opts.tol)
        if np.all(np.isnan(r)):
            continue
        i = int(np.nanargmax(r))
        best_r, best_t, hit = r[i], t[i], bool(boundary[i])
        if opts.refine:
            lo_t = t[i - 1] if i > 0 else (1.0 if s1 != s2 else t[0])
            hi_t = t[i + 1] if i < len(t) - 1 else t[i]
            lo_t = max(lo_t, 1.0 + 10 * NEAR_GAP) if s1 == s2 else lo_t

            def neg_r(tt):
                rr, _ = _ray_max(_real_powers(model, s1, s2, np.array([tt])), np.array([gmax / tt]),
                                 P, opts.n_radial, opts.tol)
                return -rr[0] if np.isfinite(rr[0]) else 0.0

            if hi_t > lo_t:
                res = minimize_scalar(neg_r, bounds=(lo_t, hi_t), method="bounded", options={"xatol": 1e-10})
                if -res.fun > best_r:
                    best_r, best_t = -res.fun, float(res.x)
        params = Sk2Params.real(s1 * best_r, s2 * best_r * best_t)
        out.append(_Candidate(2.0 * math.log(best_r), params, REAL_DISTINCT, hit, code))
    return out


def _repeated_search(model, P, opts, gmax) -> list[_Candidate]:
    out = []
    for code, sign in ((5, 1.0), (6, -1.0)):
        r, boundary = _ray_max(_rep_powers(model, sign), np.array([gmax]), P, 4 * opts.n_radial, opts.tol)
        if np.isfinite(r[0]):
            out.append(_Candidate(2.0 * math.log(r[0]), Sk2Params.repeated(sign * r[0]), REPEATED,
                                  bool(boundary[0]), code))
    return out


def sk2_rate(model: ArModel, P: float, opts: SearchOptions | None = None) -> RateResult:
    """Largest ``2 log min|gamma_i|`` over real pairs, conjugate pairs and repeated roots.

    Each family is searched along rays on which only the smaller modulus
    varies; the largest feasible radius on a ray is bracketed on a grid and
    bisected.  The best ray is then refined with a bounded scalar search.
    """
    P = _check_power(P)
    opts = opts or SearchOptions()
    gmax = opts.box(P)
    candidates = (_conjugate_search(model, P, opts, gmax) + _real_search(model, P, opts, gmax)
                  + _repeated_search(model, P, opts, gmax))
    if not candidates:
        raise InfeasibleError(f"no SK(2) parameters meet power {P} inside |gamma| <= {gmax}")
    top = max(c.rate for c in candidates)
    tied = [c for c in candidates if c.rate >= top - 1e-12]
    best = min(tied, key=_rank_key)
    power = sk2_power(model, best.params)
    per_family = {}
    for c in candidates:
        if c.family not in per_family or c.rate > per_family[c.family]:
            per_family[c.family] = c.rate
    return RateResult(
        rate_nats=best.params.rate_nats,
        params=best.params,
        power_at_solution=power,
        scheme="SK2_caseB" if best.params.is_repeated else "SK2_caseA",
        diagnostics={
            "family": best.family,
            "boundary_hit": best.boundary,
            "interior": bool(power < P - 1e-6),
            "family_rates": per_family,
            "gamma_max": gmax,
        },
    )


def combined_rate(model: ArModel, P: float, opts: SearchOptions | None = None) -> RateResult:
    """Better of the two schemes; ties go to SK(1)."""
    one = sk1_rate(model, P)
    two = sk2_rate(model, P, opts)
    best = two if two.rate_nats > one.rate_nats else one
    diag = dict(best.diagnostics)
    diag.update({"combined": True, "winner": "SK2" if best is two else "SK1",
                 "rate_sk1_nats": one.rate_nats, "rate_sk2_nats": two.rate_nats})
    return RateResult(best.rate_nats, best.params, best.power_at_solution, best.scheme, diag)


# --------------------------------------------------------------------------
# Merging-root limit


def _extrapolate_to_zero(h: Sequence[float], values: Sequence[float]) -> float:
    """Richardson extrapolation to ``h = 0`` through all points (Neville's scheme)."""
    table = list(values)
    for level in range(1, len(h)):
        table = [(h[i] * table[i + 1] - h[i + level] * table[i]) / (h[i] - h[i + level])
                 for i in range(len(table) - 1)]
    return table[0]


@dataclass(frozen=True)
class LimitReport:
    """Diagnostics for ``f(gamma + eps, gamma) -> f_repeated(gamma)``.

    ``passed`` gates on exact quantities (the vanishing of ``g`` and its
    first derivative on the diagonal, and the Richardson-extrapolated
    limit).  ``raw_errors`` are reported for information: they shrink
    linearly in ``eps``.
    """

    gamma: float
    repeated_power: float
    eps: tuple[float, ...]
    raw_errors: tuple[float, ...]
    richardson_value: float
    richardson_error: float
    g_diagonal: float
    dg_diagonal: float
    passed: bool


def limit_identity_check(model: ArModel, gamma: float,
                         eps_sequence: Sequence[float] = (1e-3, 1e-4, 1e-5),
                         richardson_tol: float = 1e-8) -> LimitReport:
    """Check the merging-root limit of the distinct-root power map at ``gamma``."""
    gamma = float(gamma)
    if not abs(gamma) > 1.0:
        raise ValueError("|gamma| must exceed 1")
    eps = tuple(float(e) for e in eps_sequence)
    if len(eps) < 3 or any(e <= 0 for e in eps):
        raise ValueError("need at least three positive eps values")
    ref = sk2_power_repeated(model, gamma)
    step = math.copysign(1.0, gamma)  # move away from the unit circle
    values = [sk2_power_distinct(model, gamma + step * e, gamma) for e in eps]
    raw = tuple(abs(v - ref) / abs(ref) for v in values)
    extrap = _extrapolate_to_zero(eps, values)
    rich_err = abs(extrap - ref) / abs(ref)
    g_diag = abs(complex(g_function(model, gamma, gamma)))
    h = 1e-5  # central difference; truncation error is O(h^2)
    dg = abs(complex(g_function(model, gamma + h, gamma) - g_function(model, gamma - h, gamma))) / (2 * h)
    l2 = float(model.L(1.0 / gamma).real) ** 2
    scale = l2 / (gamma * gamma - 1.0)
    passed = rich_err < richardson_tol and g_diag < 1e-12 * max(1.0, scale) and dg < 1e-6 * max(1.0, scale)
    return LimitReport(gamma, ref, eps, raw, extrap, rich_err, g_diag, dg, passed)
