"""Oracle-equivalence batteries behind ``feedcap verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussian_estimation import (
    d_coeffs,
    det_leading_order,
    gram_closed_forms,
    gram_from_d,
    lemma1_brute,
    lemma1_quadratic,
)
from .noise_model import ArModel
from .params import Sk2Params
from .rate_solver import limit_identity_check

__all__ = [
    "SuiteResult",
    "LIMIT_CASES",
    "GRAM_CASES",
    "lemma1_suite",
    "limit_identity_suite",
    "gram_forms_suite",
    "run_suite",
    "SUITES",
    "cauchy_binet_det",
]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)


LIMIT_CASES = (
    ((), 1.5),
    ((), -2.0),
    ((0.5,), 1.5),
    ((0.5,), -1.7),
    ((-0.7,), 1.3),
    ((0.9,), 2.5),
    ((0.3, 0.4), -1.4),
    ((0.3, 0.4), 1.3),
    ((0.2, -0.5, 0.7), 1.2),
    ((-0.4, 0.6), -1.15),
)

GRAM_CASES = (
    ((), Sk2Params.real(2.0, -2.0)),
    ((), Sk2Params.real(1.6, 1.3)),
    ((), Sk2Params.conjugate(math.sqrt(2.0), math.pi / 3)),
    ((), Sk2Params.repeated(1.5)),
    ((0.5,), Sk2Params.real(1.5, 1.2)),
    ((0.5,), Sk2Params.real(1.4, -1.4)),
    ((0.5,), Sk2Params.conjugate(1.3, 2.0)),
    ((0.5,), Sk2Params.repeated(1.5)),
    ((0.5,), Sk2Params.repeated(-1.3)),
    ((-0.8,), Sk2Params.real(-1.7, 1.4)),
    ((-0.8,), Sk2Params.conjugate(1.25, 0.4)),
    ((0.3, 0.4), Sk2Params.real(1.3, -1.5)),
    ((0.3, 0.4), Sk2Params.real(-1.2, -1.2 * 1.3)),
    ((0.3, 0.4), Sk2Params.conjugate(1.4, 1.0)),
    ((0.3, 0.4), Sk2Params.repeated(-1.4)),
    ((0.1, -0.9), Sk2Params.real(1.1, -1.1)),
    ((0.1, -0.9), Sk2Params.conjugate(1.15, 2.9)),
    ((0.1, -0.9), Sk2Params.repeated(1.2)),
    ((0.2, -0.5, 0.7), Sk2Params.real(1.25, 1.5)),
    ((0.2, -0.5, 0.7), Sk2Params.conjugate(1.2, 1.5)),
)


def lemma1_suite(cases: int = 500, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    """Minor-based quadratic forms against dense inversion on random complex matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 6))
        U = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
        for i in range(1, m + 1):
            for j in range(1, m + 1):
                worst = max(worst, abs(lemma1_quadratic(U, i, j) - lemma1_brute(U, i, j)))
    return SuiteResult("lemma1", worst < tol, {"cases": cases, "max_abs_error": worst, "tol": tol})


def limit_identity_suite(cases=LIMIT_CASES) -> SuiteResult:
    """Merging-root limit of the power map across a model battery.

    Gated on the Richardson-extrapolated limit and on ``g``, ``dg`` vanishing
    on the diagonal; the raw error at ``eps = 1e-4`` is reported.
    """
    reports = [limit_identity_check(ArModel(b), g) for b, g in cases]
    raw = max(r.raw_errors[1] for r in reports)
    metrics = {
        "cases": len(reports),
        "max_richardson_error": max(r.richardson_error for r in reports),
        "max_raw_error_eps_1e-4": raw,
        "max_g_diagonal": max(r.g_diagonal for r in reports),
        "max_dg_diagonal": max(r.dg_diagonal for r in reports),
    }
    return SuiteResult("limit-identity", all(r.passed for r in reports), metrics)


def cauchy_binet_det(d1: np.ndarray, d2: np.ndarray) -> float:
    """``|I_2 + D'D| = 1 + |D1|^2 + |D2|^2 + sum_{i<j} (d1_i d2_j - d1_j d2_i)^2``."""
    minors = np.outer(d1, d2) - np.outer(d2, d1)
    iu = np.triu_indices(len(d1), k=1)
    return float(1.0 + d1 @ d1 + d2 @ d2 + np.sum(minors[iu] ** 2))


def gram_forms_suite(cases=GRAM_CASES, max_n: int = 50, tol: float = 1e-8) -> SuiteResult:
    """Closed-form Gram entries and determinant against direct accumulation, ``n = 1..max_n``.

    Entries are compared relative to their own size, floored at 1e-6 of the
    Gram norm so that exactly vanishing entries (``d_{2,1} = 0`` for white
    noise) do not divide rounding noise by rounding noise.  The cross term
    uses ``sqrt(D1'D1 * D2'D2)`` since it vanishes identically for
    ``gamma_1 = -gamma_2``.  The determinant oracle is the Cauchy-Binet sum,
    which avoids the cancellation in ``(1+a)(1+b) - c^2``.  Also checks that the
    determinant over its leading-order term tends to one.
    """
    worst = 0.0
    for betas, params in cases:
        model = ArModel(betas)
        dc = d_coeffs(model, params, max_n)
        for n in range(1, max_n + 1):
            g11, g22, g12 = gram_from_d(dc, n)
            det = cauchy_binet_det(dc.d1[:n], dc.d2[:n])
            f = gram_closed_forms(model, params, n)
            floor = 1e-6 * max(g11, g22, 1.0)
            errs = (
                abs(f.d1d1 - g11) / max(g11, floor),
                abs(f.d2d2 - g22) / max(g22, floor),
                abs(f.d1d2 - g12) / max(math.sqrt(g11 * g22), abs(g12), floor),
                abs(f.det - det) / det,
            )
            worst = max(worst, *errs)
    lead = 0.0
    for betas, params in cases:
        model = ArModel(betas)
        n = 400
        ratio = float(gram_closed_forms(model, params, n, exact=True).det / det_leading_order(model, params, n, exact=True))
        lead = max(lead, abs(ratio - 1.0))
    metrics = {"cases": len(cases), "max_n": max_n, "max_rel_error": worst, "tol": tol,
               "leading_order_gap_n400": lead}
    return SuiteResult("gram-forms", worst < tol and lead < 1e-3, metrics)


SUITES = {
    "lemma1": lemma1_suite,
    "limit-identity": limit_identity_suite,
    "gram-forms": gram_forms_suite,
}


def run_suite(name: str) -> list[SuiteResult]:
    """Run one suite, or every suite for ``"all"``."""
    if name == "all":
        return [fn() for fn in SUITES.values()]
    if name not in SUITES:
        raise KeyError(name)
    return [SUITES[name]()]
