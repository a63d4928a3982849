"""Characteristic roots of the second-order message recursion.

``V_{n+1} = a V_n + b V_{n-1}`` with ``V_1 = U_1``, ``V_2 = U_2``.  The roots
``gamma_1, gamma_2`` of ``lambda^2 - a lambda - b`` fix ``a = gamma_1 + gamma_2``
and ``b = -gamma_1 gamma_2``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "REAL_DISTINCT",
    "CONJUGATE_PAIR",
    "REPEATED",
    "Sk2Params",
    "message_coeffs",
    "message_coeffs_scaled",
    "sk1_message_coeffs",
    "real_part_checked",
]

REAL_DISTINCT = "real_distinct"
CONJUGATE_PAIR = "conjugate_pair"
REPEATED = "repeated"
_KINDS = (REAL_DISTINCT, CONJUGATE_PAIR, REPEATED)

IMAG_RTOL = 1e-9


def real_part_checked(value: np.ndarray, scale: np.ndarray | float, what: str) -> np.ndarray:
    """Return ``value.real`` after asserting the imaginary residue is negligible.

    ``scale`` is the magnitude of the terms that were summed to form ``value``.
    """
    value = np.asarray(value)
    if np.iscomplexobj(value):
        bound = IMAG_RTOL * np.maximum(np.abs(scale), np.finfo(float).tiny)
        if np.any(np.abs(value.imag) > bound):
            raise ArithmeticError(f"{what}: imaginary residue exceeds tolerance")
        return value.real
    return value


@dataclass(frozen=True)
class Sk2Params:
    """Root pair of the SK(2) message recursion.

    Use the :meth:`real`, :meth:`conjugate` and :meth:`repeated`
    constructors; they validate ``|gamma_i| > 1``.
    """

    kind: str
    gamma1: complex
    gamma2: complex

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown root kind {self.kind!r}")
        g1, g2 = complex(self.gamma1), complex(self.gamma2)
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma2", g2)
        if not (abs(g1) > 1.0 and abs(g2) > 1.0):
            raise ValueError("characteristic roots must satisfy |gamma| > 1")
        if self.kind == REAL_DISTINCT:
            if g1.imag != 0.0 or g2.imag != 0.0 or g1 == g2:
                raise ValueError("real_distinct roots must be real and different")
        elif self.kind == CONJUGATE_PAIR:
            if g1.imag <= 0.0 or g2 != g1.conjugate():
                raise ValueError("conjugate_pair needs gamma2 = conj(gamma1) with Im(gamma1) > 0")
        elif g1.imag != 0.0 or g1 != g2:
            raise ValueError("repeated root must be a single real value")

    @classmethod
    def real(cls, gamma1: float, gamma2: float) -> "Sk2Params":
        return cls(REAL_DISTINCT, float(gamma1), float(gamma2))

    @classmethod
    def conjugate(cls, r: float, theta: float) -> "Sk2Params":
        if not 0.0 < theta < math.pi:
            raise ValueError("conjugate pair angle must lie in (0, pi)")
        g = cmath.rect(r, theta)
        return cls(CONJUGATE_PAIR, g, g.conjugate())

    @classmethod
    def repeated(cls, gamma: float) -> "Sk2Params":
        return cls(REPEATED, float(gamma), float(gamma))

    @property
    def is_repeated(self) -> bool:
        return self.kind == REPEATED

    @property
    def a(self) -> float:
        return float((self.gamma1 + self.gamma2).real)

    @property
    def b(self) -> float:
        return float((-self.gamma1 * self.gamma2).real)

    @property
    def c1(self) -> complex:
        return 1.0 / (self.gamma1 * (self.gamma1 - self.gamma2))

    @property
    def c2(self) -> complex:
        return 1.0 / (self.gamma2 * (self.gamma2 - self.gamma1))

    @property
    def r(self) -> float:
        return abs(self.gamma1)

    @property
    def theta(self) -> float:
        return cmath.phase(self.gamma1)

    @property
    def min_modulus(self) -> float:
        return min(abs(self.gamma1), abs(self.gamma2))

    @property
    def max_modulus(self) -> float:
        return max(abs(self.gamma1), abs(self.gamma2))

    @property
    def rate_nats(self) -> float:
        return 2.0 * math.log(self.min_modulus)


def _case_a_terms(params: Sk2Params, k: np.ndarray, rho: float):
    g1, g2 = params.gamma1, params.gamma2
    t1 = params.c1 * (g1 / rho) ** k
    t2 = params.c2 * (g2 / rho) ** k
    return t1, t2


def message_coeffs_scaled(params: Sk2Params, n: int, rho: float | None = None):
    """``(a_k / rho^k, b_k / rho^k)`` for ``k = 1..n``; ``rho`` defaults to the largest modulus."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rho = params.max_modulus if rho is None else rho
    k = np.arange(1, n + 1, dtype=float)
    if params.is_repeated:
        g = params.gamma1.real
        s = np.sign(g)
        unit = s ** (k - 1) * (abs(g) / rho) ** k / abs(g)  # gamma^(k-1) / rho^k
        a = (2.0 - k) * unit
        b = (k - 1.0) * unit / g
        return a, b
    g1, g2 = params.gamma1, params.gamma2
    t1, t2 = _case_a_terms(params, k, rho)
    a = -(g2 * t1 + g1 * t2)
    b = t1 + t2
    scale_a = np.abs(g2 * t1) + np.abs(g1 * t2)
    scale_b = np.abs(t1) + np.abs(t2)
    a = real_part_checked(a, scale_a, "message coefficient a_n")
    b = real_part_checked(b, scale_b, "message coefficient b_n")
    return a, b


def message_coeffs(params: Sk2Params, n: int):
    """Coefficients with ``V_k = a_k U_1 + b_k U_2`` for ``k = 1..n``."""
    return message_coeffs_scaled(params, n, rho=1.0)


def sk1_message_coeffs(gamma: float, n: int) -> np.ndarray:
    """``V_k = gamma^(k-1) U`` for the first-order recursion."""
    return float(gamma) ** np.arange(n, dtype=float)
