"""Stationary AR(p) Gaussian noise: spectral polynomial, PSD, sampling, whitening.

The noise obeys ``prod_k (1 + beta_k B) Z_n = W_n`` with ``B`` the backward
shift and ``W`` unit-variance white Gaussian noise.  Expanding the product
gives the filter ``phi_0 + phi_1 B + ... + phi_p B^p`` with ``phi_0 = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import lfilter, lfiltic

__all__ = [
    "ArModel",
    "NoisePath",
    "eval_L",
    "eval_L_prime",
    "psd",
    "yule_walker_autocov",
    "sample_noise",
    "whiten",
    "stream",
]


@dataclass(frozen=True)
class ArModel:
    """AR(p) noise model parametrised by the factor coefficients ``beta_k``.

    ``L(z) = prod_k (1 + beta_k z)`` and ``S_Z(e^{i theta}) = 1/|L(e^{i theta})|^2``.
    An empty ``betas`` is white noise.
    """

    betas: tuple[float, ...] = ()
    phi: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        betas = tuple(float(b) for b in np.atleast_1d(np.asarray(self.betas, dtype=float)))
        for b in betas:
            if not np.isfinite(b) or abs(b) >= 1.0:
                raise ValueError(f"AR coefficient {b!r} must satisfy |beta| < 1")
        phi = np.array([1.0])
        for b in betas:
            phi = np.convolve(phi, [1.0, b])
        phi.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def parse(cls, text: str) -> "ArModel":
        """Build a model from a comma separated list such as ``"0.3,0.4"``."""
        text = text.strip()
        if not text:
            return cls(())
        try:
            values = [float(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise ValueError(f"cannot parse beta list {text!r}") from exc
        return cls(tuple(values))

    @property
    def order(self) -> int:
        return len(self.betas)

    def L(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.ones_like(z)
        for b in self.betas:
            out = out * (1.0 + b * z)
        return out

    def L_prime(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros_like(z)
        for k, bk in enumerate(self.betas):
            term = np.full_like(z, bk)
            for j, bj in enumerate(self.betas):
                if j != k:
                    term = term * (1.0 + bj * z)
            out = out + term
        return out

    def L_divided_difference(self, z1, z2):
        """``(L(z1) - L(z2)) / (z1 - z2)`` without cancellation; ``L'(z)`` when ``z1 == z2``."""
        z1 = np.asarray(z1, dtype=complex)
        z2 = np.asarray(z2, dtype=complex)
        # product rule for divided differences: (QP)[a,b] = Q[a,b] P(a) + Q(b) P[a,b]
        value_at_1 = np.ones(np.broadcast(z1, z2).shape, dtype=complex)
        dd = np.zeros_like(value_at_1)
        for b in self.betas:
            dd = b * value_at_1 + (1.0 + b * z2) * dd
            value_at_1 = value_at_1 * (1.0 + b * z1)
        return dd


def eval_L(model: ArModel, z):
    """Spectral polynomial ``L_Z(z) = prod (1 + beta_k z)``."""
    return model.L(z)


def eval_L_prime(model: ArModel, z):
    """Derivative ``L_Z'(z) = sum_k beta_k prod_{j != k} (1 + beta_j z)``."""
    return model.L_prime(z)


def psd(model: ArModel, theta):
    """Power spectral density ``1/|L(e^{i theta})|^2``."""
    L = model.L(np.exp(1j * np.asarray(theta, dtype=float)))
    return 1.0 / np.abs(L) ** 2


def yule_walker_autocov(model: ArModel, max_lag: int) -> np.ndarray:
    """Autocovariances ``r_0..r_max_lag`` of the stationary process.

    Solves ``sum_k phi_k r_{j-k} = delta_{j0}`` for ``j = 0..p`` and extends
    with the AR recursion.
    """
    phi = model.phi
    p = model.order
    A = np.zeros((p + 1, p + 1))
    for j in range(p + 1):
        for k in range(p + 1):
            A[j, abs(j - k)] += phi[k]
    rhs = np.zeros(p + 1)
    rhs[0] = 1.0
    r = list(np.linalg.solve(A, rhs))
    for j in range(p + 1, max_lag + 1):
        r.append(-sum(phi[k] * r[j - k] for k in range(1, p + 1)))
    return np.asarray(r[: max_lag + 1])


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream: Philox keyed by ``seed``, block counter offset by ``index``.

    The index sits in the most significant counter word, so streams for
    different indices never overlap.
    """
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be non-negative")
    bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, index])
    return np.random.Generator(bitgen)


@dataclass(frozen=True)
class NoisePath:
    """A sampled noise realisation ``Z_1..Z_n``.

    ``innovations`` holds ``W_{p+1}..W_n``, the white noise that drove the
    recursion after the stationary start; whitening ``samples`` reproduces it.
    """

    samples: np.ndarray
    model: ArModel
    seed: int
    innovations: np.ndarray


def _initial_block(model: ArModel, count: int, rng: np.random.Generator) -> np.ndarray:
    if count == 0:
        return np.zeros(0)
    r = yule_walker_autocov(model, count - 1)
    cov = r[np.abs(np.subtract.outer(np.arange(count), np.arange(count)))]
    chol = np.linalg.cholesky(cov)
    return chol @ rng.standard_normal(count)


def draw_noise(model: ArModel, n: int, rng: np.random.Generator, burn_in: int | None = None):
    """Draw ``(samples, innovations)`` from ``rng``.

    With ``burn_in`` the recursion starts from zeros and discards that many
    steps instead of using the exact stationary start.
    """
    p = model.order
    if burn_in is not None:
        w = rng.standard_normal(n + burn_in)
        z = lfilter([1.0], model.phi, w)
        samples = z[burn_in:]
        innovations = w[burn_in + p:] if n > p else np.zeros(0)
        return samples, innovations
    head = _initial_block(model, min(p, n), rng)
    if n <= p:
        return head, np.zeros(0)
    w = rng.standard_normal(n - p)
    if p == 0:
        return w.copy(), w
    zi = lfiltic([1.0], model.phi, head[::-1])
    tail, _ = lfilter([1.0], model.phi, w, zi=zi)
    return np.concatenate([head, tail]), w


def sample_noise(model: ArModel, n: int, seed: int, burn_in: int | None = None) -> NoisePath:
    """Sample a stationary path of length ``n``; deterministic given ``seed``."""
    if n < 1:
        raise ValueError("noise path length must be at least 1")
    samples, innovations = draw_noise(model, n, stream(seed), burn_in=burn_in)
    return NoisePath(samples=samples, model=model, seed=seed, innovations=innovations)


def whiten(model: ArModel, series: Sequence[float] | np.ndarray) -> np.ndarray:
    """Apply ``L(B)``: ``out_n = sum_k phi_k x_{n-k}`` for ``n >= p+1``.

    The first ``p`` entries have no complete history and are dropped.
    """
    x = np.asarray(series, dtype=float)
    p = model.order
    if x.ndim != 1 or x.size < p + 1:
        raise ValueError(f"series needs at least {p + 1} samples to whiten")
    out = np.zeros(x.size - p)
    for k, c in enumerate(model.phi):
        out += c * x[p - k: x.size - k]
    return out
