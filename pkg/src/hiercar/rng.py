"""Seeded random generation and the distribution draws used by the sampler.

All randomness flows through :class:`SeededRng`, a thin wrapper around
``numpy.random.Generator`` with the PCG64 bit generator. PCG64 streams are
stable across numpy releases and platforms, so a fixed seed reproduces the
exact draw sequence. One instance is owned by one chain; parallel chains
use ``seed + chain_index``.

Parameterizations: Gamma(shape, rate) has mean shape/rate;
InverseGamma(a, b) is the law of 1/Gamma(a, b); Exponential(rate) has
mean 1/rate; GIG(p=1/2, a, b) has density proportional to
x^(-1/2) exp(-(a*x + b/x)/2).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import FactorizationError

# b below this multiple of a makes the GIG(1/2, a, b) kernel numerically
# indistinguishable from its b -> 0 limit, Gamma(1/2, a/2).
_GIG_B_FLOOR = 1e-280


class SeededRng:
    """Deterministic random source for one chain.

    ``seed`` is any non-negative 64-bit integer. Identical seeds give
    bit-identical draw sequences for identical call sequences.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy Generator (for bulk vectorized draws)."""
        return self._gen

    # -- Gaussian ---------------------------------------------------------

    def draw_normal(self, mean: float, variance: float) -> float:
        if not variance > 0.0:
            raise ValueError(f"normal variance must be > 0, got {variance}")
        return mean + np.sqrt(variance) * self._gen.standard_normal()

    def standard_normals(self, size: int) -> np.ndarray:
        return self._gen.standard_normal(size)

    def draw_mvn_from_precision(self, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
        """Draw N(mean, precision^-1) by factoring the precision matrix.

        The precision is Cholesky-factored (with jitter escalation on
        failure) and never inverted explicitly.
        """
        mean = np.asarray(mean, dtype=float)
        upper = self._chol_upper(precision)
        z = self._gen.standard_normal(mean.shape[0])
        return mean + solve_triangular(upper, z, lower=False)

    def draw_mvn_from_precision_rhs(self, rhs: np.ndarray, precision: np.ndarray) -> np.ndarray:
        """Draw N(precision^-1 rhs, precision^-1) with a single factorization."""
        rhs = np.asarray(rhs, dtype=float)
        upper = self._chol_upper(precision)
        mean = cho_solve((upper, False), rhs)
        z = self._gen.standard_normal(rhs.shape[0])
        return mean + solve_triangular(upper, z, lower=False)

    @staticmethod
    def conditional_mean_cov(rhs: np.ndarray, precision: np.ndarray):
        """(mean, covariance) of N(precision^-1 rhs, precision^-1).

        Covariance is materialized; intended for diagnostics and tests,
        not the sampling path.
        """
        upper = SeededRng._chol_upper(precision)
        mean = cho_solve((upper, False), np.asarray(rhs, dtype=float))
        cov = cho_solve((upper, False), np.eye(precision.shape[0]))
        return mean, cov

    @staticmethod
    def _chol_upper(precision: np.ndarray) -> np.ndarray:
        q = np.asarray(precision, dtype=float)
        try:
            return cholesky(q, lower=False)
        except np.linalg.LinAlgError:
            pass
        jitter = 1e-10 * np.max(np.diag(q))
        while jitter <= 1e-6 * np.max(np.diag(q)):
            try:
                return cholesky(q + jitter * np.eye(q.shape[0]), lower=False)
            except np.linalg.LinAlgError:
                jitter *= 10.0
        raise FactorizationError(
            "precision matrix not positive definite after jitter escalation"
        )

    # -- gamma family -----------------------------------------------------

    def draw_gamma(self, shape, rate):
        """Gamma(shape, rate) with mean shape/rate. Accepts scalars or arrays."""
        shape = np.asarray(shape, dtype=float)
        rate = np.asarray(rate, dtype=float)
        if np.any(shape <= 0.0) or np.any(rate <= 0.0):
            raise ValueError("gamma shape and rate must be > 0")
        out = self._gen.gamma(shape) / rate
        return float(out) if out.ndim == 0 else out

    def draw_inverse_gamma(self, shape, rate):
        """InverseGamma(a, b): the distribution of 1/Gamma(a, b)."""
        return 1.0 / self.draw_gamma(shape, rate)

    def draw_exponential(self, rate):
        rate = np.asarray(rate, dtype=float)
        if np.any(rate <= 0.0):
            raise ValueError("exponential rate must be > 0")
        out = self._gen.exponential() if rate.ndim == 0 else self._gen.exponential(size=rate.shape)
        out = out / rate
        return float(out) if np.ndim(out) == 0 else out

    # -- generalized inverse Gaussian, order 1/2 ---------------------------

    def draw_gig_half(self, a: float, b: float) -> float:
        """One draw from GIG(p=1/2, a, b).

        Uses the reciprocal relationship with the Inverse Gaussian law:
        if V ~ IG(mu=sqrt(a/b), lambda=a) then 1/V ~ GIG(1/2, a, b).
        The IG draw is numpy's Wald sampler (Michael-Schucany-Haas
        transformation with rejection). At b = 0 the kernel degenerates
        to Gamma(1/2, a/2).
        """
        if not a > 0.0:
            raise ValueError(f"GIG parameter a must be > 0, got {a}")
        if b < 0.0:
            raise ValueError(f"GIG parameter b must be >= 0, got {b}")
        if b <= a * _GIG_B_FLOOR:
            return self.draw_gamma(0.5, a / 2.0)
        return 1.0 / self._gen.wald(np.sqrt(a / b), a)

    def draw_gig_half_vector(self, a: float, b: np.ndarray) -> np.ndarray:
        """Independent GIG(1/2, a, b_j) draws sharing one a."""
        b = np.asarray(b, dtype=float)
        out = np.empty(b.shape[0])
        for j in range(b.shape[0]):
            out[j] = self.draw_gig_half(a, b[j])
        return out

    # -- misc --------------------------------------------------------------

    def uniform(self) -> float:
        return self._gen.random()

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)


def gig_half_mean(a: float, b: float) -> float:
    """Closed-form mean of GIG(1/2, a, b): sqrt(b/a) * (1 + 1/sqrt(a*b)).

    Follows from the Bessel ratio E[X] = sqrt(b/a) K_{3/2}(w)/K_{1/2}(w)
    at w = sqrt(a*b), with K_{3/2}(w) = K_{1/2}(w) (1 + 1/w).
    """
    if b == 0.0:
        return 1.0 / a
    w = np.sqrt(a * b)
    return np.sqrt(b / a) * (1.0 + 1.0 / w)
