"""Convergence diagnostics and information criteria.

The WAIC accumulator is streaming: it never materializes the
draws-by-students pointwise matrix. lppd uses a running log-sum-exp with
a per-student running maximum; the variance term uses Welford moments.
"""

from __future__ import annotations

import numpy as np


class WaicAccumulator:
    """Streaming per-student moments of pointwise log-likelihood.

    Feed one pointwise log-likelihood vector per posterior draw via
    :meth:`add`. Supports associative :meth:`merge` over disjoint draw
    sets.
    """

    def __init__(self, n_students: int):
        self.n_students = int(n_students)
        self.count = 0
        # log-sum-exp state for mean likelihood (not log): running max M
        # and S = sum exp(ll - M)
        self._max = np.full(self.n_students, -np.inf)
        self._scaled_sum = np.zeros(self.n_students)
        # Welford state for log-likelihood
        self._mean = np.zeros(self.n_students)
        self._m2 = np.zeros(self.n_students)

    def add(self, pointwise_loglik: np.ndarray):
        ll = np.asarray(pointwise_loglik, dtype=float)
        if ll.shape != (self.n_students,):
            raise ValueError(f"expected {self.n_students} pointwise terms, got {ll.shape}")
        if not np.all(np.isfinite(ll)):
            raise ValueError("non-finite pointwise log-likelihood")
        self.count += 1

        bigger = ll > self._max
        # rescale the accumulated sum where a new maximum appears
        self._scaled_sum[bigger] *= np.exp(self._max[bigger] - ll[bigger])
        self._max[bigger] = ll[bigger]
        self._scaled_sum += np.exp(ll - self._max)

        delta = ll - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (ll - self._mean)

    def merge(self, other: "WaicAccumulator") -> "WaicAccumulator":
        """Combine with an accumulator over a disjoint draw set."""
        if other.n_students != self.n_students:
            raise ValueError("accumulators cover different student sets")
        out = WaicAccumulator(self.n_students)
        out.count = self.count + other.count
        if self.count == 0:
            out._max = other._max.copy()
            out._scaled_sum = other._scaled_sum.copy()
            out._mean = other._mean.copy()
            out._m2 = other._m2.copy()
            return out
        if other.count == 0:
            out._max = self._max.copy()
            out._scaled_sum = self._scaled_sum.copy()
            out._mean = self._mean.copy()
            out._m2 = self._m2.copy()
            return out
        out._max = np.maximum(self._max, other._max)
        out._scaled_sum = self._scaled_sum * np.exp(self._max - out._max) + \
            other._scaled_sum * np.exp(other._max - out._max)
        delta = other._mean - self._mean
        out._mean = self._mean + delta * other.count / out.count
        out._m2 = self._m2 + other._m2 + delta * delta * self.count * other.count / out.count
        return out

    def lppd_terms(self) -> np.ndarray:
        """log mean likelihood per student."""
        if self.count < 2:
            raise ValueError("WAIC needs at least 2 accumulated draws")
        if np.any(self._scaled_sum <= 0.0):
            raise ValueError(
                "mean likelihood underflowed for some student; "
                "pointwise log-likelihoods are too extreme even for the "
                "log-sum-exp path"
            )
        return self._max + np.log(self._scaled_sum) - np.log(self.count)

    def p_waic_terms(self) -> np.ndarray:
        """Sample variance of the log-likelihood per student."""
        if self.count < 2:
            raise ValueError("WAIC needs at least 2 accumulated draws")
        return self._m2 / (self.count - 1)


def compute_waic(acc: WaicAccumulator):
    """(lppd, p_waic, waic) with waic = -2 (lppd - p_waic)."""
    lppd = float(acc.lppd_terms().sum())
    p_waic = float(acc.p_waic_terms().sum())
    return lppd, p_waic, -2.0 * (lppd - p_waic)


def compute_dic(mean_loglik: float, loglik_at_posterior_mean: float):
    """(lp, p_dic, dic) with p_dic = 2 (loglik_at_mean - lp), dic = -2 lp + 2 p_dic."""
    if not (np.isfinite(mean_loglik) and np.isfinite(loglik_at_posterior_mean)):
        raise ValueError("DIC inputs must be finite")
    lp = float(mean_loglik)
    p_dic = 2.0 * (float(loglik_at_posterior_mean) - lp)
    return lp, p_dic, -2.0 * lp + 2.0 * p_dic


def effective_sample_size(trace: np.ndarray) -> float:
    """ESS via Geyer's initial positive sequence truncation.

    A constant trace returns its length by convention.
    """
    x = np.asarray(trace, dtype=float)
    n = x.shape[0]
    if n < 10:
        raise ValueError("trace too short for ESS (need >= 10)")
    if np.ptp(x) == 0.0:
        # constant trace: ESS defined as the length, by convention
        return float(n)
    x = x - x.mean()

    # autocovariance via FFT, biased (divides by n) as is standard here
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]

    # Geyer pairs Gamma_m = rho_{2m} + rho_{2m+1}, kept while positive;
    # tau = -1 + 2 sum Gamma_m
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    if tau <= 0.0:
        return float(n) * 1.05
    return float(min(n / tau, float(n) * 1.05))


def mcse(trace: np.ndarray) -> float:
    """Monte Carlo standard error: sd / sqrt(ESS). 0 for a constant trace."""
    x = np.asarray(trace, dtype=float)
    if np.ptp(x) == 0.0:
        return 0.0
    return float(x.std(ddof=1)) / np.sqrt(effective_sample_size(x))
