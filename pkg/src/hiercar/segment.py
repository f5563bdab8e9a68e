"""Uncertainty-propagating territorial segmentation.

Per posterior draw: summarize units by a scalar (departmental or
municipal mean of the student-level linear predictor, or the spatial
effect itself), cluster the scalars with k-means selecting k by mean
silhouette, and accumulate same-cluster indicators into a co-clustering
probability matrix. A point partition is extracted from the matrix rows
with a diagonal-covariance Gaussian mixture selected by BIC.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

LEVELS = ("department", "municipality", "spatial_effect")


# -- per-unit summaries of the posterior draws --------------------------------


def unit_mean_draws(draws: dict, inputs, level: str):
    """(draw_count x units) matrix of per-unit scalars, plus unit labels.

    ``inputs`` carries the training-side aggregates: per-municipality
    student covariate means and counts, the (standardized) municipal and
    departmental covariates, and the nesting map. Departmental and
    municipal values are student-weighted means of the linear predictor,
    computed exactly through its linearity; the spatial_effect level
    returns the phi draws unchanged.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown segmentation level {level!r}")
    phi = np.asarray(draws["phi"], dtype=float)
    if level == "spatial_effect":
        return phi.copy(), list(inputs.municipality_ids)

    beta0 = np.asarray(draws["beta0"], dtype=float)
    values = beta0[:, None] + phi
    if "beta_E" in draws and np.size(draws["beta_E"]):
        values = values + np.asarray(draws["beta_E"]) @ np.asarray(inputs.mun_x_means).T
    if "beta_M" in draws and np.size(draws["beta_M"]):
        values = values + np.asarray(draws["beta_M"]) @ np.asarray(inputs.municipal_covariates).T
    if "beta_D" in draws and np.size(draws["beta_D"]):
        dep_term = np.asarray(draws["beta_D"]) @ np.asarray(inputs.departmental_covariates).T
        values = values + dep_term[:, inputs.municipality_to_department]
    if level == "municipality":
        return values, list(inputs.municipality_ids)

    # department means weight municipalities by student counts
    mun_to_dep = np.asarray(inputs.municipality_to_department, dtype=int)
    n_per_mun = np.asarray(inputs.n_per_mun, dtype=float)
    d = len(inputs.department_ids)
    weights = np.zeros((mun_to_dep.shape[0], d))
    weights[np.arange(mun_to_dep.shape[0]), mun_to_dep] = n_per_mun
    weights /= weights.sum(axis=0, keepdims=True)
    return values @ weights, list(inputs.department_ids)


# -- k-means with silhouette selection -----------------------------------------


@dataclass
class PartitionResult:
    labels: np.ndarray
    k: int
    mean_silhouette: float
    degenerate: bool = False


def _kmeans_pp_centers(values: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = values[gen.integers(values.shape[0])]
    d2 = (values - centers[0]) ** 2
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers[c:] = values[gen.integers(values.shape[0], size=k - c)]
            break
        probs = d2 / total
        centers[c] = values[gen.choice(values.shape[0], p=probs)]
        d2 = np.minimum(d2, (values - centers[c]) ** 2)
    return centers


def kmeans_1d(values: np.ndarray, k: int, gen: np.random.Generator, restarts: int = 10):
    """Lloyd's algorithm on scalars with k-means++ seeding and restarts.

    Returns (labels, inertia). Inertia is asserted non-increasing across
    Lloyd iterations.
    """
    values = np.asarray(values, dtype=float)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = _kmeans_pp_centers(values, k, gen)
        inertia = np.inf
        labels = np.zeros(values.shape[0], dtype=int)
        for _iteration in range(300):
            dist = np.abs(values[:, None] - centers[None, :])
            labels = dist.argmin(axis=1)
            reseeded = False
            for c in range(k):
                members = values[labels == c]
                if members.size:
                    centers[c] = members.mean()
                else:
                    # reseed an empty cluster at the worst-fit point
                    worst = np.abs(values - centers[labels]).argmax()
                    centers[c] = values[worst]
                    labels[worst] = c
                    reseeded = True
            new_inertia = float(((values - centers[labels]) ** 2).sum())
            if reseeded:
                # reseeding breaks the descent guarantee for one iteration
                inertia = np.inf
                continue
            assert new_inertia <= inertia * (1.0 + 1e-12) + 1e-12, "inertia increased"
            if inertia - new_inertia <= 1e-8 * max(inertia, 1.0):
                inertia = new_inertia
                break
            inertia = new_inertia
        if inertia < best_inertia:
            best_inertia, best_labels = inertia, labels.copy()
    return best_labels, best_inertia


def mean_silhouette(values: np.ndarray, labels: np.ndarray, dist: np.ndarray | None = None) -> float:
    """Average silhouette (b - a)/max(a, b); singleton clusters score 0."""
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels, dtype=int)
    u = values.shape[0]
    if dist is None:
        dist = np.abs(values[:, None] - values[None, :])
    cluster_ids = np.unique(labels)
    if cluster_ids.shape[0] < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    sums = np.empty((u, cluster_ids.shape[0]))
    counts = np.empty(cluster_ids.shape[0])
    for idx, c in enumerate(cluster_ids):
        members = labels == c
        counts[idx] = members.sum()
        sums[:, idx] = dist[:, members].sum(axis=1)
    own = np.searchsorted(cluster_ids, labels)
    scores = np.zeros(u)
    for i in range(u):
        n_own = counts[own[i]]
        if n_own <= 1:
            continue
        a = sums[i, own[i]] / (n_own - 1.0)
        b = np.inf
        for idx in range(cluster_ids.shape[0]):
            if idx != own[i]:
                b = min(b, sums[i, idx] / counts[idx])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def kmeans_silhouette(
    values: np.ndarray,
    k_min: int = 2,
    k_max: int | None = None,
    seed: int = 0,
    restarts: int = 10,
) -> PartitionResult:
    """Cluster scalars, choosing k in [k_min, k_max] by mean silhouette.

    Fewer than 3 units, or all-identical values, fall back to a single
    cluster with the degenerate flag set (silhouette undefined there).
    """
    values = np.asarray(values, dtype=float)
    u = values.shape[0]
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if u < 3 or np.ptp(values) == 0.0:
        return PartitionResult(np.zeros(u, dtype=int), 1, float("nan"), degenerate=True)
    if k_max is None:
        k_max = min(10, u - 1)
    k_max = min(k_max, u - 1)
    k_min = max(2, k_min)
    dist = np.abs(values[:, None] - values[None, :])
    best = None
    for k in range(k_min, k_max + 1):
        labels, _ = kmeans_1d(values, k, gen, restarts=restarts)
        if np.unique(labels).shape[0] < 2:
            continue
        score = mean_silhouette(values, labels, dist)
        if best is None or score > best.mean_silhouette:
            best = PartitionResult(labels, k, score)
    if best is None:
        return PartitionResult(np.zeros(u, dtype=int), 1, float("nan"), degenerate=True)
    return best


# -- co-clustering -----------------------------------------------------------


@dataclass
class CoClusterMatrix:
    """Posterior pairwise same-cluster probabilities.

    Entries are exact multiples of 1/draw_count, the matrix is exactly
    symmetric, and the diagonal is exactly 1.
    """

    matrix: np.ndarray
    labels: list
    draw_count: int

    def __post_init__(self):
        p = self.matrix
        if p.shape[0] != p.shape[1] or p.shape[0] != len(self.labels):
            raise ValueError("co-clustering matrix and labels disagree")
        if not np.array_equal(p, p.T):
            raise ValueError("co-clustering matrix must be exactly symmetric")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("co-clustering entries must lie in [0, 1]")
        if not np.all(np.diag(p) == 1.0):
            raise ValueError("co-clustering diagonal must be 1")


def accumulate_coclustering(partitions, labels) -> CoClusterMatrix:
    """Average same-cluster indicator matrices over per-draw partitions."""
    partitions = list(partitions)
    if not partitions:
        raise ValueError("no partitions supplied")
    u = len(labels)
    counts = np.zeros((u, u), dtype=np.int64)
    for part in partitions:
        part = np.asarray(part)
        if part.shape[0] != u:
            raise ValueError("partition over a different unit set")
        counts += part[:, None] == part[None, :]
    return CoClusterMatrix(counts / len(partitions), list(labels), len(partitions))


def per_draw_partitions(
    value_draws: np.ndarray,
    k_min: int = 2,
    k_max: int | None = None,
    seed: int = 0,
    stride: int = 1,
    restarts: int = 10,
    threads: int = 1,
):
    """Run kmeans_silhouette on every stride-th draw; deterministic per draw.

    Each draw gets its own seed derived from (seed, draw index), so the
    result does not depend on thread scheduling. Returns (partitions,
    chosen_ks, draw_indices).
    """
    value_draws = np.atleast_2d(np.asarray(value_draws, dtype=float))
    indices = list(range(0, value_draws.shape[0], max(1, stride)))

    def work(idx):
        draw_seed = np.random.SeedSequence((seed, idx)).generate_state(1)[0]
        return kmeans_silhouette(
            value_draws[idx], k_min=k_min, k_max=k_max, seed=int(draw_seed), restarts=restarts
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, indices))
    else:
        results = [work(idx) for idx in indices]
    partitions = [r.labels for r in results]
    ks = [r.k for r in results]
    return partitions, ks, indices


# -- point partition by Gaussian mixture + BIC ----------------------------------


class EmConvergenceError(RuntimeError):
    """EM failed to converge; carries the best partition found so far."""

    def __init__(self, message, best_labels=None):
        super().__init__(message)
        self.best_labels = best_labels


def _gmm_diag_em(x, k, gen, max_iter=300, tol=1e-8, var_floor=1e-8):
    """Gaussian mixture EM with a diagonal covariance shared by all components.

    Tying the per-feature variances across components keeps the
    likelihood bounded and stops BIC from rewarding components that
    collapse onto near-duplicate rows, which co-clustering matrices are
    full of. Returns (loglik, responsibilities); loglik is None when EM
    failed to converge within max_iter.
    """
    n, d = x.shape
    rows = gen.choice(n, size=k, replace=False)
    means = x[rows].copy()
    variances = np.maximum(x.var(axis=0), var_floor)
    weights = np.full(k, 1.0 / k)
    prev = -np.inf
    log_resp = None
    for _ in range(max_iter):
        log_prob = np.empty((n, k))
        base = -0.5 * (d * np.log(2.0 * np.pi) + np.log(variances).sum())
        for c in range(k):
            diff2 = ((x - means[c]) ** 2 / variances).sum(axis=1)
            log_prob[:, c] = np.log(weights[c]) + base - 0.5 * diff2
        norm = np.logaddexp.reduce(log_prob, axis=1)
        loglik = float(norm.sum())
        log_resp = log_prob - norm[:, None]
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-10):
            # a component died; reseed it on the worst-explained row
            dead = int(nk.argmin())
            means[dead] = x[int(norm.argmin())]
            prev = -np.inf
            continue
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        pooled = np.zeros(d)
        for c in range(k):
            pooled += resp[:, c] @ ((x - means[c]) ** 2)
        variances = np.maximum(pooled / n, var_floor)
        if abs(loglik - prev) <= tol * max(1.0, abs(loglik)):
            return loglik, resp
        prev = loglik
    return None, np.exp(log_resp)


def extract_partition(p: CoClusterMatrix, k_max: int = 10, seed: int = 0, restarts: int = 5):
    """Point partition from the co-clustering matrix rows, k chosen by BIC.

    Fits diagonal Gaussian mixtures for k = 1..k_max and returns the
    maximum-a-posteriori assignment of the BIC-minimizing model, along
    with the chosen k.
    """
    x = np.asarray(p.matrix, dtype=float)
    u, d = x.shape
    k_max = min(k_max, u)
    best_bic, best_labels, best_k = np.inf, None, None
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    for k in range(1, k_max + 1):
        if k == 1:
            var = np.maximum(x.var(axis=0), 1e-8)
            loglik = float(
                -0.5 * (d * np.log(2.0 * np.pi) + np.log(var).sum()) * u
                - 0.5 * ((x - x.mean(axis=0)) ** 2 / var).sum()
            )
            labels = np.zeros(u, dtype=int)
        else:
            loglik, labels = None, None
            for _ in range(restarts):
                ll, resp = _gmm_diag_em(x, k, gen)
                if ll is not None and (loglik is None or ll > loglik):
                    loglik = ll
                    labels = resp.argmax(axis=1)
            if loglik is None:
                raise EmConvergenceError(
                    f"EM did not converge for k={k} after {restarts} restarts",
                    best_labels=best_labels,
                )
        # weights + component means + one shared diagonal covariance
        n_params = (k - 1) + k * d + d
        bic = -2.0 * loglik + n_params * np.log(u)
        if bic < best_bic:
            best_bic, best_labels, best_k = bic, labels, k
    return best_labels, best_k


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two partitions of the same units."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("partitions cover different unit sets")
    n = a.shape[0]
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    contingency = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
