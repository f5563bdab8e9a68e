"""Posterior-predictive scoring of new students and accuracy metrics.

Prediction is supported only for students in municipalities present in
the training run (no out-of-graph extrapolation). Each predictive draw
resamples a retained posterior state uniformly with replacement, forms
the student's linear predictor, and adds municipal-level Gaussian noise.
Students get independent deterministic rng substreams keyed by their
position, so the computation parallelizes without changing results.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def posterior_predictive_draws(
    draws: dict,
    x: np.ndarray,
    municipality: np.ndarray,
    municipal_covariates: np.ndarray,
    departmental_covariates: np.ndarray,
    municipality_to_department: np.ndarray,
    count: int = 100,
    seed: int = 0,
) -> np.ndarray:
    """Matrix (students x count) of posterior predictive draws.

    ``draws`` holds the stored chain blocks; ``municipal_covariates`` and
    ``departmental_covariates`` must be on the scale the chain was fit on
    (standardized with the training record). ``municipality`` indexes into
    the training municipality map.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    municipality = np.asarray(municipality, dtype=int)
    n_new = x.shape[0]
    if municipality.shape[0] != n_new:
        raise ValueError("covariate rows and municipality indices disagree")
    m = municipal_covariates.shape[0]
    if municipality.size and (municipality.min() < 0 or municipality.max() >= m):
        raise InputError("student references a municipality outside the training maps")
    if count < 1:
        raise ValueError("count must be >= 1")

    beta0 = np.asarray(draws["beta0"], dtype=float)
    beta_E = np.asarray(draws["beta_E"], dtype=float) if "beta_E" in draws else None
    beta_M = np.asarray(draws["beta_M"], dtype=float) if "beta_M" in draws else None
    beta_D = np.asarray(draws["beta_D"], dtype=float) if "beta_D" in draws else None
    phi = np.asarray(draws["phi"], dtype=float)
    kappa2 = np.asarray(draws["kappa2_mun"], dtype=float)
    n_states = beta0.shape[0]

    # per-draw municipal baseline: beta0 + z'beta_M + w'beta_D + phi
    base = beta0[:, None] + phi
    if beta_M is not None and beta_M.size:
        base = base + beta_M @ municipal_covariates.T
    if beta_D is not None and beta_D.size:
        base = base + (beta_D @ departmental_covariates.T)[:, municipality_to_department]

    out = np.empty((n_new, count))
    children = np.random.SeedSequence(seed).spawn(n_new)
    for i in range(n_new):
        gen = np.random.Generator(np.random.PCG64(children[i]))
        states = gen.integers(0, n_states, size=count)
        j = municipality[i]
        zeta = base[states, j]
        if beta_E is not None and beta_E.size:
            zeta = zeta + beta_E[states] @ x[i]
        out[i] = zeta + gen.standard_normal(count) * np.sqrt(kappa2[states, j])
    return out


def summarize_predictive(draw_matrix: np.ndarray):
    """(point prediction, predictive sd) per student from the draw matrix."""
    point = draw_matrix.mean(axis=1)
    sd = draw_matrix.std(axis=1, ddof=1) if draw_matrix.shape[1] > 1 else np.zeros(draw_matrix.shape[0])
    return point, sd


def score_predictions(predicted, observed):
    """(rmse, mae, r2) with r2 = 1 - SSE/SST."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError("predicted and observed lengths differ")
    if predicted.shape[0] < 2:
        raise ValueError("need at least 2 points to score")
    err = predicted - observed
    rmse = float(np.sqrt(np.mean(err * err)))
    mae = float(np.mean(np.abs(err)))
    sst = float(np.sum((observed - observed.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("observed values are constant; R^2 undefined")
    r2 = 1.0 - float(np.sum(err * err)) / sst
    return rmse, mae, r2
