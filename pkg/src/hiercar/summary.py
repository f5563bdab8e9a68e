"""Credible-interval tables, rankings, and spatial-effect exports."""

from __future__ import annotations

import numpy as np
import pandas as pd


def equal_tailed_interval(draws: np.ndarray, level: float = 0.95):
    """(lower, upper) quantiles of an equal-tailed credible interval."""
    alpha = (1.0 - level) / 2.0
    return (
        np.quantile(draws, alpha, axis=0),
        np.quantile(draws, 1.0 - alpha, axis=0),
    )


def coefficient_table(draw_matrix: np.ndarray, names) -> pd.DataFrame:
    """Posterior mean, 95% interval, and zero-exclusion flag per coefficient."""
    draw_matrix = np.atleast_2d(np.asarray(draw_matrix, dtype=float))
    if draw_matrix.shape[1] != len(names):
        raise ValueError("draw columns and names disagree")
    lower, upper = equal_tailed_interval(draw_matrix)
    sig = ((lower > 0.0) | (upper < 0.0)).astype(int)
    return pd.DataFrame(
        {
            "name": list(names),
            "mean": draw_matrix.mean(axis=0),
            "lower95": lower,
            "upper95": upper,
            "sig": sig,
        }
    )


def unit_ranking(unit_draws: np.ndarray, labels, reference: float = 250.0) -> pd.DataFrame:
    """Units sorted by posterior mean (descending) with interval bands.

    band is 'above' when the 95% interval lies above the reference,
    'below' when under it, 'contains' otherwise. Ties in the mean break
    lexicographically by label.
    """
    unit_draws = np.atleast_2d(np.asarray(unit_draws, dtype=float))
    if unit_draws.shape[1] != len(labels):
        raise ValueError("draw columns and labels disagree")
    lower, upper = equal_tailed_interval(unit_draws)
    mean = unit_draws.mean(axis=0)
    band = np.where(lower > reference, "above", np.where(upper < reference, "below", "contains"))
    frame = pd.DataFrame(
        {
            "unit": list(labels),
            "mean": mean,
            "lower95": lower,
            "upper95": upper,
            "band": band,
        }
    )
    frame = frame.sort_values(["mean", "unit"], ascending=[False, True], kind="mergesort")
    return frame.reset_index(drop=True)


def spatial_effect_summary(phi_draws: np.ndarray, labels) -> pd.DataFrame:
    """Posterior mean of the spatial effect per municipality."""
    phi_draws = np.atleast_2d(np.asarray(phi_draws, dtype=float))
    if phi_draws.shape[1] != len(labels):
        raise ValueError("draw columns and labels disagree")
    return pd.DataFrame({"municipality": list(labels), "phi_mean": phi_draws.mean(axis=0)})
