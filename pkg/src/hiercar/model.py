"""Parameter state, hyperparameter configuration, and the Gaussian likelihood.

The three variants (baseline, ridge, lasso) share the sampling model
y_{i,j,k} ~ N(zeta_{i,j,k}, kappa2_{j,k}) and the mean structure

    zeta = beta0 + x'beta_E + z'beta_M + w'beta_D + phi_{j,k};

they differ only in the coefficient prior layer, which determines which
scale fields are live on the state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import HierarchicalDataset, ols_fit
from .errors import RankDeficientError

VARIANTS = ("baseline", "ridge", "lasso")

LOG_TWO_PI = np.log(2.0 * np.pi)


@dataclass
class Hyperparameters:
    """Prior constants; defaults are the weakly informative specification.

    Prior means mu_* apply to the baseline variant only (ridge and lasso
    coefficient priors are zero-centered by construction). The intercept
    prior N(mu_beta0, sigma2_beta0) is shared by all variants.
    """

    mu_beta0: float = 0.0
    mu_E: np.ndarray | None = None
    mu_M: np.ndarray | None = None
    mu_D: np.ndarray | None = None
    nu_beta0: float = 2.0
    nu_E: float = 2.0
    nu_M: float = 2.0
    nu_D: float = 2.0
    nu_kappa: float = 2.0
    nu_phi: float = 2.0
    gamma2_beta0: float = 1.0
    gamma2_E: float = 1.0
    gamma2_M: float = 1.0
    gamma2_D: float = 1.0
    gamma2_phi: float = 1.0
    a_alpha_kappa: float = 2.0
    b_alpha_kappa: float = 5.0
    a_beta_kappa: float = 2.0
    b_beta_kappa: float = 5.0
    a_lambda_E: float = 2.0
    a_lambda_M: float = 2.0
    a_lambda_D: float = 2.0
    b_lambda_E: float = 5.0
    b_lambda_M: float = 5.0
    b_lambda_D: float = 5.0

    def __post_init__(self):
        for name in (
            "nu_beta0", "nu_E", "nu_M", "nu_D", "nu_kappa", "nu_phi",
            "gamma2_beta0", "gamma2_E", "gamma2_M", "gamma2_D", "gamma2_phi",
            "a_alpha_kappa", "b_alpha_kappa", "a_beta_kappa", "b_beta_kappa",
            "a_lambda_E", "a_lambda_M", "a_lambda_D",
            "b_lambda_E", "b_lambda_M", "b_lambda_D",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be > 0")

    def resolved_means(self, p_E: int, p_M: int, p_D: int):
        mu_E = np.zeros(p_E) if self.mu_E is None else np.asarray(self.mu_E, dtype=float)
        mu_M = np.zeros(p_M) if self.mu_M is None else np.asarray(self.mu_M, dtype=float)
        mu_D = np.zeros(p_D) if self.mu_D is None else np.asarray(self.mu_D, dtype=float)
        if mu_E.shape != (p_E,) or mu_M.shape != (p_M,) or mu_D.shape != (p_D,):
            raise ValueError("prior mean length does not match covariate dimension")
        return mu_E, mu_M, mu_D

    @classmethod
    def from_dict(cls, payload: dict) -> "Hyperparameters":
        kwargs = dict(payload)
        for key in ("mu_E", "mu_M", "mu_D"):
            if kwargs.get(key) is not None:
                kwargs[key] = np.asarray(kwargs[key], dtype=float)
        return cls(**kwargs)


@dataclass
class ModelState:
    """One MCMC iteration's parameter values.

    Variant-specific scale fields are None when dead: sigma2_E/M/D live
    only under baseline, lambda2_* under ridge and lasso, tau2_E/M/D
    (local scale-mixture variances) only under lasso. zeta is always
    derived, never stored.
    """

    variant: str
    beta0: float
    beta_E: np.ndarray
    beta_M: np.ndarray
    beta_D: np.ndarray
    phi: np.ndarray            # (m,)
    kappa2_mun: np.ndarray     # (m,)
    kappa2_dep: np.ndarray     # (d,)
    alpha_kappa: float
    beta_kappa: float
    sigma2_beta0: float
    tau2_phi: float
    sigma2_E: float | None = None
    sigma2_M: float | None = None
    sigma2_D: float | None = None
    lambda2_E: float | None = None
    lambda2_M: float | None = None
    lambda2_D: float | None = None
    tau2_E: np.ndarray | None = None
    tau2_M: np.ndarray | None = None
    tau2_D: np.ndarray | None = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        live, dead = _live_dead_fields(self.variant)
        for name in live:
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{name} must be set under variant {self.variant!r}")
            if np.any(np.asarray(value) <= 0):
                raise ValueError(f"{name} must be strictly positive")
        for name in dead:
            if getattr(self, name) is not None:
                raise ValueError(f"{name} must be absent under variant {self.variant!r}")
        for name in ("kappa2_mun", "kappa2_dep"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} entries must be strictly positive")
        for name in ("sigma2_beta0", "tau2_phi", "alpha_kappa", "beta_kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        for name in ("beta0", "beta_E", "beta_M", "beta_D", "phi"):
            if not np.all(np.isfinite(np.asarray(getattr(self, name)))):
                raise ValueError(f"{name} contains non-finite values")

    def copy(self) -> "ModelState":
        kwargs = {}
        for name, value in self.__dict__.items():
            kwargs[name] = value.copy() if isinstance(value, np.ndarray) else value
        return replace(self, **kwargs)


def _live_dead_fields(variant: str):
    if variant == "baseline":
        return ("sigma2_E", "sigma2_M", "sigma2_D"), (
            "lambda2_E", "lambda2_M", "lambda2_D", "tau2_E", "tau2_M", "tau2_D",
        )
    if variant == "ridge":
        return ("lambda2_E", "lambda2_M", "lambda2_D"), (
            "sigma2_E", "sigma2_M", "sigma2_D", "tau2_E", "tau2_M", "tau2_D",
        )
    return ("lambda2_E", "lambda2_M", "lambda2_D", "tau2_E", "tau2_M", "tau2_D"), (
        "sigma2_E", "sigma2_M", "sigma2_D",
    )


def initial_state(
    ds: HierarchicalDataset,
    variant: str,
    hyper: Hyperparameters,
) -> ModelState:
    """Starting point for a chain.

    Coefficients start at the prior means (OLS-centered for baseline when
    available, zero under ridge/lasso); variances at 1; phi at 0;
    alpha_kappa = beta_kappa = 1; local scale variances at 1.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    p_E, p_M, p_D = ds.p_student, ds.p_municipal, ds.p_departmental
    mu_E, mu_M, mu_D = hyper.resolved_means(p_E, p_M, p_D)
    if variant == "baseline":
        beta0, beta_E, beta_M, beta_D = hyper.mu_beta0, mu_E, mu_M, mu_D
    else:
        beta0 = hyper.mu_beta0
        beta_E, beta_M, beta_D = np.zeros(p_E), np.zeros(p_M), np.zeros(p_D)
    state = ModelState(
        variant=variant,
        beta0=float(beta0),
        beta_E=beta_E.copy(),
        beta_M=beta_M.copy(),
        beta_D=beta_D.copy(),
        phi=np.zeros(ds.n_municipalities),
        kappa2_mun=np.ones(ds.n_municipalities),
        kappa2_dep=np.ones(ds.n_departments),
        alpha_kappa=1.0,
        beta_kappa=1.0,
        sigma2_beta0=1.0,
        tau2_phi=1.0,
    )
    if variant == "baseline":
        state.sigma2_E = state.sigma2_M = state.sigma2_D = 1.0
    else:
        state.lambda2_E = state.lambda2_M = state.lambda2_D = 1.0
        if variant == "lasso":
            state.tau2_E = np.ones(p_E)
            state.tau2_M = np.ones(p_M)
            state.tau2_D = np.ones(p_D)
    state.validate()
    return state


def ols_prior_means(ds: HierarchicalDataset):
    """OLS estimates used to center the baseline coefficient priors.

    Returns (mu_beta0, mu_E, mu_M, mu_D, used_ols). On rank deficiency the
    fallback is zero means with used_ols=False, to be recorded in run
    metadata.
    """
    design = np.column_stack(
        [
            np.ones(ds.n_students),
            ds.student_covariates,
            ds.municipal_covariates[ds.student_to_municipality],
            ds.departmental_covariates[ds.student_to_department],
        ]
    )
    try:
        coef = ols_fit(design, ds.scores)
    except RankDeficientError:
        return 0.0, np.zeros(ds.p_student), np.zeros(ds.p_municipal), np.zeros(ds.p_departmental), False
    p_E, p_M = ds.p_student, ds.p_municipal
    return (
        float(coef[0]),
        coef[1 : 1 + p_E],
        coef[1 + p_E : 1 + p_E + p_M],
        coef[1 + p_E + p_M :],
        True,
    )


def linear_predictor(state: ModelState, ds: HierarchicalDataset) -> np.ndarray:
    """zeta per student: beta0 + x'beta_E + z'beta_M + w'beta_D + phi."""
    if state.beta_E.shape[0] != ds.p_student:
        raise ValueError("beta_E length does not match student covariates")
    if state.beta_M.shape[0] != ds.p_municipal:
        raise ValueError("beta_M length does not match municipal covariates")
    if state.beta_D.shape[0] != ds.p_departmental:
        raise ValueError("beta_D length does not match departmental covariates")
    if state.phi.shape[0] != ds.n_municipalities:
        raise ValueError("phi length does not match municipality count")
    mun = ds.student_to_municipality
    dep = ds.student_to_department
    per_municipality = ds.municipal_covariates @ state.beta_M + state.phi
    per_department = ds.departmental_covariates @ state.beta_D
    return (
        state.beta0
        + ds.student_covariates @ state.beta_E
        + per_municipality[mun]
        + per_department[dep]
    )


def pointwise_log_likelihood(state: ModelState, ds: HierarchicalDataset) -> np.ndarray:
    """log N(y_i | zeta_i, kappa2 of the student's municipality), per student."""
    resid = ds.scores - linear_predictor(state, ds)
    return pointwise_log_likelihood_from_residuals(resid, state.kappa2_mun, ds.student_to_municipality)


def pointwise_log_likelihood_from_residuals(
    residuals: np.ndarray, kappa2_mun: np.ndarray, student_to_municipality: np.ndarray
) -> np.ndarray:
    kappa2 = kappa2_mun[student_to_municipality]
    return -0.5 * (LOG_TWO_PI + np.log(kappa2) + residuals * residuals / kappa2)


def log_likelihood(state: ModelState, ds: HierarchicalDataset) -> float:
    return float(pointwise_log_likelihood(state, ds).sum())
