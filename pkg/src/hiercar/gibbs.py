"""Gibbs sampler with a Metropolis step for the kappa hyper-shape.

Every closed-form full conditional is implemented as a pair: a moments
method (exact conditional mean/variance, exposed for testing) and an
update method that draws from it and keeps the residual cache coherent.
The residual cache r = y - zeta is updated incrementally: each block
update first adds its old contribution back, draws, then subtracts the
new contribution, so per-block cost is O(n) instead of O(n p).

Sweep order (fixed for determinism): intercept, student coefficients,
municipal coefficients, departmental coefficients, spatial effects with
per-component recentering, municipal variances, department scales,
variance hyperpriors, kappa hyper-rate, kappa hyper-shape (Metropolis),
shrinkage scales (ridge/lasso only).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .data import HierarchicalDataset
from .diagnostics import WaicAccumulator
from .errors import McmcError
from .graph import AdjacencyGraph, car_quadratic_form, center_per_component
from .model import (
    Hyperparameters,
    ModelState,
    initial_state,
    pointwise_log_likelihood_from_residuals,
)
from .rng import SeededRng

SWEEP_BLOCKS = (
    "intercept",
    "coefficients_E",
    "coefficients_M",
    "coefficients_D",
    "phi",
    "kappa2_mun",
    "kappa2_dep",
    "variance_hyperpriors",
    "beta_kappa",
    "alpha_kappa",
    "shrinkage",
)


@dataclass
class McmcSettings:
    """Chain length and tuning controls.

    Defaults mirror the reference computation settings: 127,500 sweeps,
    10% burn-in, thinning stride 5. The Metropolis step size applies to
    a Gaussian random walk on log alpha_kappa and is adapted toward 0.44
    acceptance during burn-in only.
    """

    iterations: int = 127_500
    burn_fraction: float = 0.10
    thin: int = 5
    seed: int = 42
    mh_step_size: float = 0.5
    adapt_window: int = 50
    memory_budget_floats: int = 50_000_000
    debug_residual_check: bool = False

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("iterations must be > 0")
        if not 0.0 <= self.burn_fraction < 1.0:
            raise ValueError("burn-in fraction must be in [0, 1)")
        if self.thin < 1:
            raise ValueError("thinning stride must be >= 1")
        if self.mh_step_size <= 0:
            raise ValueError("MH step size must be > 0")

    @property
    def burn_in(self) -> int:
        return int(self.iterations * self.burn_fraction)

    @property
    def retained(self) -> int:
        return self.iterations - self.burn_in

    @property
    def n_stored(self) -> int:
        return self.retained // self.thin


@dataclass
class ChainOutput:
    """Thinned draws plus per-sweep traces and streaming accumulators."""

    variant: str
    settings: McmcSettings
    draws: dict                      # block name -> (n_stored,) or (n_stored, dim)
    loglik_trace: np.ndarray         # (iterations,)
    mh_accepted: int
    mh_step_size_final: float
    waic_accumulator: WaicAccumulator
    meta: dict = field(default_factory=dict)

    @property
    def n_stored(self) -> int:
        return self.settings.n_stored

    @property
    def mh_acceptance_rate(self) -> float:
        return self.mh_accepted / self.settings.iterations

    @property
    def mean_post_burnin_loglik(self) -> float:
        return float(self.loglik_trace[self.settings.burn_in :].mean())

    def mean_state(self, ds: HierarchicalDataset) -> ModelState:
        """Posterior-mean plug-in state over the stored draws."""
        d = self.draws

        def mean(block):
            return np.asarray(d[block]).mean(axis=0)

        state = ModelState(
            variant=self.variant,
            beta0=float(mean("beta0")),
            beta_E=mean("beta_E") if "beta_E" in d else np.zeros(ds.p_student),
            beta_M=mean("beta_M") if "beta_M" in d else np.zeros(ds.p_municipal),
            beta_D=mean("beta_D") if "beta_D" in d else np.zeros(ds.p_departmental),
            phi=mean("phi"),
            kappa2_mun=mean("kappa2_mun"),
            kappa2_dep=mean("kappa2_dep"),
            alpha_kappa=float(mean("alpha_kappa")),
            beta_kappa=float(mean("beta_kappa")),
            sigma2_beta0=float(mean("sigma2_beta0")),
            tau2_phi=float(mean("tau2_phi")),
        )
        if self.variant == "baseline":
            state.sigma2_E = float(mean("sigma2_E"))
            state.sigma2_M = float(mean("sigma2_M"))
            state.sigma2_D = float(mean("sigma2_D"))
        else:
            state.lambda2_E = float(mean("lambda2_E"))
            state.lambda2_M = float(mean("lambda2_M"))
            state.lambda2_D = float(mean("lambda2_D"))
            if self.variant == "lasso":
                state.tau2_E = mean("tau2_E")
                state.tau2_M = mean("tau2_M")
                state.tau2_D = mean("tau2_D")
        return state


class GibbsChain:
    """One chain over one dataset; strictly sequential.

    Owns the ModelState, the residual cache, and the rng. Precomputes
    per-municipality Gram matrices of the student design so that each
    coefficient update costs O(m p^2 + n p).
    """

    def __init__(
        self,
        ds: HierarchicalDataset,
        graph: AdjacencyGraph,
        variant: str,
        hyper: Hyperparameters,
        rng: SeededRng,
        state: ModelState | None = None,
    ):
        if graph.n_municipalities != ds.n_municipalities:
            raise ValueError("graph and dataset disagree on municipality count")
        self.ds = ds
        self.graph = graph
        self.hyper = hyper
        self.rng = rng
        self.state = state.copy() if state is not None else initial_state(ds, variant, hyper)
        self.state.validate()
        self.variant = self.state.variant

        self.mun = ds.student_to_municipality
        self.dep_of_mun = ds.municipality_to_department
        self.dep = ds.student_to_department
        self.n_per_mun = ds.students_per_municipality.astype(float)
        self.m_per_dep = ds.municipalities_per_department.astype(float)
        self.mu_E, self.mu_M, self.mu_D = hyper.resolved_means(
            ds.p_student, ds.p_municipal, ds.p_departmental
        )

        # per-municipality Gram matrices of the student design
        p_E = ds.p_student
        self._gram_mun = np.zeros((ds.n_municipalities, p_E, p_E))
        if p_E:
            x = ds.student_covariates
            for j in range(ds.n_municipalities):
                block = x[self.mun == j]
                self._gram_mun[j] = block.T @ block

        self.residuals = ds.scores - self._zeta()
        self.mh_accepted = 0
        self.mh_attempts = 0

    # -- linear predictor and cache -----------------------------------------

    def _zeta(self) -> np.ndarray:
        s = self.state
        per_mun = self.ds.municipal_covariates @ s.beta_M + s.phi
        per_dep = self.ds.departmental_covariates @ s.beta_D
        return (
            s.beta0
            + self.ds.student_covariates @ s.beta_E
            + per_mun[self.mun]
            + per_dep[self.dep]
        )

    def residual_cache_error(self) -> float:
        return float(np.max(np.abs(self.residuals - (self.ds.scores - self._zeta()))))

    def _mun_sums(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.mun, weights=values, minlength=self.ds.n_municipalities)

    def _dep_sums(self, per_mun: np.ndarray) -> np.ndarray:
        return np.bincount(self.dep_of_mun, weights=per_mun, minlength=self.ds.n_departments)

    # -- intercept -----------------------------------------------------------

    def intercept_moments(self):
        """(mean, variance) of beta0 given everything else.

        Assumes the residual cache currently EXCLUDES the intercept.
        """
        s = self.state
        inv_k = 1.0 / s.kappa2_mun
        precision = float(self.n_per_mun @ inv_k) + 1.0 / s.sigma2_beta0
        r_weighted = float(self._mun_sums(self.residuals) @ inv_k)
        mean = (r_weighted + self.hyper.mu_beta0 / s.sigma2_beta0) / precision
        return mean, 1.0 / precision

    def update_intercept(self) -> float:
        self.residuals += self.state.beta0
        mean, var = self.intercept_moments()
        self.state.beta0 = self.rng.draw_normal(mean, var)
        self.residuals -= self.state.beta0
        return self.state.beta0

    # -- coefficient blocks ---------------------------------------------------

    def _prior_precision(self, level: str):
        """(diagonal prior precision vector, prior rhs vector) per variant."""
        s = self.state
        if level == "E":
            p, mu = self.ds.p_student, self.mu_E
            sigma2, lam2, tau2 = s.sigma2_E, s.lambda2_E, s.tau2_E
        elif level == "M":
            p, mu = self.ds.p_municipal, self.mu_M
            sigma2, lam2, tau2 = s.sigma2_M, s.lambda2_M, s.tau2_M
        elif level == "D":
            p, mu = self.ds.p_departmental, self.mu_D
            sigma2, lam2, tau2 = s.sigma2_D, s.lambda2_D, s.tau2_D
        else:
            raise ValueError(f"unknown coefficient level {level!r}")
        if self.variant == "baseline":
            prior_prec = np.full(p, 1.0 / sigma2)
            prior_rhs = mu / sigma2
        elif self.variant == "ridge":
            prior_prec = np.full(p, lam2)
            prior_rhs = np.zeros(p)
        else:
            prior_prec = 1.0 / tau2
            prior_rhs = np.zeros(p)
        return prior_prec, prior_rhs

    def _coefficient_system(self, level: str):
        """(rhs, precision) of the conditional Gaussian for one block.

        Assumes the residual cache currently EXCLUDES this block.
        """
        s = self.state
        inv_k = 1.0 / s.kappa2_mun
        prior_prec, prior_rhs = self._prior_precision(level)
        if level == "E":
            data_prec = np.tensordot(inv_k, self._gram_mun, axes=1)
            weights = inv_k[self.mun]
            data_rhs = self.ds.student_covariates.T @ (weights * self.residuals)
        elif level == "M":
            z = self.ds.municipal_covariates
            w_mun = self.n_per_mun * inv_k
            data_prec = (z * w_mun[:, None]).T @ z
            r_mun = self._mun_sums(self.residuals) * inv_k
            data_rhs = z.T @ r_mun
        else:
            w = self.ds.departmental_covariates
            w_dep = self._dep_sums(self.n_per_mun * inv_k)
            data_prec = (w * w_dep[:, None]).T @ w
            r_dep = self._dep_sums(self._mun_sums(self.residuals) / s.kappa2_mun)
            data_rhs = w.T @ r_dep
        precision = data_prec + np.diag(prior_prec)
        rhs = data_rhs + prior_rhs
        return rhs, precision

    def coefficient_moments(self, level: str):
        """(mean, covariance) of the conditional for one coefficient block."""
        rhs, precision = self._coefficient_system(level)
        return SeededRng.conditional_mean_cov(rhs, precision)

    def update_coefficients(self, level: str) -> np.ndarray:
        s = self.state
        if level == "E":
            block, contrib = "beta_E", lambda b: self.ds.student_covariates @ b
        elif level == "M":
            block = "beta_M"
            contrib = lambda b: (self.ds.municipal_covariates @ b)[self.mun]
        elif level == "D":
            block = "beta_D"
            contrib = lambda b: (self.ds.departmental_covariates @ b)[self.dep]
        else:
            raise ValueError(f"unknown coefficient level {level!r}")
        old = getattr(s, block)
        if old.shape[0] == 0:
            return old
        self.residuals += contrib(old)
        rhs, precision = self._coefficient_system(level)
        new = self.rng.draw_mvn_from_precision_rhs(rhs, precision)
        setattr(s, block, new)
        self.residuals -= contrib(new)
        return new

    # -- spatial effects -------------------------------------------------------

    def phi_moments(self, j: int):
        """(mean, variance) of phi_j given neighbors and data.

        Assumes the residual cache currently EXCLUDES all phi. Isolated
        municipalities (degree 0) take the prior N(0, tau2_phi) in place
        of the undefined CAR conditional.
        """
        s = self.state
        n_j = self.n_per_mun[j]
        r_j = self._mun_sums(self.residuals)[j] / s.kappa2_mun[j]
        deg = self.graph.degrees[j]
        if deg == 0:
            prior_prec = 1.0 / s.tau2_phi
            prior_num = 0.0
        else:
            prior_prec = deg / s.tau2_phi
            prior_num = s.phi[self.graph.neighbor_lists[j]].sum() / s.tau2_phi
        precision = prior_prec + n_j / s.kappa2_mun[j]
        return (prior_num + r_j) / precision, 1.0 / precision

    def update_phi(self) -> np.ndarray:
        """Sequential sweep over municipalities, then per-component recentering.

        Returns the raw (pre-recentering) draws; the state keeps the
        recentered vector.
        """
        s = self.state
        self.residuals += s.phi[self.mun]
        r_mun = self._mun_sums(self.residuals) / s.kappa2_mun
        noise = self.rng.standard_normals(self.ds.n_municipalities)
        phi = s.phi
        inv_tau2 = 1.0 / s.tau2_phi
        for j in range(self.ds.n_municipalities):
            deg = self.graph.degrees[j]
            if deg == 0:
                prior_prec = inv_tau2
                prior_num = 0.0
            else:
                prior_prec = deg * inv_tau2
                prior_num = float(phi[self.graph.neighbor_lists[j]].sum()) * inv_tau2
            precision = prior_prec + self.n_per_mun[j] / s.kappa2_mun[j]
            mean = (prior_num + r_mun[j]) / precision
            phi[j] = mean + noise[j] / math.sqrt(precision)
        raw = phi.copy()
        s.phi = center_per_component(phi, self.graph)
        self.residuals -= s.phi[self.mun]
        return raw

    # -- variance layers ---------------------------------------------------------

    def kappa2_mun_params(self):
        """(shape, rate) vectors of the municipal variance conditionals.

        Uses the CURRENT complete residual cache (r = y - zeta).
        """
        s = self.state
        ssr = self._mun_sums(self.residuals * self.residuals)
        shape = 0.5 * (self.hyper.nu_kappa + self.n_per_mun)
        rate = 0.5 * (self.hyper.nu_kappa * s.kappa2_dep[self.dep_of_mun] + ssr)
        return shape, rate

    def update_kappa2_mun(self) -> np.ndarray:
        shape, rate = self.kappa2_mun_params()
        self.state.kappa2_mun = self.rng.draw_inverse_gamma(shape, rate)
        return self.state.kappa2_mun

    def kappa2_dep_params(self):
        """(shape, rate) vectors of the department scale conditionals."""
        s = self.state
        shape = 0.5 * (s.alpha_kappa + self.m_per_dep * self.hyper.nu_kappa)
        inv_sum = self._dep_sums(self.hyper.nu_kappa / s.kappa2_mun)
        rate = 0.5 * (s.beta_kappa + inv_sum)
        return shape, rate

    def update_kappa2_dep(self) -> np.ndarray:
        shape, rate = self.kappa2_dep_params()
        self.state.kappa2_dep = self.rng.draw_gamma(shape, rate)
        return self.state.kappa2_dep

    def sigma2_beta0_params(self):
        h, s = self.hyper, self.state
        shape = 0.5 * (h.nu_beta0 + 1.0)
        rate = 0.5 * (h.nu_beta0 * h.gamma2_beta0 + (s.beta0 - h.mu_beta0) ** 2)
        return shape, rate

    def sigma2_coefficient_params(self, level: str):
        h, s = self.hyper, self.state
        if level == "E":
            nu, gamma2, beta, mu = h.nu_E, h.gamma2_E, s.beta_E, self.mu_E
        elif level == "M":
            nu, gamma2, beta, mu = h.nu_M, h.gamma2_M, s.beta_M, self.mu_M
        else:
            nu, gamma2, beta, mu = h.nu_D, h.gamma2_D, s.beta_D, self.mu_D
        diff = beta - mu
        return 0.5 * (nu + beta.shape[0]), 0.5 * (nu * gamma2 + float(diff @ diff))

    def tau2_phi_params(self):
        h, s = self.hyper, self.state
        shape = 0.5 * (self.ds.n_municipalities + h.nu_phi)
        rate = 0.5 * (h.nu_phi * h.gamma2_phi + car_quadratic_form(s.phi, self.graph))
        return shape, rate

    def update_variance_hyperpriors(self):
        s = self.state
        s.sigma2_beta0 = self.rng.draw_inverse_gamma(*self.sigma2_beta0_params())
        if self.variant == "baseline":
            s.sigma2_E = self.rng.draw_inverse_gamma(*self.sigma2_coefficient_params("E"))
            s.sigma2_M = self.rng.draw_inverse_gamma(*self.sigma2_coefficient_params("M"))
            s.sigma2_D = self.rng.draw_inverse_gamma(*self.sigma2_coefficient_params("D"))
        s.tau2_phi = self.rng.draw_inverse_gamma(*self.tau2_phi_params())

    def beta_kappa_params(self):
        h, s = self.hyper, self.state
        shape = 0.5 * self.ds.n_departments * s.alpha_kappa + h.a_beta_kappa
        rate = 0.5 * float(s.kappa2_dep.sum()) + h.b_beta_kappa
        return shape, rate

    def update_beta_kappa(self) -> float:
        self.state.beta_kappa = self.rng.draw_gamma(*self.beta_kappa_params())
        return self.state.beta_kappa

    # -- Metropolis step for alpha_kappa ------------------------------------------

    def alpha_kappa_log_target(self, alpha: float) -> float:
        """Unnormalized log density of alpha_kappa given kappa2_dep and beta_kappa."""
        if alpha <= 0.0:
            return -np.inf
        h, s = self.hyper, self.state
        d = self.ds.n_departments
        log_scale = d * math.log(s.beta_kappa) + float(np.log(s.kappa2_dep).sum())
        return (
            0.5 * alpha * log_scale
            - d * gammaln(0.5 * alpha)
            + (h.a_alpha_kappa - 1.0) * math.log(alpha)
            - h.b_alpha_kappa * alpha
        )

    def update_alpha_kappa(self, step_size: float):
        """Gaussian random walk on log alpha_kappa; returns (alpha, accepted, accept_prob)."""
        s = self.state
        current = s.alpha_kappa
        step = self.rng.draw_normal(0.0, step_size * step_size) if step_size > 0 else 0.0
        proposal = current * math.exp(step)
        log_ratio = (
            self.alpha_kappa_log_target(proposal)
            - self.alpha_kappa_log_target(current)
            + math.log(proposal)
            - math.log(current)
        )
        accept_prob = math.exp(min(log_ratio, 0.0))
        self.mh_attempts += 1
        accepted = self.rng.uniform() < accept_prob
        if accepted:
            s.alpha_kappa = proposal
            self.mh_accepted += 1
        return s.alpha_kappa, accepted, accept_prob

    # -- shrinkage scales -----------------------------------------------------------

    def lambda2_params(self, level: str):
        h, s = self.hyper, self.state
        if level == "E":
            beta, p = s.beta_E, self.ds.p_student
            nu, gamma2, a, b = h.nu_E, h.gamma2_E, h.a_lambda_E, h.b_lambda_E
            tau2 = s.tau2_E
        elif level == "M":
            beta, p = s.beta_M, self.ds.p_municipal
            nu, gamma2, a, b = h.nu_M, h.gamma2_M, h.a_lambda_M, h.b_lambda_M
            tau2 = s.tau2_M
        else:
            beta, p = s.beta_D, self.ds.p_departmental
            nu, gamma2, a, b = h.nu_D, h.gamma2_D, h.a_lambda_D, h.b_lambda_D
            tau2 = s.tau2_D
        if self.variant == "ridge":
            return 0.5 * (nu + p), 0.5 * (nu * gamma2 + float(beta @ beta))
        return a + p, b + 0.5 * float(tau2.sum())

    def update_shrinkage(self):
        s = self.state
        if self.variant == "ridge":
            s.lambda2_E = self.rng.draw_gamma(*self.lambda2_params("E"))
            s.lambda2_M = self.rng.draw_gamma(*self.lambda2_params("M"))
            s.lambda2_D = self.rng.draw_gamma(*self.lambda2_params("D"))
            return
        if self.variant != "lasso":
            return
        s.tau2_E = self.rng.draw_gig_half_vector(s.lambda2_E, s.beta_E**2)
        s.lambda2_E = self.rng.draw_gamma(*self.lambda2_params("E"))
        s.tau2_M = self.rng.draw_gig_half_vector(s.lambda2_M, s.beta_M**2)
        s.lambda2_M = self.rng.draw_gamma(*self.lambda2_params("M"))
        s.tau2_D = self.rng.draw_gig_half_vector(s.lambda2_D, s.beta_D**2)
        s.lambda2_D = self.rng.draw_gamma(*self.lambda2_params("D"))

    # -- one sweep -------------------------------------------------------------------

    def sweep(self, step_size: float, blocks=None):
        """Run one Gibbs sweep in the fixed block order.

        ``blocks`` restricts the sweep to a subset (testing hook); order
        is always the canonical one.
        """
        active = SWEEP_BLOCKS if blocks is None else tuple(b for b in SWEEP_BLOCKS if b in blocks)
        accepted = False
        accept_prob = 0.0
        for block in active:
            if block == "intercept":
                self.update_intercept()
            elif block == "coefficients_E":
                self.update_coefficients("E")
            elif block == "coefficients_M":
                self.update_coefficients("M")
            elif block == "coefficients_D":
                self.update_coefficients("D")
            elif block == "phi":
                self.update_phi()
            elif block == "kappa2_mun":
                self.update_kappa2_mun()
            elif block == "kappa2_dep":
                self.update_kappa2_dep()
            elif block == "variance_hyperpriors":
                self.update_variance_hyperpriors()
            elif block == "beta_kappa":
                self.update_beta_kappa()
            elif block == "alpha_kappa":
                _, accepted, accept_prob = self.update_alpha_kappa(step_size)
            elif block == "shrinkage":
                self.update_shrinkage()
        return accepted, accept_prob


VECTOR_BLOCKS = ("beta_E", "beta_M", "beta_D", "phi", "kappa2_mun", "kappa2_dep",
                 "tau2_E", "tau2_M", "tau2_D")


def _stored_blocks(ds: HierarchicalDataset, variant: str):
    """block name -> draw dimension; None marks a scalar block."""
    blocks = {
        "beta0": None,
        "beta_E": ds.p_student,
        "beta_M": ds.p_municipal,
        "beta_D": ds.p_departmental,
        "phi": ds.n_municipalities,
        "kappa2_mun": ds.n_municipalities,
        "kappa2_dep": ds.n_departments,
        "alpha_kappa": None,
        "beta_kappa": None,
        "sigma2_beta0": None,
        "tau2_phi": None,
    }
    if variant == "baseline":
        blocks.update(sigma2_E=None, sigma2_M=None, sigma2_D=None)
    else:
        blocks.update(lambda2_E=None, lambda2_M=None, lambda2_D=None)
        if variant == "lasso":
            blocks.update(tau2_E=ds.p_student, tau2_M=ds.p_municipal, tau2_D=ds.p_departmental)
    return {name: dim for name, dim in blocks.items() if dim is None or dim > 0}


def _allocate_storage(blocks: dict, n_stored: int, budget: int, spill_dir):
    """In-memory arrays, except blocks whose total floats exceed the budget."""
    import os
    import tempfile

    storage = {}
    for name, dim in blocks.items():
        shape = (n_stored,) if dim is None else (n_stored, dim)
        if n_stored * (dim or 1) > budget:
            if spill_dir is None:
                spill_dir = tempfile.mkdtemp(prefix="hiercar_draws_")
            os.makedirs(spill_dir, exist_ok=True)
            path = os.path.join(spill_dir, f"{name}.npy")
            storage[name] = np.lib.format.open_memmap(
                path, mode="w+", dtype=np.float64, shape=shape
            )
        else:
            storage[name] = np.empty(shape)
    return storage


def _state_value(state: ModelState, block: str):
    return getattr(state, block)


def run_chain(
    ds: HierarchicalDataset,
    graph: AdjacencyGraph,
    variant: str,
    hyper: Hyperparameters,
    settings: McmcSettings,
    rng: SeededRng | None = None,
    initial: ModelState | None = None,
    spill_dir=None,
    progress=None,
) -> ChainOutput:
    """Run the full Gibbs sampler and collect thinned draws.

    The log-likelihood is recorded every sweep; WAIC accumulators are fed
    every post-burn-in sweep (all retained draws, not only thinned ones).
    Any update failure aborts with the sweep index attached.
    """
    if settings.n_stored < 1:
        raise ValueError(
            "configuration retains 0 stored draws; increase iterations or lower thinning"
        )
    rng = rng if rng is not None else SeededRng(settings.seed)
    chain = GibbsChain(ds, graph, variant, hyper, rng, state=initial)

    blocks = _stored_blocks(ds, variant)
    storage = _allocate_storage(blocks, settings.n_stored, settings.memory_budget_floats, spill_dir)
    loglik_trace = np.empty(settings.iterations)
    waic_acc = WaicAccumulator(ds.n_students)

    step_size = settings.mh_step_size
    burn_in = settings.burn_in
    window_accept = 0.0
    window_count = 0
    window_index = 0
    stored = 0
    t_start = time.perf_counter()

    for sweep_index in range(settings.iterations):
        try:
            _, accept_prob = chain.sweep(step_size)
        except Exception as exc:
            raise McmcError(f"update failed: {exc}", sweep=sweep_index) from exc

        if settings.debug_residual_check and sweep_index % 1000 == 999:
            err = chain.residual_cache_error()
            if err > 1e-8:
                raise McmcError(f"residual cache drifted by {err:.2e}", sweep=sweep_index)

        # Robbins-Monro adaptation of the MH step during burn-in only
        if sweep_index < burn_in:
            window_accept += accept_prob
            window_count += 1
            if window_count == settings.adapt_window:
                window_index += 1
                gain = min(0.5, 1.0 / math.sqrt(window_index))
                step_size *= math.exp(gain * (window_accept / window_count - 0.44))
                window_accept = 0.0
                window_count = 0

        pointwise = pointwise_log_likelihood_from_residuals(
            chain.residuals, chain.state.kappa2_mun, chain.mun
        )
        loglik_trace[sweep_index] = pointwise.sum()

        if sweep_index >= burn_in:
            waic_acc.add(pointwise)
            retained_index = sweep_index - burn_in
            if (retained_index + 1) % settings.thin == 0 and stored < settings.n_stored:
                for name in storage:
                    value = _state_value(chain.state, name)
                    storage[name][stored] = value
                stored += 1
        if progress is not None and sweep_index % 1000 == 999:
            progress(sweep_index + 1, settings.iterations)

    elapsed = time.perf_counter() - t_start
    meta = {
        "seed": settings.seed,
        "variant": variant,
        "iterations": settings.iterations,
        "burn_in": burn_in,
        "thin": settings.thin,
        "n_stored": stored,
        "mh_acceptance_rate": chain.mh_accepted / settings.iterations,
        "mh_step_size_final": step_size,
        "waic_draw_mode": "all_post_burnin",
        "elapsed_seconds": elapsed,
    }
    return ChainOutput(
        variant=variant,
        settings=settings,
        draws=storage,
        loglik_trace=loglik_trace,
        mh_accepted=chain.mh_accepted,
        mh_step_size_final=step_size,
        waic_accumulator=waic_acc,
        meta=meta,
    )
