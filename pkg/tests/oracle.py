"""Independent dense transcription of every closed-form full conditional.

Deliberately written with per-municipality loops and explicit matrices,
sharing no code with the sampler: this is the second route of the
dual-transcription checks. Shapes/rates use the same parameterizations
as the sampler (Gamma(shape, rate), InverseGamma(shape, rate)).
"""

import numpy as np
from scipy.special import gammaln


class ConditionalOracle:
    def __init__(self, ds, graph, hyper, state, mu_E=None, mu_M=None, mu_D=None):
        self.ds = ds
        self.graph = graph
        self.hyper = hyper
        self.state = state
        self.mu_E, self.mu_M, self.mu_D = hyper.resolved_means(
            ds.p_student, ds.p_municipal, ds.p_departmental
        )
        self.m = ds.n_municipalities
        self.d = ds.n_departments
        # per-municipality slices
        self.rows = [np.flatnonzero(ds.student_to_municipality == j) for j in range(self.m)]
        self.n_jk = [len(r) for r in self.rows]

    def _zeta_municipality(self, j):
        s, ds = self.state, self.ds
        k = ds.municipality_to_department[j]
        rows = self.rows[j]
        return (
            s.beta0
            + ds.student_covariates[rows] @ s.beta_E
            + float(ds.municipal_covariates[j] @ s.beta_M)
            + float(ds.departmental_covariates[k] @ s.beta_D)
            + s.phi[j]
        )

    def _residual_excluding(self, j, drop):
        """r_jk with one mean term removed, per the appendix definitions."""
        s, ds = self.state, self.ds
        k = ds.municipality_to_department[j]
        rows = self.rows[j]
        r = ds.scores[rows].copy()
        if drop != "beta0":
            r = r - s.beta0
        if drop != "beta_E":
            r = r - ds.student_covariates[rows] @ s.beta_E
        if drop != "beta_M":
            r = r - float(ds.municipal_covariates[j] @ s.beta_M)
        if drop != "beta_D":
            r = r - float(ds.departmental_covariates[k] @ s.beta_D)
        if drop != "phi":
            r = r - s.phi[j]
        return r

    # -- intercept ---------------------------------------------------------

    def intercept_moments(self):
        s, h = self.state, self.hyper
        precision = 1.0 / s.sigma2_beta0
        numer = h.mu_beta0 / s.sigma2_beta0
        for j in range(self.m):
            r = self._residual_excluding(j, "beta0")
            precision += self.n_jk[j] / s.kappa2_mun[j]
            numer += r.sum() / s.kappa2_mun[j]
        return numer / precision, 1.0 / precision

    # -- coefficient blocks ---------------------------------------------------

    def _prior(self, level, p):
        s = self.state
        if s.variant == "baseline":
            sigma2 = {"E": s.sigma2_E, "M": s.sigma2_M, "D": s.sigma2_D}[level]
            mu = {"E": self.mu_E, "M": self.mu_M, "D": self.mu_D}[level]
            return np.eye(p) / sigma2, mu / sigma2
        if s.variant == "ridge":
            lam2 = {"E": s.lambda2_E, "M": s.lambda2_M, "D": s.lambda2_D}[level]
            return lam2 * np.eye(p), np.zeros(p)
        tau2 = {"E": s.tau2_E, "M": s.tau2_M, "D": s.tau2_D}[level]
        return np.diag(1.0 / tau2), np.zeros(p)

    def beta_E_moments(self):
        s, ds = self.state, self.ds
        p = ds.p_student
        precision, numer = self._prior("E", p)
        for j in range(self.m):
            x = ds.student_covariates[self.rows[j]]
            r = self._residual_excluding(j, "beta_E")
            precision = precision + x.T @ x / s.kappa2_mun[j]
            numer = numer + x.T @ r / s.kappa2_mun[j]
        cov = np.linalg.inv(precision)
        return cov @ numer, cov

    def beta_M_moments(self):
        s, ds = self.state, self.ds
        p = ds.p_municipal
        precision, numer = self._prior("M", p)
        for j in range(self.m):
            z = ds.municipal_covariates[j]
            r = self._residual_excluding(j, "beta_M")
            precision = precision + self.n_jk[j] / s.kappa2_mun[j] * np.outer(z, z)
            numer = numer + (r.sum() / s.kappa2_mun[j]) * z
        cov = np.linalg.inv(precision)
        return cov @ numer, cov

    def beta_D_moments(self):
        s, ds = self.state, self.ds
        p = ds.p_departmental
        precision, numer = self._prior("D", p)
        for j in range(self.m):
            k = ds.municipality_to_department[j]
            w = ds.departmental_covariates[k]
            r = self._residual_excluding(j, "beta_D")
            precision = precision + self.n_jk[j] / s.kappa2_mun[j] * np.outer(w, w)
            numer = numer + (r.sum() / s.kappa2_mun[j]) * w
        cov = np.linalg.inv(precision)
        return cov @ numer, cov

    # -- spatial effects --------------------------------------------------------

    def phi_moments(self, j):
        """Conditional of phi_j at the CURRENT phi values of its neighbors."""
        s = self.state
        neighbors = self.graph.neighbor_lists[j]
        deg = len(neighbors)
        r = self._residual_excluding(j, "phi")
        data_num = r.sum() / s.kappa2_mun[j]
        if deg == 0:
            prior_prec, prior_num = 1.0 / s.tau2_phi, 0.0
        else:
            prior_prec = deg / s.tau2_phi
            prior_num = s.phi[neighbors].sum() / s.tau2_phi
        precision = prior_prec + self.n_jk[j] / s.kappa2_mun[j]
        return (prior_num + data_num) / precision, 1.0 / precision

    # -- variance layers -----------------------------------------------------------

    def kappa2_mun_params(self, j):
        s, h = self.state, self.hyper
        k = self.ds.municipality_to_department[j]
        resid = self.ds.scores[self.rows[j]] - self._zeta_municipality(j)
        shape = (h.nu_kappa + self.n_jk[j]) / 2.0
        rate = (h.nu_kappa * s.kappa2_dep[k] + float(resid @ resid)) / 2.0
        return shape, rate

    def kappa2_dep_params(self, k):
        s, h = self.state, self.hyper
        members = np.flatnonzero(self.ds.municipality_to_department == k)
        shape = (s.alpha_kappa + len(members) * h.nu_kappa) / 2.0
        rate = (s.beta_kappa + sum(h.nu_kappa / s.kappa2_mun[j] for j in members)) / 2.0
        return shape, rate

    def sigma2_beta0_params(self):
        s, h = self.state, self.hyper
        return (h.nu_beta0 + 1.0) / 2.0, (
            h.nu_beta0 * h.gamma2_beta0 + (s.beta0 - h.mu_beta0) ** 2
        ) / 2.0

    def sigma2_params(self, level):
        s, h = self.state, self.hyper
        beta = {"E": s.beta_E, "M": s.beta_M, "D": s.beta_D}[level]
        mu = {"E": self.mu_E, "M": self.mu_M, "D": self.mu_D}[level]
        nu = {"E": h.nu_E, "M": h.nu_M, "D": h.nu_D}[level]
        gamma2 = {"E": h.gamma2_E, "M": h.gamma2_M, "D": h.gamma2_D}[level]
        diff = beta - mu
        return (nu + beta.shape[0]) / 2.0, (nu * gamma2 + float(diff @ diff)) / 2.0

    def tau2_phi_params(self):
        s, h = self.state, self.hyper
        lap = self.graph.laplacian_dense()
        quad = float(s.phi @ lap @ s.phi)
        return (self.m + h.nu_phi) / 2.0, (h.nu_phi * h.gamma2_phi + quad) / 2.0

    def beta_kappa_params(self):
        s, h = self.state, self.hyper
        return (
            self.d * s.alpha_kappa / 2.0 + h.a_beta_kappa,
            float(s.kappa2_dep.sum()) / 2.0 + h.b_beta_kappa,
        )

    def alpha_kappa_log_target(self, alpha):
        s, h = self.state, self.hyper
        total = (h.a_alpha_kappa - 1.0) * np.log(alpha) - h.b_alpha_kappa * alpha
        for k in range(self.d):
            total += (
                0.5 * alpha * np.log(s.beta_kappa)
                - gammaln(0.5 * alpha)
                + (0.5 * alpha - 1.0) * np.log(s.kappa2_dep[k])
                - 0.5 * s.beta_kappa * s.kappa2_dep[k]
            )
        return float(total)

    def lambda2_params(self, level):
        s, h = self.state, self.hyper
        beta = {"E": s.beta_E, "M": s.beta_M, "D": s.beta_D}[level]
        p = beta.shape[0]
        if s.variant == "ridge":
            nu = {"E": h.nu_E, "M": h.nu_M, "D": h.nu_D}[level]
            gamma2 = {"E": h.gamma2_E, "M": h.gamma2_M, "D": h.gamma2_D}[level]
            return (nu + p) / 2.0, (nu * gamma2 + float(beta @ beta)) / 2.0
        a = {"E": h.a_lambda_E, "M": h.a_lambda_M, "D": h.a_lambda_D}[level]
        b = {"E": h.b_lambda_E, "M": h.b_lambda_M, "D": h.b_lambda_D}[level]
        tau2 = {"E": s.tau2_E, "M": s.tau2_M, "D": s.tau2_D}[level]
        return a + p, b + float(tau2.sum()) / 2.0
