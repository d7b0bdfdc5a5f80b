"""Gibbs conditionals of the nested random-intercept outcome model.

Model, for row ``i`` of family ``f`` in site ``s``::

    y_i = W_i beta + theta_f + U_i alpha + eps_i,   eps_i ~ N(0, sigma2)
    theta_f ~ N(xi_s, sigma_theta2[s]),  xi_s ~ N(mu, sigma_xi2),  mu ~ N(0, sigma_mu2)

Each ``*_conditional`` function returns the parameters of a full conditional;
the matching ``gibbs_*`` function draws from it.  ``as_printed=True`` switches
to the literal published forms of the beta, xi and sigma_xi2 conditionals,
which do not match the stated priors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .data import HierarchyIndex, build_hierarchy
from .errors import SingularSystem


def _inv_gamma(rng, shape, scale):
    return scale / rng.gamma(shape)


def mu_conditional(xi, sigma_xi2, sigma_mu2):
    xi = np.atleast_1d(xi)
    var = 1.0 / (1.0 / sigma_mu2 + xi.size / sigma_xi2)
    return var * xi.sum() / sigma_xi2, var


def gibbs_mu(xi, sigma_xi2, sigma_mu2, rng) -> float:
    m, v = mu_conditional(xi, sigma_xi2, sigma_mu2)
    return m + np.sqrt(v) * rng.standard_normal()


def intercept_conditional(resid, sigma2, sigma_mu2):
    """Conditional of a single grand mean added to every row (no random effects)."""
    resid = np.asarray(resid)
    var = 1.0 / (1.0 / sigma_mu2 + resid.size / sigma2)
    return var * resid.sum() / sigma2, var


def gibbs_intercept(resid, sigma2, sigma_mu2, rng) -> float:
    m, v = intercept_conditional(resid, sigma2, sigma_mu2)
    return m + np.sqrt(v) * rng.standard_normal()


def beta_conditional(W, y, theta_expanded, U_alpha, sigma2, sigma_beta2, as_printed=False):
    """Mean and covariance of beta given everything else.

    The default precision is ``W^T W / sigma2 + I / sigma_beta2``; the
    printed variant uses ``W^T W / sigma_beta2 + I / sigma2``.
    """
    W = np.atleast_2d(W)
    WtW = W.T @ W
    eye = np.eye(W.shape[1])
    if as_printed:
        prec = WtW / sigma_beta2 + eye / sigma2
    else:
        prec = WtW / sigma2 + eye / sigma_beta2
    try:
        L = cholesky(prec, lower=True)
    except LinAlgError as exc:
        raise SingularSystem("beta posterior precision") from exc
    rhs = W.T @ (y - theta_expanded - U_alpha) / sigma2
    return cho_solve((L, True), rhs), cho_solve((L, True), eye), L


def gibbs_beta(W, y, theta_expanded, U_alpha, sigma2, sigma_beta2, rng, as_printed=False):
    mean, _, L = beta_conditional(
        W, y, theta_expanded, U_alpha, sigma2, sigma_beta2, as_printed
    )
    z = rng.standard_normal(mean.size)
    return mean + solve_triangular(L.T, z, lower=False)


def xi_conditional(theta, hierarchy: HierarchyIndex, sigma_xi2, sigma_theta2, mu, as_printed=False):
    st2 = np.broadcast_to(sigma_theta2, (hierarchy.N_S,))
    tsum = np.bincount(hierarchy.family_site, weights=theta, minlength=hierarchy.N_S)
    var = 1.0 / (1.0 / sigma_xi2 + hierarchy.n_s / st2)
    prior_term = 0.0 if as_printed else mu / sigma_xi2
    return var * (tsum / st2 + prior_term), var


def gibbs_xi(theta, hierarchy, sigma_xi2, sigma_theta2, mu, rng, as_printed=False):
    m, v = xi_conditional(theta, hierarchy, sigma_xi2, sigma_theta2, mu, as_printed)
    return m + np.sqrt(v) * rng.standard_normal(m.size)


def theta_conditional(resid, hierarchy: HierarchyIndex, xi, sigma_theta2, sigma2):
    """``resid`` is ``y - W beta - U alpha``; returns per-family mean and variance."""
    n_fs = hierarchy.n_fs
    site = hierarchy.family_site
    st2 = np.broadcast_to(sigma_theta2, (hierarchy.N_S,))[site]
    ybar = np.bincount(hierarchy.row_family, weights=resid, minlength=n_fs.size) / n_fs
    var = 1.0 / (1.0 / st2 + n_fs / sigma2)
    return var * (np.asarray(xi)[site] / st2 + n_fs / sigma2 * ybar), var


def gibbs_theta(resid, hierarchy, xi, sigma_theta2, sigma2, rng):
    m, v = theta_conditional(resid, hierarchy, xi, sigma_theta2, sigma2)
    return m + np.sqrt(v) * rng.standard_normal(m.size)


def variance_component_params(xi, theta, hierarchy: HierarchyIndex, mu, ig_xi, ig_theta, as_printed=False):
    """Inverse-gamma (shape, scale) for sigma_xi2 and for each sigma_theta2[s]."""
    xi = np.asarray(xi)
    dev_xi = xi if as_printed else xi - mu
    xi_params = (ig_xi[0] + 0.5 * xi.size, ig_xi[1] + 0.5 * dev_xi @ dev_xi)
    dev = np.asarray(theta) - xi[hierarchy.family_site]
    ss = np.bincount(hierarchy.family_site, weights=dev**2, minlength=hierarchy.N_S)
    theta_params = (ig_theta[0] + 0.5 * hierarchy.n_s, ig_theta[1] + 0.5 * ss)
    return xi_params, theta_params


def gibbs_variance_components(xi, theta, hierarchy, mu, ig_xi, ig_theta, rng, as_printed=False):
    """Draw ``(sigma_xi2, sigma_theta2 per site)``; theta part first, as in the sweep."""
    (a_x, b_x), (a_t, b_t) = variance_component_params(
        xi, theta, hierarchy, mu, ig_xi, ig_theta, as_printed
    )
    sigma_theta2 = _inv_gamma(rng, a_t, b_t)
    sigma_xi2 = _inv_gamma(rng, a_x, b_x)
    return sigma_xi2, sigma_theta2


def sigma2_params(y, W, beta, theta_expanded, U_active, ig_sigma, tau2=1.0):
    """IG parameters of sigma2 with the outcome loadings integrated out.

    The quadratic form ``yt^T (tau2 U U^T + I)^{-1} yt`` is evaluated with the
    Woodbury identity in the number of active components.
    """
    yt = np.asarray(y, dtype=float) - theta_expanded
    if W is not None and beta is not None and np.size(beta):
        yt = yt - W @ beta
    q = yt @ yt
    U_active = np.asarray(U_active, dtype=float).reshape(yt.size, -1)
    if U_active.shape[1]:
        K = U_active.T @ U_active + np.eye(U_active.shape[1]) / tau2
        b = U_active.T @ yt
        q -= b @ np.linalg.solve(K, b)
    return ig_sigma[0] + 0.5 * yt.size, ig_sigma[1] + 0.5 * q


def gibbs_sigma2(y, W, beta, theta_expanded, U_active, ig_sigma, rng, tau2=1.0) -> float:
    a, b = sigma2_params(y, W, beta, theta_expanded, U_active, ig_sigma, tau2)
    return float(_inv_gamma(rng, a, b))


@dataclass
class OutcomeState:
    """Outcome-model block of a chain iterate (alpha lives with the views)."""

    beta: np.ndarray
    theta: np.ndarray
    xi: np.ndarray
    mu: float
    sigma2: float
    sigma_xi2: float
    sigma_theta2: np.ndarray

    def offset(self, hierarchy: HierarchyIndex, random_effects: bool = True) -> np.ndarray:
        """Per-row intercept: theta of the row's family, or mu without random effects."""
        if random_effects:
            return self.theta[hierarchy.row_family]
        return np.full(hierarchy.n, self.mu)

    def copy(self) -> "OutcomeState":
        return OutcomeState(
            self.beta.copy(), self.theta.copy(), self.xi.copy(), self.mu,
            self.sigma2, self.sigma_xi2, self.sigma_theta2.copy(),
        )


def outcome_sweep(
    st: OutcomeState,
    y,
    W,
    hierarchy: HierarchyIndex,
    U_alpha,
    U_active,
    hyper,
    rng,
    random_effects: bool = True,
) -> OutcomeState:
    """One pass over beta, theta, xi, sigma_theta2, sigma_xi2, mu, sigma2 (in place).

    Without random effects only beta, mu and sigma2 are drawn and
    ``theta = 0``, ``xi = mu``.
    """
    as_printed = hyper.as_printed
    if W is not None and W.shape[1]:
        st.beta = gibbs_beta(
            W, y, st.offset(hierarchy, random_effects), U_alpha, st.sigma2,
            hyper.sigma_beta2, rng, as_printed,
        )
        fixed = W @ st.beta
    else:
        fixed = 0.0

    if random_effects:
        st.theta = gibbs_theta(y - fixed - U_alpha, hierarchy, st.xi, st.sigma_theta2, st.sigma2, rng)
        st.xi = gibbs_xi(st.theta, hierarchy, st.sigma_xi2, st.sigma_theta2, st.mu, rng, as_printed)
        st.sigma_xi2, st.sigma_theta2 = gibbs_variance_components(
            st.xi, st.theta, hierarchy, st.mu, hyper.ig_xi, hyper.ig_theta, rng, as_printed
        )
        st.mu = gibbs_mu(st.xi, st.sigma_xi2, hyper.sigma_mu2, rng)
    else:
        st.mu = gibbs_intercept(y - fixed - U_alpha, st.sigma2, hyper.sigma_mu2, rng)
        st.theta = np.zeros(hierarchy.n_families)
        st.xi = np.full(hierarchy.N_S, st.mu)

    st.sigma2 = gibbs_sigma2(
        y - fixed, None, None, st.offset(hierarchy, random_effects), U_active,
        hyper.ig_sigma, rng, hyper.tau2,
    )
    return st


def init_outcome_state(y, W, hierarchy: HierarchyIndex, hyper, rng) -> OutcomeState:
    """Starting values: least-squares beta, mu at the residual mean,
    sigma_xi2 = 1, sigma_theta2 = 0.5, sigma2 = 1, effects from their priors."""
    y = np.asarray(y, dtype=float)
    if W is not None and W.shape[1]:
        Wc = W - W.mean(axis=0)
        beta = np.linalg.lstsq(Wc, y - y.mean(), rcond=None)[0]
        resid = y - W @ beta
    else:
        beta = np.zeros(0)
        resid = y
    mu = float(resid.mean())
    sigma_xi2 = 1.0
    sigma_theta2 = np.full(hierarchy.N_S, 0.5)
    if hyper.random_effects_enabled:
        xi = mu + np.sqrt(sigma_xi2) * rng.standard_normal(hierarchy.N_S)
        theta = xi[hierarchy.family_site] + np.sqrt(sigma_theta2[hierarchy.family_site]) * rng.standard_normal(hierarchy.n_families)
    else:
        xi = np.full(hierarchy.N_S, mu)
        theta = np.zeros(hierarchy.n_families)
    return OutcomeState(beta, theta, xi, mu, 1.0, sigma_xi2, sigma_theta2)


@dataclass
class MixedModelFit:
    """Posterior summary of the views-free mixed model."""

    hierarchy: HierarchyIndex
    beta_hat: np.ndarray
    theta_hat: np.ndarray
    xi_hat: np.ndarray
    mu_hat: float
    traces: dict = field(default_factory=dict)
    family_only: bool = False

    def interval(self, name, level=0.95):
        lo, hi = np.quantile(self.traces[name], [(1 - level) / 2, (1 + level) / 2], axis=0)
        return lo, hi

    def mean(self, name):
        return self.traces[name].mean(axis=0)


def sample_mixed_model(
    y,
    hierarchy: HierarchyIndex,
    hyper,
    rng,
    W: Optional[np.ndarray] = None,
    family_only: bool = False,
) -> MixedModelFit:
    """Gibbs sampler for the outcome model alone (no latent factor).

    ``family_only`` drops the site level: families are centred directly on
    ``mu`` with a single shared variance.
    """
    y = np.asarray(y, dtype=float)
    if family_only:
        hierarchy = build_hierarchy(["all"] * hierarchy.n, np.array(hierarchy.family_ids, dtype=object)[hierarchy.row_family])
    st = init_outcome_state(y, W, hierarchy, hyper.replace(random_effects_enabled=True), rng)
    zero = np.zeros(hierarchy.n)
    no_u = np.zeros((hierarchy.n, 0))
    keep = {k: [] for k in ("beta", "theta", "xi", "mu", "sigma2", "sigma_xi2", "sigma_theta2")}
    for it in range(hyper.n_iter):
        if family_only:
            if W is not None and W.shape[1]:
                st.beta = gibbs_beta(W, y, st.theta[hierarchy.row_family], zero, st.sigma2,
                                     hyper.sigma_beta2, rng, hyper.as_printed)
                fixed = W @ st.beta
            else:
                fixed = 0.0
            st.theta = gibbs_theta(y - fixed, hierarchy, np.array([st.mu]), st.sigma_theta2, st.sigma2, rng)
            dev = st.theta - st.mu
            a = hyper.ig_theta[0] + 0.5 * dev.size
            b = hyper.ig_theta[1] + 0.5 * dev @ dev
            st.sigma_theta2 = np.array([b / rng.gamma(a)])
            st.mu = gibbs_mu(st.theta, st.sigma_theta2[0], hyper.sigma_mu2, rng)
            st.xi = np.array([st.mu])
            st.sigma2 = gibbs_sigma2(y - fixed, None, None, st.theta[hierarchy.row_family], no_u, hyper.ig_sigma, rng)
        else:
            outcome_sweep(st, y, W, hierarchy, zero, no_u, hyper, rng, random_effects=True)
        if it >= hyper.n_burn and (it - hyper.n_burn) % hyper.thin == 0:
            for k in keep:
                keep[k].append(np.copy(getattr(st, k)))
    traces = {k: np.asarray(v) for k, v in keep.items()}
    return MixedModelFit(
        hierarchy=hierarchy,
        beta_hat=traces["beta"].mean(axis=0),
        theta_hat=traces["theta"].mean(axis=0),
        xi_hat=traces["xi"].mean(axis=0),
        mu_hat=float(traces["mu"].mean()),
        traces=traces,
        family_only=family_only,
    )
