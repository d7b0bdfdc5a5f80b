"""MCMC driver: initialisation, the per-iteration schedule and posterior summaries."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import HierarchyIndex, Hyperparameters, MultiViewDataset, Scaler, make_rng, scree_rank_suggestion, standardize_views
from .outcome import OutcomeState, init_outcome_state, outcome_sweep
from .views import (
    MarginalLikelihoodCache,
    ViewState,
    gibbs_update_feature_variances,
    gibbs_update_latent,
    gibbs_update_loadings,
    mh_update_selection,
)

log = logging.getLogger(__name__)


@dataclass
class ChainState:
    """One iterate.  ``views[0]`` is the outcome view (its loadings are alpha)."""

    U: np.ndarray
    views: list
    outcome: OutcomeState

    @property
    def alpha(self) -> np.ndarray:
        return self.views[0].A[:, 0]

    @property
    def sigma2(self) -> float:
        return self.outcome.sigma2


@dataclass(frozen=True)
class RegistryEntry:
    key: str  # hex digest of the packed (gamma, H) bits
    gammas: tuple  # per view, view 0 first
    Hs: tuple
    freq: float
    count: int


@dataclass
class PosteriorSummary:
    r: int
    p: list  # feature counts of views 1..M
    mpp_gamma: list  # per view incl. outcome, length-r arrays
    mpp_eta: list  # per view incl. outcome, r x p_m arrays
    U_bar: np.ndarray
    feat_var_hat: list  # per view incl. outcome
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    theta_hat: np.ndarray
    xi_hat: np.ndarray
    mu_hat: float
    sigma2_hat: float
    variance_ci: dict
    model_registry: list
    n_saved: int
    random_effects: bool = True
    traces: dict = field(default_factory=dict)

    def feature_mpp(self, view: int, rule: str = "max") -> np.ndarray:
        """Scalar inclusion score per feature of view ``view`` (1-based)."""
        P = self.mpp_eta[view]
        if rule == "max":
            return P.max(axis=0)
        if rule == "any":
            return 1.0 - np.prod(1.0 - P, axis=0)
        raise ValueError(f"unknown rule {rule!r}")


def encode_model(views) -> bytes:
    bits = [views[0].gamma]
    for v in views[1:]:
        bits.append(v.gamma)
        bits.append(v.H.ravel())
    return np.packbits(np.concatenate(bits).astype(np.uint8)).tobytes()


def decode_model(key: bytes, r: int, p: list):
    bits = np.unpackbits(np.frombuffer(key, dtype=np.uint8)).astype(bool)
    gammas = [bits[:r].copy()]
    Hs = [bits[:r].copy()[:, None]]
    pos = r
    for pm in p:
        gammas.append(bits[pos:pos + r].copy())
        pos += r
        Hs.append(bits[pos:pos + r * pm].reshape(r, pm).copy())
        pos += r * pm
    return gammas, Hs


def registry_from_counts(counts: dict, r: int, p: list) -> list:
    """Rank visited models by visit count; ties keep first-visit order."""
    total = sum(counts.values())
    ranked = sorted(enumerate(counts.items()), key=lambda t: (-t[1][1], t[0]))
    out = []
    for _, (key, c) in ranked:
        g, H = decode_model(key, r, p)
        out.append(RegistryEntry(
            key=hashlib.blake2b(key, digest_size=16).hexdigest(),
            gammas=tuple(g), Hs=tuple(H), freq=c / total, count=c,
        ))
    return out


def init_chain(views_data, y, W, hierarchy: HierarchyIndex, hyper: Hyperparameters, r: int, rng) -> ChainState:
    n = len(y)
    U = rng.standard_normal((n, r))
    out = init_outcome_state(y, W, hierarchy, hyper, rng)
    g0 = rng.random(r) < hyper.q_gamma
    alpha = np.where(g0, np.sqrt(hyper.tau2 * out.sigma2) * rng.standard_normal(r), 0.0)
    views = [ViewState(g0, g0[:, None].copy(), alpha[:, None], np.array([out.sigma2]), tied=True)]
    for X in views_data:
        p = X.shape[1]
        g = rng.random(r) < hyper.q_gamma
        H = (rng.random((r, p)) < hyper.q_eta) & g[:, None]
        A = np.where(H, np.sqrt(hyper.tau2) * rng.standard_normal((r, p)), 0.0)
        views.append(ViewState(g, H, A, np.ones(p)))
    return ChainState(U, views, out)


def sweep(state: ChainState, views_data, y, W, hierarchy, hyper: Hyperparameters, rng) -> float:
    """One full iteration; returns the collapsed log-likelihood summed over views."""
    re = hyper.random_effects_enabled
    out = state.outcome
    fixed = W @ out.beta if W is not None and W.shape[1] else 0.0
    ytilde = y - fixed - out.offset(hierarchy, re)
    data = [ytilde[:, None]] + list(views_data)
    caches = [MarginalLikelihoodCache(state.U, X, hyper.tau2) for X in data]

    total = 0.0
    for v, cache in zip(state.views, caches):
        total += mh_update_selection(v, cache, hyper.q_eta, hyper.q_gamma, rng, hyper.gamma_proposal)
    for v, cache in zip(state.views, caches):
        gibbs_update_loadings(v, cache, rng)
    for v, X in zip(state.views[1:], views_data):
        gibbs_update_feature_variances(v, state.U, X, rng, hyper.ig_feature, hyper.tau2)
    n, r = state.U.shape
    state.U = gibbs_update_latent(
        [(X, v.A, v.feat_var) for X, v in zip(data, state.views)], n, r, rng
    )

    alpha = state.alpha
    outcome_sweep(
        out, y, W, hierarchy, state.U @ alpha, state.U[:, state.views[0].gamma],
        hyper, rng, random_effects=re,
    )
    state.views[0].feat_var = np.array([out.sigma2])
    return total


class _Accumulator:
    def __init__(self, state: ChainState):
        self.n = 0
        self.gamma = [np.zeros(v.r) for v in state.views]
        self.eta = [np.zeros(v.H.shape) for v in state.views]
        self.U = np.zeros_like(state.U)
        self.fv = [np.zeros(v.p) for v in state.views]
        self.alpha = np.zeros(state.views[0].r)
        self.beta = np.zeros_like(state.outcome.beta)
        self.theta = np.zeros_like(state.outcome.theta)
        self.xi = np.zeros_like(state.outcome.xi)
        self.mu = 0.0
        self.var_traces = {"sigma2": [], "sigma_xi2": [], "sigma_theta2": [], "mu": []}
        self.counts: dict = {}

    def add(self, state: ChainState):
        self.n += 1
        for k, v in enumerate(state.views):
            self.gamma[k] += v.gamma
            self.eta[k] += v.active
            self.fv[k] += v.feat_var
        self.U += state.U
        self.alpha += state.alpha
        o = state.outcome
        self.beta += o.beta
        self.theta += o.theta
        self.xi += o.xi
        self.mu += o.mu
        self.var_traces["sigma2"].append(o.sigma2)
        self.var_traces["sigma_xi2"].append(o.sigma_xi2)
        self.var_traces["sigma_theta2"].append(np.copy(o.sigma_theta2))
        self.var_traces["mu"].append(o.mu)
        key = encode_model(state.views)
        self.counts[key] = self.counts.get(key, 0) + 1


def _interval(trace, level=0.95):
    trace = np.asarray(trace)
    lo, hi = np.quantile(trace, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return {"mean": trace.mean(axis=0), "lower": lo, "upper": hi}


def run_chain(
    views_data,
    y,
    W,
    hierarchy: HierarchyIndex,
    hyper: Hyperparameters,
    r: int,
    rng: Optional[np.random.Generator] = None,
    state: Optional[ChainState] = None,
    check_every: int = 0,
) -> PosteriorSummary:
    """Run the sampler on already standardized inputs and summarise the draws."""
    if rng is None:
        rng = make_rng(hyper.seed)
    views_data = [np.asarray(X, dtype=float) for X in views_data]
    y = np.asarray(y, dtype=float)
    if state is None:
        state = init_chain(views_data, y, W, hierarchy, hyper, r, rng)
    acc = None
    ll_trace = []
    for it in range(hyper.n_iter):
        ll_trace.append(sweep(state, views_data, y, W, hierarchy, hyper, rng))
        if it >= hyper.n_burn and (it - hyper.n_burn) % hyper.thin == 0:
            if acc is None:
                acc = _Accumulator(state)
            acc.add(state)
        if check_every and (it + 1) % check_every == 0:
            log.debug("iteration %d, loglik %.3f", it + 1, ll_trace[-1])

    k = acc.n
    vt = acc.var_traces
    p = [X.shape[1] for X in views_data]
    return PosteriorSummary(
        r=r,
        p=p,
        mpp_gamma=[g / k for g in acc.gamma],
        mpp_eta=[e / k for e in acc.eta],
        U_bar=acc.U / k,
        feat_var_hat=[f / k for f in acc.fv],
        alpha_hat=acc.alpha / k,
        beta_hat=acc.beta / k,
        theta_hat=acc.theta / k,
        xi_hat=acc.xi / k,
        mu_hat=acc.mu / k,
        sigma2_hat=float(np.mean(vt["sigma2"])),
        variance_ci={
            "sigma2": _interval(vt["sigma2"]),
            "sigma_xi2": _interval(vt["sigma_xi2"]),
            "sigma_theta2": _interval(vt["sigma_theta2"]),
        },
        model_registry=registry_from_counts(acc.counts, r, p),
        n_saved=k,
        random_effects=hyper.random_effects_enabled,
        traces={
            "loglik": np.asarray(ll_trace),
            "sigma2": np.asarray(vt["sigma2"]),
            "sigma_xi2": np.asarray(vt["sigma_xi2"]),
            "sigma_theta2": np.asarray(vt["sigma_theta2"]),
            "mu": np.asarray(vt["mu"]),
        },
    )


@dataclass
class FittedModel:
    posterior: PosteriorSummary
    scaler: Scaler
    hierarchy: HierarchyIndex
    hyper: Hyperparameters
    # sufficient statistics of the training data for loading estimation
    UtU: np.ndarray
    UtX: list  # per view incl. outcome (view 0 uses y - W beta_hat - Z theta_hat)
    uses_covariates: bool = False

    @property
    def r(self) -> int:
        return self.posterior.r

    @property
    def M(self) -> int:
        return len(self.posterior.p)

    @property
    def scale_loadings(self) -> bool:
        return self.hyper.scale_loadings


def outcome_offset_hat(post: PosteriorSummary, hierarchy: HierarchyIndex) -> np.ndarray:
    if post.random_effects:
        return post.theta_hat[hierarchy.row_family]
    return np.full(hierarchy.n, post.mu_hat)


def prepare_inputs(dataset: MultiViewDataset, hyper: Hyperparameters):
    """Standardized views, outcome and covariate design used by the sampler."""
    if hyper.standardize:
        std, scaler = standardize_views(dataset)
    else:
        std, scaler = dataset, Scaler.identity(dataset.p)
    W = None
    if dataset.covariates is not None and hyper.covariates_in_outcome:
        W = np.asarray(dataset.covariates, dtype=float)
    return list(std.views), np.asarray(dataset.outcome, dtype=float), W, scaler


def fit(dataset: MultiViewDataset, hyper: Hyperparameters = Hyperparameters(), rng=None) -> FittedModel:
    """Fit the model by MCMC and return the summaries needed for prediction."""
    r = hyper.r
    if r is None:
        _, r = scree_rank_suggestion(dataset)
        log.info("using scree-suggested rank r=%d", r)
    views_data, y, W, scaler = prepare_inputs(dataset, hyper)
    hier = dataset.hierarchy
    post = run_chain(views_data, y, W, hier, hyper, r, rng=rng)
    Ub = post.U_bar
    x0 = y - outcome_offset_hat(post, hier)
    if W is not None:
        x0 = x0 - W @ post.beta_hat
    UtX = [Ub.T @ x0[:, None]] + [Ub.T @ X for X in views_data]
    return FittedModel(post, scaler, hier, hyper.replace(r=r), Ub.T @ Ub, UtX, W is not None)
