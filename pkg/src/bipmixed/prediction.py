"""Post-hoc loadings, latent scores for new subjects and (model-averaged) prediction."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import MultiViewDataset
from .errors import DimensionMismatch, EmptyModel, UnknownSite
from .sampler import FittedModel, PosteriorSummary, RegistryEntry


def model_active(model: RegistryEntry) -> list:
    """Active (component, feature) masks per view, outcome view first."""
    return [g[:, None] & H for g, H in zip(model.gammas, model.Hs)]


def loadings_from_stats(UtU, UtX, feat_var_hat, active, scale_by_variance: bool = False) -> np.ndarray:
    """Ridge-type loading estimates for one view from ``Ubar'Ubar`` and ``Ubar'X``.

    For feature j with active set S the estimate is
    ``s_j (Ubar_S' Ubar_S + I)^-1 Ubar_S' x_j`` with ``s_j`` the posterior mean
    feature variance (or 1 when ``scale_by_variance`` is false).  Entries outside
    S are exactly zero.
    """
    r, p = active.shape
    UtX = np.asarray(UtX, dtype=float).reshape(r, p)
    A = np.zeros((r, p))
    weights = 1 << np.arange(r, dtype=np.int64)
    codes = weights @ active.astype(np.int64)
    for code in np.unique(codes):
        if code == 0:
            continue
        idx = np.flatnonzero((code >> np.arange(r)) & 1)
        cols = np.flatnonzero(codes == code)
        K = UtU[np.ix_(idx, idx)] + np.eye(idx.size)
        A[np.ix_(idx, cols)] = cho_solve(cho_factor(K, lower=True), UtX[np.ix_(idx, cols)])
    if scale_by_variance:
        A *= np.asarray(feat_var_hat, dtype=float)[None, :]
    return A


def estimate_loadings(
    posterior: PosteriorSummary,
    model: RegistryEntry,
    views: Sequence[np.ndarray],
    outcome_resid: np.ndarray,
    scale_by_variance: bool = False,
    strict: bool = False,
) -> list:
    """Loading estimates for every view, outcome first (its column is alpha-hat).

    ``views`` are the standardized training views and ``outcome_resid`` is
    ``y - W beta_hat - Z theta_hat``.  With ``strict`` an all-empty model raises
    :class:`EmptyModel`; otherwise it simply yields zero loadings.
    """
    Ub = posterior.U_bar
    UtU = Ub.T @ Ub
    UtX = [Ub.T @ np.asarray(outcome_resid, dtype=float).reshape(-1, 1)] + [Ub.T @ X for X in views]
    return _loadings(UtU, UtX, posterior.feat_var_hat, model, scale_by_variance, strict)


def _loadings(UtU, UtX, feat_var_hat, model, scale_by_variance, strict):
    act = model_active(model)
    if strict and not any(a.any() for a in act):
        raise EmptyModel("no active component in any view")
    return [loadings_from_stats(UtU, B, fv, a, scale_by_variance) for B, fv, a in zip(UtX, feat_var_hat, act)]


def fitted_loadings(fitted: FittedModel, model: RegistryEntry, scale_by_variance: Optional[bool] = None) -> list:
    if scale_by_variance is None:
        scale_by_variance = fitted.scale_loadings
    return _loadings(fitted.UtU, fitted.UtX, fitted.posterior.feat_var_hat, model, scale_by_variance, False)


def estimate_u_new(loadings: Sequence[np.ndarray], feat_var_hat: Sequence[np.ndarray], X_new) -> np.ndarray:
    """Latent scores of new subjects, one row per subject.

    ``loadings`` and ``feat_var_hat`` cover views 1..M; ``X_new`` is either the
    list of standardized views or their column concatenation (rows = subjects).
    """
    A = np.concatenate([np.asarray(a, dtype=float) for a in loadings], axis=1)
    d = np.concatenate([np.asarray(f, dtype=float) for f in feat_var_hat])
    if isinstance(X_new, (list, tuple)):
        X = np.concatenate([np.atleast_2d(np.asarray(x, dtype=float)) for x in X_new], axis=1)
    else:
        X = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X.shape[1] != A.shape[1] or d.size != A.shape[1]:
        raise DimensionMismatch(f"expected {A.shape[1]} features, got {X.shape[1]}")
    Aw = A / d
    prec = Aw @ A.T + np.eye(A.shape[0])
    return cho_solve(cho_factor(prec, lower=True), Aw @ X.T).T


def str_labels(a) -> np.ndarray:
    return np.array([str(v) for v in np.asarray(a, dtype=object).reshape(-1)], dtype=object)


def effects_offset(
    fitted: FittedModel,
    site_new,
    family_new=None,
    stochastic: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Random-effect part of the prediction for each new row.

    Known families reuse their trained effect; unseen families get the site
    effect, or a draw around it when ``stochastic`` is set.  BIP fits return the
    intercept for every row.
    """
    post = fitted.posterior
    hier = fitted.hierarchy
    site_new = str_labels(site_new)
    site_pos = {s: k for k, s in enumerate(hier.site_ids)}
    unknown = sorted({str(s) for s in site_new if s not in site_pos})
    if unknown:
        raise UnknownSite(unknown)
    if not post.random_effects:
        return np.full(site_new.size, post.mu_hat)
    s_idx = np.array([site_pos[s] for s in site_new], dtype=int)
    out = post.xi_hat[s_idx].astype(float)
    fam_pos = {f: k for k, f in enumerate(hier.family_ids)}
    if family_new is not None:
        family_new = str_labels(family_new)
        if family_new.size != site_new.size:
            raise DimensionMismatch("site and family labels differ in length")
        for i, (f, s) in enumerate(zip(family_new, s_idx)):
            k = fam_pos.get(f)
            if k is not None and hier.family_site[k] == s:
                out[i] = post.theta_hat[k]
    if stochastic:
        if rng is None:
            raise ValueError("stochastic family effects need an rng")
        sd = np.sqrt(np.broadcast_to(np.asarray(post.variance_ci["sigma_theta2"]["mean"], dtype=float), (hier.N_S,)))
        seen = np.zeros(site_new.size, dtype=bool)
        if family_new is not None:
            seen = np.array([f in fam_pos for f in family_new])
        z = rng.standard_normal(site_new.size)
        out = np.where(seen, out, out + sd[s_idx] * z)
    return out


def _fixed(fitted: FittedModel, W_new, n: int) -> np.ndarray:
    if not fitted.uses_covariates:
        return np.zeros(n)
    if W_new is None:
        raise DimensionMismatch("model was fit with covariates; W_new is required")
    W_new = np.asarray(W_new, dtype=float).reshape(n, -1)
    beta = fitted.posterior.beta_hat
    if W_new.shape[1] != beta.size:
        raise DimensionMismatch(f"expected {beta.size} covariates, got {W_new.shape[1]}")
    return W_new @ beta


def _standardized(fitted: FittedModel, X_new) -> list:
    X_new = [np.atleast_2d(np.asarray(x, dtype=float)) for x in X_new]
    if len(X_new) != fitted.M:
        raise DimensionMismatch(f"expected {fitted.M} views, got {len(X_new)}")
    for m, (x, pm) in enumerate(zip(X_new, fitted.posterior.p), start=1):
        if x.shape[1] != pm:
            raise DimensionMismatch(f"view {m}: expected {pm} features, got {x.shape[1]}")
    if len({x.shape[0] for x in X_new}) != 1:
        raise DimensionMismatch("views have different row counts")
    return fitted.scaler.transform_views(X_new)


def _latent_part(fitted: FittedModel, model: RegistryEntry, Xs: list) -> np.ndarray:
    L = fitted_loadings(fitted, model)
    U_new = estimate_u_new(L[1:], fitted.posterior.feat_var_hat[1:], Xs)
    return U_new @ L[0][:, 0]


def predict_single_model(
    fitted: FittedModel,
    model: RegistryEntry,
    X_new,
    W_new=None,
    site_new=None,
    family_new=None,
    stochastic: bool = False,
    rng=None,
) -> np.ndarray:
    """Point prediction under one selection configuration."""
    Xs = _standardized(fitted, X_new)
    n = Xs[0].shape[0]
    offset = effects_offset(fitted, site_new, family_new, stochastic, rng)
    if offset.size != n:
        raise DimensionMismatch("site labels do not match the number of rows")
    return _latent_part(fitted, model, Xs) + _fixed(fitted, W_new, n) + offset


def bma_models(fitted: FittedModel, max_models: Optional[int] = None):
    """Top registry entries and their renormalized weights."""
    K = fitted.hyper.max_bma_models if max_models is None else max_models
    reg = fitted.posterior.model_registry[:K]
    if not reg:
        raise EmptyModel("empty model registry")
    w = np.array([e.count for e in reg], dtype=float)
    return reg, w / w.sum()


def predict_bma(
    fitted: FittedModel,
    X_new,
    W_new=None,
    site_new=None,
    family_new=None,
    max_models: Optional[int] = None,
    stochastic: bool = False,
    rng=None,
) -> np.ndarray:
    """Model-averaged prediction over the most visited configurations."""
    Xs = _standardized(fitted, X_new)
    n = Xs[0].shape[0]
    offset = effects_offset(fitted, site_new, family_new, stochastic, rng)
    if offset.size != n:
        raise DimensionMismatch("site labels do not match the number of rows")
    models, w = bma_models(fitted, max_models)
    latent = sum(wk * _latent_part(fitted, m, Xs) for m, wk in zip(models, w))
    return latent + _fixed(fitted, W_new, n) + offset


def predict(fitted: FittedModel, dataset: MultiViewDataset, **kw) -> np.ndarray:
    """BMA prediction for every row of ``dataset`` (its outcome is ignored)."""
    return predict_bma(
        fitted, list(dataset.views), dataset.covariates, dataset.site_label, dataset.family_label, **kw
    )
