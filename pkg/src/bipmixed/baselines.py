"""Comparators: the sampler without random effects (BIP) and PCA followed by a mixed model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HierarchyIndex, Hyperparameters, MultiViewDataset, Scaler, make_rng, standardize_views
from .errors import DimensionMismatch, UnknownSite
from .outcome import MixedModelFit, sample_mixed_model
from .prediction import str_labels
from .sampler import FittedModel, fit

FLAT_PRIOR_VARIANCE = 1e6


def covariates_as_view(dataset: MultiViewDataset) -> MultiViewDataset:
    """Move the covariate matrix into an extra trailing view."""
    if dataset.covariates is None:
        return dataset
    names = None
    if dataset.feature_names is not None:
        names = tuple(dataset.feature_names) + (
            tuple(f"cov_f{j + 1}" for j in range(dataset.covariates.shape[1])),
        )
    return dataset.replace(
        views=tuple(dataset.views) + (np.asarray(dataset.covariates),),
        covariates=None,
        feature_names=names,
    )


def fit_bip(
    dataset: MultiViewDataset,
    hyper: Hyperparameters = Hyperparameters(),
    rng=None,
    covariates_view: bool = False,
) -> FittedModel:
    """Same sampler with the family and site effects switched off.

    With ``covariates_view`` the covariates are modelled as one more view;
    test data then has to go through :func:`covariates_as_view` as well.
    """
    if covariates_view:
        dataset = covariates_as_view(dataset)
    return fit(dataset, hyper.replace(random_effects_enabled=False), rng)


@dataclass
class PCA2StepModel:
    scaler: Scaler
    directions: np.ndarray  # P x r, orthonormal columns
    singular_values: np.ndarray
    mixed: MixedModelFit
    train_hierarchy: HierarchyIndex
    uses_covariates: bool = False

    @property
    def r(self) -> int:
        return self.directions.shape[1]

    def scores(self, views) -> np.ndarray:
        Xs = self.scaler.transform_views([np.atleast_2d(np.asarray(v, dtype=float)) for v in views])
        X = np.concatenate(Xs, axis=1)
        if X.shape[1] != self.directions.shape[0]:
            raise DimensionMismatch(f"expected {self.directions.shape[0]} features, got {X.shape[1]}")
        return X @ self.directions

    def effects(self, site_new, family_new=None) -> np.ndarray:
        site_new = str_labels(site_new)
        known = set(self.train_hierarchy.site_ids)
        unknown = sorted({str(s) for s in site_new if s not in known})
        if unknown:
            raise UnknownSite(unknown)
        mh = self.mixed.hierarchy
        if self.mixed.family_only:
            out = np.full(site_new.size, self.mixed.mu_hat)
        else:
            pos = {s: k for k, s in enumerate(mh.site_ids)}
            out = self.mixed.xi_hat[[pos[s] for s in site_new]].astype(float)
        if family_new is not None:
            fam_pos = {f: k for k, f in enumerate(mh.family_ids)}
            train_site = dict(zip(self.train_hierarchy.family_ids,
                                  np.asarray(self.train_hierarchy.site_ids)[self.train_hierarchy.family_site]))
            for i, (f, s) in enumerate(zip(str_labels(family_new), site_new)):
                k = fam_pos.get(f)
                if k is not None and train_site.get(f) == s:
                    out[i] = self.mixed.theta_hat[k]
        return out

    def predict(self, dataset: MultiViewDataset) -> np.ndarray:
        S = self.scores(dataset.views)
        coef = self.mixed.beta_hat
        fixed = S @ coef[: self.r]
        if self.uses_covariates:
            if dataset.covariates is None:
                raise DimensionMismatch("model was fit with covariates")
            fixed = fixed + np.asarray(dataset.covariates, dtype=float) @ coef[self.r:]
        return fixed + self.effects(dataset.site_label, dataset.family_label)


def principal_directions(X: np.ndarray, r: int):
    """Top-r right singular vectors of a column-centred matrix, with a fixed sign convention."""
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    V = Vt[:r].T
    # largest-magnitude entry of each direction is made positive
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])])
    flip[flip == 0] = 1.0
    return V * flip, s[:r]


def fit_pca2step(
    dataset: MultiViewDataset,
    r: int = 4,
    hyper: Hyperparameters = Hyperparameters(),
    rng=None,
    family_only: bool = False,
) -> PCA2StepModel:
    """PCA of the concatenated standardized views, then a random-intercept model on the scores."""
    if rng is None:
        rng = make_rng(hyper.seed)
    std, scaler = standardize_views(dataset)
    X = np.concatenate(std.views, axis=1)
    if not 1 <= r <= min(X.shape):
        raise DimensionMismatch(f"r={r} not in [1, {min(X.shape)}]")
    V, s = principal_directions(X, r)
    S = X @ V
    W = S
    has_cov = dataset.covariates is not None and hyper.covariates_in_outcome
    if has_cov:
        W = np.hstack([S, np.asarray(dataset.covariates, dtype=float)])
    mixed = sample_mixed_model(
        dataset.outcome, dataset.hierarchy, hyper.replace(sigma_beta2=FLAT_PRIOR_VARIANCE), rng,
        W=W, family_only=family_only,
    )
    return PCA2StepModel(scaler, V, s, mixed, dataset.hierarchy, has_cov)
