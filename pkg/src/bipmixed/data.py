"""Domain types, hierarchy indexing, standardization and rank suggestion."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ConstantColumn,
    CrossSiteFamily,
    DimensionMismatch,
    EmptyInput,
)

PLATEAU_TOL = 0.01


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def _labels(a):
    a = np.asarray(a)
    out = np.array([str(v) for v in a.ravel()], dtype=object)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class HierarchyIndex:
    """Site -> family -> row partition of a dataset.

    Sites and families are numbered in order of first appearance, so the
    integer codes are stable for a given label sequence.
    """

    site_ids: tuple
    family_ids: tuple
    row_family: np.ndarray  # family code of each row
    family_site: np.ndarray  # site code of each family

    @property
    def n(self) -> int:
        return len(self.row_family)

    @property
    def N_S(self) -> int:
        return len(self.site_ids)

    @property
    def n_families(self) -> int:
        return len(self.family_ids)

    @cached_property
    def n_s(self) -> np.ndarray:
        """Number of families per site."""
        return np.bincount(self.family_site, minlength=self.N_S)

    @cached_property
    def n_fs(self) -> np.ndarray:
        """Number of rows per family."""
        return np.bincount(self.row_family, minlength=self.n_families)

    @cached_property
    def row_site(self) -> np.ndarray:
        return self.family_site[self.row_family]

    @property
    def sites(self) -> list:
        return [
            (sid, [self.family_ids[f] for f in np.flatnonzero(self.family_site == s)])
            for s, sid in enumerate(self.site_ids)
        ]

    @property
    def families(self) -> dict:
        return {
            fid: (self.site_ids[self.family_site[f]], np.flatnonzero(self.row_family == f))
            for f, fid in enumerate(self.family_ids)
        }

    def site_code(self, site_label) -> int:
        return self.site_ids.index(str(site_label))


def build_hierarchy(site_label, family_label) -> HierarchyIndex:
    sites = _labels(site_label)
    fams = _labels(family_label)
    if len(sites) != len(fams):
        raise DimensionMismatch(
            f"{len(sites)} site labels but {len(fams)} family labels"
        )
    if len(sites) == 0:
        raise EmptyInput("no rows")

    site_code: dict = {}
    fam_code: dict = {}
    fam_site: list = []
    row_family = np.empty(len(sites), dtype=np.int64)
    for i, (s, f) in enumerate(zip(sites, fams)):
        sc = site_code.setdefault(s, len(site_code))
        fc = fam_code.get(f)
        if fc is None:
            fc = fam_code[f] = len(fam_code)
            fam_site.append(sc)
        elif fam_site[fc] != sc:
            owner = next(k for k, v in site_code.items() if v == fam_site[fc])
            raise CrossSiteFamily(f, {owner, s})
        row_family[i] = fc

    return HierarchyIndex(
        site_ids=tuple(site_code),
        family_ids=tuple(fam_code),
        row_family=_frozen(row_family, np.int64),
        family_site=_frozen(fam_site, np.int64),
    )


@dataclass(frozen=True)
class MultiViewDataset:
    views: tuple
    outcome: np.ndarray
    site_label: np.ndarray
    family_label: np.ndarray
    covariates: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        views = tuple(_frozen(np.atleast_2d(v)) for v in self.views)
        outcome = _frozen(np.ravel(self.outcome))
        n = len(outcome)
        for m, v in enumerate(views, start=1):
            if v.shape[0] != n:
                raise DimensionMismatch(f"view {m} has {v.shape[0]} rows, outcome has {n}")
        cov = self.covariates
        if cov is not None:
            cov = _frozen(np.asarray(cov, dtype=float).reshape(n, -1))
        site = _labels(self.site_label)
        fam = _labels(self.family_label)
        if len(site) != n or len(fam) != n:
            raise DimensionMismatch("label vectors must have one entry per row")
        for name, arr in [("outcome", outcome), ("covariates", cov)] + [
            (f"view {m}", v) for m, v in enumerate(views, start=1)
        ]:
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains missing or non-finite values")
        names = self.feature_names
        if names is None:
            names = tuple(
                tuple(f"v{m}_f{j}" for j in range(1, v.shape[1] + 1))
                for m, v in enumerate(views, start=1)
            )
        else:
            names = tuple(tuple(map(str, nm)) for nm in names)
            if [len(nm) for nm in names] != [v.shape[1] for v in views]:
                raise DimensionMismatch("feature_names do not match view widths")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "site_label", site)
        object.__setattr__(self, "family_label", fam)
        object.__setattr__(self, "feature_names", names)
        # validates nesting eagerly
        object.__setattr__(self, "_hierarchy", build_hierarchy(site, fam))

    @property
    def hierarchy(self) -> HierarchyIndex:
        return self._hierarchy

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def M(self) -> int:
        return len(self.views)

    @property
    def p(self) -> list:
        return [v.shape[1] for v in self.views]

    def replace(self, **changes) -> "MultiViewDataset":
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        kw.update(changes)
        return MultiViewDataset(**kw)


@dataclass(frozen=True)
class Scaler:
    """Per-column (mean, sd) pairs for each view, plus the outcome."""

    means: tuple
    sds: tuple
    outcome_mean: float = 0.0
    outcome_sd: float = 1.0

    def transform_views(self, views: Sequence[np.ndarray]) -> list:
        if len(views) != len(self.means):
            raise DimensionMismatch(f"expected {len(self.means)} views, got {len(views)}")
        out = []
        for v, mu, sd in zip(views, self.means, self.sds):
            v = np.atleast_2d(np.asarray(v, dtype=float))
            if v.shape[1] != len(mu):
                raise DimensionMismatch(f"view has {v.shape[1]} columns, scaler has {len(mu)}")
            out.append((v - mu) / sd)
        return out

    def inverse_views(self, views: Sequence[np.ndarray]) -> list:
        return [np.asarray(v) * sd + mu for v, mu, sd in zip(views, self.means, self.sds)]

    def transform(self, dataset: MultiViewDataset) -> MultiViewDataset:
        return dataset.replace(views=tuple(self.transform_views(dataset.views)))

    def inverse(self, dataset: MultiViewDataset) -> MultiViewDataset:
        return dataset.replace(views=tuple(self.inverse_views(dataset.views)))

    @classmethod
    def identity(cls, p: Sequence[int]) -> "Scaler":
        return cls(
            means=tuple(np.zeros(k) for k in p), sds=tuple(np.ones(k) for k in p)
        )


def _column_stats(x, view):
    mu = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.zeros(x.shape[1])
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise ConstantColumn(view, int(bad[0]))
    return mu, sd


def standardize_views(dataset: MultiViewDataset) -> tuple[MultiViewDataset, Scaler]:
    """Center and scale every view column to mean 0, sample SD 1.

    The outcome is left in its original units; its statistics are kept on the
    scaler for the scree computation only.
    """
    means, sds = [], []
    for m, v in enumerate(dataset.views, start=1):
        mu, sd = _column_stats(v, m)
        means.append(mu)
        sds.append(sd)
    y = dataset.outcome
    ysd = float(y.std(ddof=1)) if y.size > 1 else 0.0
    scaler = Scaler(tuple(means), tuple(sds), float(y.mean()), ysd if ysd > 0 else 1.0)
    return scaler.transform(dataset), scaler


def scree_rank_suggestion(
    dataset: MultiViewDataset, tol: float = PLATEAU_TOL
) -> tuple[np.ndarray, int]:
    """Eigenvalues of the correlation matrix of views + outcome (+ covariates).

    Returns the eigenvalues in descending order and the smallest ``k >= M + 1``
    whose relative drop ``(lam_k - lam_{k+1}) / lam_1`` is below ``tol``.
    """
    blocks = [(m, v) for m, v in enumerate(dataset.views, start=1)]
    blocks.append((0, dataset.outcome[:, None]))
    if dataset.covariates is not None:
        blocks.append(("covariates", dataset.covariates))
    cols = []
    for tag, v in blocks:
        mu, sd = _column_stats(v, tag)
        cols.append((v - mu) / sd)
    Z = np.hstack(cols)
    n, P = Z.shape
    if n > P:
        C = Z.T @ Z / (n - 1)
    else:
        # same nonzero spectrum from the smaller Gram matrix
        C = Z @ Z.T / (n - 1)
    lam = np.clip(np.linalg.eigvalsh(C)[::-1], 0.0, None)
    if lam.size < P:
        lam = np.concatenate([lam, np.zeros(P - lam.size)])

    r_min = dataset.M + 1
    drops = (lam[:-1] - lam[1:]) / lam[0]
    # drops[k - 1] is the drop after the k-th eigenvalue (1-based k)
    for k in range(r_min, P):
        if drops[k - 1] < tol:
            return lam, k
    return lam, P


@dataclass(frozen=True)
class Hyperparameters:
    r: Optional[int] = None
    q_eta: float = 0.05
    q_gamma: float = 0.5
    tau2: float = 1.0
    sigma_beta2: float = 100.0
    sigma_mu2: float = 100.0
    ig_xi: tuple = (0.01, 0.01)
    ig_theta: tuple = (0.01, 0.01)
    ig_sigma: tuple = (0.01, 0.01)
    ig_feature: tuple = (0.01, 0.01)
    n_iter: int = 5000
    n_burn: int = 2500
    thin: int = 1
    seed: int = 0
    max_bma_models: int = 50
    random_effects_enabled: bool = True
    covariates_in_outcome: bool = True
    standardize: bool = True
    as_printed: bool = False
    gamma_proposal: str = "conditional"
    scale_loadings: bool = False

    def __post_init__(self):
        if self.r is not None and self.r < 1:
            raise ConfigError("model.r", "must be a positive integer")
        for name in ("q_eta", "q_gamma"):
            q = getattr(self, name)
            if not 0 < q < 1:
                raise ConfigError(f"model.{name}", "must lie strictly between 0 and 1")
        for name in ("tau2", "sigma_beta2", "sigma_mu2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"model.{name}", "must be positive")
        for name in ("ig_xi", "ig_theta", "ig_sigma", "ig_feature"):
            pair = tuple(float(v) for v in getattr(self, name))
            if len(pair) != 2 or not all(v > 0 for v in pair):
                raise ConfigError(f"model.{name}", "needs two positive numbers")
            object.__setattr__(self, name, pair)
        if self.n_iter < 1 or not 0 <= self.n_burn < self.n_iter:
            raise ConfigError("mcmc.n_burn", "need 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ConfigError("mcmc.thin", "must be >= 1")
        if self.max_bma_models < 1:
            raise ConfigError("prediction.max_bma_models", "must be >= 1")
        if self.gamma_proposal not in ("conditional", "prior"):
            raise ConfigError("model.gamma_proposal", "use 'conditional' or 'prior'")

    def replace(self, **changes) -> "Hyperparameters":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("ig_xi", "ig_theta", "ig_sigma", "ig_feature"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown hyperparameter")
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def make_rng(seed, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
