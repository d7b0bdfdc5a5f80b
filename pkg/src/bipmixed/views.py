"""Factor-model updates: selection indicators, loadings, feature variances, U.

Each feature column ``x`` of a view satisfies ``x = U a + e`` with
``e ~ N(0, s2 I)`` and, for the active components ``S`` of that feature,
``a_S ~ N(0, tau2 s2 I)``.  Integrating ``a_S`` out gives
``x ~ N(0, s2 (tau2 U_S U_S^T + I))``; every likelihood below is evaluated in
that collapsed form through r-dimensional identities on ``U^T U``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import DimensionMismatch, SingularSystem

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class ViewState:
    """Selection indicators, loadings and noise variances of one view.

    ``tied`` marks the outcome view, whose single feature has
    ``eta_l = gamma_l``.
    """

    gamma: np.ndarray  # (r,) bool
    H: np.ndarray  # (r, p) bool, zero rows where gamma is 0
    A: np.ndarray  # (r, p)
    feat_var: np.ndarray  # (p,)
    tied: bool = False

    @property
    def r(self) -> int:
        return len(self.gamma)

    @property
    def p(self) -> int:
        return self.H.shape[1]

    @property
    def active(self) -> np.ndarray:
        return self.gamma[:, None] & self.H

    @property
    def codes(self) -> np.ndarray:
        """Active set of every feature packed into an integer bit mask."""
        w = np.left_shift(1, np.arange(self.r, dtype=np.int64))
        return w @ self.active.astype(np.int64)

    def copy(self) -> "ViewState":
        return ViewState(
            self.gamma.copy(), self.H.copy(), self.A.copy(), self.feat_var.copy(), self.tied
        )


def _bits(code: int, r: int) -> np.ndarray:
    return np.flatnonzero((int(code) >> np.arange(r)) & 1)


class _Entry:
    __slots__ = ("idx", "chol", "logdet", "qf")

    def __init__(self, idx, chol, logdet, qf):
        self.idx = idx
        self.chol = chol
        self.logdet = logdet
        self.qf = qf


class MarginalLikelihoodCache:
    """Collapsed log-likelihood terms of every feature of one view.

    Keyed by the active-component bit mask; entries hold the Cholesky factor
    of ``U_S^T U_S + I / tau2``, ``log det(I + tau2 U_S^T U_S)`` and the
    quadratic form ``x^T (I + tau2 U_S U_S^T)^{-1} x`` for all columns.
    Build a new cache whenever ``U`` or ``X`` changes.
    """

    def __init__(self, U: np.ndarray, X: np.ndarray, tau2: float = 1.0):
        U = np.asarray(U, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if U.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"U has {U.shape[0]} rows, X has {X.shape[0]}")
        self.n, self.r = U.shape
        self.p = X.shape[1]
        self.tau2 = float(tau2)
        self.G = U.T @ U
        self.B = U.T @ X
        self.xx = np.einsum("ij,ij->j", X, X)
        self._entries: dict = {}

    def entry(self, code: int) -> _Entry:
        e = self._entries.get(code)
        if e is None:
            idx = _bits(code, self.r)
            if idx.size == 0:
                e = _Entry(idx, None, 0.0, self.xx)
            else:
                K = self.G[np.ix_(idx, idx)] + np.eye(idx.size) / self.tau2
                try:
                    L = cholesky(K, lower=True)
                except LinAlgError as exc:
                    raise SingularSystem(f"posterior precision for components {idx}") from exc
                V = solve_triangular(L, self.B[idx], lower=True)
                logdet = idx.size * np.log(self.tau2) + 2.0 * np.log(np.diag(L)).sum()
                e = _Entry(idx, L, logdet, self.xx - np.einsum("ij,ij->j", V, V))
            self._entries[code] = e
        return e

    def loglik(self, codes: np.ndarray, feat_var: np.ndarray, cols=None) -> np.ndarray:
        """Per-feature collapsed log-likelihood for the given active sets.

        ``cols`` restricts evaluation to a subset of columns; ``codes`` and
        ``feat_var`` are then aligned with ``cols``.
        """
        codes = np.asarray(codes)
        ld = np.empty(codes.shape)
        qf = np.empty(codes.shape)
        uniq, inv = np.unique(codes, return_inverse=True)
        for k, c in enumerate(uniq):
            e = self.entry(int(c))
            sel = inv == k
            ld[sel] = e.logdet
            qf[sel] = e.qf[sel] if cols is None else e.qf[cols[sel]]
        return -0.5 * (self.n * (LOG_2PI + np.log(feat_var)) + ld + qf / feat_var)


def marginal_loglik_feature(x_col, U, active, feat_var: float, tau2: float = 1.0) -> float:
    """log N(x; 0, s2 (tau2 U_A U_A^T + I)) with A the active columns of U."""
    x = np.asarray(x_col, dtype=float).ravel()
    U = np.atleast_2d(np.asarray(U, dtype=float))
    active = np.asarray(active).astype(bool).ravel()
    if U.shape[0] != x.size or active.size != U.shape[1]:
        raise DimensionMismatch(
            f"x has {x.size} rows, U is {U.shape}, active has {active.size} entries"
        )
    n = x.size
    Ua = U[:, active]
    qf = x @ x
    logdet = 0.0
    if Ua.shape[1]:
        K = Ua.T @ Ua + np.eye(Ua.shape[1]) / tau2
        L = cholesky(K, lower=True)
        v = solve_triangular(L, Ua.T @ x, lower=True)
        qf -= v @ v
        logdet = Ua.shape[1] * np.log(tau2) + 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (n * (LOG_2PI + np.log(feat_var)) + logdet + qf / feat_var))


def _log(q: float) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(q))


def mh_update_selection(
    view: ViewState,
    cache: MarginalLikelihoodCache,
    q_eta: float,
    q_gamma: float,
    rng: np.random.Generator,
    proposal: str = "conditional",
) -> float:
    """One Metropolis-Hastings sweep over ``(gamma, H)`` of a view, in place.

    Components are visited in index order.  For each one: a gamma flip
    (proposing the component's eta row jointly when switching on), then, for
    an active component of an untied view, an independent eta flip proposal
    for every feature and one active/inactive swap within the row.

    ``proposal`` selects how the eta row is proposed on activation:
    ``"prior"`` draws iid Bernoulli(q_eta); ``"conditional"`` draws each eta
    from its exact conditional given the other components, which makes the
    flip acceptance depend on the eta-marginal likelihood only.

    Returns the collapsed log-likelihood of the view after the sweep,
    accumulated incrementally.
    """
    r = view.r
    lq_g1, lq_g0 = _log(q_gamma), _log(1.0 - q_gamma)
    lq_e1, lq_e0 = _log(q_eta), _log(1.0 - q_eta)
    fv = view.feat_var
    codes = view.codes
    ll = cache.loglik(codes, fv)

    with np.errstate(invalid="ignore"):
        for l in range(r):
            bit = np.int64(1 << l)
            on = codes | bit
            off = codes & ~bit
            L1 = cache.loglik(on, fv)
            L0 = cache.loglik(off, fv)

            # component flip
            if view.tied:
                delta = L1.sum() - L0.sum()
                new_eta = np.ones(view.p, dtype=bool)
            elif proposal == "conditional":
                logZ = np.logaddexp(lq_e1 + L1, lq_e0 + L0)
                delta = (logZ - L0).sum()
                new_eta = None
            else:
                new_eta = rng.random(view.p) < q_eta
                delta = np.where(new_eta, L1, L0).sum() - L0.sum()

            if not view.gamma[l]:
                log_acc = lq_g1 - lq_g0 + delta
                if np.log(rng.random()) < log_acc:
                    if new_eta is None:
                        new_eta = np.log(rng.random(view.p)) < lq_e1 + L1 - logZ
                    view.gamma[l] = True
                    view.H[l] = new_eta
                    codes = np.where(new_eta, on, off)
                    ll = np.where(new_eta, L1, L0)
            else:
                if view.tied or proposal == "conditional":
                    log_acc = lq_g0 - lq_g1 - delta
                else:
                    log_acc = lq_g0 - lq_g1 + (L0 - ll).sum()
                if np.log(rng.random()) < log_acc:
                    view.gamma[l] = False
                    view.H[l] = False
                    codes = off
                    ll = L0

            if view.tied or not view.gamma[l]:
                continue

            # independent eta flips; features are conditionally independent
            cur = view.H[l]
            Lp = np.where(cur, L0, L1)
            prior = np.where(cur, lq_e0 - lq_e1, lq_e1 - lq_e0)
            log_acc = Lp - ll + prior
            acc = np.log(rng.random(view.p)) < log_acc
            if acc.any():
                view.H[l] = cur ^ acc
                codes = np.where(acc, codes ^ bit, codes)
                ll = np.where(acc, Lp, ll)

            # swap one selected and one unselected feature
            on_idx = np.flatnonzero(view.H[l])
            off_idx = np.flatnonzero(~view.H[l])
            if on_idx.size and off_idx.size:
                j1 = on_idx[rng.integers(on_idx.size)]
                j0 = off_idx[rng.integers(off_idx.size)]
                log_acc = L0[j1] + L1[j0] - ll[j1] - ll[j0]
                if np.log(rng.random()) < log_acc:
                    view.H[l, j1] = False
                    view.H[l, j0] = True
                    codes[j1] ^= bit
                    codes[j0] ^= bit
                    ll[j1] = L0[j1]
                    ll[j0] = L1[j0]

    if view.tied:
        view.H[:] = view.gamma[:, None]
    return float(ll.sum())


def view_loglik(view: ViewState, cache: MarginalLikelihoodCache) -> float:
    """Collapsed log-likelihood of the view recomputed from scratch."""
    return float(cache.loglik(view.codes, view.feat_var).sum())


def gibbs_update_loadings(
    view: ViewState, cache: MarginalLikelihoodCache, rng: np.random.Generator
) -> ViewState:
    """Draw loadings from their conjugate Gaussian conditional, in place.

    For each feature with active set ``S``: ``a_S ~ N(K^{-1} U_S^T x,
    s2 K^{-1})`` with ``K = U_S^T U_S + I / tau2``; inactive loadings are 0.
    """
    codes = view.codes
    A = np.zeros_like(view.A)
    sd = np.sqrt(view.feat_var)
    for c in np.unique(codes):
        if c == 0:
            continue
        e = cache.entry(int(c))
        J = np.flatnonzero(codes == c)
        mean = cho_solve((e.chol, True), cache.B[np.ix_(e.idx, J)])
        z = rng.standard_normal((e.idx.size, J.size))
        A[np.ix_(e.idx, J)] = mean + solve_triangular(e.chol.T, z, lower=False) * sd[J]
    view.A = A
    return view


def feature_variance_params(view: ViewState, U, X, ig=(0.01, 0.01), tau2: float = 1.0):
    """Shape and scale of the inverse-gamma conditional of each feature variance."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    resid = X - U @ view.A
    rss = np.einsum("ij,ij->j", resid, resid)
    k = view.active.sum(axis=0)
    shape = ig[0] + 0.5 * n + 0.5 * k
    scale = ig[1] + 0.5 * rss + 0.5 * (view.A**2).sum(axis=0) / tau2
    return shape, scale


def gibbs_update_feature_variances(
    view: ViewState, U, X, rng: np.random.Generator, ig=(0.01, 0.01), tau2: float = 1.0
) -> ViewState:
    shape, scale = feature_variance_params(view, U, X, ig, tau2)
    view.feat_var = scale / rng.gamma(shape)
    return view


def latent_conditional(blocks, n: int, r: int):
    """Row means and shared covariance of the Gaussian conditional of U.

    ``blocks`` is a sequence of ``(X, A, feat_var)`` with ``X`` n x p,
    ``A`` r x p and ``feat_var`` of length p.
    """
    prec = np.eye(r)
    rhs = np.zeros((n, r))
    for X, A, fv in blocks:
        X = np.asarray(X, dtype=float).reshape(n, -1)
        Aw = A / fv
        prec += Aw @ A.T
        rhs += X @ Aw.T
    L = cholesky(prec, lower=True)
    mean = cho_solve((L, True), rhs.T).T
    return mean, L


def gibbs_update_latent(blocks, n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Draw U row-wise from N(Sigma m_i, Sigma), Sigma = (sum A Psi^-1 A^T + I)^-1."""
    mean, L = latent_conditional(blocks, n, r)
    z = rng.standard_normal((r, n))
    return mean + solve_triangular(L.T, z, lower=False).T
