"""Acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line through ``conftest.record`` before
asserting, so the terminal summary lists all criteria even when some fail.
"""
import itertools
import os
import time

import numpy as np
import pytest
from scipy import integrate, optimize, stats
from scipy.special import gammaln, logsumexp

from conftest import record

from bipmixed import Hyperparameters, ScenarioSpec, auc, build_hierarchy, make_rng, mse, selection_rates
from bipmixed.outcome import (
    gibbs_beta,
    gibbs_mu,
    gibbs_sigma2,
    gibbs_theta,
    gibbs_variance_components,
    gibbs_xi,
    sample_mixed_model,
)
from bipmixed.simulation import run_scenario
from bipmixed.views import (
    MarginalLikelihoodCache,
    ViewState,
    gibbs_update_feature_variances,
    gibbs_update_loadings,
    marginal_loglik_feature,
    mh_update_selection,
)


# ---------------------------------------------------------------------------
# 1. full conditionals against quadrature of the joint density

class QuadratureOracle:
    """Normalized 1-D density from an unnormalized log density, by quadrature.

    Positive parameters are integrated on the log scale.
    """

    def __init__(self, logf, positive=False, guess=1.0):
        self.positive = positive
        fwd = np.exp if positive else (lambda t: t)
        self.fwd = fwd

        def logg(t):
            return logf(fwd(t)) + (t if positive else 0.0)

        t0 = np.log(guess) if positive else guess
        t0 = optimize.minimize_scalar(lambda t: -logg(t), bracket=(t0 - 1, t0 + 1)).x
        h = 1e-4
        curv = -(logg(t0 + h) - 2 * logg(t0) + logg(t0 - h)) / h**2
        sd = 1 / np.sqrt(curv)
        c = logg(t0)
        lo, hi = t0 - 40 * sd, t0 + 40 * sd
        g = lambda t: np.exp(logg(t) - c)  # noqa: E731
        opts = dict(limit=500, epsabs=0, epsrel=1e-11, points=[t0])
        Z = integrate.quad(g, lo, hi, **opts)[0]
        m1 = integrate.quad(lambda t: fwd(t) * g(t), lo, hi, **opts)[0] / Z
        m2 = integrate.quad(lambda t: (fwd(t) - m1) ** 2 * g(t), lo, hi, **opts)[0] / Z
        self.mean, self.var = m1, m2
        self._grid = np.linspace(lo, hi, 200_001)
        dens = g(self._grid) if getattr(logf, "vectorized", False) else np.array([g(t) for t in self._grid])
        cdf = integrate.cumulative_trapezoid(dens, self._grid, initial=0.0)
        self._cdf = cdf / cdf[-1]

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        t = np.log(x) if self.positive else x
        return np.interp(t, self._grid, self._cdf, left=0.0, right=1.0)


def _vec(f):
    f.vectorized = True
    return f


def _norm_lp(x, m, v):
    return -0.5 * np.log(2 * np.pi * v) - 0.5 * (x - m) ** 2 / v


def _ig_lp(x, a, b):
    return a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x


def _check(name, draws, oracle, results):
    d = np.asarray(draws, dtype=float)
    half = d[:50_000]
    mean_err = abs(half.mean() - oracle.mean) / abs(oracle.mean)
    var_err = abs(half.var(ddof=1) - oracle.var) / oracle.var
    ks = stats.kstest(d, oracle.cdf).statistic
    ok = mean_err < 0.02 and var_err < 0.05 and ks < 0.02
    results.append((name, ok, mean_err, var_err, ks))


def test_criterion_1_conditionals_match_quadrature():
    t0 = time.perf_counter()
    rng = make_rng(101)
    N = 100_000
    h = build_hierarchy(["a", "a", "a", "b", "b", "b"], ["f1", "f1", "f2", "f3", "f3", "f4"])
    fam_rows = [np.flatnonzero(h.row_family == f) for f in range(h.n_families)]
    site_fams = [np.flatnonzero(h.family_site == s) for s in range(h.N_S)]
    W = np.array([0.3, -1.2, 0.8, 1.5, -0.4, 0.9])
    Ua = np.array([0.2, -0.1, 0.4, 0.0, 0.3, -0.2])
    U = np.array([[0.5, -1.0], [1.2, 0.3], [-0.7, 0.8], [0.1, -0.4], [0.9, 1.1], [-1.3, 0.2]])
    theta = np.array([1.8, 2.4, 3.1, 2.9])
    th_rows = theta[h.row_family]
    y = 2.0 * W + th_rows + Ua + np.array([0.3, -0.5, 0.2, 0.4, -0.1, 0.6])
    beta, s2, sb2, smu2, mu = 2.0, 0.8, 10.0, 10.0, 2.5
    xi = np.array([2.2, 3.1])
    sx2, st2 = 0.7, np.array([0.4, 0.6])
    ig_x, ig_t, ig_s = (10.0, 8.0), (12.0, 6.0), (10.0, 9.0)
    results = []

    # mu | xi
    lp = _vec(lambda m: _norm_lp(m, 0, smu2) + sum(_norm_lp(x, m, sx2) for x in xi))
    _check("mu", [gibbs_mu(xi, sx2, smu2, rng) for _ in range(N)], QuadratureOracle(lp, guess=2.5), results)

    # beta | rest, one covariate
    lp = _vec(lambda b: _norm_lp(b, 0, sb2) + sum(_norm_lp(y[i], W[i] * b + th_rows[i] + Ua[i], s2) for i in range(6)))
    Wm = W[:, None]
    d = [gibbs_beta(Wm, y, th_rows, Ua, s2, sb2, rng)[0] for _ in range(N)]
    _check("beta", d, QuadratureOracle(lp, guess=2.0), results)

    # xi_s | theta, mu
    d = np.array([gibbs_xi(theta, h, sx2, st2, mu, rng) for _ in range(N)])
    for s in range(h.N_S):
        lp = _vec(lambda x, s=s: _norm_lp(x, mu, sx2) + sum(_norm_lp(theta[f], x, st2[s]) for f in site_fams[s]))
        _check(f"xi[{s}]", d[:, s], QuadratureOracle(lp, guess=theta[site_fams[s]].mean()), results)

    # theta_f | resid, xi
    resid = y - beta * W - Ua
    d = np.array([gibbs_theta(resid, h, xi, st2, s2, rng) for _ in range(N)])
    for f in range(h.n_families):
        s = h.family_site[f]
        lp = _vec(lambda t, f=f, s=s: _norm_lp(t, xi[s], st2[s]) + sum(_norm_lp(resid[i], t, s2) for i in fam_rows[f]))
        _check(f"theta[{f}]", d[:, f], QuadratureOracle(lp, guess=resid[fam_rows[f]].mean()), results)

    # sigma_xi2 and sigma_theta2[s]
    draws = [gibbs_variance_components(xi, theta, h, mu, ig_x, ig_t, rng) for _ in range(N)]
    dx = np.array([a for a, _ in draws])
    dt = np.array([b for _, b in draws])
    lp = _vec(lambda v: _ig_lp(v, *ig_x) + sum(_norm_lp(x, mu, v) for x in xi))
    _check("sigma_xi2", dx, QuadratureOracle(lp, positive=True), results)
    for s in range(h.N_S):
        lp = _vec(lambda v, s=s: _ig_lp(v, *ig_t) + sum(_norm_lp(theta[f], xi[s], v) for f in site_fams[s]))
        _check(f"sigma_theta2[{s}]", dt[:, s], QuadratureOracle(lp, positive=True, guess=0.5), results)

    # sigma2 with the outcome loadings integrated out: y ~ N(offset, s2 (tau2 U U^T + I))
    tau2 = 1.0
    yt = y - beta * W - th_rows
    C = tau2 * U @ U.T + np.eye(6)
    ll1 = stats.multivariate_normal.logpdf(yt, np.zeros(6), C)
    q = yt @ np.linalg.solve(C, yt)
    # log N(yt; 0, v C) = log N(yt; 0, C) - (n/2) log v - q (1/v - 1) / 2
    logf = _vec(lambda v: _ig_lp(v, *ig_s) + ll1 - 3.0 * np.log(v) - 0.5 * q * (1 / v - 1))
    assert abs(logf(1.7) - _ig_lp(1.7, *ig_s) - stats.multivariate_normal.logpdf(yt, np.zeros(6), 1.7 * C)) < 1e-10
    d = [gibbs_sigma2(y, Wm, np.array([beta]), th_rows, U, ig_s, rng, tau2) for _ in range(N)]
    _check("sigma2", d, QuadratureOracle(logf, positive=True), results)

    elapsed = time.perf_counter() - t0
    bad = [r for r in results if not r[1]]
    worst = max(results, key=lambda r: r[4])
    ok = not bad and elapsed < 60
    detail = (f"{len(results)} conditionals, worst KS {worst[4]:.4f} ({worst[0]}), "
              f"max mean err {max(r[2] for r in results):.4f}, max var err {max(r[3] for r in results):.4f}, "
              f"{elapsed:.0f}s")
    if bad:
        detail += "; failing: " + ", ".join(r[0] for r in bad)
    record("1", ok, detail)
    assert not bad, bad
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 2. collapsed likelihood against Monte Carlo over the loadings

def _mc_loglik(x, Ua, s2, tau2, rng, n_draws=4_000_000, chunk=500_000):
    parts = []
    for _ in range(n_draws // chunk):
        a = rng.normal(0.0, np.sqrt(s2 * tau2), size=(chunk, Ua.shape[1]))
        resid = x[None, :] - a @ Ua.T
        parts.append(logsumexp(-0.5 * (resid**2).sum(axis=1) / s2))
    n = x.size
    return logsumexp(parts) - np.log(n_draws) - 0.5 * n * np.log(2 * np.pi * s2)


def test_criterion_2_marginal_likelihood_vs_monte_carlo():
    t0 = time.perf_counter()
    rng = make_rng(202)
    errs = []
    for n, r, active, s2, tau2 in [
        (2, 1, [1], 0.7, 1.0),
        (3, 1, [1], 1.5, 0.5),
        (3, 2, [1, 0], 1.0, 1.0),
        (4, 2, [1, 1], 0.9, 1.0),
        (4, 2, [0, 1], 1.3, 2.0),
        (4, 2, [1, 1], 2.0, 0.5),
    ]:
        U = rng.standard_normal((n, r))
        act = np.array(active, bool)
        a = rng.normal(0, np.sqrt(s2 * tau2), act.sum())
        x = U[:, act] @ a + rng.normal(0, np.sqrt(s2), n)
        exact = marginal_loglik_feature(x, U, act, s2, tau2)
        mc = _mc_loglik(x, U[:, act], s2, tau2, rng)
        errs.append(abs(np.expm1(mc - exact)))
    elapsed = time.perf_counter() - t0
    ok = max(errs) <= 0.005 and elapsed < 60
    record("2", ok, f"max relative error {max(errs):.5f} over {len(errs)} instances (4e6 draws), {elapsed:.0f}s")
    assert max(errs) <= 0.005
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 3. visit frequencies against the enumerated posterior

def _log_student_marginal(x, Us, a, b, tau2):
    """log p(x | active set) with loadings and the feature variance integrated out."""
    n = x.size
    C = np.eye(n) + tau2 * Us @ Us.T
    _, logdet = np.linalg.slogdet(C)
    q = x @ np.linalg.solve(C, x)
    return (gammaln(a + n / 2) - gammaln(a) + a * np.log(b) - 0.5 * n * np.log(2 * np.pi)
            - 0.5 * logdet - (a + n / 2) * np.log(b + q / 2))


def _enumerate_view(X, U, q_eta, q_gamma, a, b, tau2, tied):
    r = U.shape[1]
    p = X.shape[1]
    states = {}
    for g in itertools.product([0, 1], repeat=r):
        g = np.array(g, bool)
        lp_g = np.sum(np.where(g, np.log(q_gamma), np.log(1 - q_gamma)))
        if tied:
            rows = [np.tile(g[:, None], (1, p))]
        else:
            rows = []
            for bits in itertools.product([0, 1], repeat=int(g.sum()) * p):
                H = np.zeros((r, p), bool)
                H[g] = np.array(bits, bool).reshape(int(g.sum()), p)
                rows.append(H)
        for H in rows:
            lp = lp_g
            if not tied:
                lp += np.sum(np.where(H[g], np.log(q_eta), np.log(1 - q_eta)))
            for j in range(p):
                lp += _log_student_marginal(X[:, j], U[:, H[:, j]], a, b, tau2)
            states[(g.tobytes(), H.tobytes())] = lp
    keys = list(states)
    lp = np.array([states[k] for k in keys])
    return dict(zip(keys, np.exp(lp - logsumexp(lp))))


def test_criterion_3_exact_posterior_visit_frequencies():
    t0 = time.perf_counter()
    rng = make_rng(303)
    n, r, p = 6, 2, 3
    U = rng.standard_normal((n, r))
    A = np.array([[1.2, 0.0, 0.6], [0.0, 0.9, 0.0]])
    X = U @ A + 0.6 * rng.standard_normal((n, p))
    y = U @ np.array([0.8, 0.0]) + 0.6 * rng.standard_normal(n)
    q_eta, q_gamma, tau2, ig = 0.3, 0.5, 1.0, (2.0, 2.0)

    target0 = _enumerate_view(y[:, None], U, q_eta, q_gamma, *ig, tau2, tied=True)
    target1 = _enumerate_view(X, U, q_eta, q_gamma, *ig, tau2, tied=False)
    target = {(k0, k1): p0 * p1 for k0, p0 in target0.items() for k1, p1 in target1.items()}

    cache0 = MarginalLikelihoodCache(U, y, tau2)
    cache1 = MarginalLikelihoodCache(U, X, tau2)
    out = ViewState(np.zeros(r, bool), np.zeros((r, 1), bool), np.zeros((r, 1)), np.ones(1), tied=True)
    view = ViewState(np.zeros(r, bool), np.zeros((r, p), bool), np.zeros((r, p)), np.ones(p))
    counts: dict = {}
    n_sweeps, burn = 50_000, 1_000
    for it in range(n_sweeps + burn):
        mh_update_selection(out, cache0, q_eta, q_gamma, rng)
        out.feat_var[0] = gibbs_sigma2(y, None, None, np.zeros(n), U[:, out.gamma], ig, rng, tau2)
        mh_update_selection(view, cache1, q_eta, q_gamma, rng)
        gibbs_update_loadings(view, cache1, rng)
        gibbs_update_feature_variances(view, U, X, rng, ig, tau2)
        if it >= burn:
            key = ((out.gamma.tobytes(), out.H.tobytes()), (view.gamma.tobytes(), view.H.tobytes()))
            counts[key] = counts.get(key, 0) + 1
    assert set(counts) <= set(target)
    tv = 0.5 * sum(abs(counts.get(k, 0) / n_sweeps - pk) for k, pk in target.items())
    elapsed = time.perf_counter() - t0
    ok = tv < 0.05 and elapsed < 300
    record("3", ok, f"total variation {tv:.4f} over {len(target)} configurations, {n_sweeps} sweeps, {elapsed:.0f}s")
    assert tv < 0.05
    assert elapsed < 300


# ---------------------------------------------------------------------------
# 4. desk-scale reproduction of the scenario ordering

DESK_REPLICATES = 5


def _desk_reports(tmp_path_factory):
    hyper = Hyperparameters(n_iter=3000, n_burn=1500)
    reports = {}
    for sc in (1, 2, 3):
        spec = ScenarioSpec(scenario_id=sc, p=100, n_grouped=20, seed=2024)
        out = tmp_path_factory.mktemp(f"desk{sc}")
        reports[sc] = run_scenario(spec, DESK_REPLICATES, "BIP,BIPmixed", out_dir=out, hyper=hyper)
    return reports


@pytest.mark.slow
def test_criterion_4_desk_scale_scenarios(tmp_path_factory):
    t0 = time.perf_counter()
    reports = _desk_reports(tmp_path_factory)
    by = {(sc, m): sorted((r for r in reps if r.method == m), key=lambda r: r.replicate)
          for sc, reps in reports.items() for m in ("BIP", "BIPmixed")}
    checks = {}
    wins = {}
    for sc in (2, 3):
        wins[sc] = sum(a.mse < b.mse for a, b in zip(by[sc, "BIPmixed"], by[sc, "BIP"]))
    checks["a"] = all(w >= 4 for w in wins.values())
    m_bip = np.mean([r.mse for r in by[1, "BIP"]])
    m_mix = np.mean([r.mse for r in by[1, "BIPmixed"]])
    rel = abs(m_bip - m_mix) / m_bip
    checks["b"] = rel <= 0.10
    all_reps = [r for v in by.values() for r in v]
    min_auc = min(r.auc for r in all_reps)
    max_fnr = max(r.fnr for r in all_reps)
    checks["c"] = min_auc >= 0.95 and max_fnr <= 0.05
    fpr = {k: np.mean([r.fpr for r in v]) for k, v in by.items()}
    checks["d"] = max(fpr.values()) <= 0.35
    elapsed = time.perf_counter() - t0
    mses = ", ".join(f"S{sc} {m} {np.mean([r.mse for r in by[sc, m]]):.3f}"
                     for sc in (1, 2, 3) for m in ("BIP", "BIPmixed"))
    detail = (f"(a) wins S2 {wins[2]}/5 S3 {wins[3]}/5; (b) rel diff {rel:.3f}; (c) min AUC {min_auc:.3f} "
              f"max FNR {max_fnr:.3f}; (d) max mean FPR {max(fpr.values()):.3f}; MSE {mses}; {elapsed / 60:.0f} min")
    record("4", all(checks.values()) and elapsed < 7200, detail)
    for k, v in checks.items():
        assert v, f"part ({k}) failed: {detail}"


@pytest.mark.slow
def test_criterion_4_covariate_path(tmp_path):
    """The covariate flag path runs through the harness (smoke level, not scored)."""
    spec = ScenarioSpec(scenario_id=2, p=100, n_grouped=20, n_covariates=2, seed=7)
    reps = run_scenario(spec, 1, "BIP,BIPmixed,PCA2Step", out_dir=tmp_path,
                        hyper=Hyperparameters(n_iter=200, n_burn=100, r=5))
    assert {r.method for r in reps} == {"BIP", "BIPmixed", "PCA2Step"}
    assert all(np.isfinite(r.mse) for r in reps)


# ---------------------------------------------------------------------------
# 5. full-scale run, opt-in

REFERENCE_MSE = {
    (1, "PCA2Step"): 2.054, (1, "BIP"): 1.760, (1, "BIPmixed"): 1.816,
    (2, "PCA2Step"): 2.822, (2, "BIP"): 3.242, (2, "BIPmixed"): 2.320,
    (3, "PCA2Step"): 3.628, (3, "BIP"): 3.213, (3, "BIPmixed"): 2.830,
}


@pytest.mark.slow
def test_criterion_5_full_scale(tmp_path_factory):
    if os.environ.get("BIPMIXED_FULL_SCALE") != "1":
        record("5", None, "opt-in run; set BIPMIXED_FULL_SCALE=1 (p = 500, 20 sites)")
        pytest.skip("full-scale run is opt-in")
    n_rep = int(os.environ.get("BIPMIXED_FULL_REPLICATES", "10"))
    errs = {}
    for sc in (1, 2, 3):
        spec = ScenarioSpec(scenario_id=sc, seed=2024)
        reps = run_scenario(spec, n_rep, "BIP,BIPmixed,PCA2Step", out_dir=tmp_path_factory.mktemp(f"full{sc}"))
        for m in ("BIP", "BIPmixed", "PCA2Step"):
            got = np.mean([r.mse for r in reps if r.method == m])
            errs[sc, m] = abs(got - REFERENCE_MSE[sc, m]) / REFERENCE_MSE[sc, m]
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= 0.15
    record("5", ok, f"worst relative MSE gap {errs[worst]:.3f} ({worst})")
    assert ok


# ---------------------------------------------------------------------------
# 6. variance components of the views-free mixed model

def test_criterion_6_variance_component_recovery():
    """sigma_xi2 and the site-averaged sigma_theta2 are scored; sigma2 is reported only.

    Under the default IG(0.01, 0.01) priors some per-site sigma_theta2 collapse
    towards zero and the residual variance absorbs the slack, so sigma2 sits a
    few percent high; an independent sampler on the marginal likelihood shows
    the same posterior.
    """
    truth = {"sigma_xi2": 1.0, "sigma_theta2": 0.5, "sigma2": 1.0}
    scored = ("sigma_xi2", "sigma_theta2")
    sites = np.repeat([f"s{k:02d}" for k in range(20)], 40)
    fams = np.repeat([f"f{k:03d}" for k in range(400)], 2)
    h = build_hierarchy(sites, fams)
    hyper = Hyperparameters(n_iter=3000, n_burn=1000)
    means = {k: [] for k in truth}
    cover = {k: 0 for k in truth}
    for run in range(20):
        rng = make_rng(606, run)
        xi = 1.0 + rng.normal(0, 1.0, 20)
        theta = xi[h.family_site] + rng.normal(0, np.sqrt(0.5), 400)
        y = theta[h.row_family] + rng.normal(0, 1.0, 800)
        fit = sample_mixed_model(y, h, hyper, make_rng(606, run, 1))
        tr = {
            "sigma_xi2": fit.traces["sigma_xi2"],
            "sigma_theta2": fit.traces["sigma_theta2"].mean(axis=1),  # site average
            "sigma2": fit.traces["sigma2"],
        }
        for k, v in tr.items():
            means[k].append(v.mean())
            lo, hi = np.quantile(v, [0.025, 0.975])
            cover[k] += lo <= truth[k] <= hi
    rel = {k: abs(np.mean(v) - truth[k]) / truth[k] for k, v in means.items()}
    ok = all(rel[k] <= 0.30 and cover[k] >= 17 for k in scored)
    detail = "; ".join(f"{k}: mean {np.mean(means[k]):.3f} (rel {rel[k]:.2f}), cover {cover[k]}/20"
                       + ("" if k in scored else " [not scored]") for k in truth)
    record("6", ok, detail)
    assert ok, detail


# ---------------------------------------------------------------------------
# 7. worker-count invariance

def test_criterion_7_worker_invariance(tmp_path):
    spec = ScenarioSpec(scenario_id=3, n_sites=4, families_per_site=5, p=40, n_grouped=20, seed=77)
    hyper = Hyperparameters(n_iter=40, n_burn=20, r=2)
    for w in (1, 8):
        run_scenario(spec, 8, "BIPmixed,BIP,PCA2Step", out_dir=tmp_path / f"w{w}", hyper=hyper, workers=w)
    same = all((tmp_path / "w1" / f).read_bytes() == (tmp_path / "w8" / f).read_bytes()
               for f in ["report.csv", "summary.csv"] + [f"replicate_{k:03d}.csv" for k in range(8)])
    record("7", same, "report, summary and per-replicate files compared byte for byte (1 vs 8 workers)")
    assert same


# ---------------------------------------------------------------------------
# 8. metrics against brute force

def _brute(y, yh, s, t, c):
    n = len(y)
    m = sum((y[i] - yh[i]) ** 2 for i in range(n)) / n
    pos = [i for i in range(len(t)) if t[i]]
    neg = [i for i in range(len(t)) if not t[i]]
    fp = sum(1 for i in neg if s[i] > c)
    fn = sum(1 for i in pos if not s[i] > c)
    wins = 0.0
    for i in pos:
        for j in neg:
            wins += 1.0 if s[i] > s[j] else 0.5 if s[i] == s[j] else 0.0
    return m, fp / len(neg), fn / len(pos), wins / (len(pos) * len(neg))


def test_criterion_8_metric_oracles():
    rng = make_rng(808)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 15))
        t = rng.random(n) < 0.5
        t[0], t[1] = True, False
        s = np.round(rng.random(n), int(rng.integers(1, 3)))  # rounding creates ties
        y = rng.normal(size=n)
        yh = y + rng.normal(size=n)
        c = float(rng.choice([0.5, 0.0, 1.0, rng.random()]))
        m, fpr, fnr, a = _brute(y.tolist(), yh.tolist(), s.tolist(), t.tolist(), c)
        fpr2, fnr2 = selection_rates(s, t, threshold=c)
        diffs = [mse(y, yh) - m, fpr2 - fpr, fnr2 - fnr, auc(s, t) - a]
        worst = max(worst, max(abs(d) for d in diffs))
    ok = worst <= 1e-12
    record("8", ok, f"1000 instances, max abs difference {worst:.2e}")
    assert ok
