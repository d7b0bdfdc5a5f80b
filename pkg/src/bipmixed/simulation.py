"""Synthetic multi-view data with nested site/family random effects."""
from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from .data import MultiViewDataset
from .errors import BadDimension, ConfigError

# (sigma_theta2, sigma_xi2) of each benchmark scenario
SCENARIO_VARIANCES = {1: (0.0, 0.0), 2: (1.0, 0.5), 3: (0.5, 1.0)}

MAIN_SUPPORT_CORR = 0.7
LOADING_RANGE = (0.3, 0.5)
MAIN_LOADING_FACTOR = 2.0


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int = 1
    n_sites: int = 20
    families_per_site: int = 20
    individuals_per_family: int = 2
    M: int = 4
    p: int = 500
    r: int = 4
    n_grouped: int = 100
    block_size: int = 10
    sigma_theta2: Optional[float] = None
    sigma_xi2: Optional[float] = None
    mu: float = 1.0
    alpha: tuple = (1.0, 1.0, 1.0, 0.0)
    sigma2: float = 1.0
    n_covariates: int = 0
    beta: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario_id not in SCENARIO_VARIANCES:
            raise ConfigError("scenario_id", f"must be one of {sorted(SCENARIO_VARIANCES)}")
        st2, sx2 = SCENARIO_VARIANCES[self.scenario_id]
        if self.sigma_theta2 is None:
            object.__setattr__(self, "sigma_theta2", st2)
        if self.sigma_xi2 is None:
            object.__setattr__(self, "sigma_xi2", sx2)
        if len(self.alpha) != self.r:
            raise ConfigError("alpha", f"needs {self.r} entries")
        if self.n_grouped % self.block_size:
            raise ConfigError("n_grouped", "must be a multiple of block_size")
        if self.beta is None:
            object.__setattr__(self, "beta", tuple(1.0 for _ in range(self.n_covariates)))
        elif len(self.beta) != self.n_covariates:
            raise ConfigError("beta", f"needs {self.n_covariates} entries")

    @property
    def n(self) -> int:
        return self.n_sites * self.families_per_site * self.individuals_per_family

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alpha"] = list(d["alpha"])
        d["beta"] = list(d["beta"])
        return d


@dataclass
class Truth:
    U: np.ndarray
    loadings: list  # per view, r x p
    alpha: np.ndarray
    theta: np.ndarray  # per family, in order of first appearance
    xi: np.ndarray
    importance: list  # per view, bool masks of nonzero-loading features
    main_features: list
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "U": self.U.tolist(),
            "loadings": [a.tolist() for a in self.loadings],
            "alpha": self.alpha.tolist(),
            "theta": self.theta.tolist(),
            "xi": self.xi.tolist(),
            "importance": [m.astype(int).tolist() for m in self.importance],
            "main_features": [list(map(int, m)) for m in self.main_features],
            "beta": self.beta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        return cls(
            U=np.asarray(d["U"], dtype=float),
            loadings=[np.asarray(a, dtype=float) for a in d["loadings"]],
            alpha=np.asarray(d["alpha"], dtype=float),
            theta=np.asarray(d["theta"], dtype=float),
            xi=np.asarray(d["xi"], dtype=float),
            importance=[np.asarray(m, dtype=bool) for m in d["importance"]],
            main_features=[np.asarray(m, dtype=int) for m in d["main_features"]],
            beta=np.asarray(d.get("beta", []), dtype=float),
        )


def main_feature_positions(n_grouped: int = 100, block_size: int = 10) -> np.ndarray:
    """First feature of every block (0-based)."""
    return np.arange(0, n_grouped, block_size)


def _block(block_size: int) -> np.ndarray:
    c = MAIN_SUPPORT_CORR
    B = np.full((block_size, block_size), c * c)
    B[0, 1:] = B[1:, 0] = c
    np.fill_diagonal(B, 1.0)
    return B


def gen_intra_view_cov(p: int, n_grouped: int = 100, block_size: int = 10) -> np.ndarray:
    """Noise covariance of one view: correlated blocks, then unit singletons."""
    if p < n_grouped:
        raise BadDimension(f"p={p} is smaller than the {n_grouped} grouped features")
    S = np.eye(p)
    B = _block(block_size)
    for start in range(0, n_grouped, block_size):
        S[start:start + block_size, start:start + block_size] = B
    return S


def gen_loadings(rng, M: int = 4, r: int = 4, p: int = 500, n_grouped: int = 100,
                 block_size: int = 10) -> list:
    lo, hi = LOADING_RANGE
    main = main_feature_positions(n_grouped, block_size)
    out = []
    for _ in range(M):
        A = np.zeros((r, p))
        mag = rng.uniform(lo, hi, size=(r, n_grouped))
        sign = np.where(rng.random((r, n_grouped)) < 0.5, -1.0, 1.0)
        A[:, :n_grouped] = sign * mag
        A[:, main] *= MAIN_LOADING_FACTOR
        out.append(A)
    return out


def _noise(rng, n: int, p: int, n_grouped: int, block_size: int) -> np.ndarray:
    E = rng.standard_normal((n, p))
    L = np.linalg.cholesky(_block(block_size))
    for start in range(0, n_grouped, block_size):
        E[:, start:start + block_size] = E[:, start:start + block_size] @ L.T
    return E


def _labels(spec: ScenarioSpec, tag: str):
    sites, fams = [], []
    for s in range(spec.n_sites):
        for f in range(spec.families_per_site):
            for _ in range(spec.individuals_per_family):
                sites.append(f"site{s + 1:02d}")
                fams.append(f"site{s + 1:02d}-{tag}{f + 1:03d}")
    return np.array(sites, dtype=object), np.array(fams, dtype=object)


def _draw_split(spec: ScenarioSpec, rng, loadings, xi, tag: str):
    n = spec.n
    U = rng.standard_normal((n, spec.r))
    views = [U @ A + np.sqrt(spec.sigma2) * _noise(rng, n, spec.p, spec.n_grouped, spec.block_size)
             for A in loadings]
    site, fam = _labels(spec, tag)
    n_fam = spec.n_sites * spec.families_per_site
    fam_site = np.repeat(np.arange(spec.n_sites), spec.families_per_site)
    theta = xi[fam_site] + np.sqrt(spec.sigma_theta2) * rng.standard_normal(n_fam)
    row_fam = np.repeat(np.arange(n_fam), spec.individuals_per_family)
    alpha = np.asarray(spec.alpha, dtype=float)
    y = U @ alpha + theta[row_fam] + np.sqrt(spec.sigma2) * rng.standard_normal(n)
    W = None
    if spec.n_covariates:
        W = rng.standard_normal((n, spec.n_covariates))
        y = y + W @ np.asarray(spec.beta)
    ds = MultiViewDataset(views=tuple(views), outcome=y, site_label=site, family_label=fam, covariates=W)
    truth = Truth(
        U=U,
        loadings=[A.copy() for A in loadings],
        alpha=alpha,
        theta=theta,
        xi=xi.copy(),
        importance=[np.any(A != 0, axis=0) for A in loadings],
        main_features=[main_feature_positions(spec.n_grouped, spec.block_size)] * spec.M,
        beta=np.asarray(spec.beta, dtype=float),
    )
    return ds, truth


def gen_dataset(spec: ScenarioSpec, rng):
    """Train and test splits sharing loadings and site effects.

    Returns ``(train, train_truth, test, test_truth)``.  Families are distinct
    between the splits; their effects are drawn independently around the
    shared site effects.
    """
    loadings = gen_loadings(rng, spec.M, spec.r, spec.p, spec.n_grouped, spec.block_size)
    xi = spec.mu + np.sqrt(spec.sigma_xi2) * rng.standard_normal(spec.n_sites)
    train, train_truth = _draw_split(spec, rng, loadings, xi, "F")
    test, test_truth = _draw_split(spec, rng, loadings, xi, "T")
    return train, train_truth, test, test_truth


# --- benchmark runner ----------------------------------------------------

METHODS = ("BIPmixed", "BIP", "PCA2Step")
# fixed stream keys so a method's draws do not depend on which others run
_METHOD_KEY = {"BIP": 1, "BIPmixed": 2, "PCA2Step": 3}
METRIC_COLUMNS = ("MSE", "VarYhat", "FPR", "FNR", "AUC")
WORKERS_ENV = "BIPMIXED_WORKERS"


def parse_methods(methods) -> tuple:
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m.strip()]
    lookup = {m.lower(): m for m in METHODS}
    out = []
    for m in methods:
        key = str(m).strip().lower()
        if key not in lookup:
            raise ConfigError("methods", f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if lookup[key] not in out:
            out.append(lookup[key])
    if not out:
        raise ConfigError("methods", "no method selected")
    return tuple(out)


def run_replicate(spec: ScenarioSpec, replicate: int, methods, hyper, out_dir=None,
                  save_data: bool = False, mpp_rule: str = "max", pca_family_only: bool = False) -> list:
    """Generate one replicate, fit every method, score on the test split."""
    from threadpoolctl import threadpool_limits

    from . import io
    from .baselines import fit_bip, fit_pca2step
    from .data import make_rng
    from .metrics import evaluate
    from .prediction import predict
    from .sampler import fit

    methods = parse_methods(methods)
    with threadpool_limits(limits=1):
        train, train_truth, test, test_truth = gen_dataset(spec, make_rng(spec.seed, replicate, 0))
        rep_dir = None
        if out_dir is not None and save_data:
            rep_dir = Path(out_dir) / f"replicate_{replicate:03d}"
            io.save_dataset(train, rep_dir, "train")
            io.save_dataset(test, rep_dir, "test")
            io.save_truth(train_truth, rep_dir / "train_truth.json")
            io.save_truth(test_truth, rep_dir / "test_truth.json")
        reports = []
        for method in methods:
            rng = make_rng(spec.seed, replicate, _METHOD_KEY[method])
            scores = None
            if method == "PCA2Step":
                model = fit_pca2step(train, r=spec.r, hyper=hyper, rng=rng, family_only=pca_family_only)
                y_hat = model.predict(test)
            else:
                if method == "BIP":
                    fitted = fit_bip(train, hyper, rng)
                else:
                    fitted = fit(train, hyper.replace(random_effects_enabled=True), rng)
                y_hat = predict(fitted, test)
                scores = [fitted.posterior.feature_mpp(m, mpp_rule) for m in range(1, spec.M + 1)]
            reports.append(evaluate(method, replicate, test.outcome, y_hat, scores,
                                    train_truth.importance if scores is not None else None,
                                    scenario=spec.scenario_id))
    if out_dir is not None:
        io.write_report(Path(out_dir) / f"replicate_{replicate:03d}.csv", [r.row() for r in reports])
    return reports


def _worker_count(workers) -> int:
    if workers is None:
        workers = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(workers)
    except ValueError:
        raise ConfigError("workers", f"not an integer: {workers!r}")
    if workers < 1:
        raise ConfigError("workers", "must be >= 1")
    return workers


def run_scenario(spec: ScenarioSpec, n_replicates: int, methods=METHODS, out_dir=None, hyper=None,
                 workers=None, save_data: bool = False, mpp_rule: str = "max",
                 pca_family_only: bool = False) -> list:
    """Run ``n_replicates`` seeded replicates and return their reports.

    Every replicate draws from its own counter-based stream keyed by the
    replicate index, so results do not depend on ``workers`` or scheduling.
    When ``out_dir`` is given the per-replicate CSVs, ``report.csv`` and
    ``summary.csv`` are written there.
    """
    from . import io
    from .data import Hyperparameters

    if n_replicates < 1:
        raise ConfigError("replicates", "must be >= 1")
    methods = parse_methods(methods)
    hyper = Hyperparameters() if hyper is None else hyper
    workers = min(_worker_count(workers), n_replicates)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    job = partial(run_replicate, spec, methods=methods, hyper=hyper, out_dir=out_dir,
                  save_data=save_data, mpp_rule=mpp_rule, pca_family_only=pca_family_only)
    if workers == 1:
        per_rep = [job(k) for k in range(n_replicates)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            per_rep = list(ex.map(job, range(n_replicates)))
    reports = [r for rep in per_rep for r in rep]
    if out_dir is not None:
        io.write_report(Path(out_dir) / "report.csv", [r.row() for r in reports])
        io.write_report(Path(out_dir) / "summary.csv", summarize(reports), SUMMARY_COLUMNS)
    return reports


SUMMARY_COLUMNS = ("scenario", "method", "n_replicates", "sd_defined") + tuple(
    f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "sd")
)


def summarize(reports) -> list:
    """Mean and SD of each metric per (scenario, method); SD is 0 and flagged for one replicate."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.scenario, r.method), []).append(r.row())
    out = []
    for (scenario, method), rows in groups.items():
        row = {"scenario": scenario, "method": method, "n_replicates": len(rows), "sd_defined": len(rows) > 1}
        for c in METRIC_COLUMNS:
            vals = np.array([x[c] for x in rows if x[c] is not None], dtype=float)
            if vals.size == 0:
                row[f"{c}_mean"] = row[f"{c}_sd"] = None
                continue
            row[f"{c}_mean"] = float(vals.mean())
            row[f"{c}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append(row)
    return out


def format_table(summary) -> str:
    """Plain-text 'mean (SD)' table, one line per method."""
    lines = ["scenario  method     " + "  ".join(f"{c:>15}" for c in METRIC_COLUMNS)]
    for row in summary:
        cells = []
        for c in METRIC_COLUMNS:
            m, s = row[f"{c}_mean"], row[f"{c}_sd"]
            cells.append(f"{'-':>15}" if m is None else f"{m:7.3f} ({s:.3f})".rjust(15))
        flag = "" if row["sd_defined"] else "  *single replicate, SD undefined"
        lines.append(f"{row['scenario']!s:>8}  {row['method']:<9}  " + "  ".join(cells) + flag)
    return "\n".join(lines) + "\n"
