"""Plain-text dataset manifests, fitted-model archives and report files."""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import HierarchyIndex, Hyperparameters, MultiViewDataset, Scaler
from .sampler import FittedModel, PosteriorSummary, RegistryEntry, decode_model

MANIFEST_FORMAT = "bipmixed-dataset"
ARCHIVE_FORMAT = "bipmixed-fit"
REPORT_COLUMNS = ("scenario", "method", "replicate", "MSE", "VarYhat", "FPR", "FNR", "AUC")


def fmt(x) -> str:
    """Round-trip float formatting; ``None`` and NaN become empty fields."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else format(float(x), ".17g")
    return str(x)


def write_matrix(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    np.savetxt(path, A, delimiter=",", fmt="%.17g")


def read_matrix(path, ncol: Optional[int] = None) -> np.ndarray:
    A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    if ncol == 1 and A.shape[0] == 1 and A.shape[1] != 1:
        A = A.T
    return A


def _write_lines(path, items) -> None:
    Path(path).write_text("".join(f"{x}\n" for x in items))


def _read_lines(path) -> list:
    return Path(path).read_text().splitlines()


def save_dataset(dataset: MultiViewDataset, directory, name: str = "data") -> Path:
    """Write the matrices and a JSON manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    views = []
    for m, (X, names) in enumerate(zip(dataset.views, dataset.feature_names), start=1):
        f = f"{name}_view{m}.csv"
        write_matrix(d / f, X)
        views.append({"path": f, "p": int(X.shape[1]), "feature_names": list(names)})
    write_matrix(d / f"{name}_outcome.csv", np.asarray(dataset.outcome)[:, None])
    _write_lines(d / f"{name}_site.txt", dataset.site_label)
    _write_lines(d / f"{name}_family.txt", dataset.family_label)
    cov = None
    if dataset.covariates is not None:
        cov = f"{name}_covariates.csv"
        write_matrix(d / cov, dataset.covariates)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "n": dataset.n,
        "views": views,
        "covariates": cov,
        "outcome": f"{name}_outcome.csv",
        "site_label": f"{name}_site.txt",
        "family_label": f"{name}_family.txt",
    }
    path = d / f"{name}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_dataset(manifest_path) -> MultiViewDataset:
    path = Path(manifest_path)
    try:
        man = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: not a JSON manifest ({e})") from e
    if man.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{path}: unexpected manifest format {man.get('format')!r}")
    base = path.parent
    views, names = [], []
    for v in man["views"]:
        X = read_matrix(base / v["path"])
        if X.shape[1] != v["p"] and X.shape[0] == v["p"] and man["n"] == 1:
            X = X.T
        views.append(X)
        names.append(tuple(v.get("feature_names") or ()) or None)
    y = read_matrix(base / man["outcome"], ncol=1)[:, 0]
    cov = read_matrix(base / man["covariates"]) if man.get("covariates") else None
    if cov is not None and man["n"] == 1 and cov.shape[0] != 1:
        cov = cov.T
    feature_names = tuple(names) if all(n is not None for n in names) else None
    return MultiViewDataset(
        views=tuple(views),
        outcome=y,
        site_label=np.array(_read_lines(base / man["site_label"]), dtype=object),
        family_label=np.array(_read_lines(base / man["family_label"]), dtype=object),
        covariates=cov,
        feature_names=feature_names,
    )


def save_truth(truth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict()) + "\n")


def load_truth(path):
    from .simulation import Truth

    return Truth.from_dict(json.loads(Path(path).read_text()))


# --- fitted-model archive ------------------------------------------------

def _registry_arrays(reg: Sequence[RegistryEntry], r: int, p: list):
    bits = []
    for e in reg:
        parts = [e.gammas[0]]
        for g, H in zip(e.gammas[1:], e.Hs[1:]):
            parts += [g, H.ravel()]
        bits.append(np.packbits(np.concatenate(parts).astype(np.uint8)))
    return np.array(bits, dtype=np.uint8).reshape(len(reg), -1)


def save_fitted(fitted: FittedModel, path, keep_models: Optional[int] = None, traces: bool = False) -> Path:
    """Store everything prediction needs in one ``.npz`` file.

    Only the ``keep_models`` most visited configurations are kept
    (default: the BMA cap), with their visit counts.
    """
    post = fitted.posterior
    K = fitted.hyper.max_bma_models if keep_models is None else keep_models
    reg = post.model_registry[:K]
    arrays = {
        "U_bar": post.U_bar,
        "alpha_hat": post.alpha_hat,
        "beta_hat": post.beta_hat,
        "theta_hat": post.theta_hat,
        "xi_hat": post.xi_hat,
        "UtU": fitted.UtU,
        "registry_bits": _registry_arrays(reg, post.r, post.p),
        "registry_counts": np.array([e.count for e in reg], dtype=np.int64),
    }
    for m in range(len(post.mpp_eta)):
        arrays[f"mpp_eta_{m}"] = post.mpp_eta[m]
        arrays[f"mpp_gamma_{m}"] = post.mpp_gamma[m]
        arrays[f"feat_var_hat_{m}"] = post.feat_var_hat[m]
        arrays[f"UtX_{m}"] = fitted.UtX[m]
    for m, (mu, sd) in enumerate(zip(fitted.scaler.means, fitted.scaler.sds)):
        arrays[f"scaler_means_{m}"] = np.asarray(mu)
        arrays[f"scaler_sds_{m}"] = np.asarray(sd)
    if traces:
        for k, v in post.traces.items():
            arrays[f"trace_{k}"] = np.asarray(v)
    ci = {k: {kk: np.asarray(vv).tolist() for kk, vv in d.items()} for k, d in post.variance_ci.items()}
    meta = {
        "format": ARCHIVE_FORMAT,
        "version": 1,
        "r": post.r,
        "p": list(post.p),
        "mu_hat": post.mu_hat,
        "sigma2_hat": post.sigma2_hat,
        "variance_ci": ci,
        "n_saved": post.n_saved,
        "random_effects": post.random_effects,
        "registry_keys": [e.key for e in reg],
        "registry_freq": [e.freq for e in reg],
        "hyper": fitted.hyper.to_dict(),
        "uses_covariates": fitted.uses_covariates,
        "site_ids": list(map(str, fitted.hierarchy.site_ids)),
        "family_ids": list(map(str, fitted.hierarchy.family_ids)),
        "family_site": fitted.hierarchy.family_site.tolist(),
        "row_family": fitted.hierarchy.row_family.tolist(),
        "outcome_mean": fitted.scaler.outcome_mean,
        "outcome_sd": fitted.scaler.outcome_sd,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_fitted(path) -> FittedModel:
    with np.load(path, allow_pickle=False) as z:
        a = {k: z[k] for k in z.files}
    meta = json.loads(a["meta"].tobytes().decode())
    if meta.get("format") != ARCHIVE_FORMAT:
        raise ValueError(f"{path}: not a fitted-model archive")
    r, p = meta["r"], meta["p"]
    n_views = len(p) + 1
    reg = []
    for key, bits, c, f in zip(meta["registry_keys"], a["registry_bits"], a["registry_counts"], meta["registry_freq"]):
        g, H = decode_model(bits.tobytes(), r, p)
        reg.append(RegistryEntry(key=key, gammas=tuple(g), Hs=tuple(H), freq=float(f), count=int(c)))
    ci = {k: {kk: (np.asarray(vv) if isinstance(vv, list) else vv) for kk, vv in d.items()}
          for k, d in meta["variance_ci"].items()}
    traces = {k[6:]: v for k, v in a.items() if k.startswith("trace_")}
    post = PosteriorSummary(
        r=r,
        p=p,
        mpp_gamma=[a[f"mpp_gamma_{m}"] for m in range(n_views)],
        mpp_eta=[a[f"mpp_eta_{m}"] for m in range(n_views)],
        U_bar=a["U_bar"],
        feat_var_hat=[a[f"feat_var_hat_{m}"] for m in range(n_views)],
        alpha_hat=a["alpha_hat"],
        beta_hat=a["beta_hat"],
        theta_hat=a["theta_hat"],
        xi_hat=a["xi_hat"],
        mu_hat=meta["mu_hat"],
        sigma2_hat=meta["sigma2_hat"],
        variance_ci=ci,
        model_registry=reg,
        n_saved=meta["n_saved"],
        random_effects=meta["random_effects"],
        traces=traces,
    )
    scaler = Scaler(
        means=tuple(a[f"scaler_means_{m}"] for m in range(len(p))),
        sds=tuple(a[f"scaler_sds_{m}"] for m in range(len(p))),
        outcome_mean=meta["outcome_mean"],
        outcome_sd=meta["outcome_sd"],
    )
    hier = HierarchyIndex(
        site_ids=tuple(meta["site_ids"]),
        family_ids=tuple(meta["family_ids"]),
        row_family=np.asarray(meta["row_family"], dtype=int),
        family_site=np.asarray(meta["family_site"], dtype=int),
    )
    return FittedModel(
        posterior=post,
        scaler=scaler,
        hierarchy=hier,
        hyper=Hyperparameters.from_dict(meta["hyper"]),
        UtU=a["UtU"],
        UtX=[a[f"UtX_{m}"] for m in range(n_views)],
        uses_covariates=meta["uses_covariates"],
    )


# --- predictions and reports --------------------------------------------

def write_predictions(path, y_hat, site, family, row_ids: Optional[Iterable] = None) -> None:
    y_hat = np.asarray(y_hat, dtype=float)
    if row_ids is None:
        row_ids = range(1, y_hat.size + 1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "site", "family", "y_hat"])
        for i, s, f, v in zip(row_ids, site, family, y_hat):
            w.writerow([i, s, f, fmt(v)])


def read_predictions(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "row_id": [r["row_id"] for r in rows],
        "site": [r["site"] for r in rows],
        "family": [r["family"] for r in rows],
        "y_hat": np.array([float(r["y_hat"]) for r in rows]),
    }


def report_csv(rows: Sequence[dict], columns: Sequence[str] = REPORT_COLUMNS) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_report(path, rows: Sequence[dict], columns: Sequence[str] = REPORT_COLUMNS) -> None:
    Path(path).write_text(report_csv(rows, columns))


def read_report(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
