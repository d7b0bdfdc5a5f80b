"""Command-line entry point: simulate | fit | predict | evaluate | scenario.

Every command accepts ``--config file.json`` with the sections ``data``,
``model``, ``mcmc``, ``prediction`` and ``output``; explicit flags override
the file.  Exit status is 0 on success, 1 for user errors (bad config,
missing files, invalid data) and 2 for anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .data import Hyperparameters, make_rng
from .errors import BipMixedError, ConfigError

log = logging.getLogger("bipmixed")

SECTIONS = ("data", "model", "mcmc", "prediction", "output")
MODEL_KEYS = {
    "r", "q_eta", "q_gamma", "tau2", "sigma_beta2", "sigma_mu2", "ig_xi", "ig_theta", "ig_sigma",
    "ig_feature", "random_effects_enabled", "covariates_in_outcome", "standardize", "as_printed",
    "gamma_proposal", "mode", "pca_family_only",
}
MCMC_KEYS = {"n_iter", "n_burn", "thin", "seed"}
PREDICTION_KEYS = {"max_bma_models", "scale_loadings", "stochastic", "mpp_rule"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def load_config(path) -> dict:
    if path is None:
        return {s: {} for s in SECTIONS}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path}: invalid JSON ({e})") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config section")
    for s in SECTIONS:
        cfg.setdefault(s, {})
        if not isinstance(cfg[s], dict):
            raise ConfigError(s, "section must be an object")
    _check_keys(cfg["model"], MODEL_KEYS, "model")
    _check_keys(cfg["mcmc"], MCMC_KEYS, "mcmc")
    _check_keys(cfg["prediction"], PREDICTION_KEYS, "prediction")
    return cfg


def _check_keys(section, allowed, name):
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{name}.{k}", "unknown field")


def _override(cfg: dict, section: str, key: str, value):
    if value is not None:
        cfg[section][key] = value


def hyper_from_config(cfg: dict) -> Hyperparameters:
    kw = {k: v for k, v in cfg["model"].items() if k not in ("mode", "pca_family_only")}
    kw.update(cfg["mcmc"])
    for k in ("max_bma_models", "scale_loadings"):
        if k in cfg["prediction"]:
            kw[k] = cfg["prediction"][k]
    if "mode" in cfg["model"]:
        mode = str(cfg["model"]["mode"]).lower()
        if mode not in ("bipmixed", "bip"):
            raise ConfigError("model.mode", "use 'bipmixed' or 'bip'")
        kw["random_effects_enabled"] = mode == "bipmixed"
    try:
        return Hyperparameters.from_dict(kw)
    except TypeError as e:
        raise ConfigError("model", str(e)) from e


def _require(cfg, section, key):
    v = cfg[section].get(key)
    if v is None:
        raise ConfigError(f"{section}.{key}", "required (config file or flag)")
    return v


# --- commands -------------------------------------------------------------

def _spec_from(cfg):
    from .simulation import ScenarioSpec

    d = cfg["data"]
    kw = {"scenario_id": int(d.get("scenario", 1)), "seed": int(d.get("seed", cfg["mcmc"].get("seed", 0)))}
    for k in ("p", "n_grouped", "n_covariates", "n_sites", "families_per_site", "individuals_per_family"):
        if k in d:
            kw[k] = int(d[k])
    return ScenarioSpec(**kw)


def cmd_simulate(cfg) -> int:
    from .simulation import gen_dataset

    spec = _spec_from(cfg)
    out = Path(_require(cfg, "output", "dir"))
    train, train_truth, test, test_truth = gen_dataset(spec, make_rng(spec.seed, 0, 0))
    io.save_dataset(train, out, "train")
    io.save_dataset(test, out, "test")
    io.save_truth(train_truth, out / "train_truth.json")
    io.save_truth(test_truth, out / "test_truth.json")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {out / 'train.json'} and {out / 'test.json'}")
    return 0


def cmd_fit(cfg) -> int:
    from .sampler import fit

    data = io.load_dataset(_require(cfg, "data", "train"))
    hyper = hyper_from_config(cfg)
    out = Path(_require(cfg, "output", "model"))
    fitted = fit(data, hyper, make_rng(hyper.seed))
    io.save_fitted(fitted, out, traces=bool(cfg["output"].get("trace", False)))
    post = fitted.posterior
    print(f"r={post.r} saved_draws={post.n_saved} visited_models={len(post.model_registry)} -> {out}")
    return 0


def cmd_predict(cfg) -> int:
    from .prediction import predict

    fitted = io.load_fitted(_require(cfg, "data", "model"))
    data = io.load_dataset(_require(cfg, "data", "test"))
    out = Path(_require(cfg, "output", "predictions"))
    pcfg = cfg["prediction"]
    if "scale_loadings" in pcfg:
        fitted.hyper = fitted.hyper.replace(scale_loadings=bool(pcfg["scale_loadings"]))
    stochastic = bool(pcfg.get("stochastic", False))
    y_hat = predict(fitted, data, max_models=pcfg.get("max_bma_models"), stochastic=stochastic,
                    rng=make_rng(fitted.hyper.seed, 1) if stochastic else None)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_predictions(out, y_hat, data.site_label, data.family_label)
    print(f"wrote {len(y_hat)} predictions -> {out}")
    return 0


def cmd_evaluate(cfg) -> int:
    from .metrics import evaluate

    data = io.load_dataset(_require(cfg, "data", "test"))
    pred = io.read_predictions(_require(cfg, "data", "predictions"))
    out = Path(_require(cfg, "output", "metrics"))
    scores = truths = None
    if cfg["data"].get("model") and cfg["data"].get("truth"):
        fitted = io.load_fitted(cfg["data"]["model"])
        truth = io.load_truth(cfg["data"]["truth"])
        rule = cfg["prediction"].get("mpp_rule", "max")
        scores = [fitted.posterior.feature_mpp(m, rule) for m in range(1, fitted.M + 1)]
        truths = truth.importance
    rep = evaluate(cfg["data"].get("method", "BIPmixed"), 0, data.outcome, pred["y_hat"], scores, truths,
                   scenario=cfg["data"].get("scenario"))
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_report(out, [rep.row()])
    print(io.report_csv([rep.row()]), end="")
    return 0


def cmd_scenario(cfg) -> int:
    from .simulation import format_table, run_scenario, summarize

    spec = _spec_from(cfg)
    hyper = hyper_from_config(cfg)
    out = cfg["output"].get("dir")
    reports = run_scenario(
        spec,
        int(cfg["data"].get("replicates", 1)),
        cfg["data"].get("methods", "BIPmixed,BIP,PCA2Step"),
        out_dir=out,
        hyper=hyper,
        workers=cfg["output"].get("workers"),
        save_data=bool(cfg["output"].get("save_data", False)),
        pca_family_only=bool(cfg["model"].get("pca_family_only", False)),
    )
    print(io.report_csv([r.row() for r in reports]), end="")
    print(format_table(summarize(reports)), end="")
    return 0


# --- argument parsing -----------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON config with data/model/mcmc/prediction/output sections")
    p.add_argument("-v", "--verbose", action="store_true")


def _mcmc_flags(p):
    p.add_argument("--iters", type=int, dest="n_iter")
    p.add_argument("--burn", type=int, dest="n_burn")
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--mode", choices=("bipmixed", "bip"))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bipmixed", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a train/test pair for one scenario")
    _common(p)
    p.add_argument("--scenario", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--n-grouped", type=int)
    p.add_argument("--covariates", type=int, dest="n_covariates")
    p.add_argument("--out")

    p = sub.add_parser("fit", help="run the sampler and store a fitted-model archive")
    _common(p)
    _mcmc_flags(p)
    p.add_argument("--data", help="training manifest")
    p.add_argument("--out", help="archive path (.npz)")
    p.add_argument("--trace", action="store_true", default=None, help="also store variance traces")

    p = sub.add_parser("predict", help="BMA predictions for a dataset")
    _common(p)
    p.add_argument("--model")
    p.add_argument("--data", help="test manifest")
    p.add_argument("--out", help="predictions CSV")
    p.add_argument("--max-models", type=int)
    p.add_argument("--stochastic", action="store_true", default=None)

    p = sub.add_parser("evaluate", help="score predictions (and selection, given a model and truth)")
    _common(p)
    p.add_argument("--data", help="test manifest")
    p.add_argument("--predictions")
    p.add_argument("--model")
    p.add_argument("--truth")
    p.add_argument("--out", help="metrics CSV")

    p = sub.add_parser("scenario", help="replicated benchmark for one scenario")
    _common(p)
    _mcmc_flags(p)
    p.add_argument("--id", type=int, dest="scenario")
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods")
    p.add_argument("--p", type=int)
    p.add_argument("--n-grouped", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--save-data", action="store_true", default=None)
    return ap


def _merge(args) -> dict:
    cfg = load_config(args.config)
    a = vars(args)
    cmd = args.command
    for k in ("n_iter", "n_burn", "thin", "seed"):
        _override(cfg, "mcmc", k, a.get(k))
    _override(cfg, "model", "r", a.get("r"))
    _override(cfg, "model", "mode", a.get("mode"))
    if cmd in ("simulate", "scenario"):
        for k in ("scenario", "p", "n_grouped", "n_covariates", "replicates", "methods"):
            _override(cfg, "data", k, a.get(k))
        _override(cfg, "data", "seed", a.get("seed"))
        _override(cfg, "output", "dir", a.get("out"))
        _override(cfg, "output", "workers", a.get("workers"))
        _override(cfg, "output", "save_data", a.get("save_data"))
    elif cmd == "fit":
        _override(cfg, "data", "train", a.get("data"))
        _override(cfg, "output", "model", a.get("out"))
        _override(cfg, "output", "trace", a.get("trace"))
    elif cmd == "predict":
        _override(cfg, "data", "model", a.get("model"))
        _override(cfg, "data", "test", a.get("data"))
        _override(cfg, "output", "predictions", a.get("out"))
        _override(cfg, "prediction", "max_bma_models", a.get("max_models"))
        _override(cfg, "prediction", "stochastic", a.get("stochastic"))
    elif cmd == "evaluate":
        for k in ("predictions", "model", "truth"):
            _override(cfg, "data", k, a.get(k))
        _override(cfg, "data", "test", a.get("data"))
        _override(cfg, "output", "metrics", a.get("out"))
    return cfg


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "scenario": cmd_scenario,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"bipmixed: error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge(args)
        return COMMANDS[args.command](cfg)
    except (BipMixedError, OSError, ValueError) as e:
        print(f"bipmixed: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - reported, not handled
        log.debug("internal error", exc_info=True)
        print(f"bipmixed: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
