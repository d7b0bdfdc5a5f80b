"""Prediction and feature-selection scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import LengthMismatch, UndefinedRate


def _pair(a, b):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatch("empty input")
    return a, b


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2))


def var_pred(y_hat) -> float:
    """Sample variance of the predictions (n - 1 denominator; 0 for one value)."""
    y_hat = np.asarray(y_hat, dtype=float).reshape(-1)
    if y_hat.size == 0:
        raise LengthMismatch("empty input")
    if y_hat.size == 1:
        return 0.0
    return float(np.var(y_hat, ddof=1))


def _truth(scores, truth):
    scores = np.asarray(scores, dtype=float).reshape(-1)
    truth = np.asarray(truth).reshape(-1).astype(bool)
    if scores.size != truth.size:
        raise LengthMismatch(f"lengths differ: {scores.size} vs {truth.size}")
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == truth.size:
        raise UndefinedRate("truth needs at least one positive and one negative")
    return scores, truth


def selection_rates(mpp, truth, threshold: float = 0.5) -> tuple:
    """(FPR, FNR) of selecting features with ``mpp > threshold``."""
    mpp, truth = _truth(mpp, truth)
    sel = mpp > threshold
    fpr = np.count_nonzero(sel & ~truth) / np.count_nonzero(~truth)
    fnr = np.count_nonzero(~sel & truth) / np.count_nonzero(truth)
    return float(fpr), float(fnr)


def auc(scores, truth) -> float:
    """Mann-Whitney AUC with ties counted one half."""
    scores, truth = _truth(scores, truth)
    ranks = rankdata(scores)
    n_pos = np.count_nonzero(truth)
    n_neg = truth.size - n_pos
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    method: str
    replicate: int
    mse: float
    var_yhat: float
    fpr: Optional[float] = None
    fnr: Optional[float] = None
    auc: Optional[float] = None
    per_view: list = field(default_factory=list)  # dicts with view, fpr, fnr, auc
    scenario: Optional[int] = None

    def row(self) -> dict:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "replicate": self.replicate,
            "MSE": self.mse,
            "VarYhat": self.var_yhat,
            "FPR": self.fpr,
            "FNR": self.fnr,
            "AUC": self.auc,
        }


def selection_report(feature_scores: Sequence[np.ndarray], truths: Sequence[np.ndarray], threshold: float = 0.5):
    """Per-view rates and their view average.  Returns (per_view, fpr, fnr, auc)."""
    per_view = []
    for m, (s, t) in enumerate(zip(feature_scores, truths), start=1):
        fpr, fnr = selection_rates(s, t, threshold)
        per_view.append({"view": m, "fpr": fpr, "fnr": fnr, "auc": auc(s, t)})
    if not per_view:
        return per_view, None, None, None
    mean = lambda k: float(np.mean([d[k] for d in per_view]))  # noqa: E731
    return per_view, mean("fpr"), mean("fnr"), mean("auc")


def evaluate(
    method: str,
    replicate: int,
    y,
    y_hat,
    feature_scores: Optional[Sequence[np.ndarray]] = None,
    truths: Optional[Sequence[np.ndarray]] = None,
    threshold: float = 0.5,
    scenario: Optional[int] = None,
) -> MetricsReport:
    rep = MetricsReport(method, replicate, mse(y, y_hat), var_pred(y_hat), scenario=scenario)
    if feature_scores is not None:
        rep.per_view, rep.fpr, rep.fnr, rep.auc = selection_report(feature_scores, truths, threshold)
    return rep
