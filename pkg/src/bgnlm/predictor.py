"""Model-averaged prediction and evaluation metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateCorrelation, EmptyStore, FeatureEvalFailure, NonFiniteOutput
from .features import evaluate
from .glm import GAUSSIAN, FamilySpec
from .model_space import VisitedStore, posterior


@dataclass
class PredictionReport:
    mean: np.ndarray
    family: str
    threshold: float = 0.5
    classes: Optional[np.ndarray] = None
    metrics: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["row_id", "posterior_mean_or_prob"] + (["class"] if self.classes is not None else [])
            w.writerow(head)
            for i, v in enumerate(self.mean):
                row = [i, repr(float(v))]
                if self.classes is not None:
                    row.append(int(self.classes[i]))
                w.writerow(row)


def _columns(store: VisitedStore, keys: Iterable[str], X) -> dict:
    cache, out = {}, {}
    for k in keys:
        f = store.features.get(k)
        if f is None:
            raise FeatureEvalFailure(-1, k)
        try:
            out[k] = evaluate(f, X, cache)
        except NonFiniteOutput as exc:
            raise FeatureEvalFailure(exc.row, k) from None
        except IndexError as exc:
            raise FeatureEvalFailure(-1, k) from exc
    return out


def predictive_mean(store: VisitedStore, X_test, family: FamilySpec = GAUSSIAN, offset=None) -> np.ndarray:
    """Sum over visited models of the plug-in mean at beta_hat, weighted by the renormalised posterior."""
    if not len(store):
        raise EmptyStore("cannot predict from an empty store")
    X_test = np.asarray(X_test, dtype=float)
    post = posterior(store)
    used = {k for key, p in post.items() if p > 0 for k in store.records[key].model.feature_keys}
    cols = _columns(store, sorted(used), X_test)
    n = X_test.shape[0]
    if family.family == "gaussian":
        # the averaged mean is linear in beta, so coefficients can be averaged first
        intercept, coef = 0.0, {}
        for key, p in post.items():
            rec = store.records[key]
            intercept += p * rec.beta_hat[0]
            for k, b in zip(rec.model.feature_keys, rec.beta_hat[1:]):
                coef[k] = coef.get(k, 0.0) + p * b
        out = np.full(n, intercept)
        for k, b in coef.items():
            out += b * cols[k]
        return out
    out = np.zeros(n)
    off = 0.0 if offset is None else np.asarray(offset, dtype=float)
    for key, p in post.items():
        if p == 0.0:
            continue
        rec = store.records[key]
        eta = np.full(n, rec.beta_hat[0]) + off
        for k, b in zip(rec.model.feature_keys, rec.beta_hat[1:]):
            eta = eta + b * cols[k]
        out += p * family.inverse_link(eta)
    if family.family == "bernoulli":
        out = np.clip(out, 0.0, 1.0)
    return out


def predict(store: VisitedStore, X_test, family: FamilySpec = GAUSSIAN, threshold: float = 0.5,
            y_true=None, offset=None) -> PredictionReport:
    mean = predictive_mean(store, X_test, family, offset)
    return _report(mean, family, threshold, y_true)


def predict_chains(stores: Sequence[VisitedStore], weights: Sequence[float], X_test,
                   family: FamilySpec = GAUSSIAN, threshold: float = 0.5, y_true=None, offset=None) -> PredictionReport:
    """Chain-weighted combination of per-chain model-averaged predictions."""
    mean = sum(w * predictive_mean(s, X_test, family, offset) for s, w in zip(stores, weights))
    return _report(np.asarray(mean, dtype=float), family, threshold, y_true)


def _report(mean, family, threshold, y_true):
    classes = (mean >= threshold).astype(int) if family.family == "bernoulli" else None
    rep = PredictionReport(mean, family.family, threshold, classes)
    if y_true is not None:
        y_true = np.asarray(y_true, dtype=float)
        if classes is not None:
            rep.metrics = classification_metrics(y_true, classes)
        else:
            try:
                rep.metrics = regression_metrics(y_true, mean)
            except DegenerateCorrelation:
                rep.metrics = {"RMSE": _rmse(y_true, mean), "MAE": float(np.mean(np.abs(y_true - mean)))}
    return rep


# ------------------------------------------------------------------ metrics


def classification_metrics(y_true, y_pred) -> dict:
    """ACC, FNR and FPR; a rate whose denominator class is empty is left out."""
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    if not (np.isin(y_true, (0, 1)).all() and np.isin(y_pred, (0, 1)).all()):
        raise ValueError("classification metrics need binary entries")
    out = {"ACC": float(np.mean(y_true == y_pred))}
    pos, neg = y_true == 1, y_true == 0
    if pos.any():
        out["FNR"] = float(np.sum(pos & (y_pred == 0)) / pos.sum())
    if neg.any():
        out["FPR"] = float(np.sum(neg & (y_pred == 1)) / neg.sum())
    return out


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def regression_metrics(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.shape[0] < 2:
        raise ValueError("need two equal-length vectors with at least two entries")
    if np.ptp(y_true) == 0 or np.ptp(y_pred) == 0:
        raise DegenerateCorrelation("correlation is undefined for a constant vector")
    return {
        "RMSE": _rmse(y_true, y_pred),
        "MAE": float(np.mean(np.abs(y_true - y_pred))),
        "CORR": float(np.corrcoef(y_true, y_pred)[0, 1]),
    }


def detected(feature_posteriors: Mapping[str, float], threshold: float, keymap=None) -> set:
    """Keys (optionally mapped, e.g. to flat keys) with posterior strictly above ``threshold``."""
    keymap = keymap or (lambda k: k)
    return {keymap(k) for k, p in feature_posteriors.items() if p > threshold}


def detection_metrics(runs: Sequence[set], truths: Sequence, per_truth: bool = True) -> dict:
    """Power, false positives and false discovery rate over replicate runs.

    ``truths`` is a list of classes; a class is a key or a set of keys that
    are all counted as true positives.  A class is detected in a run if any
    member is.  Overall power averages over classes; FP and FDR average over
    runs, a run without detections contributing 0 to FDR.
    """
    if not runs:
        raise ValueError("need at least one run")
    classes = [frozenset([t]) if isinstance(t, str) else frozenset(t) for t in truths]
    all_true = frozenset().union(*classes) if classes else frozenset()
    N = len(runs)
    pow_class = [sum(bool(c & set(r)) for r in runs) / N for c in classes]
    fp = [len(set(r) - all_true) for r in runs]
    fdr = [f / len(r) if len(r) else 0.0 for f, r in zip(fp, runs)]
    out = {
        "power": pow_class,
        "Pow": float(np.mean(pow_class)) if classes else math.nan,
        "FP": float(np.mean(fp)),
        "FDR": float(np.mean(fdr)),
    }
    if per_truth:
        out["member_power"] = {k: sum(k in r for r in runs) / N for c in classes for k in sorted(c)}
    return out
