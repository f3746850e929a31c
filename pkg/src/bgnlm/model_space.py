"""Model prior, the store of visited models, and posterior summaries.

Posteriors are renormalised over the visited set only: every model that was
ever evaluated contributes prior * marginal likelihood to a common
denominator kept in log space.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EmptyStore
from .features import Feature, complexity


@dataclass(frozen=True)
class ModelStructure:
    """A set of included features (the intercept is always present)."""

    feature_keys: tuple[str, ...]
    includes_intercept: bool = True

    @classmethod
    def of(cls, keys: Iterable[str], max_features: Optional[int] = None) -> "ModelStructure":
        keys = tuple(sorted(set(keys)))
        if max_features is not None and len(keys) > max_features:
            raise ValueError(f"model has {len(keys)} features, limit is {max_features}")
        return cls(keys)

    @property
    def key(self) -> str:
        return "|".join(self.feature_keys)

    @property
    def size(self) -> int:
        return len(self.feature_keys)

    def __contains__(self, feature_key) -> bool:
        return feature_key in self.feature_keys


@dataclass
class ModelRecord:
    model: ModelStructure
    log_marginal: float
    log_prior: float
    beta_hat: np.ndarray
    visit_count: int = 1

    @property
    def log_mass(self) -> float:
        return self.log_prior + self.log_marginal


def log_model_prior(complexities: Sequence[float], a: float) -> float:
    """Unnormalised log prior: log(a) * sum of complexities of included features."""
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie in (0, 1)")
    return math.log(a) * float(sum(complexities))


def prior_a(spec, n: Optional[int] = None) -> float:
    """Resolve a prior parameter: a number, ``"aic"`` (e^-2) or ``"bic"`` (e^(-2 log n))."""
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s == "aic":
            return math.exp(-2.0)
        if s == "bic":
            if n is None:
                raise ValueError("the 'bic' prior needs the sample size")
            return math.exp(-2.0 * math.log(n))
        spec = float(s)
    a = float(spec)
    if not 0.0 < a < 1.0:
        raise ValueError(f"prior a must lie in (0, 1), got {a}")
    return a


class VisitedStore:
    """Every model evaluated by a chain, keyed by its sorted feature keys."""

    def __init__(self):
        self.records: dict[str, ModelRecord] = {}
        self.features: dict[str, Feature] = {}
        self.log_mass = -math.inf

    def __len__(self):
        return len(self.records)

    def __contains__(self, model_key) -> bool:
        return model_key in self.records

    def get(self, model_key: str) -> Optional[ModelRecord]:
        return self.records.get(model_key)

    def register_features(self, features: Iterable[Feature]) -> None:
        for f in features:
            self.features.setdefault(f.key, f)

    def record(self, model: ModelStructure, log_marginal: float, log_prior: float, beta_hat) -> ModelRecord:
        """Insert a model, or bump its visit count if it is already known."""
        rec = self.records.get(model.key)
        if rec is not None:
            rec.visit_count += 1
            return rec
        rec = ModelRecord(model, float(log_marginal), float(log_prior), np.asarray(beta_hat, dtype=float))
        self.records[model.key] = rec
        self.log_mass = float(np.logaddexp(self.log_mass, rec.log_mass))
        return rec

    def merge(self, other: "VisitedStore") -> None:
        """Union with another store (used for the pooled model set of several chains)."""
        self.register_features(other.features.values())
        for rec in other.records.values():
            if rec.model.key not in self.records:
                self.record(rec.model, rec.log_marginal, rec.log_prior, rec.beta_hat)

    def log_masses(self) -> tuple[list[str], np.ndarray]:
        keys = list(self.records)
        return keys, np.array([self.records[k].log_mass for k in keys])


def record(store: VisitedStore, model, log_marginal, log_prior, beta_hat) -> VisitedStore:
    store.record(model, log_marginal, log_prior, beta_hat)
    return store


def posterior(store: VisitedStore) -> dict[str, float]:
    if not len(store):
        raise EmptyStore("no models visited")
    keys, lm = store.log_masses()
    p = np.exp(lm - logsumexp(lm))
    return dict(zip(keys, p.tolist()))


def inclusion_probabilities(store: VisitedStore) -> dict[str, float]:
    post = posterior(store)
    out: dict[str, float] = {}
    for key, p in post.items():
        for fk in store.records[key].model.feature_keys:
            out[fk] = out.get(fk, 0.0) + p
    return {k: min(v, 1.0) for k, v in out.items()}


def posterior_statistic(store: VisitedStore, stat: Callable[[ModelRecord], float]) -> float:
    post = posterior(store)
    return float(sum(stat(store.records[k]) * p for k, p in post.items()))


def group_posteriors(feature_posteriors: Mapping[str, float], keymap: Callable[[str], str]) -> dict[str, float]:
    """Sum feature posteriors over equivalence classes given by ``keymap``."""
    out: dict[str, float] = {}
    for k, p in feature_posteriors.items():
        g = keymap(k)
        out[g] = out.get(g, 0.0) + p
    return {k: min(v, 1.0) for k, v in out.items()}


def dump_csv(store: VisitedStore, path) -> None:
    post = posterior(store) if len(store) else {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_key", "log_marginal", "log_prior", "posterior", "size"])
        for key, rec in sorted(store.records.items(), key=lambda kv: -kv[1].log_mass):
            w.writerow([key, repr(rec.log_marginal), repr(rec.log_prior), repr(post.get(key, 0.0)), rec.model.size])


def model_complexity(features: Mapping[str, Feature], keys: Iterable[str]) -> float:
    return float(sum(complexity(features[k]) for k in keys))
