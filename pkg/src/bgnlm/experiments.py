"""Replicated recovery experiments: kepler, mass, logic and enumeration."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data_io import SyntheticSpec, gen_synthetic
from .errors import NonFiniteOutput
from .features import evaluate, flat_key, is_redundant
from .glm import GAUSSIAN, log_marginal
from .gmjmcmc import Chain, GMJMCMCConfig
from .mjmcmc import bits
from .model_space import group_posteriors, posterior, prior_a
from .parallel import aggregate, run_parallel, successful
from .predictor import detected, detection_metrics

log = logging.getLogger(__name__)


def logic_config(n: int = 1000) -> GMJMCMCConfig:
    # many short phases with multiplication-heavy mutation: the interaction
    # terms are built up one factor per evolution
    return GMJMCMCConfig(s=20, T=500, N_init=20, N_expl=20, N_final=500, kind_probs=(0.1, 0.2, 0.5, 0.2),
                         a="bic", D=5, L=20, Q=20, transforms="G1")


def kepler_config() -> GMJMCMCConfig:
    return GMJMCMCConfig(s=20, T=200, N_init=20, N_expl=20, N_final=500, a="bic", D=5, L=15, Q=15,
                         transforms="G1")


def mass_config() -> GMJMCMCConfig:
    return GMJMCMCConfig(s=20, T=20, N_init=50, N_expl=50, N_final=500, a="bic", D=5, L=15, Q=15,
                         transforms="G2")


DEFAULTS = {
    "logic": dict(n=1000, noise_sd=1.0, threshold=0.5, config=logic_config),
    "kepler": dict(n=223, noise_sd=0.01, threshold=0.25, config=kepler_config),
    "mass": dict(n=200, noise_sd=0.01, threshold=0.25, config=mass_config),
}


@dataclass
class DetectionResult:
    name: str
    B: int
    truths: list
    detections: list = field(default_factory=list)
    detections_single: list = field(default_factory=list)
    elapsed: float = 0.0

    def metrics(self, single: bool = False) -> dict:
        return detection_metrics(self.detections_single if single else self.detections, self.truths)

    def class_rate(self, single: bool = False) -> float:
        """Fraction of runs detecting at least one member of any truth class."""
        runs = self.detections_single if single else self.detections
        every = frozenset().union(*self.truths)
        return sum(bool(set(r) & every) for r in runs) / len(runs)


def _detections(summaries, threshold, truths=(), X=None):
    merged = aggregate(summaries)
    flat = {}
    for r in summaries:
        flat.update(r.flat_keys)
    grouped = group_posteriors(merged, lambda k: flat.get(k, k))
    found = detected(grouped, threshold)
    if X is None:
        return found
    feats = {}
    for r in summaries:
        if r.store is not None:
            feats.update({flat_key(f): f for f in r.store.features.values()})
    return {identical_truth(k, feats, truths, X) for k in found}


def identical_truth(key, features, truths, X, tol=1e-6):
    """Map a detected feature onto a truth key when both give the same column up to an affine map.

    This catches algebraically identical rewrites such as cbrt(P)*cbrt(P*M)
    for cbrt(P*P*M), which share no structural key.
    """
    every = set().union(*truths) if truths else set()
    if key in every or key not in features:
        return key
    cache = {}
    try:
        evaluate(features[key], X, cache)
    except NonFiniteOutput:
        return key
    for t in sorted(every):
        if t in features:
            other = features[t]
        else:
            other = _truth_features(truths).get(t)
        if other is None:
            continue
        if is_redundant(features[key], [other], X, cache, tol=tol):
            return t
    return key


def _truth_features(truths):
    from .data_io import kepler_truth_features, logic_truth_features, mass_truth_features
    out = {}
    for fn in (kepler_truth_features, mass_truth_features, logic_truth_features):
        out.update({flat_key(f): f for f in fn()})
    return out


def detection_experiment(name: str, replicates: int = 10, B: int = 4, base_seed: int = 0,
                         config: Optional[GMJMCMCConfig] = None, threshold: Optional[float] = None,
                         n: Optional[int] = None, noise_sd: Optional[float] = None,
                         workers: Optional[int] = None, match_identical: Optional[bool] = None) -> DetectionResult:
    """Replicate data generation and B-chain fits; also records the first chain alone (B = 1).

    With ``match_identical`` (default for kepler and mass) a detected feature
    whose column is identical to a true feature up to an affine map counts as
    that true feature.
    """
    if match_identical is None:
        match_identical = name != "logic"
    d = DEFAULTS[name]
    cfg = config or d["config"]()
    thr = d["threshold"] if threshold is None else threshold
    n = d["n"] if n is None else n
    noise_sd = d["noise_sd"] if noise_sd is None else noise_sd
    res = DetectionResult(name, B, [])
    t0 = time.perf_counter()
    for r in range(replicates):
        ds = gen_synthetic(SyntheticSpec(name, n, noise_sd, base_seed + r))
        res.truths = [set(c) for c in ds.truths]
        runs = successful(run_parallel(ds.X, ds.y, cfg, B, base_seed=1000 * (base_seed + r),
                                       workers=workers, keep_store=match_identical))
        X = ds.X if match_identical else None
        res.detections.append(_detections(runs, thr, res.truths, X))
        res.detections_single.append(_detections(runs[:1], thr, res.truths, X))
        log.info("%s replicate %d: %s", name, r, sorted(res.detections[-1]))
    res.elapsed = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------- enumeration


def exact_posterior(X, y, a: float, family=GAUSSIAN) -> dict[str, float]:
    """Posterior over all subsets of the columns of X by brute force."""
    m = X.shape[1]
    la = math.log(a)
    keys, vals = [], []
    for mask in range(1 << m):
        idx = bits(mask)
        keys.append("|".join(sorted(f"x{i}" for i in idx)))
        vals.append(log_marginal([X[:, i] for i in idx], y, family) + la * len(idx))
    v = np.array(vals)
    p = np.exp(v - np.logaddexp.reduce(v))
    return dict(zip(keys, p))


def enumeration_data(seed: int, n: int = 100, m: int = 4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    beta = np.array([0.6, 0.0, -0.4, 0.2][:m] + [0.0] * max(0, m - 4))
    y = X @ beta + rng.normal(size=n)
    return X, y


def enumeration_config(m: int = 4, budget: Optional[int] = None) -> GMJMCMCConfig:
    return GMJMCMCConfig(s=m, T=1, D=0, Q=m, L=m, N_final=(1 << m) if budget is None else budget,
                         max_final_steps=budget, a="aic")


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def enumeration_experiment(replicates: int = 10, budget: int = 500, base_seed: int = 0, m: int = 4) -> list[dict]:
    """GMJMCMC with D = 0 against the brute-force posterior; returns one row per replicate."""
    rows = []
    for r in range(replicates):
        X, y = enumeration_data(base_seed + r, m=m)
        cfg = enumeration_config(m, budget)
        exact = exact_posterior(X, y, prior_a(cfg.a, len(y)))
        chain = Chain(X, y, cfg, seed=base_seed + r)
        chain.run()
        est = posterior(chain.store)
        rows.append({"replicate": r, "models": len(chain.store), "TV": total_variation(est, exact)})
    return rows


# ------------------------------------------------------------------ tables


def format_detection_table(res: DetectionResult, names: Optional[dict] = None) -> str:
    met = res.metrics()
    lines = [f"{res.name}: {len(res.detections)} replicates, B = {res.B}"]
    for c, p in zip(res.truths, met["power"]):
        label = " | ".join(sorted(c))
        lines.append(f"  {label:<50s} {p:6.3f}")
    lines.append(f"  {'Overall power':<50s} {met['Pow']:6.3f}")
    lines.append(f"  {'FP':<50s} {met['FP']:6.3f}")
    lines.append(f"  {'FDR':<50s} {met['FDR']:6.3f}")
    return "\n".join(lines)


def format_enumeration_table(rows: Sequence[dict]) -> str:
    lines = ["replicate  models        TV"]
    for r in rows:
        lines.append(f"{r['replicate']:9d}  {r['models']:6d}  {r['TV']:.2e}")
    return "\n".join(lines)
