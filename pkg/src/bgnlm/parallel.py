"""Independent chains and their mass-weighted aggregation."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import BGNLMError
from .gmjmcmc import Chain, GMJMCMCConfig, RunSummary
from .model_space import VisitedStore

log = logging.getLogger(__name__)


def chain_weights(summaries: Sequence[RunSummary], mode: str = "mass_weighted") -> np.ndarray:
    """u_b: softmax of the log masses s_b, or uniform."""
    B = len(summaries)
    if B == 0:
        raise ValueError("need at least one summary")
    if mode == "uniform":
        return np.full(B, 1.0 / B)
    if mode != "mass_weighted":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    s = np.array([r.mass_s_b for r in summaries], dtype=float)
    return np.exp(s - logsumexp(s))


def aggregate(summaries: Sequence[RunSummary], mode: str = "mass_weighted") -> dict[str, float]:
    """Merged inclusion probabilities sum_b u_b p_b; features missing from a chain count as 0 there."""
    u = chain_weights(summaries, mode)
    keys = sorted({k for r in summaries for k in r.feature_posteriors})
    out = {}
    for k in keys:
        out[k] = float(sum(ub * r.feature_posteriors.get(k, 0.0) for ub, r in zip(u, summaries)))
    return out


def _run_one(args) -> RunSummary:
    X, y, cfg, seed, keep_store = args
    try:
        res = Chain(X, y, cfg, seed).run()
    except BGNLMError as exc:
        return RunSummary({}, float("-inf"), 0, seed, failed=True, message=f"{type(exc).__name__}: {exc}")
    if not keep_store:
        res.store = None
    return res


def run_parallel(X, y, cfg: GMJMCMCConfig, B: int, base_seed: int = 0, workers: Optional[int] = None,
                 keep_store: bool = True) -> list[RunSummary]:
    """Run chains with seeds ``base_seed + b``.

    ``workers`` processes are used (default: ``min(B, cpu count)``); with one
    worker the chains run in this process.  Chains that fail are returned
    with ``failed=True`` and are skipped by :func:`successful`.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    cfg.validate()
    jobs = [(X, y, cfg, base_seed + b, keep_store) for b in range(B)]
    workers = min(B, workers or os.cpu_count() or 1)
    if workers <= 1:
        out = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_run_one, jobs))
    for r in out:
        if r.failed:
            log.warning("chain with seed %d failed: %s", r.seed, r.message)
    return out


def successful(summaries: Sequence[RunSummary]) -> list[RunSummary]:
    ok = [r for r in summaries if not r.failed or r.model_count > 0]
    if not ok:
        raise BGNLMError("every chain failed")
    return ok


def merged_store(summaries: Sequence[RunSummary]) -> VisitedStore:
    """Union of the chains' visited models (only used for prediction, not for aggregation)."""
    out = VisitedStore()
    for r in summaries:
        if r.store is not None:
            out.merge(r.store)
    return out


def write_report_csv(summaries: Sequence[RunSummary], merged: dict, path, names=None, features=None) -> None:
    from .features import render

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_key", "aggregated_posterior", "chain_min", "chain_max", "expression"])
        for k, p in sorted(merged.items(), key=lambda kv: -kv[1]):
            per = [r.feature_posteriors.get(k, 0.0) for r in summaries]
            expr = render(features[k], names) if features and k in features else k
            w.writerow([k, repr(p), repr(min(per)), repr(max(per)), expr])


def write_report_json(summaries: Sequence[RunSummary], merged: dict, path, mode="mass_weighted") -> None:
    u = chain_weights(summaries, mode)
    doc = {
        "aggregation": mode,
        "merged": merged,
        "chains": [dict(r.to_dict(), weight=float(ub)) for r, ub in zip(summaries, u)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
