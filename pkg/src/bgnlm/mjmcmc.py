"""Mode-jumping Metropolis-Hastings over inclusion vectors of a fixed search space.

Models are represented as integer bit masks over the ``s`` features of the
current search space.  One mode jump is

1. a large jump (independent bit flips, rate ``large_jump_flip_prob``),
2. a local optimisation (greedy best-flip ascent or simulated annealing),
3. a small symmetric randomisation giving the proposal,
4. backward auxiliaries drawn the same way from the proposal,

accepted with min{1, pi(m*) q_r(m | m_1) / (pi(m) q_r(m* | m*_1))}.  With
probability ``mh_step_prob`` a plain single-flip Metropolis step is taken
instead.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NonFiniteLikelihood, NonFiniteOutput, SingularDesign
from .features import Feature, count_projections, evaluate
from .glm import FamilySpec, GaussianGram, fit_model, mc_marginal
from .model_space import ModelStructure, VisitedStore

log = logging.getLogger(__name__)


@dataclass
class KernelConfig:
    large_jump_flip_prob: float = 0.35
    local_steps: int = 20
    local_method: str = "greedy"
    randomize_flip_prob: float = 0.05
    mh_step_prob: float = 0.7
    sa_initial_temp: float = 10.0
    sa_cooling: float = 0.7

    def validate(self) -> None:
        if not 0.0 < self.randomize_flip_prob < 0.5:
            raise ValueError("randomize_flip_prob must lie in (0, 0.5)")
        if not 0.0 <= self.large_jump_flip_prob <= 1.0:
            raise ValueError("large_jump_flip_prob must lie in [0, 1]")
        if not 0.0 <= self.mh_step_prob <= 1.0:
            raise ValueError("mh_step_prob must lie in [0, 1]")
        if self.local_steps < 0:
            raise ValueError("local_steps must be non-negative")
        if self.local_method not in ("greedy", "simulated_annealing"):
            raise ValueError(f"unknown local_method {self.local_method!r}")


@dataclass
class ChainState:
    current: int
    log_target: float
    steps: int = 0
    accepted: int = 0


def bits(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def to_mask(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


def _flip_mask(s: int, p: float, rng) -> int:
    if p <= 0.0 or s == 0:
        return 0
    return to_mask(np.flatnonzero(rng.random(s) < p))


class SearchSpace:
    """A population of ``s`` features with model evaluation backed by a store.

    Calling the object with a bit mask returns the log target
    (log prior + log marginal).  Models above the size limit, or with a
    singular design, get ``-inf``.  Every evaluated model is written to the
    store once; revisits only bump its visit count.
    """

    def __init__(
        self,
        features: Sequence[Feature],
        X: np.ndarray,
        y: np.ndarray,
        family: FamilySpec,
        log_a: float,
        max_features: int,
        store: VisitedStore,
        columns: Optional[dict] = None,
        mc_strategy=None,
        mc_seed: int = 0,
        use_cache: bool = True,
    ):
        self.features = list(features)
        self.size = len(self.features)
        self.max_features = max_features
        self.X, self.y, self.family = X, y, family
        self.log_a = log_a
        self.store = store
        store.register_features(self.features)
        self.columns = {} if columns is None else columns
        self.cols = [evaluate(f, X, self.columns) for f in self.features]
        self.keys = [f.key for f in self.features]
        self.complexity = [float(f.total_width) for f in self.features]
        self.mc_strategy = mc_strategy
        self.mc_seed = mc_seed
        self.gram = None
        if family.family == "gaussian" and mc_strategy is None:
            self.gram = GaussianGram(np.column_stack(self.cols) if self.cols else np.zeros((len(y), 0)), y)
        self.cache: dict[int, float] = {}
        self._records: dict = {}
        self.use_cache = use_cache
        self.evaluations = 0

    def model_of(self, mask: int) -> ModelStructure:
        return ModelStructure.of(self.keys[i] for i in bits(mask))

    def __call__(self, mask: int) -> float:
        hit = self.cache.get(mask) if self.use_cache else None
        if hit is not None:
            rec = self._records.get(mask)
            if rec is not None:
                rec.visit_count += 1
            return hit
        value = self._evaluate(mask)
        self.cache[mask] = value
        return value

    def _evaluate(self, mask: int) -> float:
        idx = bits(mask)
        if len(idx) > self.max_features:
            return -math.inf
        model = self.model_of(mask)
        rec = self.store.get(model.key)
        if rec is not None:
            rec.visit_count += 1
            self._records[mask] = rec
            return rec.log_mass
        self.evaluations += 1
        try:
            lml, beta = self._marginal(idx, model)
        except (SingularDesign, NonFiniteOutput, NonFiniteLikelihood) as exc:
            log.debug("model %s has no mass: %s", model.key, exc)
            return -math.inf
        log_prior = self.log_a * sum(self.complexity[i] for i in idx)
        rec = self.store.record(model, lml, log_prior, beta)
        self._records[mask] = rec
        return rec.log_mass

    def _marginal(self, idx, model):
        if self.gram is not None:
            return self.gram.log_marginal(idx)
        feats = [self.features[i] for i in idx]
        cols = [self.cols[i] for i in idx]
        lml, beta = fit_model(cols, self.y, self.family)
        if self.mc_strategy is not None and any(count_projections(f) for f in feats):
            rng = np.random.default_rng([self.mc_seed, zlib.crc32(model.key.encode())])
            lml = mc_marginal(feats, self.X, self.y, self.family,
                              self.mc_strategy.sigma_alpha, self.mc_strategy.mc_samples, rng)
        return lml, beta

    def inclusion(self) -> np.ndarray:
        """Inclusion probabilities of the population members over models seen in this space."""
        masks = [m for m, v in self.cache.items() if v > -math.inf]
        out = np.zeros(self.size)
        if not masks:
            return out
        lm = np.array([self.cache[m] for m in masks])
        w = np.exp(lm - lm.max())
        w /= w.sum()
        for m, wi in zip(masks, w):
            for i in bits(m):
                out[i] += wi
        return np.minimum(out, 1.0)


# ------------------------------------------------------------- proposals


def large_jump(m: int, s: int, cfg: KernelConfig, rng, max_features: Optional[int] = None) -> int:
    out = m ^ _flip_mask(s, cfg.large_jump_flip_prob, rng)
    if max_features is not None:
        on = bits(out)
        excess = len(on) - max_features
        if excess > 0:
            for i in rng.choice(on, size=excess, replace=False):
                out &= ~(1 << int(i))
    return out


def randomize(m: int, s: int, cfg: KernelConfig, rng) -> int:
    return m ^ _flip_mask(s, cfg.randomize_flip_prob, rng)


def log_q_r(a: int, b: int, s: int, p: float) -> float:
    """Log density of the randomisation kernel between two models (symmetric)."""
    h = (a ^ b).bit_count()
    return h * math.log(p) + (s - h) * math.log1p(-p)


def local_optimize(m0: int, cfg: KernelConfig, evaluator, rng=None) -> int:
    s = evaluator.size
    if cfg.local_steps == 0 or s == 0:
        return m0
    if cfg.local_method == "simulated_annealing":
        return _anneal(m0, cfg, evaluator, rng)
    cur, cur_v = m0, evaluator(m0)
    for _ in range(cfg.local_steps):
        best, best_v = cur, cur_v
        for i in range(s):
            nb = cur ^ (1 << i)
            v = evaluator(nb)
            if v > best_v:
                best, best_v = nb, v
        if best == cur:
            break
        cur, cur_v = best, best_v
    return cur


def _anneal(m0, cfg, evaluator, rng):
    s = evaluator.size
    cur, cur_v = m0, evaluator(m0)
    best, best_v = cur, cur_v
    temp = cfg.sa_initial_temp
    for _ in range(cfg.local_steps):
        nb = cur ^ (1 << int(rng.integers(s)))
        v = evaluator(nb)
        if v > cur_v or (v > -math.inf and math.log(rng.random()) < (v - cur_v) / temp):
            cur, cur_v = nb, v
            if v > best_v:
                best, best_v = nb, v
        temp *= cfg.sa_cooling
    return best


def acceptance_log_ratio(pi_cur, pi_prop, m, m1_back, m_prop, m1_fwd, s, p) -> float:
    if pi_prop == -math.inf:
        return -math.inf
    if pi_cur == -math.inf:
        return math.inf
    return (pi_prop + log_q_r(m, m1_back, s, p)) - (pi_cur + log_q_r(m_prop, m1_fwd, s, p))


def mjmcmc_step(state: ChainState, cfg: KernelConfig, evaluator, rng) -> ChainState:
    s = evaluator.size
    Q = evaluator.max_features
    state.steps += 1
    if s == 0:
        return state
    if rng.random() < cfg.mh_step_prob:
        prop = state.current ^ (1 << int(rng.integers(s)))
        v = evaluator(prop)
        if v > -math.inf and (v >= state.log_target or math.log(rng.random()) < v - state.log_target):
            state.current, state.log_target = prop, v
            state.accepted += 1
        return state

    p = cfg.randomize_flip_prob
    m = state.current
    m0_fwd = large_jump(m, s, cfg, rng, Q)
    m1_fwd = local_optimize(m0_fwd, cfg, evaluator, rng)
    m_prop = randomize(m1_fwd, s, cfg, rng)
    pi_prop = evaluator(m_prop)
    m0_back = large_jump(m_prop, s, cfg, rng, Q)
    m1_back = local_optimize(m0_back, cfg, evaluator, rng)
    lr = acceptance_log_ratio(state.log_target, pi_prop, m, m1_back, m_prop, m1_fwd, s, p)
    if lr >= 0 or math.log(rng.random()) < lr:
        state.current, state.log_target = m_prop, pi_prop
        state.accepted += 1
    return state


def run_mjmcmc(evaluator, cfg: KernelConfig, n_steps: int, rng, start: int = 0, trace: bool = False):
    """Plain MJMCMC over one search space; optionally returns the visited chain."""
    state = ChainState(start, evaluator(start))
    path = [] if trace else None
    for _ in range(n_steps):
        mjmcmc_step(state, cfg, evaluator, rng)
        if trace:
            path.append(state.current)
    return state, path
