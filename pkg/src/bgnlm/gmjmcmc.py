"""Genetically modified MJMCMC: MJMCMC phases over evolving feature populations.

A chain starts from a population of the best original covariates (marginal
screening), runs MJMCMC over it, then repeatedly replaces the features with
low within-phase inclusion probability by newly generated ones and runs MJMCMC
again.  The last phase continues until a requested number of new unique
models has been evaluated.  Posterior summaries use every model visited in the
whole run.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alpha import KINDS, AlphaStrategy, generate_feature
from .errors import BGNLMError, ConfigError, SingularDesign, NonFiniteLikelihood
from .features import Feature, Input, flat_key, inputs_used, is_redundant
from .glm import GAUSSIAN, FamilySpec, fit_model
from .mjmcmc import ChainState, KernelConfig, SearchSpace, mjmcmc_step, to_mask
from .model_space import VisitedStore, inclusion_probabilities, prior_a
from .transforms import TransformLibrary

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 100


@dataclass
class GMJMCMCConfig:
    """Schedule, generation and prior settings of one chain.

    ``kind_probs`` holds (P_p, P_mo, P_mu, P_i) for projection, modification,
    multiplication and original-input replacements.
    """

    s: int = 20
    T: int = 10
    N_init: int = 200
    N_expl: int = 100
    N_final: int = 1000
    kind_probs: tuple[float, float, float, float] = (0.1, 0.3, 0.4, 0.2)
    keep_threshold: float = 0.5
    preselect_q0: Optional[int] = None
    protected_count: int = 3
    parent_floor: float = 0.1
    D: int = 5
    L: int = 20
    Q: int = 20
    a: object = "aic"
    strategy: AlphaStrategy = field(default_factory=AlphaStrategy)
    transforms: object = "G1"
    family: FamilySpec = GAUSSIAN
    kernel: KernelConfig = field(default_factory=KernelConfig)
    max_final_steps: Optional[int] = None

    def validate(self) -> None:
        p = np.asarray(self.kind_probs, dtype=float)
        if p.shape != (4,) or np.any(p < 0):
            raise ConfigError("kind probabilities must be four non-negative numbers")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ConfigError(f"kind probabilities must sum to 1 (got {p.sum():.6g})")
        if p[3] == 0 and self.protected_count == 0:
            raise ConfigError("P_i = 0 with an empty protected set makes the chain reducible")
        for name in ("s", "T", "D", "L", "Q"):
            v = getattr(self, name)
            if v < (0 if name == "D" else 1):
                raise ConfigError(f"{name} must be positive (got {v})")
        for name in ("N_init", "N_expl", "N_final"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.s < min(self.Q, self.L):
            raise ConfigError(f"population size s={self.s} must be at least min(Q, L)={min(self.Q, self.L)}")
        if not 0.0 <= self.keep_threshold <= 1.0:
            raise ConfigError("keep_threshold must lie in [0, 1]")
        if self.parent_floor < 0:
            raise ConfigError("parent_floor must be non-negative")
        if self.L < 2 and p[0] > 0:
            raise ConfigError("projections need L >= 2")
        try:
            self.kernel.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def library(self) -> TransformLibrary:
        if isinstance(self.transforms, TransformLibrary):
            return self.transforms
        return TransformLibrary.from_spec(self.transforms)


@dataclass
class Population:
    features: list[Feature]
    protected: frozenset = frozenset()

    def __len__(self):
        return len(self.features)

    @property
    def keys(self) -> list[str]:
        return [f.key for f in self.features]


@dataclass
class RunSummary:
    """What one chain hands to the aggregation step."""

    feature_posteriors: dict
    mass_s_b: float
    model_count: int
    seed: int
    model_posteriors: Optional[dict] = None
    failed: bool = False
    message: str = ""
    store: Optional[VisitedStore] = field(default=None, repr=False, compare=False)
    elapsed: float = 0.0
    flat_keys: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mass_s_b": self.mass_s_b,
            "model_count": self.model_count,
            "failed": self.failed,
            "message": self.message,
            "elapsed": self.elapsed,
            "feature_posteriors": self.feature_posteriors,
            "flat_keys": self.flat_keys,
        }


# ------------------------------------------------------------ initialisation


def univariate_scores(X, y, family: FamilySpec) -> np.ndarray:
    out = np.full(X.shape[1], -math.inf)
    for j in range(X.shape[1]):
        try:
            out[j] = fit_model([X[:, j]], y, family)[0]
        except (SingularDesign, NonFiniteLikelihood):
            pass
    return out


def init_population(X, y, cfg: GMJMCMCConfig, rng) -> Population:
    """S_0: the ``preselect_q0`` best covariates by univariate log marginal, padded at random."""
    m = X.shape[1]
    if m < 1:
        raise ValueError("need at least one input covariate")
    scores = univariate_scores(X, y, cfg.family)
    order = np.argsort(-scores, kind="stable")
    q0 = min(m, cfg.s) if cfg.preselect_q0 is None else min(cfg.preselect_q0, m, cfg.s)
    chosen = [int(j) for j in order[:q0]]
    rest = [int(j) for j in order[q0:]]
    if len(chosen) < cfg.s and rest:
        extra = rng.permutation(rest)[: cfg.s - len(chosen)]
        chosen += [int(j) for j in extra]
    feats = [Input(j) for j in chosen]
    protected = frozenset(f.key for f in feats[: cfg.protected_count])
    return Population(feats, protected)


# ----------------------------------------------------------------- evolution


def draw_kind(probs, rng) -> str:
    return KINDS[int(rng.choice(4, p=np.asarray(probs, dtype=float)))]


def retained(pop: Population, incl: np.ndarray, cfg: GMJMCMCConfig) -> list[int]:
    """Indices kept across a transition: above threshold, the top quarter, and the protected set."""
    s = len(pop)
    keep = {i for i in range(s) if incl[i] >= cfg.keep_threshold}
    top = np.argsort(-incl, kind="stable")[: math.ceil(cfg.s / 4)]
    keep.update(int(i) for i in top)
    keep.update(i for i, f in enumerate(pop.features) if f.key in pop.protected)
    return sorted(keep)


def evolve_population(
    pop: Population,
    incl: np.ndarray,
    originals: Sequence[Feature],
    cfg: GMJMCMCConfig,
    lib: TransformLibrary,
    X,
    y,
    rng,
    cache: Optional[dict] = None,
    stats: Optional[dict] = None,
) -> Population:
    """Replace weak members of ``pop`` by freshly generated features.

    Parents for new features come from the current population and the
    original covariates, weighted by within-phase inclusion plus
    ``parent_floor``.  A candidate that is redundant, too deep, too wide or
    whose weights could not be fitted is re-drawn; after ``MAX_ATTEMPTS``
    failures an unused original covariate is inserted instead.
    """
    if cache is None:
        cache = {}
    keep = retained(pop, incl, cfg)
    new = [pop.features[i] for i in keep]
    if len(keep) == len(pop) and len(pop) >= cfg.s:
        return Population(new, pop.protected)

    weight = {f.key: float(incl[i]) + cfg.parent_floor for i, f in enumerate(pop.features)}
    parents = list(pop.features)
    for f in originals:
        if f.key not in weight:
            weight[f.key] = cfg.parent_floor
            parents.append(f)
    w = np.array([weight[f.key] for f in parents])
    w = w / w.sum() if w.sum() > 0 else None

    while len(new) < cfg.s:
        feat = None
        for _ in range(MAX_ATTEMPTS):
            kind = draw_kind(cfg.kind_probs, rng)
            try:
                cand = generate_feature(kind, parents, originals, lib, cfg.strategy, X, y, cfg.family,
                                        rng, max_depth=cfg.D, max_width=cfg.L, weights=w, cache=cache)
            except (BGNLMError, ValueError) as exc:
                log.debug("candidate %s rejected: %s", kind, exc)
                continue
            if cand.depth > cfg.D or is_redundant(cand, new, X, cache) or _reparametrises_input(cand, X, cache):
                continue
            feat = cand
            if stats is not None:
                stats[kind] = stats.get(kind, 0) + 1
            break
        if feat is None:
            present = {f.key for f in new}
            spare = [f for f in originals if f.key not in present and not is_redundant(f, new, X, cache)]
            if not spare:
                log.debug("no admissible feature left; population stays at %d", len(new))
                break
            feat = spare[int(rng.integers(len(spare)))]
            if stats is not None:
                stats["fallback"] = stats.get("fallback", 0) + 1
        new.append(feat)
    return Population(new, pop.protected)


def _reparametrises_input(f: Feature, X, cache) -> bool:
    """True for a non-input feature that is affine in the single covariate it uses.

    Such a feature (e.g. any transform of a binary covariate) spans the same
    model space as the covariate itself at a higher complexity cost.
    """
    if isinstance(f, Input):
        return False
    used = inputs_used(f)
    return len(used) == 1 and is_redundant(f, [Input(next(iter(used)))], X, cache)


# --------------------------------------------------------------------- chain


class Chain:
    """One GMJMCMC chain; ``run`` returns the :class:`RunSummary`."""

    def __init__(self, X, y, cfg: GMJMCMCConfig, seed: int = 0, log_every: bool = True):
        cfg.validate()
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.cfg = cfg
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.lib = cfg.library()
        self.log_a = math.log(prior_a(cfg.a, self.y.shape[0]))
        self.store = VisitedStore()
        self.columns: dict = {}
        self.originals = [Input(j) for j in range(self.X.shape[1])]
        self.populations: list[list[str]] = []
        self.gen_stats: dict = {}
        self.log_every = log_every

    def _space(self, pop: Population) -> SearchSpace:
        mc = self.cfg.strategy if self.cfg.strategy.kind == "fully_bayes" else None
        return SearchSpace(pop.features, self.X, self.y, self.cfg.family, self.log_a, self.cfg.Q,
                           self.store, self.columns, mc_strategy=mc, mc_seed=self.seed)

    def _phase(self, space: SearchSpace, start: int, steps: int) -> ChainState:
        state = ChainState(start, space(start))
        for _ in range(steps):
            mjmcmc_step(state, self.cfg.kernel, space, self.rng)
        return state

    def _final_phase(self, space: SearchSpace, start: int) -> ChainState:
        cfg = self.cfg
        state = ChainState(start, space(start))
        target = len(self.store) + cfg.N_final
        reachable = sum(math.comb(space.size, k) for k in range(min(cfg.Q, space.size) + 1))
        cap = cfg.max_final_steps if cfg.max_final_steps is not None else max(50 * cfg.N_final, 1000)
        steps = 0
        while len(self.store) < target and steps < cap and len(space.cache) < reachable:
            mjmcmc_step(state, cfg.kernel, space, self.rng)
            steps += 1
        return state

    def _log(self, t: int, space: SearchSpace, pop: Population) -> None:
        if not (self.log_every and log.isEnabledFor(logging.INFO)):
            return
        best = max((r.log_mass for r in self.store.records.values()), default=-math.inf)
        log.info("seed %d phase %d: store %d models, best log posterior %.4f, population [%s]",
                 self.seed, t, len(self.store), best, ", ".join(pop.keys))

    @staticmethod
    def _carry(state: ChainState, old: Population, new: Population) -> int:
        """Current model re-expressed in the new population (features that survived)."""
        keys = {old.features[i].key for i in range(len(old)) if (state.current >> i) & 1}
        return to_mask(i for i, f in enumerate(new.features) if f.key in keys)

    def run(self) -> RunSummary:
        cfg = self.cfg
        t0 = time.perf_counter()
        failed, message = False, ""
        try:
            pop = init_population(self.X, self.y, cfg, self.rng)
            space = self._space(pop)
            self.populations.append(pop.keys)
            if cfg.T == 1:
                state = self._final_phase(space, 0)
            else:
                state = self._phase(space, 0, cfg.N_init)
            self._log(0, space, pop)
            for t in range(1, cfg.T):
                incl = space.inclusion()
                new = evolve_population(pop, incl, self.originals, cfg, self.lib, self.X, self.y, self.rng,
                                        cache=self.columns, stats=self.gen_stats)
                start = self._carry(state, pop, new)
                pop, space = new, self._space(new)
                self.populations.append(pop.keys)
                if t < cfg.T - 1:
                    state = self._phase(space, start, cfg.N_expl)
                else:
                    state = self._final_phase(space, start)
                self._log(t, space, pop)
        except BGNLMError as exc:
            failed, message = True, f"{type(exc).__name__}: {exc}"
            log.warning("chain %d stopped early: %s", self.seed, message)
        return self.summary(failed, message, time.perf_counter() - t0)

    def summary(self, failed=False, message="", elapsed=0.0) -> RunSummary:
        if len(self.store):
            fp = inclusion_probabilities(self.store)
        else:
            fp, failed = {}, True
            message = message or "no models visited"
        flat = {k: flat_key(self.store.features[k]) for k in fp}
        return RunSummary(fp, float(self.store.log_mass), len(self.store), self.seed,
                          failed=failed, message=message, store=self.store, elapsed=elapsed, flat_keys=flat)


def run_chain(X, y, cfg: GMJMCMCConfig, seed: int = 0) -> RunSummary:
    return Chain(X, y, cfg, seed).run()
