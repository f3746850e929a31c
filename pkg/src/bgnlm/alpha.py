"""Projection weights and random feature generation.

Four ways of fixing the weights of a new projection g(a0 + sum a_k F_k):

1. ``naive``       GLM fit of the response on the child columns, g ignored.
2. ``concave``     maximum likelihood of h(mu) = g(a0 + sum a_k F_k), children frozen.
3. ``deep``        as 2 but jointly over every nested projection weight as well.
4. ``fully_bayes`` every weight drawn from N(0, sigma_alpha^2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AlphaFitFailed, BGNLMError, DepthExceeded, NoConvergence, WidthExceeded
from .features import (
    Feature,
    Input,
    Modification,
    Multiplication,
    Projection,
    evaluate,
    flat_parameters,
    parameter_blocks,
    with_parameters,
)
from .glm import FamilySpec, design_from_columns, fit_mle
from .transforms import TransformLibrary

log = logging.getLogger(__name__)

STRATEGY_NAMES = {1: "naive", 2: "concave", 3: "deep", 4: "fully_bayes"}
KINDS = ("projection", "modification", "multiplication", "input")

OPT_MAX_ITER = 100
OPT_GRAD_TOL = 1e-6


@dataclass(frozen=True)
class AlphaStrategy:
    kind: str = "naive"
    sigma_alpha: float = 1.0
    mc_samples: int = 100

    def __post_init__(self):
        if self.kind not in STRATEGY_NAMES.values():
            raise ValueError(f"unknown alpha strategy {self.kind!r}")
        if self.sigma_alpha <= 0:
            raise ValueError("sigma_alpha must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")

    @classmethod
    def from_number(cls, k: int, sigma_alpha: float = 1.0, mc_samples: int = 100) -> "AlphaStrategy":
        try:
            return cls(STRATEGY_NAMES[int(k)], sigma_alpha, mc_samples)
        except KeyError:
            raise ValueError(f"strategy must be one of 1-4, got {k}") from None

    @property
    def number(self) -> int:
        return {v: k for k, v in STRATEGY_NAMES.items()}[self.kind]


# ------------------------------------------------------------ derivatives


def value_and_jacobian(f: Feature, X: np.ndarray, cache: Optional[dict] = None):
    """Feature column and its Jacobian w.r.t. :func:`flat_parameters` order.

    Returns ``(value, J)`` with ``J`` of shape (n, n_params), or ``None`` for
    ``J`` if a non-differentiable transform sits on a parameter path.
    """
    cache = {} if cache is None else cache
    n = X.shape[0]
    if isinstance(f, Input):
        return evaluate(f, X, cache), np.zeros((n, 0))
    if isinstance(f, Modification):
        v, J = value_and_jacobian(f.child, X, cache)
        out = f.transform(v)
        if J is None or J.shape[1] == 0:
            return out, (J if J is not None else None)
        if not f.transform.differentiable:
            return out, None
        return out, f.transform.derivative(v)[:, None] * J
    if isinstance(f, Multiplication):
        vl, Jl = value_and_jacobian(f.left, X, cache)
        vr, Jr = value_and_jacobian(f.right, X, cache)
        if Jl is None or Jr is None:
            return vl * vr, None
        return vl * vr, np.hstack([Jl * vr[:, None], Jr * vl[:, None]])
    vals, jacs = [], []
    for c in f.kids:
        v, J = value_and_jacobian(c, X, cache)
        vals.append(v)
        jacs.append(J)
    with np.errstate(all="ignore"):
        z = f.alpha[0] + sum(a * v for a, v in zip(f.alpha[1:], vals))
        out = f.transform(z)
    if not f.transform.differentiable or any(J is None for J in jacs):
        return out, None
    own = np.column_stack([np.ones(n)] + vals)
    dz = np.hstack([own] + [a * J for a, J in zip(f.alpha[1:], jacs)])
    with np.errstate(all="ignore"):
        return out, f.transform.derivative(z)[:, None] * dz


# ------------------------------------------------------------- optimisers


def _objective(theta_col, y, family):
    off = family.offset if family.offset is not None else 0.0
    with np.errstate(all="ignore"):
        ll = family.loglik(y, theta_col + off)
    return ll if np.isfinite(ll) else -np.inf


def _levenberg_marquardt(template, free, X, y, family):
    """Maximise the likelihood of h(mu) = template(x; theta) over ``theta[free]``."""
    theta = flat_parameters(template)
    off = family.offset if family.offset is not None else 0.0

    def feval(th):
        f = with_parameters(template, th)
        v, J = value_and_jacobian(f, X)
        return v, (None if J is None else J[:, free])

    v, J = feval(theta)
    if J is None:
        raise NoConvergence("non-differentiable transform on the parameter path")
    ll = _objective(v, y, family)
    if not np.isfinite(ll):
        raise NoConvergence("non-finite likelihood at the starting point")
    lam = 1e-3
    for _ in range(OPT_MAX_ITER):
        with np.errstate(all="ignore"):
            mu = family.inverse_link(v + off)
            r = y - mu
            W = family.variance(mu)
        g = J.T @ r
        if not np.all(np.isfinite(g)):
            raise NoConvergence("non-finite gradient")
        if np.max(np.abs(g)) < OPT_GRAD_TOL:
            return with_parameters(template, theta), True
        H = (J * W[:, None]).T @ J
        improved = False
        while lam < 1e12:
            A = H + lam * np.diag(np.diag(H) + 1e-12)
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = theta.copy()
            cand[free] += step
            try:
                v2, J2 = feval(cand)
            except BGNLMError:
                lam *= 10.0
                continue
            ll2 = _objective(v2, y, family) if J2 is not None else -np.inf
            if ll2 > ll:
                small = abs(ll2 - ll) <= 1e-13 * max(1.0, abs(ll))
                theta, v, J, ll = cand, v2, J2, ll2
                lam = max(lam / 3.0, 1e-12)
                improved = True
                if small:
                    return with_parameters(template, theta), True
                break
            lam *= 4.0
        if not improved:
            # no ascent direction left: a stationary point up to round-off
            return with_parameters(template, theta), True
    return with_parameters(template, theta), False


def _compass_search(template, free, X, y, family):
    """Derivative-free coordinate search for non-differentiable transforms."""
    theta = flat_parameters(template)

    def value(th):
        try:
            return _objective(evaluate(with_parameters(template, th), X), y, family)
        except BGNLMError:
            return -np.inf

    best = value(theta)
    h = 0.1 * (np.abs(theta[free]) + 1.0)
    for _ in range(OPT_MAX_ITER):
        moved = False
        for i, j in enumerate(free):
            for sgn in (1.0, -1.0):
                cand = theta.copy()
                cand[j] += sgn * h[i]
                val = value(cand)
                if val > best:
                    theta, best, moved = cand, val, True
                    break
        if not moved:
            h *= 0.5
            if np.max(h) < 1e-6:
                break
    return with_parameters(template, theta)


def _optimise(template, free, X, y, family):
    if not np.isfinite(_objective(evaluate(template, X), y, family)):
        raise NoConvergence("starting weights give a non-finite likelihood")
    try:
        fitted, ok = _levenberg_marquardt(template, free, X, y, family)
        if not ok:
            log.debug("weight optimisation hit the iteration limit for %s", template.key)
        return fitted
    except NoConvergence:
        return _compass_search(template, free, X, y, family)


# ----------------------------------------------------------- strategies


def estimate_alpha(
    strategy: AlphaStrategy,
    g,
    children: Sequence[Feature],
    X: np.ndarray,
    y: np.ndarray,
    family: FamilySpec,
    rng: Optional[np.random.Generator] = None,
    cache: Optional[dict] = None,
):
    """Weights for a new projection of ``children`` through ``g``.

    Returns ``(alpha_out, children)``; the children are only replaced under
    the ``deep`` and ``fully_bayes`` strategies, where nested weights change
    (copy-on-write, the originals stay untouched).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    children = list(children)
    k = len(children)
    if strategy.kind == "fully_bayes":
        if rng is None:
            raise ValueError("fully_bayes needs a random generator")
        proj = sample_alpha_prior(Projection(g, np.zeros(k + 1), children), strategy.sigma_alpha, rng)
        return np.asarray(proj.alpha), list(proj.kids)

    cols = [evaluate(c, X, cache) for c in children]
    if y.shape[0] <= k + 1:
        raise AlphaFitFailed("not enough observations for the projection weights")
    fit = fit_mle(design_from_columns(cols, y.shape[0]), y, family)
    alpha1 = np.asarray(fit.beta_hat, dtype=float)
    if strategy.kind == "naive":
        return alpha1, children

    start = Projection(g, alpha1, children)
    try:
        outer = _optimise(start, np.arange(k + 1), X, y, family)
    except BGNLMError as exc:
        log.debug("falling back to naive weights: %s", exc)
        outer = start
    if strategy.kind == "concave":
        return np.asarray(outer.alpha), list(outer.kids)

    n_all = flat_parameters(outer).shape[0]
    try:
        deep = _optimise(outer, np.arange(n_all), X, y, family)
    except BGNLMError as exc:
        log.debug("deep re-estimation failed, keeping outer fit: %s", exc)
        deep = outer
    return np.asarray(deep.alpha), list(deep.kids)


def sample_alpha_prior(f: Feature, sd: float, rng: np.random.Generator) -> Feature:
    """Copy of ``f`` with every projection weight drawn from N(0, sd^2)."""
    n = sum(len(b) for b in parameter_blocks(f))
    if n == 0:
        return f
    return with_parameters(f, rng.normal(0.0, sd, size=n))


# ------------------------------------------------------------- generation


def _pick(pool, weights, rng, size=None, replace=True):
    p = None
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        p = w / w.sum()
    idx = rng.choice(len(pool), size=size, replace=replace, p=p)
    if size is None:
        return pool[int(idx)]
    return [pool[int(i)] for i in idx]


def generate_feature(
    kind: str,
    pool: Sequence[Feature],
    originals: Sequence[Feature],
    lib: TransformLibrary,
    strategy: AlphaStrategy,
    X: np.ndarray,
    y: np.ndarray,
    family: FamilySpec,
    rng: np.random.Generator,
    max_depth: int = 5,
    max_width: int = 20,
    weights: Optional[Sequence[float]] = None,
    cache: Optional[dict] = None,
) -> Feature:
    """Draw one new feature of the requested kind.

    Nested components come from ``pool`` (optionally weighted); projections
    use a subset whose size is uniform on {2, ..., min(max_width, |pool|)}.
    """
    pool = list(pool)
    if kind == "input":
        return originals[int(rng.integers(len(originals)))]
    if not pool:
        raise ValueError("pool must not be empty")
    if kind == "modification":
        child = _pick(pool, weights, rng)
        g = lib[int(rng.integers(len(lib)))]
        if child.depth + 1 > max_depth:
            raise DepthExceeded(f"depth {child.depth + 1} > {max_depth}")
        return Modification(g, child)
    if kind == "multiplication":
        a, b = _pick(pool, weights, rng), _pick(pool, weights, rng)
        depth = 1 + a.depth + b.depth
        if depth > max_depth:
            raise DepthExceeded(f"depth {depth} > {max_depth}")
        return Multiplication(a, b)
    if kind == "projection":
        hi = min(max_width, len(pool))
        if hi < 2:
            raise WidthExceeded("a projection needs at least two distinct pool members")
        size = int(rng.integers(2, hi + 1))
        children = _pick(pool, weights, rng, size=size, replace=False)
        depth = 1 + max(c.depth for c in children)
        if depth > max_depth:
            raise DepthExceeded(f"depth {depth} > {max_depth}")
        g = lib[int(rng.integers(len(lib)))]
        try:
            alpha, kids = estimate_alpha(strategy, g, children, X, y, family, rng=rng, cache=cache)
        except AlphaFitFailed:
            raise
        except BGNLMError as exc:
            raise AlphaFitFailed(str(exc)) from exc
        feat = Projection(g, alpha, kids)
        if feat.local_width > max_width:
            raise WidthExceeded(f"local width {feat.local_width} > {max_width}")
        return feat
    raise ValueError(f"unknown feature kind {kind!r}")
