"""Nonlinear feature trees: construction, measures, evaluation and counting.

A feature is an immutable expression tree whose leaves are input columns and
whose inner nodes are

* ``Modification``  -- g(F)
* ``Multiplication`` -- F_k * F_l   (k == l allowed)
* ``Projection``    -- g(a_0 + sum_k a_k F_k), at least two children

Structural measures (depth, local width, total width) and a canonical text key
are computed once at construction.
"""
from __future__ import annotations

import itertools
import math
from collections import namedtuple
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NonFiniteOutput, ScaleGuard
from .transforms import Transform, TransformLibrary, get_transform

Measures = namedtuple("Measures", ["depth", "local_width", "total_width"])

ALPHA_DIGITS = 6
REDUNDANCY_TOL = 1e-8


def format_alpha(a: float) -> str:
    s = f"{float(a):.{ALPHA_DIGITS}g}"
    return "0" if s in ("-0", "0") else s


class Feature:
    """Base class; use the concrete node types below."""

    __slots__ = ("depth", "local_width", "total_width", "key")

    def children(self) -> tuple["Feature", ...]:
        return ()

    def __eq__(self, other):
        return isinstance(other, Feature) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"{type(self).__name__}({self.key})"

    def __str__(self):
        return self.key


class Input(Feature):
    __slots__ = ("index",)

    def __init__(self, index: int):
        if index < 0:
            raise ValueError("input index must be non-negative")
        self.index = int(index)
        self.depth, self.local_width, self.total_width = 0, 1, 1
        self.key = f"x{self.index}"


class Modification(Feature):
    __slots__ = ("transform", "child")

    def __init__(self, transform: Transform, child: Feature):
        self.transform = transform
        self.child = child
        self.depth = 1 + child.depth
        self.local_width = 1
        self.total_width = 1 + child.total_width
        self.key = f"{transform.name}({child.key})"

    def children(self):
        return (self.child,)


def _operand_key(f: Feature) -> str:
    # Nested products keep their own parentheses so association stays visible.
    return f"({f.key})" if isinstance(f, Multiplication) else f.key


class Multiplication(Feature):
    __slots__ = ("left", "right")

    def __init__(self, left: Feature, right: Feature):
        if _operand_key(right) < _operand_key(left):
            left, right = right, left
        self.left, self.right = left, right
        self.depth = 1 + left.depth + right.depth
        self.local_width = 2
        self.total_width = 2 + left.total_width + right.total_width
        self.key = f"{_operand_key(left)}*{_operand_key(right)}"

    def children(self):
        return (self.left, self.right)


class Projection(Feature):
    """g(alpha[0] + sum_k alpha[k] * children[k-1]).

    Children are stored sorted by key with their weights carried along; the
    intercept alpha[0] does not count towards the local width.
    """

    __slots__ = ("transform", "alpha", "kids")

    def __init__(self, transform: Transform, alpha: Sequence[float], children: Sequence[Feature]):
        alpha = [float(a) for a in alpha]
        children = list(children)
        if len(children) < 2:
            raise ValueError("a projection needs at least two children")
        if len(alpha) != len(children) + 1:
            raise ValueError("alpha must hold an intercept plus one weight per child")
        order = sorted(range(len(children)), key=lambda i: (children[i].key, alpha[i + 1]))
        self.transform = transform
        self.kids = tuple(children[i] for i in order)
        self.alpha = (alpha[0],) + tuple(alpha[i + 1] for i in order)
        self.depth = 1 + max(c.depth for c in self.kids)
        self.local_width = len(self.kids)
        self.total_width = self.local_width + sum(c.total_width for c in self.kids)
        terms = format_alpha(self.alpha[0])
        for a, c in zip(self.alpha[1:], self.kids):
            fa = format_alpha(a)
            terms += ("" if fa.startswith("-") else "+") + f"{fa}*{_operand_key(c)}"
        self.key = f"{transform.name}({terms})"

    def children(self):
        return self.kids


# ----------------------------------------------------------------- measures


def measure(f: Feature) -> Measures:
    return Measures(f.depth, f.local_width, f.total_width)


def complexity(f: Feature) -> float:
    """Complexity used by the model prior: the total width."""
    return float(f.total_width)


def canonical_key(f: Feature) -> str:
    return f.key


def flat_key(f: Feature) -> str:
    """Key with nested products flattened into one sorted factor list.

    Products that differ only by association, e.g. (x1*x2)*x3 and
    x1*(x2*x3), share a flat key.  Depth and total width are invariant under
    re-association, so features with equal flat keys also share measures.
    """
    if isinstance(f, Input):
        return f.key
    if isinstance(f, Modification):
        return f"{f.transform.name}({flat_key(f.child)})"
    if isinstance(f, Multiplication):
        factors = sorted(_factor_keys(f))
        return "*".join(factors)
    if isinstance(f, Projection):
        parts = sorted(
            (f"({flat_key(c)})" if isinstance(c, Multiplication) else flat_key(c), a)
            for c, a in zip(f.kids, f.alpha[1:])
        )
        terms = format_alpha(f.alpha[0])
        for k, a in parts:
            fa = format_alpha(a)
            terms += ("" if fa.startswith("-") else "+") + f"{fa}*{k}"
        return f"{f.transform.name}({terms})"
    raise TypeError(type(f))


def _factor_keys(f: Feature) -> list[str]:
    if isinstance(f, Multiplication):
        return _factor_keys(f.left) + _factor_keys(f.right)
    return [flat_key(f)]


def render(f: Feature, names: Optional[Sequence[str]] = None) -> str:
    """Human readable expression using column names where available."""
    if isinstance(f, Input):
        return names[f.index] if names is not None and f.index < len(names) else f.key
    if isinstance(f, Modification):
        return f"{f.transform.name}({render(f.child, names)})"
    if isinstance(f, Multiplication):
        return "*".join(render(c, names) for c in (f.left, f.right))
    terms = format_alpha(f.alpha[0])
    for a, c in zip(f.alpha[1:], f.kids):
        fa = format_alpha(a)
        terms += ("" if fa.startswith("-") else "+") + f"{fa}*{render(c, names)}"
    return f"{f.transform.name}({terms})"


def inputs_used(f: Feature) -> set[int]:
    if isinstance(f, Input):
        return {f.index}
    out: set[int] = set()
    for c in f.children():
        out |= inputs_used(c)
    return out


def count_projections(f: Feature) -> int:
    own = 1 if isinstance(f, Projection) else 0
    return own + sum(count_projections(c) for c in f.children())


# --------------------------------------------------------------- evaluation


def evaluate(f: Feature, X: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    """Evaluate ``f`` row-wise on the data matrix ``X``.

    ``cache`` maps feature keys to already evaluated columns on the same ``X``
    and is filled in as a side effect.  Raises :class:`NonFiniteOutput` when
    any node produces NaN or an infinity.
    """
    if cache is None:
        cache = {}
    return _eval(f, np.asarray(X, dtype=float), cache)


def _eval(f, X, cache):
    hit = cache.get(f.key)
    if hit is not None:
        return hit
    if isinstance(f, Input):
        if f.index >= X.shape[1]:
            raise IndexError(f"input index {f.index} out of range for {X.shape[1]} columns")
        out = X[:, f.index]
    else:
        with np.errstate(all="ignore"):
            if isinstance(f, Modification):
                out = f.transform(_eval(f.child, X, cache))
            elif isinstance(f, Multiplication):
                out = _eval(f.left, X, cache) * _eval(f.right, X, cache)
            else:
                z = np.full(X.shape[0], f.alpha[0])
                for a, c in zip(f.alpha[1:], f.kids):
                    z = z + a * _eval(c, X, cache)
                out = f.transform(z)
    out = np.asarray(out, dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        raise NonFiniteOutput(int(np.argmax(bad)), f.key)
    cache[f.key] = out
    return out


def is_redundant(
    f: Feature,
    population: Sequence[Feature],
    X: np.ndarray,
    cache: Optional[dict] = None,
    tol: float = REDUNDANCY_TOL,
) -> bool:
    """True if ``f`` duplicates a member or is (numerically) an affine combination of them.

    A candidate whose evaluation fails with non-finite values is treated as
    redundant as well, so that generation simply draws another one.
    """
    keys = {p.key for p in population}
    if f.key in keys:
        return True
    if cache is None:
        cache = {}
    try:
        col = evaluate(f, X, cache)
    except NonFiniteOutput:
        return True
    norm = np.linalg.norm(col)
    if norm == 0.0:
        return True
    design = [np.ones(X.shape[0])] + [evaluate(p, X, cache) for p in population]
    A = np.column_stack(design)
    coef, *_ = np.linalg.lstsq(A, col, rcond=None)
    resid = col - A @ coef
    return bool(np.linalg.norm(resid) / norm < tol)


# -------------------------------------------------------------- parameters


def parameter_blocks(f: Feature) -> list[tuple[float, ...]]:
    """Alpha vectors of every projection node, pre-order (own weights first)."""
    out = []
    if isinstance(f, Projection):
        out.append(f.alpha)
    for c in f.children():
        out.extend(parameter_blocks(c))
    return out


def flat_parameters(f: Feature) -> np.ndarray:
    blocks = parameter_blocks(f)
    return np.concatenate([np.asarray(b) for b in blocks]) if blocks else np.zeros(0)


def with_parameters(f: Feature, theta: Sequence[float]) -> Feature:
    """Copy of ``f`` with projection weights replaced, in :func:`parameter_blocks` order.

    Untouched subtrees are shared; every rebuilt projection owns fresh weights.
    """
    theta = list(theta)
    new, used = _rebuild(f, theta, 0)
    if used != len(theta):
        raise ValueError(f"expected {used} parameters, got {len(theta)}")
    return new


def _rebuild(f, theta, pos):
    if isinstance(f, Input):
        return f, pos
    if isinstance(f, Modification):
        child, pos = _rebuild(f.child, theta, pos)
        return (f if child is f.child else Modification(f.transform, child)), pos
    if isinstance(f, Multiplication):
        left, pos = _rebuild(f.left, theta, pos)
        right, pos = _rebuild(f.right, theta, pos)
        if left is f.left and right is f.right:
            return f, pos
        return Multiplication(left, right), pos
    k = len(f.alpha)
    alpha = theta[pos:pos + k]
    pos += k
    kids = []
    for c in f.kids:
        c2, pos = _rebuild(c, theta, pos)
        kids.append(c2)
    return Projection(f.transform, alpha, kids), pos


# ----------------------------------------------------------- serialisation


def to_dict(f: Feature) -> dict:
    if isinstance(f, Input):
        return {"type": "input", "index": f.index}
    if isinstance(f, Modification):
        return {"type": "modification", "transform": f.transform.name, "child": to_dict(f.child)}
    if isinstance(f, Multiplication):
        return {"type": "multiplication", "left": to_dict(f.left), "right": to_dict(f.right)}
    return {
        "type": "projection",
        "transform": f.transform.name,
        "alpha": list(f.alpha),
        "children": [to_dict(c) for c in f.kids],
    }


def from_dict(d: dict) -> Feature:
    t = d["type"]
    if t == "input":
        return Input(d["index"])
    if t == "modification":
        return Modification(get_transform(d["transform"]), from_dict(d["child"]))
    if t == "multiplication":
        return Multiplication(from_dict(d["left"]), from_dict(d["right"]))
    if t == "projection":
        return Projection(get_transform(d["transform"]), d["alpha"], [from_dict(c) for c in d["children"]])
    raise ValueError(f"unknown feature node type {t!r}")


# ----------------------------------------------------------------- counting


def count_features(m: int, gsize: int, d: int, mode: str = "full") -> int:
    """Number of distinct features of depth exactly ``d``.

    ``mode="full"`` follows the projection/modification plus multiplication
    recursion (q_d = q_d^p + q_d^*); ``mode="lower_bound"`` counts
    projections and modifications only.  Exact integer arithmetic throughout.
    """
    if d < 0 or m < 1 or gsize < 1:
        raise ValueError("require d >= 0, m >= 1, gsize >= 1")
    if mode == "full":
        return _full_counts(m, gsize, d)[d]
    if mode == "lower_bound":
        ql = [m]
        for k in range(1, d + 1):
            ql.append(gsize * (2 ** sum(ql[:k]) - 1) - sum(ql[1:k]))
        return ql[d]
    raise ValueError(f"unknown mode {mode!r}")


def _full_counts(m, gsize, d):
    q, qp = [m], [0]
    for k in range(1, d + 1):
        p = gsize * (2 ** sum(q[:k]) - 1) - sum(q[1:k - 1]) - qp[k - 1]
        if k % 2 == 1:
            s = (k - 1) // 2
            star = sum(q[t] * q[k - t - 1] for t in range(s)) + math.comb(1 + q[s], 2)
        else:
            # pairs (t, k-1-t) with t <= s, none on the diagonal since k-1 is odd
            s = (k - 2) // 2
            star = sum(q[t] * q[k - t - 1] for t in range(s + 1))
        qp.append(p)
        q.append(p + star)
    return q


def enumerate_features(m: int, lib: TransformLibrary, max_depth: int) -> list[Feature]:
    """All structurally distinct features up to ``max_depth`` (weights 1, intercept 0).

    Only intended as a brute-force oracle for tiny spaces.
    """
    if max_depth > 2 or m > 2:
        raise ScaleGuard("enumeration limited to max_depth <= 2 and m <= 2")
    by_depth: list[list[Feature]] = [[Input(j) for j in range(m)]]
    seen = {f.key for f in by_depth[0]}
    for d in range(1, max_depth + 1):
        layer: list[Feature] = []

        def add(f):
            if f.key not in seen:
                seen.add(f.key)
                layer.append(f)

        lower = [f for fs in by_depth for f in fs]
        top = by_depth[d - 1]
        for g in lib:
            for f in top:
                add(Modification(g, f))
        for size in range(2, len(lower) + 1):
            for subset in itertools.combinations(lower, size):
                if not any(f.depth == d - 1 for f in subset):
                    continue
                for g in lib:
                    add(Projection(g, [0.0] + [1.0] * size, subset))
        for da in range(0, d):
            db = d - 1 - da
            if db < da:
                break
            for i, a in enumerate(by_depth[da]):
                for j, b in enumerate(by_depth[db]):
                    if da == db and j < i:
                        continue
                    add(Multiplication(a, b))
        by_depth.append(layer)
    return [f for fs in by_depth for f in fs]


def unique(features: Iterable[Feature]) -> list[Feature]:
    out, seen = [], set()
    for f in features:
        if f.key not in seen:
            seen.add(f.key)
            out.append(f)
    return out
