"""Scalar nonlinearities available to modifications and projections.

Every transform is vectorised over numpy arrays.  Differentiable transforms
carry their derivative so that the outer-weight optimisers can use gradients;
the remaining ones (relu, indicator) are handled by a derivative-free search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Transform:
    name: str
    apply: ArrayFn = field(compare=False, repr=False)
    derivative: Optional[ArrayFn] = field(default=None, compare=False, repr=False)

    @property
    def differentiable(self) -> bool:
        return self.derivative is not None

    def __call__(self, x):
        return self.apply(x)

    def __reduce__(self):
        # pickled by name so that worker processes can receive features
        return (get_transform, (self.name,))


def _abs_pow(p):
    def f(x):
        return np.abs(x) ** p

    def df(x):
        return p * np.sign(x) * np.abs(x) ** (p - 1.0)

    return f, df


def _gauss(x):
    return np.exp(-np.square(x))


def _sigmoid_d(x):
    s = expit(x)
    return s * (1.0 - s)


def _cbrt_d(x):
    ax = np.abs(x)
    with np.errstate(divide="ignore"):
        return np.sign(x) / (3.0 * np.cbrt(ax) ** 2)


_p25, _p25d = _abs_pow(2.5)
_p35, _p35d = _abs_pow(3.5)
_p23, _p23d = _abs_pow(2.3)

_BUILTIN = [
    Transform("identity", lambda x: np.asarray(x, dtype=float) * 1.0, lambda x: np.ones_like(x, dtype=float)),
    Transform("gauss", _gauss, lambda x: -2.0 * x * _gauss(x)),
    Transform("tanh", np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    Transform("atan", np.arctan, lambda x: 1.0 / (1.0 + np.square(x))),
    Transform("sin", np.sin, np.cos),
    Transform("sigmoid", expit, _sigmoid_d),
    Transform("exp", np.exp, np.exp),
    Transform("log1pabs", lambda x: np.log1p(np.abs(x)), lambda x: np.sign(x) / (np.abs(x) + 1.0)),
    Transform("cbrt_abs", lambda x: np.cbrt(np.abs(x)), _cbrt_d),
    Transform("p25", _p25, _p25d),
    Transform("p35", _p35, _p35d),
    Transform("p23", _p23, _p23d),
    Transform("p72", _p35, _p35d),
    Transform("expnabs", lambda x: np.exp(-np.abs(x)), lambda x: -np.sign(x) * np.exp(-np.abs(x))),
    Transform("relu", lambda x: np.maximum(x, 0.0)),
    Transform("indicator_ge1", lambda x: (np.asarray(x) >= 1.0).astype(float)),
]

REGISTRY: dict[str, Transform] = {t.name: t for t in _BUILTIN}

PRESETS: dict[str, tuple[str, ...]] = {
    "classification": ("gauss", "tanh", "atan", "sin"),
    "G1": ("sigmoid", "sin", "tanh", "atan", "cbrt_abs"),
    "G2": ("sigmoid", "sin", "expnabs", "log1pabs", "cbrt_abs", "p23", "p72"),
}


def get_transform(name: str) -> Transform:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown transform {name!r}; known: {sorted(REGISTRY)}") from None


def register(transform: Transform) -> None:
    """Make a custom transform addressable by name (needed for serialisation)."""
    REGISTRY[transform.name] = transform


class TransformLibrary:
    """Ordered, name-unique collection of transforms (the set G)."""

    def __init__(self, transforms):
        transforms = [get_transform(t) if isinstance(t, str) else t for t in transforms]
        names = [t.name for t in transforms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate transform names in {names}")
        if not transforms:
            raise ValueError("transform library must not be empty")
        self.transforms: tuple[Transform, ...] = tuple(transforms)

    @classmethod
    def preset(cls, name: str) -> "TransformLibrary":
        return cls(PRESETS[name])

    @classmethod
    def from_spec(cls, spec) -> "TransformLibrary":
        """Accept a preset name, a comma separated list, or an iterable of names."""
        if isinstance(spec, str):
            if spec in PRESETS:
                return cls.preset(spec)
            spec = [s.strip() for s in spec.split(",") if s.strip()]
        return cls(spec)

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.transforms]

    def __len__(self):
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    def __getitem__(self, i):
        return self.transforms[i]
