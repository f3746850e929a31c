"""Dataset loading, dummy coding, splitting and synthetic generators."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, EmptyAfterFiltering, ParseError, UnknownColumn
from .features import Feature, Input, Modification, Multiplication, flat_key
from .transforms import get_transform

log = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]
    family_hint: Optional[str] = None
    dropped_rows: int = 0
    truths: tuple = field(default=(), compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes X{X.shape} y{y.shape}")
        if X.shape[0] < 2:
            raise EmptyAfterFiltering(f"only {X.shape[0]} usable rows")
        if len(self.column_names) != X.shape[1]:
            raise DataError("column_names does not match the number of columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("non-finite values in data")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.column_names, self.family_hint, 0, self.truths)

    def standardized(self) -> "Dataset":
        sd = self.X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return Dataset((self.X - self.X.mean(axis=0)) / sd, self.y, self.column_names,
                       self.family_hint, self.dropped_rows, self.truths)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "columns": list(self.column_names),
            "family_hint": self.family_hint,
            "dropped_rows": self.dropped_rows,
            "y_mean": float(self.y.mean()),
            "y_sd": float(self.y.std(ddof=1)),
            "truths": [sorted(c) for c in self.truths],
        }


def write_summary(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(ds.summary(), fh, indent=2)


def _family_hint(y: np.ndarray) -> str:
    vals = np.unique(y)
    if np.all(np.isin(vals, (0.0, 1.0))):
        return "bernoulli"
    if np.all(y >= 0) and np.all(y == np.round(y)):
        return "poisson"
    return "gaussian"


def load_csv(path, response_column: str, categorical_columns: Sequence[str] = (),
             feature_columns: Optional[Sequence[str]] = None) -> Dataset:
    """Read a CSV file with a header row.

    Rows with a missing cell in a used column are dropped and counted.
    Categorical columns become k-1 dummies, the first level in sorted order
    being the reference.  Every other used column must parse as a number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = list(reader)
    cats = list(categorical_columns)
    for c in [response_column, *cats, *(feature_columns or [])]:
        if c not in header:
            raise UnknownColumn(f"column {c!r} not found in {path}")
    used = list(feature_columns) if feature_columns is not None else [h for h in header if h != response_column]
    pos = {h: i for i, h in enumerate(header)}
    need = [response_column] + used

    kept, dropped = [], 0
    for r, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} fields, header has {len(header)}")
        if any(row[pos[c]].strip().lower() in MISSING for c in need):
            dropped += 1
            continue
        kept.append((r, row))
    if dropped:
        log.info("dropped %d rows with missing values", dropped)
    if len(kept) < 2:
        raise EmptyAfterFiltering(f"{len(kept)} rows left after dropping {dropped} with missing values")

    def number(r, c, text):
        try:
            return float(text)
        except ValueError:
            raise ParseError(r, c, text) from None

    y = np.array([number(r, response_column, row[pos[response_column]]) for r, row in kept])
    cols, names = [], []
    for c in used:
        raw = [row[pos[c]].strip() for _, row in kept]
        if c in cats:
            levels = sorted(set(raw))
            for lev in levels[1:]:
                cols.append(np.array([v == lev for v in raw], dtype=float))
                names.append(f"{c}_{lev}")
        else:
            cols.append(np.array([number(r, c, row[pos[c]]) for r, row in kept]))
            names.append(c)
    X = np.column_stack(cols) if cols else np.zeros((len(kept), 0))
    return Dataset(X, y, tuple(names), _family_hint(y), dropped)


def train_test_split(ds: Dataset, test_fraction: float, rng) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = rng.permutation(ds.n)
    k = int(round(test_fraction * ds.n))
    return ds.subset(np.sort(perm[k:])), ds.subset(np.sort(perm[:k]))


# ---------------------------------------------------------------- synthetic


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str
    n: int = 1000
    noise_sd: float = 1.0
    seed: int = 0
    nuisance: int = 6

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.generator == "logic" and self.n < 50:
            raise ValueError("the logic generator needs n >= 50")
        if self.n < 2:
            raise ValueError("n must be at least 2")


def _mul(*fs: Feature) -> Feature:
    out = fs[0]
    for f in fs[1:]:
        out = Multiplication(out, f)
    return out


def kepler_truth_features() -> list[Feature]:
    P = Input(0)
    cbrt = get_transform("cbrt_abs")
    return [Modification(cbrt, _mul(P, P, Input(j))) for j in (1, 2, 3)]


def kepler_truths() -> list[frozenset]:
    """One equivalence class: the cube root of P*P times any of the three host-star proxies."""
    return [frozenset(flat_key(f) for f in kepler_truth_features())]


def _kepler(spec, rng):
    n = spec.n
    P = np.exp(rng.uniform(0.0, math.log(4000.0), n))
    M = rng.uniform(0.5, 2.5, n)
    R = M ** 0.8 * (1.0 + rng.normal(0.0, 0.01, n))
    T = 5778.0 * M ** 0.55 * (1.0 + rng.normal(0.0, 0.01, n))
    nuis = rng.normal(size=(n, spec.nuisance))
    law = np.cbrt(P * P * M)
    y = law + rng.normal(0.0, spec.noise_sd * law.std(), n)
    X = np.column_stack([P, M, R, T, nuis])
    names = ("P", "M_h", "R_h", "T_h") + tuple(f"noise{k + 1}" for k in range(spec.nuisance))
    return X, y, names, kepler_truths()


def mass_truth_features() -> list[Feature]:
    R, rho = Input(0), Input(1)
    return [_mul(R, R, R, rho)]


def mass_truths() -> list[frozenset]:
    return [frozenset({flat_key(f) for f in mass_truth_features()})]


def _mass(spec, rng):
    n = spec.n
    R = rng.uniform(0.3, 2.5, n)
    rho = rng.uniform(0.5, 6.0, n)
    nuis = rng.normal(size=(n, spec.nuisance))
    law = R ** 3 * rho
    y = law + rng.normal(0.0, spec.noise_sd * law.std(), n)
    names = ("R", "rho") + tuple(f"noise{k + 1}" for k in range(spec.nuisance))
    return np.column_stack([R, rho, nuis]), y, names, mass_truths()


# (coefficient, 1-based covariate indices)
LOGIC_TERMS = (
    (1.5, (7,)),
    (1.5, (8,)),
    (6.6, (18, 21)),
    (3.5, (2, 9)),
    (9.0, (12, 20, 37)),
    (7.0, (1, 3, 27)),
    (7.0, (4, 10, 17, 30)),
    (7.0, (11, 13, 19, 50)),
)
LOGIC_INTERCEPT = 1.0
LOGIC_P = 50


def logic_truth_features() -> list[Feature]:
    return [_mul(*(Input(j - 1) for j in idx)) for _, idx in LOGIC_TERMS]


def logic_truths() -> list[frozenset]:
    return [frozenset({flat_key(f)}) for f in logic_truth_features()]


def logic_mean(X: np.ndarray) -> np.ndarray:
    mu = np.full(X.shape[0], LOGIC_INTERCEPT)
    for coef, idx in LOGIC_TERMS:
        mu = mu + coef * np.prod(X[:, [j - 1 for j in idx]], axis=1)
    return mu


def _logic(spec, rng):
    X = rng.binomial(1, 0.5, size=(spec.n, LOGIC_P)).astype(float)
    y = logic_mean(X) + rng.normal(0.0, spec.noise_sd, spec.n)
    names = tuple(f"X{j + 1}" for j in range(LOGIC_P))
    return X, y, names, logic_truths()


GENERATORS = {"kepler": _kepler, "mass": _mass, "logic": _logic}


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw a synthetic dataset; ``Dataset.truths`` lists the true feature classes (flat keys).

    For kepler and mass the noise standard deviation is ``noise_sd`` times
    the standard deviation of the law column; for logic it is ``noise_sd``.
    """
    rng = np.random.default_rng(spec.seed)
    X, y, names, truths = GENERATORS[spec.generator](spec, rng)
    return Dataset(X, y, names, "gaussian", 0, tuple(truths))
