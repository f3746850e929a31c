"""GLM fitting and marginal likelihoods.

Canonical-link families only (Gaussian/identity, Bernoulli/logit,
Poisson/log).  Marginal likelihood conventions:

* Gaussian, Jeffreys priors p(sigma^2) = 1/sigma^2 and |J|^(1/2) on beta:
  ``-(n/2) * log(RSS/n)``.
* Bernoulli / Poisson, Laplace approximation with the Jeffreys prior: the
  prior density |J(beta_hat)|^(1/2) cancels the Hessian determinant and the
  (2 pi)^(d/2) factor is dropped, leaving the maximised log-likelihood.

Both conventions leave every dimension penalty to the model prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtrs
from scipy.special import expit, gammaln, logsumexp

from .errors import NonFiniteLikelihood, SingularDesign

log = logging.getLogger(__name__)

_LINKS = {"gaussian": "identity", "bernoulli": "logit", "poisson": "log"}

IRLS_MAX_ITER = 50
IRLS_TOL = 1e-10
SCORE_TOL = 1e-6
RIDGE = 1e-6
PIN_EPS = 1e-10


@dataclass(frozen=True)
class FamilySpec:
    family: str = "gaussian"
    link: Optional[str] = None
    offset: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in _LINKS:
            raise ValueError(f"unsupported family {self.family!r}")
        object.__setattr__(self, "family", fam)
        link = self.link or _LINKS[fam]
        if link != _LINKS[fam]:
            raise ValueError(f"only the canonical link {_LINKS[fam]!r} is supported for {fam}")
        object.__setattr__(self, "link", link)
        if self.offset is not None:
            if fam != "poisson":
                raise ValueError("an offset is only supported for the Poisson family")
            object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))

    def inverse_link(self, eta):
        if self.family == "gaussian":
            return eta
        if self.family == "bernoulli":
            return expit(eta)
        return np.exp(eta)

    def variance(self, mu):
        if self.family == "gaussian":
            return np.ones_like(mu)
        if self.family == "bernoulli":
            return mu * (1.0 - mu)
        return mu

    def loglik(self, y, eta):
        """Log-likelihood at the natural parameter ``eta`` (Gaussian: profile in sigma)."""
        if self.family == "gaussian":
            n = y.shape[0]
            rss = float(np.sum((y - eta) ** 2))
            return -0.5 * n * (np.log(2 * np.pi * max(rss, 1e-300) / n) + 1.0)
        if self.family == "bernoulli":
            return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))

    def with_offset(self, offset) -> "FamilySpec":
        return FamilySpec(self.family, self.link, offset)


GAUSSIAN = FamilySpec("gaussian")
BERNOULLI = FamilySpec("bernoulli")
POISSON = FamilySpec("poisson")


@dataclass
class FitResult:
    beta_hat: np.ndarray
    log_lik: float
    fisher_info: np.ndarray
    dispersion_hat: Optional[float]
    converged: bool
    iterations: int
    rss: Optional[float] = None

    def score(self, design, y, spec: FamilySpec) -> np.ndarray:
        eta = design @ self.beta_hat
        if spec.offset is not None:
            eta = eta + spec.offset
        return design.T @ (y - spec.inverse_link(eta))


def check_rank(design: np.ndarray) -> None:
    n, d = design.shape
    if n <= d:
        raise SingularDesign(f"need more rows than columns (n={n}, d={d})")
    if np.linalg.matrix_rank(design) < d:
        raise SingularDesign("design matrix is not of full column rank")


def fit_mle(design, y, spec: FamilySpec = GAUSSIAN, check: bool = True) -> FitResult:
    """Maximum likelihood fit of a canonical-link GLM.

    Gaussian fits are closed-form least squares with ``dispersion_hat = RSS/n``.
    Bernoulli and Poisson use IRLS with step halving.  A Bernoulli fit whose
    probabilities get pinned at 0 or 1 (separation) is refitted with a small
    ridge and returned with ``converged=False``.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if check:
        check_rank(X)
    if spec.family == "gaussian":
        return _fit_gaussian(X, y)
    res = _irls(X, y, spec, ridge=0.0)
    if not res.converged and spec.family == "bernoulli":
        log.debug("separation suspected; refitting with ridge %g", RIDGE)
        res = _irls(X, y, spec, ridge=RIDGE)
        res.converged = False
    return res


def _fit_gaussian(X, y):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    rss = float(resid @ resid)
    n = y.shape[0]
    sigma2 = rss / n
    ll = GAUSSIAN.loglik(y, X @ beta)
    info = X.T @ X / max(sigma2, 1e-300)
    return FitResult(beta, ll, info, sigma2, True, 1, rss=rss)


def _irls(X, y, spec, ridge):
    n, d = X.shape
    off = spec.offset if spec.offset is not None else 0.0
    if spec.family == "bernoulli":
        mu0 = (y + 0.5) / 2.0
        eta = np.log(mu0 / (1.0 - mu0))
    else:
        mu0 = y + 0.1
        eta = np.log(mu0)
    beta, *_ = np.linalg.lstsq(X, eta - off, rcond=None)
    penalty = 0.5 * ridge

    def objective(b):
        return spec.loglik(y, X @ b + off) - penalty * float(b @ b)

    ll = objective(beta)
    converged = False
    it = 0
    for it in range(1, IRLS_MAX_ITER + 1):
        eta = X @ beta + off
        mu = spec.inverse_link(eta)
        w = np.maximum(spec.variance(mu), 1e-300)
        grad = X.T @ (y - mu) - ridge * beta
        H = (X * w[:, None]).T @ X + ridge * np.eye(d)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        new_ll = objective(beta + step)
        while not (np.isfinite(new_ll) and new_ll >= ll - 1e-12 * abs(ll)) and t > 1e-10:
            t *= 0.5
            new_ll = objective(beta + t * step)
        if not np.isfinite(new_ll):
            break
        beta = beta + t * step
        change = abs(new_ll - ll) / max(abs(ll), 1.0)
        ll = new_ll
        g_new = X.T @ (y - spec.inverse_link(X @ beta + off)) - ridge * beta
        if change < IRLS_TOL and np.max(np.abs(g_new)) < SCORE_TOL:
            converged = True
            break
    eta = X @ beta + off
    mu = spec.inverse_link(eta)
    if spec.family == "bernoulli" and ridge == 0.0 and (np.any(mu < PIN_EPS) or np.any(mu > 1 - PIN_EPS)):
        converged = False
    w = spec.variance(mu)
    info = (X * w[:, None]).T @ X
    return FitResult(beta, spec.loglik(y, eta), info, None, converged, it)


def design_from_columns(columns: Sequence[np.ndarray], n: int) -> np.ndarray:
    return np.column_stack([np.ones(n)] + [np.asarray(c, dtype=float) for c in columns])


def log_marginal_from_fit(fit: FitResult, n: int, spec: FamilySpec) -> float:
    if spec.family == "gaussian":
        value = -0.5 * n * np.log(max(fit.rss, 1e-300) / n)
    else:
        value = fit.log_lik
    if not np.isfinite(value):
        raise NonFiniteLikelihood("log marginal likelihood is not finite")
    return float(value)


def log_marginal(columns: Sequence[np.ndarray], y, spec: FamilySpec = GAUSSIAN) -> float:
    """Log marginal likelihood of the model with the given feature columns (plus intercept)."""
    y = np.asarray(y, dtype=float)
    X = design_from_columns(columns, y.shape[0])
    return log_marginal_from_fit(fit_mle(X, y, spec), y.shape[0], spec)


def fit_model(columns: Sequence[np.ndarray], y, spec: FamilySpec = GAUSSIAN) -> tuple[float, np.ndarray]:
    """(log marginal, beta_hat) for one model."""
    y = np.asarray(y, dtype=float)
    X = design_from_columns(columns, y.shape[0])
    fit = fit_mle(X, y, spec)
    return log_marginal_from_fit(fit, y.shape[0], spec), fit.beta_hat


def mc_marginal(features, X, y, spec: FamilySpec, alpha_sd: float, M: int, rng) -> float:
    """Monte Carlo marginal over projection weights drawn from N(0, alpha_sd^2).

    Averages exp(log marginal) over ``M`` joint prior draws of every projection
    weight in the model (log-sum-exp).  Models without projections reduce to
    :func:`log_marginal`.
    """
    from .alpha import sample_alpha_prior
    from .features import count_projections, evaluate

    if M < 1:
        raise ValueError("M must be at least 1")
    y = np.asarray(y, dtype=float)
    if not any(count_projections(f) for f in features):
        return log_marginal([evaluate(f, X) for f in features], y, spec)
    vals = np.empty(M)
    for t in range(M):
        drawn = [sample_alpha_prior(f, alpha_sd, rng) for f in features]
        try:
            vals[t] = log_marginal([evaluate(f, X) for f in drawn], y, spec)
        except Exception as exc:  # a draw producing a degenerate design carries no mass
            log.debug("prior draw %d discarded: %s", t, exc)
            vals[t] = -np.inf
    out = float(logsumexp(vals) - np.log(M))
    if not np.isfinite(out):
        raise NonFiniteLikelihood("all prior draws gave degenerate models")
    return out


class GaussianGram:
    """Fast exact Gaussian marginals for subsets of a fixed set of columns.

    Columns are centred and scaled to unit norm once; the residual sum of
    squares of any subset (plus intercept) then needs only a Cholesky
    factorisation of a small correlation block.
    """

    def __init__(self, columns: np.ndarray, y: np.ndarray, pivot_tol: float = 1e-7):
        Z = np.asarray(columns, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        y = np.asarray(y, dtype=float)
        self.n = y.shape[0]
        self.mean = Z.mean(axis=0) if Z.shape[1] else np.zeros(0)
        Zc = Z - self.mean
        self.scale = np.linalg.norm(Zc, axis=0) if Z.shape[1] else np.zeros(0)
        self.scale = np.where(self.scale > 0, self.scale, 1.0)
        Zs = Zc / self.scale
        self.ymean = float(y.mean())
        yc = y - self.ymean
        self.G = Zs.T @ Zs
        self.b = Zs.T @ yc
        self.tss = float(yc @ yc)
        self.pivot_tol = pivot_tol

    def fit(self, idx: Sequence[int]) -> tuple[float, np.ndarray]:
        """Return (RSS, beta) with beta in original units, intercept first."""
        if len(idx) == 0:
            return self.tss, np.array([self.ymean])
        if len(idx) + 1 >= self.n:
            raise SingularDesign("more coefficients than observations")
        ia = np.asarray(idx, dtype=np.intp)
        # raw LAPACK calls: this is the innermost loop of the search
        L, info = dpotrf(self.G[ia[:, None], ia], lower=1, clean=0)
        if info != 0 or L.diagonal().min() < self.pivot_tol:
            raise SingularDesign("collinear feature columns")
        z, _ = dtrtrs(L, self.b[ia], lower=1)
        rss = max(self.tss - float(z @ z), 0.0)
        w, _ = dtrtrs(L, z, lower=1, trans=1)
        slopes = w / self.scale[ia]
        intercept = self.ymean - float(slopes @ self.mean[ia])
        return rss, np.concatenate(([intercept], slopes))

    def log_marginal(self, idx: Sequence[int]) -> tuple[float, np.ndarray]:
        rss, beta = self.fit(idx)
        return -0.5 * self.n * np.log(max(rss, 1e-300) / self.n), beta
