"""Independent oracles shared by the unit and acceptance suites."""
import itertools

import numpy as np
from scipy.special import expit, logsumexp

from bgnlm.features import Input, Modification, Multiplication, Projection
from bgnlm.glm import BERNOULLI, GAUSSIAN, design_from_columns, fit_mle, log_marginal
from bgnlm.mjmcmc import SearchSpace, bits
from bgnlm.model_space import VisitedStore
from bgnlm.transforms import get_transform

def jeffreys_log_integrand(B, A, y):
    """log p(y | beta) + 0.5 log |J(beta)| for a batch of logistic coefficient vectors."""
    eta = B @ A.T
    ll = (y * eta - np.logaddexp(0.0, eta)).sum(axis=1)
    p = expit(eta)
    J = np.einsum("kn,ni,nj->kij", p * (1.0 - p), A, A)
    return ll + 0.5 * np.linalg.slogdet(J)[1]


def aghq_log_evidence(A, y, k=25):
    """Adaptive Gauss-Hermite quadrature of the Jeffreys-prior evidence.

    The grid is centred at the MLE and scaled by the Cholesky factor of the
    inverse Fisher information; the result agrees with scipy dblquad to
    about 1e-10 on the n = 30 problems used here.
    """
    fit = fit_mle(A, y, BERNOULLI)
    d = A.shape[1]
    L = np.linalg.cholesky(np.linalg.inv(fit.fisher_info))
    z, w = np.polynomial.hermite.hermgauss(k)
    Z = np.array(list(itertools.product(z, repeat=d)))
    W = np.array(list(itertools.product(w, repeat=d)))
    B = fit.beta_hat + (np.sqrt(2.0) * Z) @ L.T
    lw = np.log(W).sum(axis=1) + (Z ** 2).sum(axis=1)
    return logsumexp(jeffreys_log_integrand(B, A, y) + lw) + np.log(np.linalg.det(L)) + 0.5 * d * np.log(2.0)


def laplace_quadrature_gaps(n_sets=20, n=30, seed=0):
    """|Laplace difference - quadrature difference| for model pairs {x1} vs {x1, x2}.

    Our Laplace marginal drops (2 pi)^{d/2}; the difference of two models
    whose sizes differ by one is therefore shifted by 0.5 log(2 pi) before
    comparing with the quadrature value.
    """
    rng = np.random.default_rng(seed)
    gaps = []
    for _ in range(n_sets):
        X = rng.normal(size=(n, 2))
        y = rng.binomial(1, expit(0.3 + 0.8 * X[:, 0] - 0.5 * X[:, 1])).astype(float)
        small, big = [X[:, 0]], [X[:, 0], X[:, 1]]
        lap = log_marginal(small, y, BERNOULLI) - log_marginal(big, y, BERNOULLI) - 0.5 * np.log(2 * np.pi)
        quad = aghq_log_evidence(design_from_columns(small, n), y) - aghq_log_evidence(design_from_columns(big, n), y)
        gaps.append(abs(lap - quad))
    return np.array(gaps)


LOG_AIC = -2.0


def toy_space(n=60, m=3, seed=1, coef=(0.4, 0.25, 0.0), **kw):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, m))
    y = X @ np.array(coef + (0.0,) * (m - len(coef)))[:m] + rng.normal(size=n)
    space = SearchSpace([Input(i) for i in range(m)], X, y, GAUSSIAN, LOG_AIC, kw.pop("Q", m), VisitedStore(), **kw)
    return space, X, y


def exact_target(X, y):
    m = X.shape[1]
    v = np.array([log_marginal([X[:, i] for i in bits(k)], y) + LOG_AIC * len(bits(k)) for k in range(1 << m)])
    p = np.exp(v - v.max())
    return p / p.sum()


U, V = get_transform("sin"), get_transform("tanh")
x = Input(0)


def proj(g, *kids):
    return Projection(g, [0.0] + [1.0] * len(kids), kids)


def _feature_table():
    """All features for m = 1, G = {u, v}, d <= 2, with u = sin and v = tanh.

    Each row is (feature, d, lw, tw), the widths worked out by hand from the
    width rules: x^3 = x*x^2 has tw 2 + 1 + 4 = 7 and v(x+u(x)+v(x)+x^2)
    has tw 13, like its u twin.
    """
    sq = Multiplication(x, x)
    rows = [(x, 0, 1, 1), (Modification(U, x), 1, 1, 2), (Modification(V, x), 1, 1, 2), (sq, 1, 2, 4)]
    ux, vx = Modification(U, x), Modification(V, x)
    for g in (U, V):
        for h in (U, V):
            rows.append((Modification(g, Modification(h, x)), 2, 1, 3))
    for g in (U, V):
        rows += [
            (proj(g, x, ux), 2, 2, 5), (proj(g, x, vx), 2, 2, 5), (proj(g, ux, vx), 2, 2, 6),
            (proj(g, x, ux, vx), 2, 3, 8),
            (Modification(g, sq), 2, 1, 5), (proj(g, x, sq), 2, 2, 7),
            (proj(g, ux, sq), 2, 2, 8), (proj(g, vx, sq), 2, 2, 8),
            (proj(g, x, ux, sq), 2, 3, 10), (proj(g, x, vx, sq), 2, 3, 10),
            (proj(g, ux, vx, sq), 2, 3, 11), (proj(g, x, ux, vx, sq), 2, 4, 13),
        ]
    rows += [(Multiplication(x, ux), 2, 2, 5), (Multiplication(x, vx), 2, 2, 5), (Multiplication(x, sq), 2, 2, 7)]
    return rows


FEATURE_TABLE = _feature_table()
