"""Population initialisation, evolution and whole chains."""
import math

import numpy as np
import pytest

from bgnlm.errors import ConfigError
from bgnlm.experiments import enumeration_config, enumeration_data, exact_posterior
from bgnlm.features import Input, Multiplication, is_redundant
from bgnlm.gmjmcmc import (Chain, GMJMCMCConfig, Population, draw_kind, evolve_population, init_population,
                           retained, run_chain)
from bgnlm.alpha import KINDS
from bgnlm.model_space import posterior, prior_a


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 10))
    y = 2.0 * X[:, 3] + 0.5 * X[:, 0] * X[:, 1] + rng.normal(size=200)
    return X, y


class TestConfig:
    """Schedule validation."""

    def test_kind_sum(self):
        with pytest.raises(ConfigError, match="kind probabilities must sum to 1"):
            GMJMCMCConfig(kind_probs=(0.5, 0.5, 0.5, 0.5)).validate()

    def test_reducible(self):
        with pytest.raises(ConfigError):
            GMJMCMCConfig(kind_probs=(0.2, 0.4, 0.4, 0.0), protected_count=0).validate()

    def test_population_size(self):
        with pytest.raises(ConfigError, match="min\\(Q, L\\)"):
            GMJMCMCConfig(s=5, Q=10, L=10).validate()

    def test_default_valid(self):
        GMJMCMCConfig().validate()


class TestInit:
    """Marginal screening of the original covariates."""

    def test_strongest_first(self, data):
        X, y = data
        cfg = GMJMCMCConfig(s=5, Q=5, L=5, preselect_q0=5)
        pop = init_population(X, y, cfg, np.random.default_rng(0))
        assert pop.features[0] == Input(3)
        assert len(pop) == 5 and "x3" in pop.protected

    def test_all_covariates_when_few(self, data):
        X, y = data
        pop = init_population(X[:, :4], y, GMJMCMCConfig(s=20), np.random.default_rng(0))
        assert sorted(pop.keys) == ["x0", "x1", "x2", "x3"]

    def test_padding_is_seeded(self, data):
        X, y = data
        cfg = GMJMCMCConfig(s=6, Q=6, L=6, preselect_q0=2)
        a = init_population(X, y, cfg, np.random.default_rng(4))
        b = init_population(X, y, cfg, np.random.default_rng(4))
        assert a.keys == b.keys and len(a) == 6


class TestEvolve:
    """Transitions between populations."""

    def setup_method(self):
        rng = np.random.default_rng(1)
        self.X = rng.normal(size=(100, 6))
        self.y = self.X[:, 0] * self.X[:, 1] + rng.normal(size=100)
        self.originals = [Input(j) for j in range(6)]
        self.pop = Population(list(self.originals[:4]), frozenset({"x0"}))

    def cfg(self, **kw):
        base = dict(s=4, Q=4, L=4, D=3, protected_count=1)
        base.update(kw)
        return GMJMCMCConfig(**base)

    def test_all_kept(self):
        cfg = self.cfg()
        new = evolve_population(self.pop, np.ones(4), self.originals, cfg, cfg.library(), self.X, self.y,
                                np.random.default_rng(0))
        assert new.keys == self.pop.keys

    def test_retained_rules(self):
        cfg = self.cfg(s=8, Q=8, L=8)
        pop = Population([Input(j) for j in range(6)] + [Multiplication(Input(0), Input(1)),
                                                         Multiplication(Input(2), Input(3))], frozenset({"x5"}))
        incl = np.array([0.9, 0.1, 0.2, 0.6, 0.0, 0.0, 0.3, 0.05])
        # above 0.5: 0, 3; top ceil(8/4) = 2: 0, 3; protected: 5
        assert retained(pop, incl, cfg) == [0, 3, 5]

    def test_inputs_only(self):
        cfg = self.cfg(kind_probs=(0.0, 0.0, 0.0, 1.0))
        new = evolve_population(self.pop, np.array([1.0, 0.0, 0.0, 0.0]), self.originals, cfg, cfg.library(),
                                self.X, self.y, np.random.default_rng(0))
        assert all(isinstance(f, Input) for f in new.features)
        assert len(new) == 4

    def test_population_invariants(self):
        cfg = self.cfg(s=6, Q=6, L=6)
        rng = np.random.default_rng(2)
        pop = Population(list(self.originals), frozenset({"x0"}))
        for _ in range(10):
            incl = rng.uniform(size=len(pop))
            pop = evolve_population(pop, incl, self.originals, cfg, cfg.library(), self.X, self.y, rng)
            assert len(pop) == 6
            assert len(set(pop.keys)) == 6
            assert all(f.depth <= cfg.D for f in pop.features)
            for i, f in enumerate(pop.features):
                assert not is_redundant(f, pop.features[:i] + pop.features[i + 1:], self.X)

    def test_kind_frequencies(self):
        """10k kind draws agree with (P_p, P_mo, P_mu, P_i) within three multinomial standard errors."""
        probs = np.array([0.1, 0.3, 0.4, 0.2])
        rng = np.random.default_rng(3)
        N = 10_000
        counts = np.array([0, 0, 0, 0])
        for _ in range(N):
            counts[KINDS.index(draw_kind(probs, rng))] += 1
        se = np.sqrt(probs * (1 - probs) / N)
        assert np.all(np.abs(counts / N - probs) < 3 * se)


class TestChain:
    """Whole chains."""

    def test_deterministic(self, data):
        X, y = data
        cfg = GMJMCMCConfig(s=10, Q=10, L=10, T=3, N_init=30, N_expl=30, N_final=50, D=3)
        a, b = run_chain(X, y, cfg, seed=7), run_chain(X, y, cfg, seed=7)
        assert a.feature_posteriors == b.feature_posteriors
        assert a.mass_s_b == b.mass_s_b and a.model_count == b.model_count

    def test_depth_bound(self, data):
        X, y = data
        cfg = GMJMCMCConfig(s=10, Q=10, L=10, T=4, N_init=30, N_expl=30, N_final=50, D=2)
        chain = Chain(X, y, cfg, seed=1)
        chain.run()
        assert all(f.depth <= 2 for f in chain.store.features.values())
        assert all(len(p) == 10 for p in chain.populations)

    def test_reports_probabilities(self, data):
        X, y = data
        cfg = GMJMCMCConfig(s=10, Q=10, L=10, T=3, N_init=30, N_expl=30, N_final=50, D=3)
        res = run_chain(X, y, cfg, seed=2)
        assert not res.failed and math.isfinite(res.mass_s_b)
        assert all(0.0 <= p <= 1.0 for p in res.feature_posteriors.values())
        assert res.feature_posteriors["x3"] > 0.99

    def test_plain_mjmcmc_when_no_evolution(self):
        """T = 1, D = 0 visits only original covariates and matches the enumeration once complete."""
        X, y = enumeration_data(0)
        cfg = enumeration_config(4)
        chain = Chain(X, y, cfg, seed=0)
        chain.run()
        assert len(chain.store) == 16
        exact = exact_posterior(X, y, prior_a(cfg.a, len(y)))
        got = posterior(chain.store)
        assert max(abs(got[k] - p) for k, p in exact.items()) < 1e-10
