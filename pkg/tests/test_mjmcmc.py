"""Mode-jumping MCMC kernel over a fixed search space."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgnlm.mjmcmc import (ChainState, KernelConfig, acceptance_log_ratio, bits, large_jump, local_optimize,
                          log_q_r, mjmcmc_step, randomize, run_mjmcmc, to_mask)

from oracles import exact_target, toy_space

class TestMasks:
    def test_round_trip(self):
        assert bits(to_mask([0, 3, 5])) == [0, 3, 5]
        assert bits(0) == []


class TestLargeJump:
    """Independent bit flips, truncated to Q."""

    def test_zero_prob(self):
        rng = np.random.default_rng(0)
        cfg = KernelConfig(large_jump_flip_prob=0.0)
        assert large_jump(0b1011, 6, cfg, rng) == 0b1011

    def test_complement(self):
        rng = np.random.default_rng(0)
        cfg = KernelConfig(large_jump_flip_prob=1.0)
        assert large_jump(0b1011, 6, cfg, rng, max_features=6) == 0b110100

    def test_truncation(self):
        rng = np.random.default_rng(0)
        cfg = KernelConfig(large_jump_flip_prob=1.0)
        for _ in range(50):
            assert len(bits(large_jump(0, 10, cfg, rng, max_features=4))) == 4

    def test_hamming_binomial(self):
        """Mean Hamming distance over 10k draws is s * 0.35 within three standard errors."""
        s, p, N = 20, 0.35, 10_000
        rng = np.random.default_rng(5)
        cfg = KernelConfig()
        h = np.array([(large_jump(0b10101, s, cfg, rng) ^ 0b10101).bit_count() for _ in range(N)])
        se = math.sqrt(s * p * (1 - p) / N)
        assert abs(h.mean() - s * p) < 3 * se


class TestRandomize:
    """Symmetric small randomisation."""

    def test_density_example(self):
        got = math.exp(log_q_r(0b11, 0, 10, 0.05))
        assert got == pytest.approx(0.05 ** 2 * 0.95 ** 8, rel=1e-12)
        # 0.0025 * 0.95^8 = 0.00165855
        assert got == pytest.approx(0.00165855, abs=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 12 - 1), st.integers(0, 2 ** 12 - 1))
    def test_symmetric(self, a, b):
        assert log_q_r(a, b, 12, 0.05) == log_q_r(b, a, 12, 0.05)

    def test_density_sums_to_one(self):
        total = sum(math.exp(log_q_r(0, b, 6, 0.05)) for b in range(64))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_small_prob_identity(self):
        rng = np.random.default_rng(0)
        cfg = KernelConfig(randomize_flip_prob=1e-12)
        assert all(randomize(0b101, 8, cfg, rng) == 0b101 for _ in range(100))

    def test_validation(self):
        with pytest.raises(ValueError):
            KernelConfig(randomize_flip_prob=0.5).validate()
        with pytest.raises(ValueError):
            KernelConfig(local_method="tabu").validate()


class TestLocalOptimize:
    """Greedy and annealed local search."""

    def test_global_optimum_fixed(self):
        space, X, y = toy_space()
        best = int(np.argmax(exact_target(X, y)))
        assert local_optimize(best, KernelConfig(), space) == best

    def test_recovers_single_feature(self):
        space, _, _ = toy_space(n=200, m=6, seed=3, coef=(0.0, 0.0, 0.0, 1.0))
        out = local_optimize(0, KernelConfig(), space)
        assert 3 in bits(out)
        assert space(out) >= space(0)

    def test_zero_steps(self):
        space, _, _ = toy_space()
        assert local_optimize(0b010, KernelConfig(local_steps=0), space) == 0b010

    def test_annealing_never_worse(self):
        space, _, _ = toy_space(n=200, m=6, seed=3, coef=(0.0, 0.0, 0.0, 1.0))
        cfg = KernelConfig(local_method="simulated_annealing", local_steps=40)
        out = local_optimize(0, cfg, space, np.random.default_rng(1))
        assert space(out) >= space(0)


class TestStep:
    """Acceptance rule and the Markov kernel."""

    def test_identical_proposal_accepts(self):
        lr = acceptance_log_ratio(-3.0, -3.0, 5, 9, 5, 9, 8, 0.05)
        assert lr == 0.0

    def test_zero_mass_rejected(self):
        assert acceptance_log_ratio(-3.0, -math.inf, 0, 0, 1, 1, 4, 0.05) == -math.inf

    def test_q_violation_never_accepted(self):
        space, _, _ = toy_space(Q=1)
        state = ChainState(0b001, space(0b001))
        rng = np.random.default_rng(0)
        for _ in range(2000):
            mjmcmc_step(state, KernelConfig(), space, rng)
            assert len(bits(state.current)) <= 1

    def test_stores_every_evaluation(self):
        space, _, _ = toy_space(m=5, coef=(0.4, 0.25, 0.0, 0.0, 0.3))
        run_mjmcmc(space, KernelConfig(mh_step_prob=0.0), 30, np.random.default_rng(0))
        finite = sum(1 for v in space.cache.values() if v > -math.inf)
        assert len(space.store) == finite

    def test_cache_does_not_change_kernel(self):
        a, _, _ = toy_space(m=5, coef=(0.4, 0.25, 0.0, 0.0, 0.3))
        b, _, _ = toy_space(m=5, coef=(0.4, 0.25, 0.0, 0.0, 0.3), use_cache=False)
        _, pa = run_mjmcmc(a, KernelConfig(), 500, np.random.default_rng(9), trace=True)
        _, pb = run_mjmcmc(b, KernelConfig(), 500, np.random.default_rng(9), trace=True)
        assert pa == pb

    def test_stationarity(self):
        """100k steps on 3 covariates: visit frequencies within TV 0.05 of the exact posterior."""
        space, X, y = toy_space()
        _, path = run_mjmcmc(space, KernelConfig(), 100_000, np.random.default_rng(2), trace=True)
        freq = np.bincount(path, minlength=8) / len(path)
        assert 0.5 * np.abs(freq - exact_target(X, y)).sum() < 0.05
