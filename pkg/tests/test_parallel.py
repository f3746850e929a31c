"""Independent chains and mass-weighted aggregation."""
import json

import numpy as np
import pytest

from bgnlm.gmjmcmc import GMJMCMCConfig, RunSummary, run_chain
from bgnlm.parallel import (aggregate, chain_weights, merged_store, run_parallel, successful, write_report_csv,
                            write_report_json)
from bgnlm.errors import BGNLMError


def random_summaries(rng, B=None, K=8):
    B = B or int(rng.integers(1, 7))
    keys = [f"f{i}" for i in range(K)]
    out = []
    for b in range(B):
        present = rng.random(K) < 0.7
        fp = {k: float(rng.random()) for k, p in zip(keys, present) if p}
        out.append(RunSummary(fp, float(rng.normal(scale=200.0)), 10, b))
    return out


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(100, 5))
    y = X[:, 0] - X[:, 1] * X[:, 2] + rng.normal(size=100)
    cfg = GMJMCMCConfig(s=6, Q=6, L=6, T=2, N_init=20, N_expl=20, N_final=30, D=2)
    return X, y, cfg


class TestWeights:
    """u_b = softmax(s_b)."""

    def test_sum_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            u = chain_weights(random_summaries(rng))
            assert abs(u.sum() - 1.0) < 1e-12

    def test_equal_mass(self):
        s = [RunSummary({}, -5.0, 1, b) for b in range(4)]
        np.testing.assert_allclose(chain_weights(s), 0.25)

    def test_logistic_example(self):
        s = [RunSummary({}, 10.0, 1, 0), RunSummary({}, 0.0, 1, 1)]
        u = chain_weights(s)
        assert u[0] == pytest.approx(1.0 / (1.0 + np.exp(-10.0)), rel=1e-14)
        assert round(u[0], 7) == 0.9999546

    def test_huge_masses(self):
        s = [RunSummary({}, -1e6, 1, 0), RunSummary({}, -1e6 - 1, 1, 1)]
        assert np.all(np.isfinite(chain_weights(s)))

    def test_uniform(self):
        s = [RunSummary({}, 100.0, 1, 0), RunSummary({}, 0.0, 1, 1)]
        np.testing.assert_allclose(chain_weights(s, "uniform"), 0.5)
        with pytest.raises(ValueError):
            chain_weights(s, "median")


class TestAggregate:
    """Merged posteriors."""

    def test_convex(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            summ = random_summaries(rng)
            merged = aggregate(summ)
            for k, p in merged.items():
                per = [r.feature_posteriors.get(k, 0.0) for r in summ]
                assert min(per) - 1e-12 <= p <= max(per) + 1e-12

    def test_single_chain(self):
        r = RunSummary({"a": 0.3, "b": 0.9}, -4.0, 2, 0)
        assert aggregate([r]) == pytest.approx(r.feature_posteriors)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        summ = random_summaries(rng, B=5)
        a, b = aggregate(summ), aggregate(summ[::-1])
        assert a.keys() == b.keys()
        for k in a:
            assert a[k] == pytest.approx(b[k], abs=1e-14)


class TestRun:
    """Running several chains."""

    def test_single_equals_run_chain(self, data):
        X, y, cfg = data
        (r,) = run_parallel(X, y, cfg, 1, base_seed=3, workers=1)
        ref = run_chain(X, y, cfg, seed=3)
        assert r.feature_posteriors == ref.feature_posteriors and r.mass_s_b == ref.mass_s_b

    def test_seeds_reproducible(self, data):
        X, y, cfg = data
        a = run_parallel(X, y, cfg, 2, base_seed=5, workers=1)
        b = run_parallel(X, y, cfg, 2, base_seed=5, workers=1)
        assert [r.seed for r in a] == [5, 6]
        assert [r.feature_posteriors for r in a] == [r.feature_posteriors for r in b]

    def test_processes_match_serial(self, data):
        X, y, cfg = data
        a = run_parallel(X, y, cfg, 2, base_seed=0, workers=1)
        b = run_parallel(X, y, cfg, 2, base_seed=0, workers=2)
        assert [r.feature_posteriors for r in a] == [r.feature_posteriors for r in b]

    def test_all_failed(self):
        with pytest.raises(BGNLMError):
            successful([RunSummary({}, float("-inf"), 0, 0, failed=True)])

    def test_reports(self, data, tmp_path):
        X, y, cfg = data
        runs = run_parallel(X, y, cfg, 2, workers=1)
        merged = aggregate(runs)
        store = merged_store(runs)
        write_report_csv(runs, merged, tmp_path / "r.csv", features=store.features)
        write_report_json(runs, merged, tmp_path / "r.json")
        head = (tmp_path / "r.csv").read_text().splitlines()[0]
        assert head == "feature_key,aggregated_posterior,chain_min,chain_max,expression"
        doc = json.loads((tmp_path / "r.json").read_text())
        assert sum(c["weight"] for c in doc["chains"]) == pytest.approx(1.0)
        assert len(store) >= max(r.model_count for r in runs)
