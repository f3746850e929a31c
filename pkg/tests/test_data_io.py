"""CSV loading, dummy coding, splitting and synthetic generators."""
import json

import numpy as np
import pytest

from bgnlm.data_io import (LOGIC_TERMS, Dataset, SyntheticSpec, gen_synthetic, load_csv, logic_mean,
                           mass_truth_features, train_test_split, write_summary)
from bgnlm.errors import EmptyAfterFiltering, ParseError, UnknownColumn
from bgnlm.features import Input, Multiplication, canonical_key, evaluate, flat_key


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoad:
    """CSV parsing."""

    def test_numeric_passthrough(self, tmp_path):
        p = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9.5\n")
        ds = load_csv(p, "y")
        np.testing.assert_array_equal(ds.X, [[1, 2], [4, 5], [7, 8]])
        np.testing.assert_array_equal(ds.y, [3, 6, 9.5])
        assert ds.column_names == ("a", "b") and ds.dropped_rows == 0

    def test_three_level_factor(self, tmp_path):
        p = write(tmp_path, "sex,len,y\nM,1,1\nF,2,0\nI,3,1\nM,4,0\n")
        ds = load_csv(p, "y", ["sex"])
        assert ds.column_names == ("sex_I", "sex_M", "len")
        np.testing.assert_array_equal(ds.X[:, 0], [0, 0, 1, 0])
        np.testing.assert_array_equal(ds.X[:, 1], [1, 0, 0, 1])
        assert ds.family_hint == "bernoulli"

    def test_missing_cell(self, tmp_path):
        rows = [f"{i},{i * 2},{i % 3}" for i in range(100)]
        rows[37] = "37,,1"
        p = write(tmp_path, "a,b,y\n" + "\n".join(rows) + "\n")
        ds = load_csv(p, "y")
        assert ds.n == 99 and ds.dropped_rows == 1

    def test_na_markers(self, tmp_path):
        p = write(tmp_path, "a,y\n1,NA\n2,3\n?,4\n5,6\n")
        ds = load_csv(p, "y")
        assert ds.n == 2 and ds.dropped_rows == 2

    def test_parse_error(self, tmp_path):
        p = write(tmp_path, "a,y\n1,2\nabc,3\n")
        with pytest.raises(ParseError) as info:
            load_csv(p, "y")
        assert info.value.row == 3 and info.value.col == "a"

    def test_unknown_column(self, tmp_path):
        p = write(tmp_path, "a,y\n1,2\n3,4\n")
        with pytest.raises(UnknownColumn):
            load_csv(p, "z")

    def test_empty_after_filtering(self, tmp_path):
        p = write(tmp_path, "a,y\n1,\n,2\n3,4\n")
        with pytest.raises(EmptyAfterFiltering):
            load_csv(p, "y")

    def test_quoted_fields(self, tmp_path):
        p = write(tmp_path, 'g,y\n"a, b",1\n"c",2\n"a, b",3\n')
        ds = load_csv(p, "y", ["g"])
        assert ds.column_names == ("g_c",)


class TestSplit:
    def test_partition(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(50, 2)), rng.normal(size=50), ("a", "b"))
        tr, te = train_test_split(ds, 0.2, np.random.default_rng(1))
        assert (tr.n, te.n) == (40, 10)
        both = np.sort(np.concatenate([tr.y, te.y]))
        np.testing.assert_array_equal(both, np.sort(ds.y))

    def test_standardized(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(3, 5, size=(50, 2)), rng.normal(size=50), ("a", "b")).standardized()
        np.testing.assert_allclose(ds.X.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(ds.X.std(axis=0), 1)


class TestSynthetic:
    """Generators for the recovery experiments."""

    def test_logic_coefficients(self):
        # E(Y) = 1 + 1.5 X7 + 1.5 X8 + 6.6 X18 X21 + 3.5 X2 X9 + 9 X12 X20 X37
        #          + 7 X1 X3 X27 + 7 X4 X10 X17 X30 + 7 X11 X13 X19 X50
        want = {(7,): 1.5, (8,): 1.5, (18, 21): 6.6, (2, 9): 3.5, (12, 20, 37): 9.0, (1, 3, 27): 7.0,
                (4, 10, 17, 30): 7.0, (11, 13, 19, 50): 7.0}
        assert {idx: c for c, idx in LOGIC_TERMS} == want
        ds = gen_synthetic(SyntheticSpec("logic", 1000, 1.0, 0))
        assert ds.X.shape == (1000, 50) and set(np.unique(ds.X)) == {0.0, 1.0}
        # least squares on the true design recovers the coefficients
        cols = [np.ones(1000)] + [np.prod(ds.X[:, [j - 1 for j in idx]], axis=1) for _, idx in LOGIC_TERMS]
        beta = np.linalg.lstsq(np.column_stack(cols), ds.y, rcond=None)[0]
        np.testing.assert_allclose(beta, [1.0] + [c for c, _ in LOGIC_TERMS], atol=0.35)

    def test_logic_noise_free_mean(self):
        ds = gen_synthetic(SyntheticSpec("logic", 200, 0.0, 3))
        np.testing.assert_allclose(ds.y, logic_mean(ds.X))
        assert len(ds.truths) == 8

    def test_kepler_noise_free(self):
        ds = gen_synthetic(SyntheticSpec("kepler", 223, 0.0, 1))
        np.testing.assert_allclose(ds.y, np.cbrt(ds.X[:, 0] ** 2 * ds.X[:, 1]), rtol=1e-12)
        assert ds.column_names[:4] == ("P", "M_h", "R_h", "T_h")

    def test_kepler_truth_class_correlated(self):
        ds = gen_synthetic(SyntheticSpec("kepler", 223, 0.01, 2))
        P, M, R, T = ds.X[:, :4].T
        law = np.cbrt(P * P * M)
        assert np.corrcoef(law, np.cbrt(P * P * R))[0, 1] > 0.99
        assert np.corrcoef(law, np.cbrt(P * P * T))[0, 1] > 0.99
        assert len(ds.truths) == 1 and len(ds.truths[0]) == 3

    def test_mass_truth_key(self):
        R, rho = Input(0), Input(1)
        f = Multiplication(Multiplication(Multiplication(R, R), R), rho)
        (truth,) = mass_truth_features()
        assert canonical_key(truth) == canonical_key(f)
        ds = gen_synthetic(SyntheticSpec("mass", 200, 0.0, 0))
        np.testing.assert_allclose(ds.y, evaluate(f, ds.X))
        assert ds.truths[0] == {flat_key(f)}

    def test_seeded(self):
        a = gen_synthetic(SyntheticSpec("kepler", 50, 0.01, 9))
        b = gen_synthetic(SyntheticSpec("kepler", 50, 0.01, 9))
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_spec_checks(self):
        with pytest.raises(ValueError):
            SyntheticSpec("logic", n=20)
        with pytest.raises(ValueError):
            SyntheticSpec("mass", noise_sd=-1.0)
        with pytest.raises(ValueError):
            SyntheticSpec("weather")

    def test_summary(self, tmp_path):
        ds = gen_synthetic(SyntheticSpec("mass", 60, 0.01, 0))
        write_summary(ds, tmp_path / "s.json")
        doc = json.loads((tmp_path / "s.json").read_text())
        assert doc["n"] == 60 and doc["columns"][:2] == ["R", "rho"]
