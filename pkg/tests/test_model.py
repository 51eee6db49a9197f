import numpy as np
import pytest
from scipy.stats import poisson

from arealrisk.model import (
    Dataset,
    ModelSpec,
    apply_link,
    internal_standardization,
    linear_predictor,
    load_dataset,
    log_likelihood_cg,
    log_likelihood_is,
)


def static_dataset(y, n, x=None):
    y = np.asarray(y)
    ids = [f"r{i}" for i in range(len(y))]
    if x is None:
        x = np.ones((len(y), 1))
    return Dataset(ids, y, n, x)


def random_static(rng, I):
    y = rng.integers(0, 21, size=I)
    n = rng.uniform(5.0, 200.0, size=I)
    return static_dataset(y, n)


class TestDataset:
    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError):
            static_dataset([-1, 2], [10.0, 10.0])

    def test_rejects_nonpositive_population(self):
        with pytest.raises(ValueError):
            static_dataset([1, 2], [10.0, 0.0])

    def test_panel_shape_checks(self):
        with pytest.raises(ValueError):
            Dataset(["a", "b"], np.zeros((2, 3)), np.ones((2, 2)),
                    np.ones((2, 3, 1)), times=(1, 2, 3))

    def test_intercept_column_detected(self):
        d = static_dataset([1, 2], [5.0, 5.0], x=np.array([[1.0, 0.3], [1.0, -0.2]]))
        assert d.intercept_column == 0

    def test_reindex_roundtrip(self):
        d = static_dataset([1, 2, 3], [5.0, 6.0, 7.0])
        r = d.reindex(["r2", "r0", "r1"])
        assert r.region_ids == ("r2", "r0", "r1")
        assert list(r.y) == [3, 1, 2]
        assert r.reindex(d.region_ids).y.tolist() == d.y.tolist()


class TestInternalStandardization:
    def test_direct_arithmetic(self):
        d = static_dataset([1, 2, 3], [10.0, 20.0, 30.0])
        E = internal_standardization(d)
        assert E == pytest.approx([1.0, 2.0, 3.0])

    def test_equal_populations_give_mean_count(self):
        d = static_dataset([4, 0, 8], [7.0, 7.0, 7.0])
        E = internal_standardization(d)
        assert E == pytest.approx([4.0, 4.0, 4.0])

    def test_per_slice_identity(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 30, size=(4, 2)) + 1
        n = rng.uniform(10, 100, size=(4, 2))
        d = Dataset(["a", "b", "c", "d"], y, n, np.ones((4, 2, 1)), times=(1990, 1991))
        E = internal_standardization(d)
        for t in range(2):
            assert E[:, t].sum() == pytest.approx(y[:, t].sum(), rel=1e-12)

    def test_all_zero_slice_rejected(self):
        d = static_dataset([0, 0], [10.0, 20.0])
        with pytest.raises(ValueError, match="zero"):
            internal_standardization(d)

    def test_sum_identity_large(self):
        rng = np.random.default_rng(1)
        for I in (500, 10_000):
            d = random_static(rng, I)
            E = internal_standardization(d)
            assert E.sum() == pytest.approx(d.y.sum(), rel=1e-12)

    def test_all_zero_panel_slice_rejected(self):
        y = np.array([[3, 0], [1, 0]])
        n = np.full((2, 2), 10.0)
        d = Dataset(["a", "b"], y, n, np.ones((2, 2, 1)), times=(1990, 1991))
        with pytest.raises(ValueError, match="1991"):
            internal_standardization(d)


class TestLinks:
    def test_logit_at_zero(self):
        assert apply_link("logit", 0.0) == pytest.approx(0.5)

    def test_cloglog_at_zero(self):
        assert apply_link("cloglog", 0.0) == pytest.approx(1.0 - np.exp(-1.0))

    def test_skewed_logit_at_zero(self):
        assert apply_link("skewed_logit", 0.0, c0=0.004) == pytest.approx(0.004 / 1.004)

    @pytest.mark.parametrize("link,c0", [("logit", None), ("cloglog", None),
                                         ("skewed_logit", 0.004)])
    def test_monotone_on_grid(self, link, c0):
        grid = np.linspace(-20, 20, 401)
        p = apply_link(link, grid, c0)
        assert np.all(np.diff(p) >= 0)
        interior = (p > 1e-9) & (p < 1.0 - 1e-9)
        assert np.all(np.diff(p[interior]) > 0)

    @pytest.mark.parametrize("link,c0", [("logit", None), ("cloglog", None),
                                         ("skewed_logit", 0.004)])
    def test_limits_saturate_without_hitting_bounds(self, link, c0):
        lo = apply_link(link, -1e4, c0)
        hi = apply_link(link, 1e4, c0)
        assert 0.0 < lo < 1e-9
        assert 1.0 - 1e-9 < hi < 1.0

    def test_skewed_requires_c0(self):
        with pytest.raises(ValueError):
            apply_link("skewed_logit", 0.0)


class TestModelSpec:
    def test_cg_defaults_to_logit(self):
        assert ModelSpec("cg").link == "logit"

    def test_is_rejects_link(self):
        with pytest.raises(ValueError):
            ModelSpec("is", link="logit")

    def test_skewed_requires_c0(self):
        with pytest.raises(ValueError):
            ModelSpec("cg", link="skewed_logit")

    def test_bad_tau_prior(self):
        with pytest.raises(ValueError):
            ModelSpec("cg", tau_prior=(0.0, 1.0))


class TestLikelihoods:
    def test_cg_zero_count(self):
        d = static_dataset([0], [10.0])
        # eta = 0 -> p = 0.5 -> Poisson mean 5, count 0
        assert log_likelihood_cg(d, [0.0], [0.0], "logit") == pytest.approx(-5.0)

    def test_cg_two_counts(self):
        d = static_dataset([2], [10.0])
        expected = -5.0 + 2.0 * np.log(5.0) - np.log(2.0)
        assert log_likelihood_cg(d, [0.0], [0.0], "logit") == pytest.approx(expected)

    def test_is_zero_count(self):
        d = static_dataset([0], [10.0])
        assert log_likelihood_is(d, np.array([2.0]), [0.0], [0.0]) == pytest.approx(-2.0)

    def test_is_two_counts(self):
        d = static_dataset([2], [10.0])
        expected = -2.0 + 2.0 * np.log(2.0) - np.log(2.0)
        assert log_likelihood_is(d, np.array([2.0]), [0.0], [0.0]) == pytest.approx(expected)

    def test_cg_matches_poisson_pmf_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(40):
            I = int(rng.integers(1, 11))
            d = random_static(rng, I)
            beta = rng.normal(scale=0.5, size=1)
            phi = rng.normal(scale=0.5, size=I)
            for link, c0 in (("logit", None), ("cloglog", None), ("skewed_logit", 0.3)):
                p = apply_link(link, d.x @ beta + phi, c0)
                oracle = poisson.logpmf(d.y, d.n * p).sum()
                got = log_likelihood_cg(d, beta, phi, link, c0)
                assert got == pytest.approx(oracle, rel=1e-9, abs=1e-9)

    def test_is_matches_poisson_pmf_oracle(self):
        rng = np.random.default_rng(321)
        for _ in range(40):
            I = int(rng.integers(1, 11))
            d = random_static(rng, I)
            E = rng.uniform(0.5, 30.0, size=I)
            beta = rng.normal(scale=0.5, size=1)
            phi = rng.normal(scale=0.5, size=I)
            oracle = poisson.logpmf(d.y, E * np.exp(d.x @ beta + phi)).sum()
            got = log_likelihood_is(d, E, beta, phi)
            assert got == pytest.approx(oracle, rel=1e-9, abs=1e-9)

    def test_panel_likelihood_matches_oracle(self):
        rng = np.random.default_rng(77)
        I, T = 4, 3
        y = rng.integers(0, 15, size=(I, T))
        n = rng.uniform(20, 80, size=(I, T))
        d = Dataset([f"r{i}" for i in range(I)], y, n, np.ones((I, T, 1)),
                    times=(1, 2, 3))
        beta = np.array([-2.0])
        phi = rng.normal(scale=0.3, size=I)
        alpha = rng.normal(scale=0.2, size=T)
        eta = np.ones((I, T)) * beta[0] + phi[:, None] + alpha[None, :]
        p = apply_link("logit", eta)
        oracle = poisson.logpmf(y, n * p).sum()
        got = log_likelihood_cg(d, beta, phi, "logit", alpha=alpha)
        assert got == pytest.approx(oracle, rel=1e-9)


class TestLinearPredictor:
    def test_static(self):
        d = static_dataset([1, 1], [5.0, 5.0])
        assert linear_predictor(d, [0.3], [-0.1, 0.0], None, 0) == pytest.approx(0.2)

    def test_dynamic_adds_alpha(self):
        d = Dataset(["a"], [[1, 1]], [[5.0, 5.0]], np.ones((1, 2, 1)), times=(1, 2))
        val = linear_predictor(d, [0.3], [-0.1], [0.0, 0.05], 0, t=1)
        assert val == pytest.approx(0.25)

    def test_all_zero(self):
        d = static_dataset([1], [5.0])
        assert linear_predictor(d, [0.0], [0.0], None, 0) == 0.0


class TestLoader:
    def test_static_roundtrip(self, tmp_path):
        f = tmp_path / "data.csv"
        f.write_text("region,y,n,x1\nA,3,100,0.5\nB,1,50,-0.2\n")
        d = load_dataset(f)
        assert d.region_ids == ("A", "B")
        assert not d.is_dynamic
        assert d.y.tolist() == [3, 1]
        assert d.x.shape == (2, 2)  # intercept prepended
        assert d.x[:, 0].tolist() == [1.0, 1.0]
        assert d.x[:, 1].tolist() == [0.5, -0.2]

    def test_panel_roundtrip(self, tmp_path):
        f = tmp_path / "data.csv"
        f.write_text(
            "region,year,y,n\nA,1990,3,100\nA,1991,4,110\nB,1990,1,50\nB,1991,2,55\n"
        )
        d = load_dataset(f)
        assert d.is_dynamic
        assert d.times == (1990, 1991)
        assert d.y[0].tolist() == [3, 4]
        assert d.n[1].tolist() == [50.0, 55.0]

    def test_incomplete_panel_rejected(self, tmp_path):
        f = tmp_path / "data.csv"
        f.write_text("region,year,y,n\nA,1990,3,100\nA,1991,4,110\nB,1990,1,50\n")
        with pytest.raises(ValueError, match="incomplete"):
            load_dataset(f)

    def test_duplicate_panel_row_rejected(self, tmp_path):
        f = tmp_path / "data.csv"
        f.write_text("region,year,y,n\nA,1990,3,100\nA,1990,4,110\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_dataset(f)

    def test_bad_header_rejected(self, tmp_path):
        f = tmp_path / "data.csv"
        f.write_text("id,y,n\nA,3,100\n")
        with pytest.raises(ValueError, match="header"):
            load_dataset(f)
