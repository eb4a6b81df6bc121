import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qmcgreeks.exceptions import ConfigurationError, ShapeError, UnsupportedPayoffError
from qmcgreeks.paths import MarketModel, PathBatch
from qmcgreeks.payoffs import (
    AsianBasketCall,
    AsianCall,
    Cliquet,
    DoubleKnockOutCall,
    EuropeanBasketCall,
    GeometricAsianCall,
    PayoffTransformer,
    discounted_payoff,
    payoff,
    payoff_from_dict,
)

W5 = (0.2, 0.2, 0.2, 0.2, 0.2)
positive_paths = arrays(np.float64, st.integers(1, 12), elements=st.floats(1.0, 300.0))


def _batch(spots, S0):
    spots = np.asarray(spots, dtype=np.float64)
    S0 = np.asarray(S0, dtype=np.float64)
    return PathBatch(spots, spots / S0, np.zeros_like(spots), S0)


class TestExamples:
    def test_asian_constant_path(self):
        assert payoff(AsianCall(100.0), np.full(32, 110.0), 100.0) == pytest.approx(10.0)

    def test_dko_hits_upper_barrier(self):
        path = np.array([100.0, 120.0, 150.0, 110.0])
        assert payoff(DoubleKnockOutCall(100.0, 50.0, 150.0), path, 100.0) == 0.0

    def test_dko_alive(self):
        path = np.array([100.0, 120.0, 149.9, 110.0])
        assert payoff(DoubleKnockOutCall(100.0, 50.0, 150.0), path, 100.0) == pytest.approx(10.0)

    def test_dko_lower_barrier_tie_kills(self):
        path = np.array([100.0, 50.0, 120.0])
        assert payoff(DoubleKnockOutCall(100.0, 50.0, 150.0), path, 100.0) == 0.0

    def test_cliquet_constant_path_floor(self):
        assert payoff(Cliquet(0.08, 0.16), np.full(32, 100.0), 100.0) == pytest.approx(0.16)

    def test_cliquet_first_return_from_spot(self):
        # returns: 0.05 (from S0), capped 0.08, negative -> 0
        path = np.array([105.0, 126.0, 120.0])
        assert payoff(Cliquet(0.08, 0.0), path, 100.0) == pytest.approx(0.05 + 0.08)

    def test_euro_basket_at_the_money(self):
        path = np.array([[80.0, 90.0, 100.0, 110.0, 120.0]])
        S0 = [80.0, 90.0, 100.0, 110.0, 120.0]
        assert payoff(EuropeanBasketCall(100.0, W5), path, S0) == 0.0

    def test_asian_basket(self):
        path = np.array([[100.0, 100.0], [120.0, 140.0]])
        assert payoff(AsianBasketCall(100.0, (0.5, 0.5)), path, [100.0, 100.0]) == pytest.approx(15.0)

    def test_geometric_asian(self):
        assert payoff(GeometricAsianCall(100.0), np.array([100.0, 121.0]), 100.0) == pytest.approx(10.0)

    def test_discount(self):
        m0 = MarketModel([100.0], [0.3], r=0.0)
        m5 = MarketModel([100.0], [0.3], r=0.05)
        path = np.full(4, 110.0)
        assert discounted_payoff(AsianCall(100.0), path, m0) == pytest.approx(10.0)
        assert discounted_payoff(AsianCall(100.0), path, m5) == pytest.approx(10.0 * np.exp(-0.05))


class TestValidation:
    def test_single_asset_shape(self):
        with pytest.raises(ShapeError):
            payoff(AsianCall(100.0), np.ones((4, 2)) * 100, [100.0, 100.0])

    def test_basket_weight_count(self):
        with pytest.raises(ShapeError):
            payoff(EuropeanBasketCall(100.0, W5), np.ones((1, 3)) * 100, [100.0] * 3)

    def test_weights_sum(self):
        with pytest.raises(ConfigurationError):
            EuropeanBasketCall(100.0, (0.5, 0.4))

    def test_barriers_bracket_spot(self):
        with pytest.raises(ConfigurationError):
            DoubleKnockOutCall(100.0, 50.0, 150.0).check_model([160.0])
        with pytest.raises(ConfigurationError):
            DoubleKnockOutCall(100.0, 150.0, 50.0)

    def test_negative_cap(self):
        with pytest.raises(ConfigurationError):
            Cliquet(-0.1, 0.16)

    def test_from_dict_round_trip(self):
        for p in (AsianCall(95.0), DoubleKnockOutCall(100.0, 60.0, 140.0), Cliquet(0.05, 0.1),
                  EuropeanBasketCall(100.0, (0.5, 0.5)), AsianBasketCall(100.0, W5)):
            assert payoff_from_dict(p.to_dict()) == p

    def test_from_dict_unknown(self):
        with pytest.raises(ConfigurationError):
            payoff_from_dict({"kind": "LOOKBACK"})
        with pytest.raises(ConfigurationError):
            payoff_from_dict({"kind": "ASIAN", "strike": 1.0})

    def test_unsupported_adjoints(self):
        b = _batch(np.full((1, 3, 1), 100.0), [100.0])
        for p in (DoubleKnockOutCall(100.0, 50.0, 150.0), Cliquet(0.08, 0.16)):
            with pytest.raises(UnsupportedPayoffError):
                p.adjoint(b)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(positive_paths, st.floats(50.0, 150.0))
    def test_nonnegative(self, path, K):
        for p in (AsianCall(K), GeometricAsianCall(K), DoubleKnockOutCall(K, 40.0, 200.0), Cliquet(0.08, 0.16)):
            assert payoff(p, path, 100.0) >= 0.0

    @settings(max_examples=60, deadline=None)
    @given(positive_paths)
    def test_cliquet_bounds(self, path):
        c = Cliquet(0.08, 0.16)
        v = payoff(c, path, 100.0)
        assert 0.16 <= v <= max(path.size * 0.08, 0.16) + 1e-15

    @settings(max_examples=60, deadline=None)
    @given(positive_paths, st.floats(50.0, 150.0), st.floats(0.1, 10.0))
    def test_asian_homogeneous(self, path, K, c):
        a = payoff(AsianCall(K), path, 100.0)
        b = payoff(AsianCall(c * K), c * path, 100.0 * c)
        assert b == pytest.approx(c * a, rel=1e-12, abs=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(positive_paths, st.floats(0.1, 10.0))
    def test_cliquet_scale_invariant(self, path, c):
        assert payoff(Cliquet(0.08, 0.16), c * path, 100.0 * c) == pytest.approx(
            payoff(Cliquet(0.08, 0.16), path, 100.0), rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(positive_paths, st.floats(50.0, 150.0))
    def test_dko_below_european(self, path, K):
        assert payoff(DoubleKnockOutCall(K, 40.0, 200.0), path, 100.0) <= max(path[-1] - K, 0.0)

    @settings(max_examples=40, deadline=None)
    @given(positive_paths, st.floats(50.0, 150.0))
    def test_geometric_below_arithmetic(self, path, K):
        assert payoff(GeometricAsianCall(K), path, 100.0) <= payoff(AsianCall(K), path, 100.0) + 1e-9

    def test_asian_adjoint_matches_fd(self):
        rng = np.random.default_rng(3)
        spots = rng.uniform(80, 130, (20, 6, 1))
        b = _batch(spots, [100.0])
        value, bar = AsianCall(100.0).adjoint(b)
        h = 1e-6
        for j in range(6):
            up = spots.copy()
            up[:, j, 0] += h
            fd = (AsianCall(100.0).evaluate(_batch(up, [100.0])) - value) / h
            np.testing.assert_allclose(bar[:, j, 0], fd, atol=1e-5)

    def test_basket_adjoint_matches_fd(self):
        rng = np.random.default_rng(4)
        spots = rng.uniform(80, 130, (10, 3, 2))
        S0 = np.array([100.0, 100.0])
        for p in (EuropeanBasketCall(100.0, (0.3, 0.7)), AsianBasketCall(100.0, (0.3, 0.7))):
            value, bar = p.adjoint(_batch(spots, S0))
            h = 1e-6
            for j in range(3):
                for k in range(2):
                    up = spots.copy()
                    up[:, j, k] += h
                    fd = (p.evaluate(_batch(up, S0)) - value) / h
                    np.testing.assert_allclose(bar[:, j, k], fd, atol=1e-5)


class TestTransformer:
    def test_transform_discounts(self):
        b = _batch(np.full((3, 4, 1), 110.0), [100.0])
        t = PayoffTransformer(AsianCall(100.0), rate=0.05, maturity=1.0).fit()
        np.testing.assert_allclose(t.transform(b), 10.0 * np.exp(-0.05))
