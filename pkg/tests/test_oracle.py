import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qmcgreeks.cases import make_case
from qmcgreeks.engine import GeneratorSpec, price
from qmcgreeks.exceptions import DomainError, MissingFixtureError
from qmcgreeks.oracle import (
    Fixture,
    bs_call,
    build_fixture,
    cliquet_fixture,
    cliquet_price,
    fixture_key,
    geometric_asian_call,
    load_fixture,
    save_fixture,
)
from qmcgreeks.paths import SchemeSpec


class TestBlackScholes:
    def test_reference_value(self):
        # evaluated once from the closed form and frozen
        assert bs_call(100.0, 100.0, 0.3, 0.0, 1.0)[0] == pytest.approx(11.923538474048499, rel=1e-12)

    def test_against_simulation(self):
        # independent route: numpy ziggurat normals, terminal lognormal draw
        rng = np.random.default_rng(2024)
        z = rng.standard_normal(2**22)
        pay = np.maximum(100.0 * np.exp(-0.045 + 0.3 * z) - 100.0, 0.0)
        se = pay.std(ddof=1) / math.sqrt(pay.size)
        assert abs(pay.mean() - bs_call(100.0, 100.0, 0.3, 0.0, 1.0)[0]) < 3 * se

    def test_small_vol_limit(self):
        p, d, _ = bs_call(100.0, 100.0, 1e-9, 0.0, 1.0)
        assert p == pytest.approx(0.0, abs=1e-6)
        assert d == pytest.approx(0.5, abs=1e-6)

    def test_deep_itm_limit(self):
        p, d, _ = bs_call(1e6, 100.0, 0.3, 0.0, 1.0)
        assert p == pytest.approx(1e6 - 100.0, rel=1e-12)
        assert d == pytest.approx(1.0)

    def test_vega_matches_fd_of_price(self):
        h = 1e-5
        fd = (bs_call(100, 95, 0.3 + h, 0.02, 2)[0] - bs_call(100, 95, 0.3 - h, 0.02, 2)[0]) / (2 * h)
        assert bs_call(100, 95, 0.3, 0.02, 2)[2] == pytest.approx(fd, rel=1e-7)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1.0, 500.0), st.floats(1.0, 500.0), st.floats(0.01, 1.5), st.floats(-0.05, 0.1),
           st.floats(0.05, 5.0))
    def test_lower_bound(self, S0, K, sigma, r, T):
        p, d, v = bs_call(S0, K, sigma, r, T)
        assert p >= max(S0 - K * math.exp(-r * T), 0.0) - 1e-9 * S0
        assert 0.0 <= d <= 1.0 and v >= 0.0

    def test_domain(self):
        with pytest.raises(DomainError):
            bs_call(100.0, 100.0, 0.0, 0.0, 1.0)


class TestGeometricAsian:
    @pytest.mark.parametrize("r", [0.0, 0.04])
    def test_single_fixing_is_black_scholes(self, r):
        assert geometric_asian_call(100.0, 90.0, 0.25, r, [1.5]) == pytest.approx(
            bs_call(100.0, 90.0, 0.25, r, 1.5)[0], rel=1e-13)

    def test_small_vol_limit(self):
        t = np.linspace(1 / 8, 1.0, 8)
        r = 0.05
        expected = math.exp(-r) * max(100.0 * math.exp(r * t.mean()) - 100.0, 0.0)
        assert geometric_asian_call(100.0, 100.0, 1e-9, r, t) == pytest.approx(expected, rel=1e-7)

    def test_engine_matches_closed_form(self):
        run = make_case("geometric_asian", scheme=SchemeSpec("BBD"), N=2**18)
        cf = geometric_asian_call(100.0, 100.0, 0.3, 0.0, run.grid.times)
        assert price(run)[0] == pytest.approx(cf, rel=5e-4)

    def test_below_arithmetic_fixture(self):
        run = make_case("asian")
        fx = load_fixture(run)
        assert geometric_asian_call(100.0, 100.0, 0.3, 0.0, run.grid.times) <= fx.value + 3 * fx.std_error


class TestCliquet:
    def test_single_period_quadrature(self):
        # independent route: direct integration against the lognormal density
        s, m, cap, floor = 0.3, -0.045, 0.08, 0.02
        f = lambda z: max(min(math.exp(m + s * z) - 1, cap), 0.0, floor) * stats.norm.pdf(z)
        ref = integrate.quad(f, -12, 12, points=[(math.log1p(cap) - m) / s, (math.log1p(floor) - m) / s],
                             limit=200)[0]
        assert cliquet_price(0.3, 0.0, [1.0], cap, floor) == pytest.approx(ref, abs=1e-7)

    def test_against_brute_force_mc(self):
        rng = np.random.default_rng(5)
        dt = 1 / 32
        z = rng.standard_normal((2**17, 32))
        ret = np.clip(np.exp(-0.045 * dt + 0.3 * math.sqrt(dt) * z) - 1, 0.0, 0.08).sum(axis=1)
        pay = np.maximum(ret, 0.16)
        se = pay.std(ddof=1) / math.sqrt(pay.size)
        assert abs(pay.mean() - cliquet_price(0.3, 0.0, np.linspace(dt, 1, 32), 0.08, 0.16)) < 3 * se

    def test_lattice_refinement_converges(self):
        t = np.linspace(1 / 32, 1, 32)
        a = cliquet_price(0.3, 0.0, t, 0.08, 0.16, n_cells=2**12)
        b = cliquet_price(0.3, 0.0, t, 0.08, 0.16, n_cells=2**13)
        assert abs(a - b) < 1e-6

    def test_bounds(self):
        t = np.linspace(1 / 32, 1, 32)
        v = cliquet_price(0.3, 0.0, t, 0.08, 0.16)
        assert 0.16 <= v <= 32 * 0.08


class TestFixtures:
    def test_build_is_deterministic(self, tmp_path):
        run = make_case("asian")
        a = build_fixture(run, ("PRICE", "DELTA_0"), N=2**12, seeds=2, chunk=1000)
        b = build_fixture(run, ("PRICE", "DELTA_0"), N=2**12, seeds=2, chunk=1000)
        assert [f.to_json() for f in a] == [f.to_json() for f in b]
        path = save_fixture(a[0], tmp_path)
        assert path.read_text() == a[0].to_json()
        assert load_fixture(run, "PRICE", tmp_path) == a[0]

    def test_cliquet_delta_is_zero(self):
        fx = build_fixture(make_case("cliquet"), ("DELTA_0", "GAMMA_0"), N=2**12, seeds=2)
        assert all(abs(f.value) < 1e-12 for f in fx)

    def test_committed_asian_precision(self):
        fx = load_fixture(make_case("asian"))
        assert 0 < fx.std_error <= 2e-4 * fx.value
        assert fx.provenance["paths_per_seed"] * fx.provenance["seeds"] == 2**27

    def test_committed_cliquet_is_semi_analytic(self):
        run = make_case("cliquet")
        fx = load_fixture(run)
        assert fx.value == cliquet_fixture(run).value
        plain = fx.provenance["plain"]
        assert abs(plain["value"] - fx.value) < 3 * plain["std_error"]

    def test_plain_and_control_variate_agree(self):
        fx = load_fixture(make_case("asian"))
        plain = fx.provenance["plain"]
        assert abs(plain["value"] - fx.value) < 3 * plain["std_error"]
        assert fx.std_error < plain["std_error"] / 10

    def test_key_ignores_scheme_and_generator(self):
        a = make_case("asian", scheme=SchemeSpec("BBD"), generator=GeneratorSpec("PSEUDO", seed=3))
        assert fixture_key(a) == fixture_key(make_case("asian"))
        assert fixture_key(a, "GAMMA_0") != fixture_key(a.with_(shift=1e-2), "GAMMA_0")
        assert fixture_key(a) == fixture_key(a.with_(shift=1e-2))

    def test_missing_fixture(self, tmp_path):
        with pytest.raises(MissingFixtureError, match="qmcgreeks fixtures"):
            load_fixture(make_case("dko"), "VEGA_0", tmp_path)

    def test_fixture_json_round_trip(self):
        f = Fixture("k", 1.5, 0.1, "x", {"a": 1})
        import json

        assert Fixture(**json.loads(f.to_json())) == f
