"""Standard test cases: single-asset and five-asset contracts used in the experiments."""
from __future__ import annotations

import numpy as np

from .engine import GeneratorSpec, SimulationRun
from .paths import MarketModel, SchemeSpec, TimeGrid
from .payoffs import (
    AsianBasketCall,
    AsianCall,
    Cliquet,
    DoubleKnockOutCall,
    EuropeanBasketCall,
    GeometricAsianCall,
)

__all__ = ["single_asset_model", "basket_model", "CASES", "make_case", "FIXTURE_MANIFEST"]

BASKET_S0 = (80.0, 90.0, 100.0, 110.0, 120.0)
BASKET_SIGMA = (0.5, 0.4, 0.2, 0.3, 0.6)
BASKET_RHO = 0.3
SINGLE_STEPS = 32
BASKET_STEPS = 16


def single_asset_model(S0=100.0, sigma=0.3, r=0.0, T=1.0) -> MarketModel:
    return MarketModel([S0], [sigma], r=r, T=T)


def basket_model(rho=BASKET_RHO, n_assets=5, r=0.0, T=1.0) -> MarketModel:
    reps = -(-n_assets // 5)
    S0 = np.tile(BASKET_S0, reps)[:n_assets]
    sigma = np.tile(BASKET_SIGMA, reps)[:n_assets]
    return MarketModel.equicorrelated(S0, sigma, rho, r=r, T=T)


def _single(payoff, n_steps=SINGLE_STEPS):
    return single_asset_model(), TimeGrid.uniform(1.0, n_steps), payoff


def _basket(payoff_cls, rho=BASKET_RHO, n_assets=5, n_steps=BASKET_STEPS):
    w = np.full(n_assets, 1.0 / n_assets)
    w[-1] = 1.0 - w[:-1].sum()
    return basket_model(rho, n_assets), TimeGrid.uniform(1.0, n_steps), payoff_cls(100.0, tuple(w))


CASES = {
    "asian": lambda **kw: _single(AsianCall(100.0)),
    "geometric_asian": lambda **kw: _single(GeometricAsianCall(100.0)),
    "dko": lambda **kw: _single(DoubleKnockOutCall(100.0, 50.0, 150.0)),
    "cliquet": lambda **kw: _single(Cliquet(0.08, 0.16)),
    "euro_call": lambda **kw: _single(AsianCall(100.0), n_steps=1),
    "euro_basket": lambda **kw: _basket(EuropeanBasketCall, **kw),
    "asian_basket": lambda **kw: _basket(AsianBasketCall, **kw),
}


def make_case(name: str, scheme=SchemeSpec(), generator=GeneratorSpec(), N=2**12, **kw) -> SimulationRun:
    """Build a :class:`SimulationRun` for a named case.

    Basket cases accept ``rho`` and ``n_assets`` keywords.
    """
    model, grid, payoff = CASES[name](**kw)
    return SimulationRun(model, grid, payoff, scheme, generator, N)


# (case, targets) pairs with committed reference values
FIXTURE_MANIFEST = (
    ("asian", ("PRICE", "DELTA_0", "GAMMA_0")),
    ("dko", ("PRICE",)),
    ("cliquet", ("PRICE",)),
    ("euro_basket", ("PRICE",)),
    ("asian_basket", ("PRICE",)),
)
