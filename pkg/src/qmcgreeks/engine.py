"""Monte Carlo / quasi-Monte Carlo estimators of prices and greeks.

A :class:`SimulationRun` fixes everything that determines a result: market,
grid, payoff, sampling scheme, point generator and path count.  The path
loop is split into fixed-size chunks; every chunk reads its uniforms by
global path index, so results do not depend on the number of workers.

Greeks
------
* :func:`fd_greeks` uses central differences with path recycling: all legs
  reuse the same Gaussian block.  Spot bumps only rescale the spot level
  (``S = S0 * growth``); volatility bumps rebuild the covariance root.
* :func:`aad_greeks` runs a forward sweep, then a hand-written reverse sweep
  through the payoff, the exponential GBM step and the covariance root.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.pipeline import Pipeline

from .exceptions import ConfigurationError, DomainError, ShapeError, UnsupportedPayoffError
from .lds import (
    SobolGenerator,
    PseudoRandomGenerator,
    StandardNormalTransformer,
    inverse_normal_cdf,
    pseudo_points_at,
    sobol_points_at,
)
from .paths import Factorization, GBMPathBuilder, MarketModel, PathBatch, SchemeSpec, TimeGrid
from .payoffs import Payoff, PayoffTransformer

__all__ = [
    "GeneratorSpec",
    "SimulationRun",
    "Target",
    "GreekReport",
    "PathEvaluator",
    "price",
    "estimate",
    "fd_greeks",
    "aad_greeks",
    "cost_ratio",
    "fd_cost_ratio",
    "make_pricing_pipeline",
    "canonical_hash",
]

DEFAULT_SHIFT = 1e-3
DEFAULT_CHUNK = 2**14


def canonical_hash(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class GeneratorSpec:
    """Description of a point source: ``SOBOL`` section or ``PSEUDO`` seed."""

    kind: str = "SOBOL"
    seed: int = 0
    section_index: int = 0

    def __post_init__(self):
        if self.kind not in ("SOBOL", "PSEUDO"):
            raise ConfigurationError(f"unknown generator kind {self.kind!r}")
        if self.seed < 0 or self.section_index < 0:
            raise ConfigurationError("seed and section index must be non-negative")

    def points(self, dimension: int, block_size: int, first: int, count: int) -> np.ndarray:
        """Uniforms for paths ``first .. first+count-1`` of a run of ``block_size`` paths."""
        if self.kind == "SOBOL":
            return sobol_points_at(self.section_index * block_size + 1 + first, count, dimension)
        return pseudo_points_at(self.seed, first, count, dimension)

    def make(self, dimension: int, block_size: int):
        if self.kind == "SOBOL":
            return SobolGenerator(dimension, self.section_index, block_size)
        return PseudoRandomGenerator(dimension, self.seed)

    def descriptor(self, dimension: int, block_size: int) -> dict:
        return self.make(dimension, block_size).descriptor()

    def to_dict(self) -> dict:
        if self.kind == "SOBOL":
            return {"kind": self.kind, "section_index": self.section_index}
        return {"kind": self.kind, "seed": self.seed}


@dataclass(frozen=True)
class Target:
    """Estimand: ``PRICE`` or ``DELTA``/``GAMMA``/``VEGA`` of asset ``index``."""

    kind: str = "PRICE"
    index: int = 0

    def __post_init__(self):
        if self.kind not in ("PRICE", "DELTA", "GAMMA", "VEGA"):
            raise ConfigurationError(f"unknown target {self.kind!r}")

    @classmethod
    def parse(cls, text) -> "Target":
        if isinstance(text, Target):
            return text
        name, _, idx = str(text).upper().partition("_")
        return cls(name, int(idx) if idx else 0)

    def __str__(self):
        return "PRICE" if self.kind == "PRICE" else f"{self.kind}_{self.index}"


@dataclass(frozen=True)
class SimulationRun:
    model: MarketModel
    grid: TimeGrid
    payoff: Payoff
    scheme: SchemeSpec = SchemeSpec()
    generator: GeneratorSpec = GeneratorSpec()
    N: int = 2**12
    shift: float = DEFAULT_SHIFT
    chunk_size: int = DEFAULT_CHUNK
    workers: int = 1
    require_power_of_two: bool = True

    def __post_init__(self):
        if self.N < 1 or (self.require_power_of_two and self.N & (self.N - 1)):
            raise ConfigurationError(f"path count must be a power of two, got {self.N}")
        if not self.shift > 0:
            raise ConfigurationError("finite-difference shift must be positive")
        if self.chunk_size < 1 or self.workers < 1:
            raise ConfigurationError("chunk size and worker count must be positive")
        if not math.isclose(self.grid.times[-1], self.model.T, rel_tol=1e-12):
            raise ConfigurationError("last fixing date must equal the model maturity")
        self.payoff.check_model(self.model.S0)
        object.__setattr__(self, "scheme", self.scheme.normalized(self.model.n_assets))

    @property
    def dimension(self) -> int:
        return self.grid.n_steps * self.model.n_assets

    def with_(self, **changes) -> "SimulationRun":
        return replace(self, **changes)

    def metadata(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "grid": self.grid.to_dict(),
            "payoff": self.payoff.to_dict(),
            "scheme": {"time_scheme": self.scheme.time_scheme.value,
                       "factorization": self.scheme.factorization.value},
            "generator": self.generator.descriptor(self.dimension, self.N),
            "N": self.N,
            "dimension": self.dimension,
            "shift": self.shift,
            "std_error_kind": "probabilistic" if self.generator.kind == "PSEUDO" else "indicative",
        }


class PathEvaluator:
    """Per-path estimands for one (model, grid, scheme, payoff) combination.

    Builders for bumped volatilities are created on first use and cached.
    """

    def __init__(self, model: MarketModel, grid: TimeGrid, scheme: SchemeSpec,
                 payoff: Payoff, shift: float = DEFAULT_SHIFT):
        self.model, self.grid, self.payoff, self.shift = model, grid, payoff, shift
        self.scheme = scheme.normalized(model.n_assets)
        self.discount = model.discount()
        self.builder = GBMPathBuilder.from_model(model, grid, self.scheme).fit()
        self._vol_builders = {}

    @classmethod
    def from_run(cls, run: SimulationRun) -> "PathEvaluator":
        return cls(run.model, run.grid, run.scheme, run.payoff, run.shift)

    def vol_builder(self, i: int, sign: int) -> GBMPathBuilder:
        key = (i, sign)
        if key not in self._vol_builders:
            bumped = self.model.bumped(vol=(i, sign * self.shift))
            self._vol_builders[key] = GBMPathBuilder.from_model(bumped, self.grid, self.scheme).fit()
        return self._vol_builders[key]

    def paths(self, Z) -> PathBatch:
        return self.builder.transform(Z)

    def _value(self, batch: PathBatch, S0=None) -> np.ndarray:
        if S0 is not None:
            batch = PathBatch(batch.growth * S0, batch.growth, batch.brownian, S0, batch.times)
        return self.discount * self.payoff.evaluate(batch)

    def _spot_legs(self, batch: PathBatch, i: int):
        h = self.shift * self.model.S0[i]
        up, dn = self.model.S0.copy(), self.model.S0.copy()
        up[i] += h
        dn[i] -= h
        return self._value(batch, up), self._value(batch, dn), h

    def _vega(self, Z, i: int) -> np.ndarray:
        up = self._value(self.vol_builder(i, +1).transform(Z))
        dn = self._value(self.vol_builder(i, -1).transform(Z))
        return (up - dn) / (2 * self.shift)

    def target_values(self, Z, target: Target, batch: PathBatch | None = None) -> np.ndarray:
        """Per-path values of one estimand (FD for greeks).

        ``batch`` may pass the already-built base paths for ``Z``.
        """
        if batch is None:
            batch = self.paths(Z)
        if target.kind == "PRICE":
            return self._value(batch)
        if not 0 <= target.index < self.model.n_assets:
            raise ConfigurationError(f"target asset index {target.index} out of range")
        if target.kind == "VEGA":
            return self._vega(Z, target.index)
        up, dn, h = self._spot_legs(batch, target.index)
        if target.kind == "DELTA":
            return (up - dn) / (2 * h)
        return (up - 2 * self._value(batch) + dn) / h**2

    def fd(self, Z) -> dict:
        batch = self.paths(Z)
        base = self._value(batch)
        n = self.model.n_assets
        delta = np.empty((base.size, n))
        gamma = np.empty((base.size, n))
        vega = np.empty((base.size, n))
        for i in range(n):
            up, dn, h = self._spot_legs(batch, i)
            delta[:, i] = (up - dn) / (2 * h)
            gamma[:, i] = (up - 2 * base + dn) / h**2
            vega[:, i] = self._vega(Z, i)
        return {"price": base, "delta": delta, "gamma": gamma, "vega": vega}

    @property
    def analytic_vega(self) -> bool:
        # with a Cholesky root, A(sigma) = diag(sigma) chol(R), so Y_i is linear in sigma_i
        return self.scheme.factorization is Factorization.CHOL

    def aad(self, Z) -> dict:
        if not self.payoff.smooth:
            raise UnsupportedPayoffError(
                f"{self.payoff.kind} payoff is discontinuous or kinked; "
                "pathwise (adjoint) greeks require a Lipschitz payoff"
            )
        batch = self.paths(Z)
        value, s_bar = self.payoff.adjoint(batch)
        # S_ij = S0_i exp((r - sigma_i^2/2) t_j + Y_ij): reverse sweep through exp
        L = self.discount * s_bar * batch.spots
        out = {"price": self.discount * value, "delta": L.sum(axis=1) / self.model.S0}
        if self.analytic_vega:
            sig = self.model.sigma
            dlog = batch.brownian / sig - sig * self.grid.times[:, None]
            out["vega"] = (L * dlog).sum(axis=1)
        else:
            out["vega"] = np.column_stack([self._vega(Z, i) for i in range(self.model.n_assets)])
        return out


def _chunk_bounds(N: int, size: int):
    return [(s, min(size, N - s)) for s in range(0, N, size)]


def _gaussians(run: SimulationRun, first: int, count: int) -> np.ndarray:
    return inverse_normal_cdf(run.generator.points(run.dimension, run.N, first, count))


def _collect(run: SimulationRun, fn) -> dict:
    """Apply ``fn(Z)`` chunk by chunk and stack the per-path outputs in path order."""
    chunks = _chunk_bounds(run.N, run.chunk_size)

    def work(bounds):
        return fn(_gaussians(run, *bounds))

    if run.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(run.workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return {"value": np.concatenate(parts)}


def _mean_se(x: np.ndarray):
    n = x.shape[0]
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def estimate(run: SimulationRun, target="PRICE") -> tuple[float, float]:
    """Mean and standard error of one estimand over the run's paths."""
    target = Target.parse(target)
    ev = PathEvaluator.from_run(run)
    vals = _collect(run, lambda Z: ev.target_values(Z, target))["value"]
    m, s = _mean_se(vals)
    return float(m), float(s)


def per_path_values(run: SimulationRun, target="PRICE") -> np.ndarray:
    target = Target.parse(target)
    ev = PathEvaluator.from_run(run)
    return _collect(run, lambda Z: ev.target_values(Z, target))["value"]


def price(run: SimulationRun) -> tuple[float, float]:
    """Discounted-payoff mean and standard error."""
    return estimate(run, "PRICE")


@dataclass
class GreekReport:
    price: float
    price_se: float
    delta: np.ndarray
    delta_se: np.ndarray
    vega: np.ndarray
    vega_se: np.ndarray
    gamma: np.ndarray | None = None
    gamma_se: np.ndarray | None = None
    method: str = "FD"
    methods: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def lst(x):
            return None if x is None else [float(v) for v in x]

        return {
            "method": self.method,
            "methods": dict(self.methods),
            "price": float(self.price),
            "price_se": float(self.price_se),
            "delta": lst(self.delta),
            "delta_se": lst(self.delta_se),
            "gamma": lst(self.gamma),
            "gamma_se": lst(self.gamma_se),
            "vega": lst(self.vega),
            "vega_se": lst(self.vega_se),
            "metadata": self.metadata,
        }

    def rows(self):
        """Long-format rows ``(quantity, asset, value, std_error, method)``."""
        yield ("price", "", float(self.price), float(self.price_se), self.methods.get("price", self.method))
        for name in ("delta", "gamma", "vega"):
            vals = getattr(self, name)
            if vals is None:
                continue
            ses = getattr(self, f"{name}_se")
            for i, (v, s) in enumerate(zip(vals, ses)):
                yield (name, i, float(v), float(s), self.methods.get(name, self.method))


def fd_greeks(run: SimulationRun) -> GreekReport:
    """Central finite-difference greeks with path recycling."""
    for i in range(run.model.n_assets):
        if run.model.sigma[i] - run.shift <= 0:
            raise DomainError(f"bumped volatility sigma[{i}] - shift must stay positive")
    ev = PathEvaluator.from_run(run)
    out = _collect(run, ev.fd)
    est = {k: _mean_se(v) for k, v in out.items()}
    return GreekReport(
        price=float(est["price"][0]), price_se=float(est["price"][1]),
        delta=est["delta"][0], delta_se=est["delta"][1],
        gamma=est["gamma"][0], gamma_se=est["gamma"][1],
        vega=est["vega"][0], vega_se=est["vega"][1],
        method="FD", methods={"price": "MC", "delta": "FD", "gamma": "FD", "vega": "FD"},
        metadata=run.metadata(),
    )


def aad_greeks(run: SimulationRun) -> GreekReport:
    """Pathwise deltas and vegas via a hand-coded reverse sweep (no gamma)."""
    ev = PathEvaluator.from_run(run)
    if not run.payoff.smooth:
        ev.aad(None)  # raises UnsupportedPayoffError
    out = _collect(run, ev.aad)
    est = {k: _mean_se(v) for k, v in out.items()}
    return GreekReport(
        price=float(est["price"][0]), price_se=float(est["price"][1]),
        delta=est["delta"][0], delta_se=est["delta"][1],
        vega=est["vega"][0], vega_se=est["vega"][1],
        method="AAD",
        methods={"price": "MC", "delta": "AAD", "vega": "AAD" if ev.analytic_vega else "FD"},
        metadata=run.metadata(),
    )


def _timed(fn, run, repeats):
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(run)
        best = min(best, time.perf_counter() - t0)
    return best


def cost_ratio(run: SimulationRun, repeats: int = 3) -> float:
    """Wall time of price plus all AAD greeks over wall time of price alone."""
    if not run.payoff.smooth:
        raise UnsupportedPayoffError(f"{run.payoff.kind} has no adjoint")
    return _timed(aad_greeks, run, repeats) / _timed(price, run, repeats)


def fd_cost_ratio(run: SimulationRun, repeats: int = 3) -> float:
    """Wall time of FD price plus greeks over wall time of price alone."""
    return _timed(fd_greeks, run, repeats) / _timed(price, run, repeats)


def make_pricing_pipeline(model: MarketModel, grid: TimeGrid, scheme: SchemeSpec, payoff: Payoff) -> Pipeline:
    """Uniforms ``(N, D)`` -> discounted payoffs ``(N,)`` as an sklearn pipeline."""
    scheme = scheme.normalized(model.n_assets)
    return Pipeline([
        ("normal", StandardNormalTransformer()),
        ("paths", GBMPathBuilder.from_model(model, grid, scheme)),
        ("payoff", PayoffTransformer(payoff, rate=model.r, maturity=model.T)),
    ])
