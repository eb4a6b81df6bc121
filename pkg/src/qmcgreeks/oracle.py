"""Reference values: closed forms, a semi-analytic Cliquet, and large-N fixtures.

Fixtures are JSON documents stored under ``qmcgreeks/data/fixtures`` and keyed
by a hash of (model, grid, payoff, target, shift).  They are regenerated only
through :func:`build_fixture` (CLI ``fixtures`` subcommand).

Simulated fixtures draw their normals from numpy's own PCG64 ziggurat sampler
rather than the package's inverse-CDF route, so the reference does not share
the Gaussian transform of the engine under test.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .engine import PathEvaluator, SimulationRun, Target, canonical_hash
from .exceptions import ConfigurationError, DomainError, MissingFixtureError
from .payoffs import AsianCall, Cliquet, GeometricAsianCall

__all__ = [
    "bs_call",
    "geometric_asian_call",
    "cliquet_price",
    "Fixture",
    "fixture_key",
    "fixture_dir",
    "build_fixture",
    "cliquet_fixture",
    "save_fixture",
    "load_fixture",
    "reference_value",
]

FIXTURE_PATHS = 2**23
FIXTURE_SEEDS = 16
FIXTURE_ENTROPY = 20240611


def bs_call(S0: float, K: float, sigma: float, r: float, T: float):
    """Black-Scholes call: ``(price, delta, vega)``."""
    if min(S0, K, sigma, T) <= 0:
        raise DomainError("S0, K, sigma and T must be positive")
    sq = sigma * math.sqrt(T)
    d1 = (math.log(S0 / K) + (r + 0.5 * sigma**2) * T) / sq
    d2 = d1 - sq
    price = S0 * ndtr(d1) - K * math.exp(-r * T) * ndtr(d2)
    delta = ndtr(d1)
    vega = S0 * math.sqrt(T) * math.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi)
    return float(price), float(delta), float(vega)


def geometric_asian_call(S0: float, K: float, sigma: float, r: float, times) -> float:
    """Discrete geometric-average call; the last fixing is the maturity.

    ``log G`` is normal with mean ``log S0 + (r - sigma^2/2) mean(t)`` and
    variance ``sigma^2 / n^2 * sum_jk min(t_j, t_k)``.
    """
    t = np.asarray(times, dtype=np.float64)
    n, T = t.size, float(t[-1])
    mu = math.log(S0) + (r - 0.5 * sigma**2) * t.mean()
    var = sigma**2 * np.minimum.outer(t, t).sum() / n**2
    disc = math.exp(-r * T)
    if var <= 0:
        return disc * max(math.exp(mu) - K, 0.0)
    sd = math.sqrt(var)
    d1 = (mu - math.log(K) + var) / sd
    return float(disc * (math.exp(mu + 0.5 * var) * ndtr(d1) - K * ndtr(d1 - sd)))


def _capped_return_pmf(m: float, s: float, cap: float, n_cells: int) -> np.ndarray:
    """Lattice law of ``clip(exp(m + s Z) - 1, 0, cap)`` on ``k * cap / n_cells``.

    Mass inside each cell is split between its two nodes so that the cell's
    first moment is preserved exactly.
    """
    x = np.linspace(0.0, cap, n_cells + 1)
    z = (np.log1p(x) - m) / s
    cdf = ndtr(z)
    # E[(e^{m+sZ} - 1) 1{Z <= z}] = e^{m + s^2/2} Phi(z - s) - Phi(z)
    part = math.exp(m + 0.5 * s * s) * ndtr(z - s) - cdf
    p = np.diff(cdf)
    mom = np.diff(part)
    h = cap / n_cells
    pmf = np.zeros(n_cells + 1)
    pmf[:-1] += (x[1:] * p - mom) / h
    pmf[1:] += (mom - x[:-1] * p) / h
    pmf[0] += cdf[0]
    pmf[-1] += 1.0 - cdf[-1]
    return pmf


def cliquet_price(sigma: float, r: float, times, cap: float, floor: float, n_cells: int = 2**12) -> float:
    """Semi-analytic Cliquet price by lattice convolution of independent period returns.

    The sum of capped returns is a sum of independent variables, so its law is
    the convolution of the per-period laws (computed by FFT).
    """
    t = np.asarray(times, dtype=np.float64)
    dt = np.diff(t, prepend=0.0)
    size = dt.size * n_cells + 1
    nfft = 1 << (size - 1).bit_length()
    spec = np.ones(nfft // 2 + 1, dtype=complex)
    cache = {}
    for d in dt:
        key = round(float(d), 15)
        if key not in cache:
            pmf = _capped_return_pmf((r - 0.5 * sigma**2) * d, sigma * math.sqrt(d), cap, n_cells)
            cache[key] = np.fft.rfft(pmf, nfft)
        spec *= cache[key]
    law = np.fft.irfft(spec, nfft)[:size]
    grid = np.arange(size) * (cap / n_cells)
    return float(math.exp(-r * t[-1]) * np.dot(np.maximum(grid, floor), law))


@dataclass
class Fixture:
    key: str
    value: float
    std_error: float
    label: str = ""
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _fixture_identity(run: SimulationRun, target: Target) -> dict:
    ident = {
        "model": run.model.to_dict(),
        "grid": run.grid.to_dict(),
        "payoff": run.payoff.to_dict(),
        "target": str(target),
    }
    if target.kind != "PRICE":
        ident["shift"] = run.shift
    return ident


def fixture_key(run: SimulationRun, target="PRICE") -> str:
    return canonical_hash(_fixture_identity(run, Target.parse(target)))[:24]


def fixture_dir() -> Path:
    return Path(str(resources.files("qmcgreeks").joinpath("data", "fixtures")))


def save_fixture(fx: Fixture, directory=None) -> Path:
    d = Path(directory) if directory else fixture_dir()
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{fx.key}.json"
    path.write_text(fx.to_json())
    return path


def load_fixture(run: SimulationRun, target="PRICE", directory=None) -> Fixture:
    key = fixture_key(run, target)
    path = (Path(directory) if directory else fixture_dir()) / f"{key}.json"
    if not path.exists():
        raise MissingFixtureError(
            f"no reference fixture {key} for {run.payoff.kind} {Target.parse(target)}; "
            "build it with `qmcgreeks fixtures --config ...`"
        )
    return Fixture(**json.loads(path.read_text()))


def reference_value(run: SimulationRun, target="PRICE", directory=None) -> float:
    return load_fixture(run, target, directory).value


class _Moments:
    """Exact streaming sums (fixed chunk order) for mean/variance/covariance."""

    def __init__(self):
        self.n = 0
        self.sums = {}

    def add(self, **cols):
        self.n += next(iter(cols.values())).size
        names = list(cols)
        for a in names:
            self.sums.setdefault(a, []).append(float(np.sum(cols[a])))
        for i, a in enumerate(names):
            for b in names[i:]:
                self.sums.setdefault(a + "*" + b, []).append(float(np.dot(cols[a], cols[b])))

    def s(self, name) -> float:
        return math.fsum(self.sums[name])

    def mean(self, a) -> float:
        return self.s(a) / self.n

    def cov(self, a, b) -> float:
        key = a + "*" + b if a + "*" + b in self.sums else b + "*" + a
        return (self.s(key) - self.s(a) * self.s(b) / self.n) / (self.n - 1)


def _provenance(run, N, seeds, chunk, method):
    return {
        "method": method,
        "generator": "PSEUDO (numpy PCG64, ziggurat normals)",
        "entropy": FIXTURE_ENTROPY,
        "paths_per_seed": N,
        "seeds": seeds,
        "chunk": chunk,
        "scheme": "SD+CHOL",
        "identity": None,
    }


def build_fixture(run: SimulationRun, targets=("PRICE",), N: int = FIXTURE_PATHS,
                  seeds: int = FIXTURE_SEEDS, chunk: int = 2**16,
                  control_variate: bool = True) -> list[Fixture]:
    """Seed-averaged PSEUDO reference values for several targets of one run.

    With ``control_variate`` and a single-asset Asian call, the price uses the
    geometric-average call (closed form) as a control with a pooled
    regression coefficient.  The plain estimate is kept in the provenance.
    """
    targets = [Target.parse(t) for t in targets]
    ev = PathEvaluator(run.model, run.grid, run.scheme.__class__(), run.payoff, run.shift)
    use_cv = control_variate and isinstance(run.payoff, AsianCall)
    geo = GeometricAsianCall(run.payoff.K) if use_cv else None
    stats = _Moments()
    D = run.dimension
    for s in range(seeds):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([FIXTURE_ENTROPY, s])))
        for start in range(0, N, chunk):
            Z = rng.standard_normal((min(chunk, N - start), D))
            batch = ev.paths(Z)
            cols = {str(t): ev.target_values(Z, t, batch=batch) for t in targets}
            if use_cv:
                cols["GEO"] = ev.discount * geo.evaluate(batch)
            stats.add(**cols)
    out = []
    n = stats.n
    for t in targets:
        name = str(t)
        plain_mean = stats.mean(name)
        plain_se = math.sqrt(stats.cov(name, name) / n)
        prov = _provenance(run, N, seeds, chunk, "monte-carlo")
        prov["identity"] = _fixture_identity(run, t)
        value, se = plain_mean, plain_se
        if use_cv and t.kind == "PRICE":
            g_exact = geometric_asian_call(float(run.model.S0[0]), run.payoff.K, float(run.model.sigma[0]),
                                           run.model.r, run.grid.times)
            beta = stats.cov(name, "GEO") / stats.cov("GEO", "GEO")
            value = plain_mean - beta * (stats.mean("GEO") - g_exact)
            resid = stats.cov(name, name) - beta**2 * stats.cov("GEO", "GEO")
            se = math.sqrt(max(resid, 0.0) / n)
            prov.update(method="monte-carlo with geometric-Asian control variate", beta=beta,
                        geometric_closed_form=g_exact)
        prov["plain"] = {"value": plain_mean, "std_error": plain_se}
        out.append(Fixture(fixture_key(run, t), value, se,
                           f"{run.payoff.kind} {t}", prov))
    return out


def cliquet_fixture(run: SimulationRun, mc_check: Fixture | None = None) -> Fixture:
    """Semi-analytic Cliquet price; lattice refinement gives the error estimate."""
    if not isinstance(run.payoff, Cliquet):
        raise ConfigurationError("cliquet_fixture needs a Cliquet payoff")
    args = (float(run.model.sigma[0]), run.model.r, run.grid.times, run.payoff.C_cap, run.payoff.F_floor)
    fine = cliquet_price(*args, n_cells=2**13)
    coarse = cliquet_price(*args, n_cells=2**12)
    prov = {
        "method": "lattice convolution of independent capped returns",
        "cells_per_period": 2**13,
        "identity": _fixture_identity(run, Target("PRICE")),
    }
    if mc_check is not None:
        prov["plain"] = {"value": mc_check.value, "std_error": mc_check.std_error}
    return Fixture(fixture_key(run, "PRICE"), fine, max(abs(fine - coarse), 1e-15),
                   "CLIQUET PRICE", prov)


def build_manifest(manifest=None, N: int = FIXTURE_PATHS, seeds: int = FIXTURE_SEEDS,
                   directory=None, log=print) -> list[Path]:
    """Build and store every fixture of ``manifest`` (default: the standard cases)."""
    from .cases import FIXTURE_MANIFEST, make_case

    written = []
    for name, targets in manifest or FIXTURE_MANIFEST:
        run = make_case(name)
        fixtures = build_fixture(run, targets, N=N, seeds=seeds)
        if isinstance(run.payoff, Cliquet):
            fixtures = [cliquet_fixture(run, fixtures[0])]
        for fx in fixtures:
            written.append(save_fixture(fx, directory))
            log(f"{name:14s} {fx.label:22s} {fx.value:.10g} +/- {fx.std_error:.3g}")
    return written
