"""Experiment harness: RMSE curves, power-law fits, speed-ups and stability traces."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .engine import GeneratorSpec, SimulationRun, Target, estimate, per_path_values
from .exceptions import ConfigurationError, DegenerateError

__all__ = [
    "ConvergenceCurve",
    "RegressionResult",
    "SpeedUpResult",
    "StabilityTrace",
    "rmse_curve",
    "fit_power_law",
    "speedup",
    "stability_trace",
    "method_label",
    "write_convergence_csv",
    "write_fits_csv",
    "write_speedup_csv",
    "write_stability_csv",
    "REFERENCE_N",
]

REFERENCE_N = 512


def method_label(run: SimulationRun) -> str:
    gen = "MC" if run.generator.kind == "PSEUDO" else "QMC"
    return f"{gen}+{run.scheme.label}"


@dataclass
class ConvergenceCurve:
    N_values: np.ndarray
    rmse: np.ndarray
    L: int
    reference: float
    method: str = ""
    target: str = "PRICE"
    estimates: np.ndarray = field(default=None, repr=False)  # (len(N), L)


@dataclass
class RegressionResult:
    slope: float
    intercept_at_N0: float  # fitted log10 RMSE at N0
    stderr_slope: float
    stderr_intercept: float
    N0: int = REFERENCE_N
    n_points: int = 0
    excluded: tuple = ()

    def predict(self, N) -> np.ndarray:
        """Fitted RMSE at path count ``N``."""
        return 10.0 ** (self.intercept_at_N0 + self.slope * (np.log10(N) - math.log10(self.N0)))

    def paths_for(self, rmse: float) -> float:
        """Path count at which the fitted RMSE equals ``rmse``."""
        if self.slope >= 0:
            return math.inf
        return self.N0 * 10.0 ** ((math.log10(rmse) - self.intercept_at_N0) / self.slope)


@dataclass
class SpeedUpResult:
    N_star_A: float
    N_star_B: float
    ratio: float | None
    a: float
    reachable: bool = True
    reason: str = ""


@dataclass
class StabilityTrace:
    N_values: np.ndarray
    estimates: np.ndarray
    window_means: np.ndarray
    window_vols: np.ndarray
    log_returns: np.ndarray  # NaN where undefined (m <= 0)


def _section_generator(template: GeneratorSpec, l: int, seed0: int) -> GeneratorSpec:
    if template.kind == "SOBOL":
        return GeneratorSpec("SOBOL", section_index=l)
    return GeneratorSpec("PSEUDO", seed=seed0 + l)


def rmse_curve(run: SimulationRun, N_list, L: int, reference: float, target="PRICE",
               seed0: int | None = None) -> ConvergenceCurve:
    """RMSE over ``L`` independent runs for each path count.

    SOBOL runs use sections ``0..L-1`` of block size ``N``; PSEUDO runs use
    seeds ``seed0 .. seed0+L-1`` (default: the template's seed).
    """
    if L < 2:
        raise ConfigurationError("at least two runs (L >= 2) are needed for an RMSE")
    N_arr = np.asarray(sorted(int(n) for n in N_list))
    if N_arr.size == 0 or np.any(np.diff(N_arr) <= 0):
        raise ConfigurationError("path counts must be distinct")
    seed0 = run.generator.seed if seed0 is None else seed0
    target = Target.parse(target)
    est = np.empty((N_arr.size, L))
    for a, N in enumerate(N_arr):  # N-major, run-minor
        for l in range(L):
            r = run.with_(N=int(N), generator=_section_generator(run.generator, l, seed0))
            est[a, l] = estimate(r, target)[0]
    rmse = np.sqrt(np.mean((reference - est) ** 2, axis=1))
    return ConvergenceCurve(N_arr, rmse, L, float(reference), method_label(run), str(target), est)


def fit_power_law(curve, N0: int = REFERENCE_N) -> RegressionResult:
    """Least-squares line through ``(log10 N, log10 rmse)``.

    Accepts a :class:`ConvergenceCurve` or an ``(N_values, rmse)`` pair.
    Zero RMSE points are dropped with a warning.
    """
    N, eps = (curve.N_values, curve.rmse) if isinstance(curve, ConvergenceCurve) else curve
    N = np.asarray(N, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if N.size < 4:
        raise ConfigurationError("a power-law fit needs at least 4 points")
    keep = eps > 0
    excluded = tuple(int(n) for n in N[~keep])
    if excluded:
        warnings.warn(f"zero RMSE at N={excluded}; points excluded from the fit", RuntimeWarning)
    if keep.sum() < 3:
        raise DegenerateError("fewer than 3 non-zero RMSE points; power law undefined")
    x = np.log10(N[keep]) - math.log10(N0)
    y = np.log10(eps[keep])
    res = stats.linregress(x, y)
    return RegressionResult(float(res.slope), float(res.intercept), float(res.stderr),
                            float(res.intercept_stderr), N0, int(keep.sum()), excluded)


def speedup(fit_A: RegressionResult, fit_B: RegressionResult, a: float, reference: float,
            max_paths: float | None = None, floor: float = 0.0) -> SpeedUpResult:
    """Ratio of path counts needed by methods A and B to reach ``3 eps = a |V|``.

    The target is unreachable when a fit does not decrease, when the required
    RMSE ``a |V| / 3`` is at or below ``floor`` (the reference's own
    uncertainty), or when a method needs more than ``max_paths`` paths.
    """
    if not a > 0:
        raise ConfigurationError("accuracy must be positive")
    target = a * abs(reference) / 3.0
    if fit_A.slope >= 0 or fit_B.slope >= 0:
        return SpeedUpResult(math.inf, math.inf, None, a, False, "RMSE fit does not decrease with N")
    if target <= floor:
        return SpeedUpResult(math.inf, math.inf, None, a, False,
                             f"required RMSE {target:.3g} is below the reference floor {floor:.3g}")
    nA, nB = fit_A.paths_for(target), fit_B.paths_for(target)
    limit = math.inf if max_paths is None else max_paths
    if not (nA <= limit and nB <= limit):
        return SpeedUpResult(nA, nB, None, a, False,
                             f"required path count exceeds the budget of {limit:.3g}")
    return SpeedUpResult(nA, nB, nA / nB, a, True, "")


def stability_trace(run: SimulationRun, N_values=None, windows: int = 10, target="PRICE") -> StabilityTrace:
    """Estimates at nested path counts, summarized per window.

    The estimate at ``N`` uses the first ``N`` paths of one stream (cumulative
    means), by default ``N = 100, 200, ..., 10000``.
    """
    N_values = np.arange(100, 10001, 100) if N_values is None else np.asarray(N_values, dtype=int)
    if N_values.size % windows:
        raise ConfigurationError("the number of path counts must be a multiple of the window count")
    if np.any(np.diff(N_values) <= 0) or N_values[0] < 1:
        raise ConfigurationError("path counts must be positive and increasing")
    full = run.with_(N=int(N_values[-1]), require_power_of_two=False)
    vals = per_path_values(full, target)
    est = np.cumsum(vals)[N_values - 1] / N_values
    grouped = est.reshape(windows, -1)
    m = grouped.mean(axis=1)
    s = grouped.std(axis=1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = (m[1:] > 0) & (m[:-1] > 0)
        logret = np.where(ok, np.log(np.where(ok, m[1:] / np.where(ok, m[:-1], 1.0), 1.0)), np.nan)
    return StabilityTrace(N_values, est, m, s, logret)


def _w(fh):
    return csv.writer(fh, lineterminator="\n")


def write_convergence_csv(curves, fh) -> None:
    w = _w(fh)
    w.writerow(["method", "target", "N", "rmse"])
    for c in curves:
        for N, e in zip(c.N_values, c.rmse):
            w.writerow([c.method, c.target, int(N), repr(float(e))])


def write_fits_csv(rows, fh) -> None:
    """``rows``: iterable of ``(method, target, RegressionResult)``."""
    w = _w(fh)
    w.writerow(["method", "target", "slope", "stderr_slope", "intercept_at_512", "stderr_intercept"])
    for method, target, fit in rows:
        w.writerow([method, target, repr(fit.slope), repr(fit.stderr_slope),
                    repr(fit.intercept_at_N0), repr(fit.stderr_intercept)])


def write_speedup_csv(rows, fh) -> None:
    """``rows``: iterable of ``(pair_label, SpeedUpResult)``."""
    w = _w(fh)
    w.writerow(["pair", "a", "N_star_A", "N_star_B", "S_star", "note"])
    for pair, r in rows:
        w.writerow([pair, repr(r.a), repr(float(r.N_star_A)), repr(float(r.N_star_B)),
                    "unreachable" if r.ratio is None else repr(r.ratio), r.reason])


def write_stability_csv(trace: StabilityTrace, fh, label: str = "") -> None:
    w = _w(fh)
    w.writerow(["method", "window", "m", "s", "logret"])
    for i in range(trace.window_means.size):
        lr = "" if i == 0 or np.isnan(trace.log_returns[i - 1]) else repr(float(trace.log_returns[i - 1]))
        w.writerow([label, i + 1, repr(float(trace.window_means[i])), repr(float(trace.window_vols[i])), lr])
