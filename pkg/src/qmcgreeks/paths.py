"""Correlated multi-asset GBM paths from blocks of standard normal variates.

Every sampling strategy is a linear map from the ``D = N_ts * N_rf`` input
variates of one path to the correlated Brownian values ``Y_i(t_j)``::

    Y_flat = Z @ M.T,      Y_flat[:, j * N_rf + i] = Y_i(t_j)

``M`` is ``kron(B, F)`` with its columns permuted, where ``B`` is a square root
of the time covariance ``min(t_j, t_k)`` (sequential, Brownian bridge or PCA)
and ``F`` is a square root of the asset covariance (Cholesky or PCA).  The
column permutation fixes which Sobol' coordinate feeds which path feature.

Variate order per scheme
------------------------
SD
    component-block outer: variate ``k * N_ts + l`` is the ``l``-th time
    increment of factor ``k``.
BBD
    bridge-node outer: variate ``l * N_rf + k`` is factor ``k`` at the ``l``-th
    node visited (terminal point first, then breadth-first bisection).
PCA_TIME x CHOL
    time-eigenvalue outer: variate ``a * N_rf + k``.
PCA_TIME x PCA_FACTOR
    one PCA of ``C_time (x) Sigma``: variates sorted by descending ``lambda_a * mu_b``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, DomainError, FactorizationError, ShapeError

__all__ = [
    "TimeScheme",
    "Factorization",
    "SchemeSpec",
    "MarketModel",
    "TimeGrid",
    "PathBatch",
    "GBMPathBuilder",
    "cholesky_root",
    "pca_root",
    "sequential_matrix",
    "bridge_matrix",
    "bridge_order",
    "time_pca_matrix",
    "loading_matrix",
    "brownian_values",
    "gbm_paths",
    "write_paths_csv",
]

PIVOT_TOL = 1e-12


class TimeScheme(str, Enum):
    SD = "SD"
    BBD = "BBD"
    PCA_TIME = "PCA_TIME"


class Factorization(str, Enum):
    CHOL = "CHOL"
    PCA_FACTOR = "PCA_FACTOR"


@dataclass(frozen=True)
class SchemeSpec:
    """Time discretization scheme and covariance factorization."""

    time_scheme: TimeScheme = TimeScheme.SD
    factorization: Factorization = Factorization.CHOL

    def __post_init__(self):
        try:
            object.__setattr__(self, "time_scheme", TimeScheme(self.time_scheme))
            object.__setattr__(self, "factorization", Factorization(self.factorization))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def normalized(self, n_assets: int) -> "SchemeSpec":
        # the factor root of a 1x1 covariance is unique
        if n_assets == 1 and self.factorization is not Factorization.CHOL:
            return SchemeSpec(self.time_scheme, Factorization.CHOL)
        return self

    @property
    def label(self) -> str:
        return f"{self.time_scheme.value}+{self.factorization.value}"


def _as_vector(x, name) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector")
    return v


@dataclass(frozen=True)
class MarketModel:
    """Multi-asset Black-Scholes market with flat rate.

    ``R`` defaults to the identity.  Vectors are stored as read-only arrays.
    """

    S0: np.ndarray
    sigma: np.ndarray
    R: np.ndarray | None = None
    r: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        S0 = _as_vector(self.S0, "S0")
        sigma = _as_vector(self.sigma, "sigma")
        if S0.shape != sigma.shape:
            raise ShapeError("S0 and sigma must have the same length")
        n = S0.size
        R = np.eye(n) if self.R is None else np.asarray(self.R, dtype=np.float64)
        if R.shape != (n, n):
            raise ShapeError(f"correlation matrix must be {n}x{n}")
        if not np.allclose(R, R.T, atol=1e-14) or not np.allclose(np.diag(R), 1.0, atol=1e-14):
            raise ConfigurationError("correlation matrix must be symmetric with unit diagonal")
        if np.any(S0 <= 0) or np.any(sigma <= 0):
            raise DomainError("spots and volatilities must be strictly positive")
        if not self.T > 0:
            raise DomainError("maturity must be positive")
        for name, arr in (("S0", S0), ("sigma", sigma), ("R", R)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "T", float(self.T))

    @classmethod
    def equicorrelated(cls, S0, sigma, rho: float, r: float = 0.0, T: float = 1.0):
        n = np.size(S0)
        R = np.full((n, n), float(rho))
        np.fill_diagonal(R, 1.0)
        return cls(S0, sigma, R, r, T)

    @property
    def n_assets(self) -> int:
        return self.S0.size

    def covariance(self) -> np.ndarray:
        return self.R * np.outer(self.sigma, self.sigma)

    def discount(self) -> float:
        return float(np.exp(-self.r * self.T))

    def bumped(self, *, spot: tuple[int, float] | None = None, vol: tuple[int, float] | None = None):
        """Copy with ``S0[i] += h`` and/or ``sigma[i] += h``."""
        S0, sigma = self.S0.copy(), self.sigma.copy()
        if spot is not None:
            S0[spot[0]] += spot[1]
        if vol is not None:
            sigma[vol[0]] += vol[1]
            if sigma[vol[0]] <= 0:
                raise DomainError("bumped volatility must stay positive")
        return MarketModel(S0, sigma, self.R, self.r, self.T)

    def to_dict(self) -> dict:
        return {
            "S0": self.S0.tolist(),
            "sigma": self.sigma.tolist(),
            "R": self.R.tolist(),
            "r": self.r,
            "T": self.T,
        }


@dataclass(frozen=True)
class TimeGrid:
    """Fixing dates ``t_1 < ... < t_N``; ``t_0 = 0`` is implicit."""

    times: np.ndarray

    def __post_init__(self):
        t = _as_vector(self.times, "times").copy()
        if t.size == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
            raise ConfigurationError("time grid must be positive and strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        return cls(T * np.arange(1, n_steps + 1) / n_steps)

    @property
    def n_steps(self) -> int:
        return self.times.size

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times, prepend=0.0)

    def to_dict(self) -> dict:
        return {"times": self.times.tolist()}


def _check_symmetric(Sigma) -> np.ndarray:
    S = np.asarray(Sigma, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise FactorizationError("covariance must be symmetric")
    return S


def cholesky_root(Sigma) -> np.ndarray:
    """Lower-triangular ``A`` with ``A @ A.T == Sigma`` for PSD ``Sigma``.

    Pivots within ``PIVOT_TOL`` (relative to the largest diagonal entry) of
    zero are treated as exact zeros so rank-deficient matrices are accepted.
    """
    S = _check_symmetric(Sigma)
    n = S.shape[0]
    scale = max(float(np.max(np.diag(S))), np.finfo(float).tiny) if n else 1.0
    L = np.zeros_like(S)
    for j in range(n):
        d = S[j, j] - L[j, :j] @ L[j, :j]
        if d < -PIVOT_TOL * scale:
            raise FactorizationError(f"matrix is not positive semidefinite (pivot {d:.3e} at {j})")
        if d <= PIVOT_TOL * scale:
            continue
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (S[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _sorted_eigh(S: np.ndarray):
    lam, V = np.linalg.eigh(S)
    scale = max(float(np.abs(lam).max()) if lam.size else 0.0, np.finfo(float).tiny)
    if lam.size and lam.min() < -PIVOT_TOL * scale * max(1, S.shape[0]):
        raise FactorizationError(f"matrix is not positive semidefinite (eigenvalue {lam.min():.3e})")
    order = np.argsort(-lam, kind="stable")
    lam, V = np.clip(lam[order], 0.0, None), V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return lam, V * signs


def pca_root(Sigma) -> np.ndarray:
    """``A = V diag(sqrt(lambda))`` with eigenvalues in descending order.

    Each column is signed so its largest-magnitude entry is positive.
    """
    lam, V = _sorted_eigh(_check_symmetric(Sigma))
    return V * np.sqrt(lam)


def pca_eigensystem(Sigma):
    """Descending eigenvalues and sign-fixed eigenvectors of ``Sigma``."""
    return _sorted_eigh(_check_symmetric(Sigma))


def time_covariance(times) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    return np.minimum.outer(t, t)


def sequential_matrix(times) -> np.ndarray:
    """Lower-triangular map from iid increments: ``W(t_j) = sum_{l<=j} sqrt(dt_l) z_l``."""
    dt = np.diff(np.asarray(times, dtype=np.float64), prepend=0.0)
    return np.tril(np.ones((dt.size, dt.size))) * np.sqrt(dt)


def bridge_order(n_steps: int) -> list[tuple[int, int, int]]:
    """Brownian bridge construction order as ``(node, left, right)`` triples.

    The terminal point comes first (``left = right = -1``, meaning ``t = 0``);
    the remaining grid indices follow by breadth-first bisection, splitting
    ``(lo, hi)`` at ``ceil((lo + hi) / 2)``.
    """
    order = [(n_steps - 1, -1, -1)]
    queue = deque([(-1, n_steps - 1)])
    while queue:
        lo, hi = queue.popleft()
        if hi - lo <= 1:
            continue
        mid = -((lo + hi) // -2)
        order.append((mid, lo, hi))
        queue.append((lo, mid))
        queue.append((mid, hi))
    return order


def bridge_matrix(times) -> np.ndarray:
    """Map ``W = B @ z`` where ``z[l]`` drives the ``l``-th node of :func:`bridge_order`."""
    t = np.asarray(times, dtype=np.float64)
    n = t.size
    B = np.zeros((n, n))
    for l, (node, lo, hi) in enumerate(bridge_order(n)):
        if lo == -1 and hi == -1:
            B[node, l] = np.sqrt(t[node])
            continue
        t_lo = 0.0 if lo < 0 else t[lo]
        t_hi, t_mid = t[hi], t[node]
        a = (t_hi - t_mid) / (t_hi - t_lo)
        b = (t_mid - t_lo) / (t_hi - t_lo)
        if lo >= 0:
            B[node] += a * B[lo]
        B[node] += b * B[hi]
        B[node, l] = np.sqrt((t_mid - t_lo) * (t_hi - t_mid) / (t_hi - t_lo))
    return B


def time_pca_matrix(times) -> np.ndarray:
    return pca_root(time_covariance(times))


def loading_matrix(model: MarketModel, grid: TimeGrid, scheme: SchemeSpec) -> np.ndarray:
    """Return ``M`` (``D x D``) with ``Y_flat = Z @ M.T`` for the given scheme."""
    scheme = SchemeSpec(scheme.time_scheme, scheme.factorization).normalized(model.n_assets)
    n_t, n_f = grid.n_steps, model.n_assets
    Sigma = model.covariance()
    ts = scheme.time_scheme
    joint = ts is TimeScheme.PCA_TIME and scheme.factorization is Factorization.PCA_FACTOR
    if joint:
        lam, _ = pca_eigensystem(time_covariance(grid.times))
        mu, _ = pca_eigensystem(Sigma)
        M = np.kron(time_pca_matrix(grid.times), pca_root(Sigma))
        order = np.argsort(-np.kron(lam, mu), kind="stable")
        return M[:, order]
    F = cholesky_root(Sigma) if scheme.factorization is Factorization.CHOL else pca_root(Sigma)
    if ts is TimeScheme.SD:
        M = np.kron(sequential_matrix(grid.times), F)
        # column l*n_f + k -> variate k*n_t + l
        perm = np.arange(n_t * n_f).reshape(n_t, n_f).T.ravel()
        return M[:, perm]
    B = bridge_matrix(grid.times) if ts is TimeScheme.BBD else time_pca_matrix(grid.times)
    return np.kron(B, F)


def drift_matrix(model: MarketModel, grid: TimeGrid) -> np.ndarray:
    """``(N_ts, N_rf)`` array of ``(r - sigma_i^2 / 2) t_j``."""
    return np.outer(grid.times, model.r - 0.5 * model.sigma**2)


@dataclass
class PathBatch:
    """Simulated paths with the pieces needed for pathwise differentiation.

    Attributes
    ----------
    spots : ndarray (N, N_ts, N_rf)
        ``S_i(t_j)``.
    growth : ndarray (N, N_ts, N_rf)
        ``S_i(t_j) / S_i(0)``; independent of the spot level.
    brownian : ndarray (N, N_ts, N_rf)
        Correlated Brownian values ``Y_i(t_j)``.
    S0 : ndarray (N_rf,)
    """

    spots: np.ndarray
    growth: np.ndarray
    brownian: np.ndarray
    S0: np.ndarray
    times: np.ndarray = field(repr=False, default=None)

    @property
    def values(self) -> np.ndarray:
        return self.spots

    @property
    def n_paths(self) -> int:
        return self.spots.shape[0]

    @property
    def n_steps(self) -> int:
        return self.spots.shape[1]

    @property
    def n_assets(self) -> int:
        return self.spots.shape[2]


class GBMPathBuilder(TransformerMixin, BaseEstimator):
    """Transformer from Gaussian blocks ``(N, D)`` to :class:`PathBatch`.

    Parameters
    ----------
    spots, vols : array-like (N_rf,)
    correlation : array-like (N_rf, N_rf) or None
    rate : float
    times : array-like (N_ts,)
        Fixing dates; the last one is the maturity.
    time_scheme : {"SD", "BBD", "PCA_TIME"}
    factorization : {"CHOL", "PCA_FACTOR"}
    """

    def __init__(self, spots=(100.0,), vols=(0.3,), correlation=None, rate=0.0,
                 times=(1.0,), time_scheme="SD", factorization="CHOL"):
        self.spots = spots
        self.vols = vols
        self.correlation = correlation
        self.rate = rate
        self.times = times
        self.time_scheme = time_scheme
        self.factorization = factorization

    @classmethod
    def from_model(cls, model: MarketModel, grid: TimeGrid, scheme: SchemeSpec) -> "GBMPathBuilder":
        if not np.isclose(grid.times[-1], model.T, rtol=1e-12, atol=0):
            raise ConfigurationError("last fixing date must equal the model maturity")
        return cls(spots=model.S0, vols=model.sigma, correlation=model.R, rate=model.r,
                   times=grid.times, time_scheme=scheme.time_scheme.value,
                   factorization=scheme.factorization.value)

    def _components(self):
        grid = TimeGrid(self.times)
        model = MarketModel(self.spots, self.vols, self.correlation, self.rate, grid.times[-1])
        return model, grid, SchemeSpec(self.time_scheme, self.factorization)

    def fit(self, Z=None, y=None):
        model, grid, scheme = self._components()
        self.model_, self.grid_ = model, grid
        self.scheme_ = scheme.normalized(model.n_assets)
        self.loading_matrix_ = loading_matrix(model, grid, self.scheme_)
        self.drift_ = drift_matrix(model, grid)
        self.n_features_in_ = grid.n_steps * model.n_assets
        return self

    def transform(self, Z) -> PathBatch:
        check_is_fitted(self, "loading_matrix_")
        Z = check_array(Z, dtype=np.float64)
        if Z.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} variates per path, got {Z.shape[1]}")
        n_t, n_f = self.drift_.shape
        Y = (Z @ self.loading_matrix_.T).reshape(-1, n_t, n_f)
        growth = np.exp(self.drift_ + Y)
        return PathBatch(growth * self.model_.S0, growth, Y, self.model_.S0, self.grid_.times)


def brownian_values(scheme: SchemeSpec, grid: TimeGrid, model: MarketModel, Z) -> np.ndarray:
    """Correlated Brownian values, shape ``(N, N_ts, N_rf)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    D = grid.n_steps * model.n_assets
    if Z.shape[1] != D:
        raise ShapeError(f"expected {D} variates per path, got {Z.shape[1]}")
    M = loading_matrix(model, grid, scheme)
    return (Z @ M.T).reshape(-1, grid.n_steps, model.n_assets)


def gbm_paths(model: MarketModel, grid: TimeGrid, scheme: SchemeSpec, Z) -> PathBatch:
    return GBMPathBuilder.from_model(model, grid, scheme).fit().transform(Z)


def write_paths_csv(batch: PathBatch, fh) -> None:
    """Long-format dump: ``path,step,asset,value`` (steps counted from 1)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path", "step", "asset", "value"])
    n, n_t, n_f = batch.spots.shape
    for p in range(n):
        for j in range(n_t):
            for i in range(n_f):
                w.writerow([p, j + 1, i, repr(float(batch.spots[p, j, i]))])
