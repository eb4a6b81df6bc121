"""Path-dependent option payoffs.

Each payoff evaluates a whole :class:`~qmcgreeks.paths.PathBatch` at once and
returns the undiscounted payoff per path.  Lipschitz payoffs additionally
expose ``adjoint(batch)``, the per-path gradient of the payoff with respect
to every simulated spot ``S_i(t_j)``; the engine chains it through the GBM
step to get pathwise greeks.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, ShapeError, UnsupportedPayoffError
from .paths import PathBatch

__all__ = [
    "Payoff",
    "AsianCall",
    "DoubleKnockOutCall",
    "Cliquet",
    "EuropeanBasketCall",
    "AsianBasketCall",
    "GeometricAsianCall",
    "PayoffTransformer",
    "payoff",
    "discounted_payoff",
    "payoff_from_dict",
]


def _batch_from_path(path, S0) -> PathBatch:
    path = np.asarray(path, dtype=np.float64)
    if path.ndim == 1:
        path = path[:, None]
    if path.ndim != 2:
        raise ShapeError("a single path must be an (N_ts, N_rf) array")
    S0 = np.atleast_1d(np.asarray(S0, dtype=np.float64))
    if S0.size != path.shape[1]:
        raise ShapeError("S0 length must match the number of assets in the path")
    spots = path[None]
    return PathBatch(spots, spots / S0, np.zeros_like(spots), S0)


class Payoff:
    """Base class; subclasses are frozen dataclasses."""

    kind: str = ""
    smooth: bool = False  # Lipschitz in the path, hence AAD-compatible
    single_asset: bool = True

    def check_shape(self, batch: PathBatch) -> None:
        if self.single_asset and batch.n_assets != 1:
            raise ShapeError(f"{self.kind} is a single-asset payoff, got {batch.n_assets} assets")

    def check_model(self, S0) -> None:
        """Validate contract parameters against the spot vector."""
        if self.single_asset and np.size(S0) != 1:
            raise ShapeError(f"{self.kind} is a single-asset payoff")

    def evaluate(self, batch: PathBatch) -> np.ndarray:
        self.check_shape(batch)
        return self._evaluate(batch)

    def _evaluate(self, batch: PathBatch) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, batch: PathBatch):
        """Return ``(payoff, dpayoff/dS)`` with ``dS`` shaped like ``batch.spots``."""
        raise UnsupportedPayoffError(
            f"{self.kind} is discontinuous or kinked in the path; pathwise adjoints are not defined"
        )

    def to_dict(self) -> dict:
        d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}
        return {"kind": self.kind, **d}


def _call_adjoint(level: np.ndarray, K: float):
    # derivative of max(x - K, 0) taken as 0 at the kink
    return np.maximum(level - K, 0.0), (level > K).astype(np.float64)


@dataclass(frozen=True)
class AsianCall(Payoff):
    """``max(mean_j S(t_j) - K, 0)``."""

    K: float = 100.0
    kind = "ASIAN"
    smooth = True

    def _evaluate(self, batch):
        return np.maximum(batch.spots[:, :, 0].mean(axis=1) - self.K, 0.0)

    def adjoint(self, batch):
        self.check_shape(batch)
        avg = batch.spots[:, :, 0].mean(axis=1)
        value, ind = _call_adjoint(avg, self.K)
        bar = np.broadcast_to((ind / batch.n_steps)[:, None, None], batch.spots.shape)
        return value, bar


@dataclass(frozen=True)
class GeometricAsianCall(Payoff):
    """``max(exp(mean_j log S(t_j)) - K, 0)``; has a closed-form price."""

    K: float = 100.0
    kind = "GEOMETRIC_ASIAN"
    smooth = True

    def _evaluate(self, batch):
        g = np.exp(np.log(batch.spots[:, :, 0]).mean(axis=1))
        return np.maximum(g - self.K, 0.0)

    def adjoint(self, batch):
        self.check_shape(batch)
        S = batch.spots[:, :, 0]
        g = np.exp(np.log(S).mean(axis=1))
        value, ind = _call_adjoint(g, self.K)
        bar = (ind * g)[:, None] / (batch.n_steps * S)
        return value, bar[:, :, None]


@dataclass(frozen=True)
class DoubleKnockOutCall(Payoff):
    """Call on ``S(T)`` that survives only if ``B_l < S(t_j) < B_u`` at every fixing."""

    K: float = 100.0
    B_l: float = 50.0
    B_u: float = 150.0
    kind = "DOUBLE_KO"

    def __post_init__(self):
        if not self.B_l < self.B_u:
            raise ConfigurationError("lower barrier must be below the upper barrier")

    def check_model(self, S0):
        super().check_model(S0)
        s = float(np.min(S0))
        if not (self.B_l < s and self.B_u > float(np.max(S0))):
            raise ConfigurationError("barriers must bracket the spot")

    def _evaluate(self, batch):
        S = batch.spots[:, :, 0]
        alive = (S.min(axis=1) > self.B_l) & (S.max(axis=1) < self.B_u)
        return np.where(alive, np.maximum(S[:, -1] - self.K, 0.0), 0.0)


@dataclass(frozen=True)
class Cliquet(Payoff):
    """``max(sum_j max(0, min(C, S(t_j)/S(t_{j-1}) - 1)), F)`` with ``S(t_0) = S0``.

    Returns are taken from ``batch.growth`` so the payoff does not depend on
    the spot level at all (not even through rounding).
    """

    C_cap: float = 0.08
    F_floor: float = 0.16
    kind = "CLIQUET"

    def __post_init__(self):
        if self.C_cap < 0 or self.F_floor < 0:
            raise ConfigurationError("cap and floor must be non-negative")

    def _evaluate(self, batch):
        g = batch.growth[:, :, 0]
        prev = np.concatenate([np.ones((g.shape[0], 1)), g[:, :-1]], axis=1)
        ret = np.clip(g / prev - 1.0, 0.0, self.C_cap)
        return np.maximum(ret.sum(axis=1), self.F_floor)


def _check_weights(w) -> tuple:
    w = tuple(float(x) for x in np.atleast_1d(w))
    if abs(sum(w) - 1.0) > 1e-12:
        raise ConfigurationError("basket weights must sum to 1")
    return w


@dataclass(frozen=True)
class EuropeanBasketCall(Payoff):
    """``max(sum_i w_i S_i(T) - K, 0)``."""

    K: float = 100.0
    w: tuple = field(default=(1.0,))
    kind = "EURO_BASKET"
    smooth = True
    single_asset = False

    def __post_init__(self):
        object.__setattr__(self, "w", _check_weights(self.w))

    def check_model(self, S0):
        if np.size(S0) != len(self.w):
            raise ShapeError("weight vector length must match the number of assets")

    def check_shape(self, batch):
        self.check_model(batch.S0)

    def _evaluate(self, batch):
        return np.maximum(batch.spots[:, -1, :] @ np.asarray(self.w) - self.K, 0.0)

    def adjoint(self, batch):
        self.check_shape(batch)
        value, ind = _call_adjoint(batch.spots[:, -1, :] @ np.asarray(self.w), self.K)
        bar = np.zeros_like(batch.spots)
        bar[:, -1, :] = ind[:, None] * np.asarray(self.w)
        return value, bar


@dataclass(frozen=True)
class AsianBasketCall(EuropeanBasketCall):
    """``max(mean_j sum_i w_i S_i(t_j) - K, 0)``."""

    kind = "ASIAN_BASKET"

    def _evaluate(self, batch):
        return np.maximum(batch.spots.mean(axis=1) @ np.asarray(self.w) - self.K, 0.0)

    def adjoint(self, batch):
        self.check_shape(batch)
        value, ind = _call_adjoint(batch.spots.mean(axis=1) @ np.asarray(self.w), self.K)
        per_step = ind[:, None] * np.asarray(self.w) / batch.n_steps
        return value, np.broadcast_to(per_step[:, None, :], batch.spots.shape)


_KINDS = {cls.kind: cls for cls in
          (AsianCall, GeometricAsianCall, DoubleKnockOutCall, Cliquet, EuropeanBasketCall, AsianBasketCall)}


def payoff_from_dict(d: dict) -> Payoff:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ConfigurationError(f"unknown payoff kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {kind}: {exc}") from None


def payoff(spec: Payoff, path, S0) -> float:
    """Payoff of a single ``(N_ts, N_rf)`` path."""
    return float(spec.evaluate(_batch_from_path(path, S0))[0])


def discounted_payoff(spec: Payoff, path, model) -> float:
    return model.discount() * payoff(spec, path, model.S0)


class PayoffTransformer(TransformerMixin, BaseEstimator):
    """Maps a :class:`PathBatch` to discounted payoffs, shape ``(N,)``."""

    def __init__(self, payoff=None, rate=0.0, maturity=1.0):
        self.payoff = payoff
        self.rate = rate
        self.maturity = maturity

    def fit(self, X=None, y=None):
        if not isinstance(self.payoff, Payoff):
            raise ConfigurationError("payoff must be a Payoff instance")
        self.discount_ = float(np.exp(-self.rate * self.maturity))
        return self

    def transform(self, X: PathBatch) -> np.ndarray:
        check_is_fitted(self, "discount_")
        if not isinstance(X, PathBatch):
            raise ShapeError("PayoffTransformer expects a PathBatch")
        return self.discount_ * self.payoff.evaluate(X)
