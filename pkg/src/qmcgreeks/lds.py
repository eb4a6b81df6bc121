"""Uniform point sources on the unit hypercube and their Gaussian transform.

Two generators share one contract: ``next_points(count)`` returns the next
``count`` rows of a ``(count, dimension)`` array of uniforms strictly inside
``(0, 1)``.

* :class:`SobolGenerator` walks an unscrambled Sobol' sequence in Gray-code
  order using a bundled Joe-Kuo direction-number table.  The all-zero point
  (index 0) is never emitted; section ``l`` of block size ``N`` holds the
  points with indices ``l*N + 1 ... (l+1)*N``.
* :class:`PseudoRandomGenerator` draws from a seeded PCG64 stream.

:func:`inverse_normal_cdf` maps uniforms to standard normal variates.
"""
from __future__ import annotations

import math
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import erfc
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .exceptions import ConfigurationError, DomainError

__all__ = [
    "MAX_SOBOL_DIMENSION",
    "PointGenerator",
    "SobolGenerator",
    "PseudoRandomGenerator",
    "StandardNormalTransformer",
    "direction_numbers",
    "gaussian_block",
    "inverse_normal_cdf",
    "next_points",
    "pseudo_points_at",
    "sobol_points_at",
]

SOBOL_BITS = 32
DIRECTION_FILE = "new-joe-kuo-6.1111.txt"


@lru_cache(maxsize=1)
def _direction_table() -> tuple[tuple[int, int, tuple[int, ...]], ...]:
    text = resources.files("qmcgreeks").joinpath("data", DIRECTION_FILE).read_text()
    rows = []
    for line in text.splitlines()[1:]:
        if not line.strip():
            continue
        d, s, a, *m = (int(tok) for tok in line.split())
        if len(m) != s:
            raise ConfigurationError(f"malformed direction-number row for dimension {d}")
        rows.append((s, a, tuple(m)))
    return tuple(rows)


MAX_SOBOL_DIMENSION = 1 + len(_direction_table())


@lru_cache(maxsize=32)
def direction_numbers(dimension: int) -> np.ndarray:
    """Return the ``(dimension, 32)`` table of left-aligned direction integers.

    Column ``b`` holds ``v_{b+1} = m_{b+1} * 2**(32 - b - 1)``; the first
    dimension is the van der Corput sequence (all ``m = 1``).
    """
    if dimension < 1:
        raise ConfigurationError("dimension must be a positive integer")
    if dimension > MAX_SOBOL_DIMENSION:
        raise ConfigurationError(
            f"Sobol' dimension {dimension} exceeds the bundled table maximum of {MAX_SOBOL_DIMENSION}"
        )
    table = _direction_table()
    V = np.zeros((dimension, SOBOL_BITS), dtype=np.uint64)
    V[0] = [1 << (SOBOL_BITS - 1 - b) for b in range(SOBOL_BITS)]
    for j in range(1, dimension):
        s, a, m = table[j - 1]
        v = [0] * (SOBOL_BITS + 1)
        for i in range(1, min(s, SOBOL_BITS) + 1):
            v[i] = m[i - 1] << (SOBOL_BITS - i)
        for i in range(s + 1, SOBOL_BITS + 1):
            v[i] = v[i - s] ^ (v[i - s] >> s)
            for k in range(1, s):
                if (a >> (s - 1 - k)) & 1:
                    v[i] ^= v[i - k]
        V[j] = v[1:]
    out = V.astype(np.uint32)
    out.flags.writeable = False
    return out


def _gray_state(index: int, V: np.ndarray) -> np.ndarray:
    """Integer coordinates of Gray-ordered point ``index`` (direct evaluation)."""
    gray = index ^ (index >> 1)
    x = np.zeros(V.shape[0], dtype=np.uint32)
    bit = 0
    while gray:
        if gray & 1:
            x ^= V[:, bit]
        gray >>= 1
        bit += 1
    return x


def _trailing_zeros(k: np.ndarray) -> np.ndarray:
    low = (k & -k).astype(np.float64)
    return np.frexp(low)[1] - 1


def sobol_points_at(first: int, count: int, dimension: int) -> np.ndarray:
    """Return Gray-ordered Sobol' points with indices ``first .. first+count-1``.

    Index 0 is the origin; callers that need the open cube start at 1.
    """
    if first < 0 or count < 0:
        raise ConfigurationError("indices must be non-negative")
    if first + count > 2**SOBOL_BITS:
        raise ConfigurationError(f"Sobol' index exceeds 2**{SOBOL_BITS}")
    V = direction_numbers(dimension)
    out = np.empty((count, dimension), dtype=np.uint32)
    if count == 0:
        return out.astype(np.float64)
    out[0] = _gray_state(first, V)
    if count > 1:
        k = np.arange(first + 1, first + count, dtype=np.int64)
        out[1:] = V.T[_trailing_zeros(k)]
        np.bitwise_xor.accumulate(out, axis=0, out=out)
    return out * 2.0**-SOBOL_BITS


class PointGenerator:
    """Common interface for uniform point sources."""

    kind: str = ""
    dimension: int

    def next_points(self, count: int) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class SobolGenerator(PointGenerator):
    """Unscrambled Sobol' points in Gray-code order, skipping the origin.

    Parameters
    ----------
    dimension : int
        Number of coordinates per point (at most :data:`MAX_SOBOL_DIMENSION`).
    section_index : int
        Which non-overlapping section to start at.
    block_size : int, optional
        Section length; required when ``section_index > 0``.
    """

    kind = "SOBOL"

    def __init__(self, dimension: int, section_index: int = 0, block_size: int | None = None):
        if section_index < 0:
            raise ConfigurationError("section_index must be non-negative")
        if section_index > 0 and not block_size:
            raise ConfigurationError("block_size is required for section_index > 0")
        direction_numbers(dimension)  # validates the dimension
        self.dimension = int(dimension)
        self.section_index = int(section_index)
        self.block_size = None if block_size is None else int(block_size)
        self._position = self.section_index * (self.block_size or 0)

    @property
    def position(self) -> int:
        """Global index of the last emitted point (0 before any output)."""
        return self._position

    def next_points(self, count: int) -> np.ndarray:
        if count < 1:
            raise ConfigurationError("count must be >= 1")
        pts = sobol_points_at(self._position + 1, count, self.dimension)
        self._position += count
        return pts

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "section_index": self.section_index,
            "block_size": self.block_size,
        }


def pseudo_points_at(seed: int, first: int, count: int, dimension: int) -> np.ndarray:
    """Rows ``first .. first+count-1`` of the PCG64 uniform stream for ``seed``.

    Each coordinate consumes one raw 64-bit draw, keeping its top 52 bits
    ``k``; the value is ``(k + 0.5) / 2**52``, so 0 and 1 never occur.
    """
    bitgen = np.random.PCG64(seed)
    if first:
        bitgen.advance(first * dimension)
    raw = bitgen.random_raw(count * dimension).reshape(count, dimension)
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


class PseudoRandomGenerator(PointGenerator):
    """Seeded PCG64 stream of uniforms on the open unit cube.

    Rows are drawn in order, so ``next_points(a)`` followed by
    ``next_points(b)`` equals ``next_points(a + b)``.
    """

    kind = "PSEUDO"

    def __init__(self, dimension: int, seed: int = 0):
        if dimension < 1:
            raise ConfigurationError("dimension must be a positive integer")
        if not 0 <= int(seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        self.dimension = int(dimension)
        self.seed = int(seed)
        self._bitgen = np.random.PCG64(self.seed)

    def next_points(self, count: int) -> np.ndarray:
        if count < 1:
            raise ConfigurationError("count must be >= 1")
        raw = self._bitgen.random_raw(count * self.dimension).reshape(count, self.dimension)
        return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52

    def descriptor(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "seed": self.seed}


def next_points(gen: PointGenerator, count: int) -> np.ndarray:
    return gen.next_points(count)


# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_TAIL = 0.02425
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def _lower_half(p: np.ndarray) -> np.ndarray:
    """Quantile for ``0 < p <= 0.5`` (result <= 0), one Halley step applied."""
    # central branch on the whole array, tail entries patched afterwards
    q = p - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x = num / den
    tail = p < _P_TAIL
    if tail.any():
        q = np.sqrt(-2.0 * np.log(p[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    e = 0.5 * erfc(-x / _SQRT2) - p
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def inverse_normal_cdf(u):
    """Standard normal quantile function, scalar or elementwise.

    Raises :class:`DomainError` unless every input lies strictly in (0, 1).
    """
    arr = np.asarray(u, dtype=np.float64)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("inverse_normal_cdf requires 0 < u < 1")
    upper = arr > 0.5
    p = np.where(upper, 1.0 - arr, arr)
    x = _lower_half(np.atleast_1d(p)).reshape(arr.shape)
    x = np.where(upper, -x, x)
    if np.ndim(u) == 0:
        return float(x)
    return x


def gaussian_block(gen: PointGenerator, count: int) -> np.ndarray:
    """Draw ``count`` points and map every coordinate through the normal quantile."""
    return inverse_normal_cdf(gen.next_points(count))


class StandardNormalTransformer(TransformerMixin, BaseEstimator):
    """Transformer mapping uniforms in (0, 1) to standard normal variates."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        return inverse_normal_cdf(X)
