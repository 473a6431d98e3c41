"""Dense-array and statistics primitives every other module builds on.

Matrices are plain 2-D float64 numpy arrays in row-major (C) order; by
convention they are treated as immutable once constructed.  Randomness comes
from :class:`SeededRng`, a counter-based SplitMix64 stream specified fully in
its docstring so the integer stream reproduces bit-for-bit on any platform
with wrapping 64-bit arithmetic.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray

# SplitMix64 constants (Steele, Lea & Flood 2014).
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64
_TWO53_INV = float(2.0**-53)


def _splitmix_finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


class SeededRng:
    """Deterministic random stream with a portable specification.

    The k-th raw word (k = 0, 1, ...) of a stream with seed s is

        out_k = finalize((s + (k + 1) * 0x9E3779B97F4A7C15) mod 2**64)

    with the SplitMix64 finalizer (xor-shift 30, mul 0xBF58476D1CE4E5B9,
    xor-shift 27, mul 0x94D049BB133111EB, xor-shift 31).  This equals the
    output of sequential SplitMix64 seeded at s, but being counter-based it
    vectorizes; all consumers below document how many raw words they draw.

    Uniform doubles take the top 53 bits: (out >> 11) * 2**-53 in [0, 1).
    Gaussians are Box-Muller pairs over two raw words.  Integer output is
    exact everywhere; float output is additionally deterministic per
    platform (libm rounding of log/cos/sin may differ across C libraries).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._seed_u64 = _U64(self.seed % (1 << 64))
        self._counter = 0

    def _raw(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError(f"draw count must be >= 0, got {n}")
        with np.errstate(over="ignore"):
            idx = _U64(self._counter) + np.arange(1, n + 1, dtype=np.uint64)
            out = _splitmix_finalize(self._seed_u64 + idx * _GOLDEN)
        self._counter += n
        return out

    def uniform(self, n: int) -> Vector:
        """n doubles in [0, 1); consumes n raw words."""
        return (self._raw(n) >> _U64(11)).astype(np.float64) * _TWO53_INV

    def gaussian(self, n: int) -> Vector:
        """n i.i.d. standard normal samples; consumes 2*ceil(n/2) raw words.

        Box-Muller: r = sqrt(-2 ln u1) with u1 in (0, 1], theta = 2 pi u2;
        the pair is (r cos theta, r sin theta).
        """
        if n <= 0:
            raise ValueError(f"sample count must be positive, got {n}")
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        u1 = ((raw[:pairs] >> _U64(11)).astype(np.float64) + 1.0) * _TWO53_INV
        u2 = (raw[pairs:] >> _U64(11)).astype(np.float64) * _TWO53_INV
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return out[:n]

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """n integers in [low, high); modulo reduction (bias < range/2**64)."""
        if high <= low:
            raise ValueError(f"empty range [{low}, {high})")
        span = _U64(high - low)
        return (self._raw(n) % span).astype(np.int64) + low

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n); consumes n-1 raw words."""
        perm = np.arange(n)
        if n > 1:
            raw = self._raw(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(raw[n - 1 - i] % _U64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self, index: int) -> "SeededRng":
        """Derive an independent child stream for a task index."""
        with np.errstate(over="ignore"):
            child = _splitmix_finalize(
                self._seed_u64 + _U64((index + 1) % (1 << 64)) * _GOLDEN
            ) ^ _U64(0xD6E8FEB86659FD93)
        return SeededRng(int(child))


def stable_seed(*parts) -> int:
    """64-bit seed from arbitrary labels, stable across runs and platforms.

    SHA-256 over the '|'-joined string forms of the parts, first 8 bytes
    little-endian.  Used to give benchmark items seeds that do not shift
    when unrelated items are added.
    """
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def gaussian(rng: SeededRng, n: int) -> Vector:
    """Module-level alias for :meth:`SeededRng.gaussian`."""
    return rng.gaussian(n)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"inner dimensions differ: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def softmax_rows(m: Matrix, scale: float = 1.0) -> Matrix:
    """Row softmax of ``m * scale``, stabilized by per-row max subtraction.

    ``scale`` is the logit multiplier (1/sqrt(d) for attention).
    """
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NumericError("softmax input contains non-finite values")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    z = m * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_similarity(u: Vector, v: Vector) -> float:
    """u.v / (|u||v|); raises on zero-norm input."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def finite_difference_check(
    f: Callable[[Vector], float],
    grad: Callable[[Vector], Vector],
    x: Sequence[float],
    eps: float = 1e-5,
) -> float:
    """Max relative error between ``grad`` and central differences of ``f``.

    Per coordinate: |analytic - numeric| / (|analytic| + 1e-8).
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x = np.asarray(x, dtype=np.float64).ravel()
    analytic = np.asarray(grad(x), dtype=np.float64).ravel()
    if analytic.shape != x.shape:
        raise ShapeError(f"gradient shape {analytic.shape} does not match input {x.shape}")
    worst = 0.0
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = eps
        numeric = (f(x + bump) - f(x - bump)) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / (abs(analytic[i]) + 1e-8)
        worst = max(worst, float(err))
    return worst
