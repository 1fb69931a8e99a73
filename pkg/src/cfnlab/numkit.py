"""Dense float64 kernels and seeded randomness shared by every module.

Vectors and matrices are plain numpy float64 arrays (1-D and 2-D, row
major). Everything here is deterministic: the same inputs give
bit-identical outputs, and Rng streams depend only on the seed.

The generator behind Rng is Philox 4x64 (10 rounds), a published
counter-based PRNG whose stream numpy fixes across platforms. Normal
deviates are produced by Box-Muller over rng_uniform so the sampling
recipe itself is pinned, not delegated to the library's default.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, ValidationError

Vector = np.ndarray
Matrix = np.ndarray

TWO_PI = 2.0 * np.pi


def vector(values) -> Vector:
    """Materialize a 1-D float64 array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def matrix(values) -> Matrix:
    """Materialize a 2-D float64 array (row major)."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matvec(m: Matrix, v: Vector) -> Vector:
    """Matrix-vector product with an explicit shape gate."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(
            f"matvec shape mismatch: matrix {getattr(m, 'shape', None)} "
            f"x vector {getattr(v, 'shape', None)}"
        )
    return m @ v


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x)), stable for large |x|.

    Outputs lie in [0, 1]; they are strictly inside (0, 1) whenever
    |x| is small enough that float64 rounding cannot saturate
    (|x| < ~36.7 on the high side, ~745 on the low side).
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    """Elementwise hyperbolic tangent (non-expansive: |tanh(x)| <= |x|)."""
    return np.tanh(np.asarray(x, dtype=np.float64))


def l2norm(v) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def global_l2norm(arrays) -> float:
    """Euclidean norm of the concatenation of several arrays.

    Accumulation order follows the given sequence, so the result is
    reproducible for a fixed tensor ordering.
    """
    total = 0.0
    for a in arrays:
        total += float(np.dot(a.ravel(), a.ravel()))
    return float(np.sqrt(total))


def assert_finite(name: str, a: np.ndarray) -> None:
    """Raise NumericsError if any entry is NaN or infinite."""
    from .errors import NumericsError

    if not np.all(np.isfinite(a)):
        bad = int(np.count_nonzero(~np.isfinite(a)))
        raise NumericsError(f"{name}: {bad} non-finite entr{'y' if bad == 1 else 'ies'}")


class Rng:
    """Seeded stream of float64 randomness.

    Identical seeds give bit-identical streams. `derive(i)` builds the
    per-trial generator used by parallel experiments (seed XOR trial
    index), so results never depend on scheduling.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)) or seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, index: int) -> "Rng":
        return Rng(self.seed ^ int(index))

    def uniform(self, lo: float, hi: float, n) -> np.ndarray:
        """n i.i.d. samples from [lo, hi). `n` may be an int or a shape tuple."""
        if lo > hi:
            raise ValidationError(f"uniform bounds out of order: lo={lo} > hi={hi}")
        u = self._gen.random(n, dtype=np.float64)
        x = lo + u * (hi - lo)
        if hi > lo:
            # float rounding of lo + u*(hi-lo) can land on hi; keep [lo, hi) exact
            np.minimum(x, np.nextafter(hi, lo), out=x)
        return x

    def normal(self, n: int) -> np.ndarray:
        """n standard-normal samples via Box-Muller over uniform pairs.

        Pair k consumes uniforms (u1[k], u2[k]) and emits
        sqrt(-2 ln(1-u1)) * (cos, sin)(2 pi u2), interleaved.
        """
        pairs = (int(n) + 1) // 2
        u1 = self.uniform(0.0, 1.0, pairs)
        u2 = self.uniform(0.0, 1.0, pairs)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(TWO_PI * u2)
        out[1::2] = r * np.sin(TWO_PI * u2)
        return out[: int(n)]

    def bernoulli(self, keep: float, n) -> np.ndarray:
        """0/1 float mask with P(1) = keep. `n` may be an int or shape tuple."""
        if not 0.0 <= keep <= 1.0:
            raise ValidationError(f"keep probability out of [0,1]: {keep}")
        return (self._gen.random(n, dtype=np.float64) < keep).astype(np.float64)

    def integers(self, lo: int, hi: int, n) -> np.ndarray:
        """n integers uniform on [lo, hi)."""
        return self._gen.integers(lo, hi, size=n)
