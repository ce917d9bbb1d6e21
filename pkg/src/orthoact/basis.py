"""Probabilist Hermite polynomials He_k.

Two evaluation paths are provided:

* :func:`hermite_explicit` contracts precomputed monomial coefficients
  against powers of ``x`` and returns the normalized values ``He_k(x) / k!``.
  It costs O(d^2) per input and is kept for cross-checking and benchmarks.
* :func:`hermite_recursive` runs the three-term recurrence
  ``He_k = x He_{k-1} - (k-1) He_{k-2}`` in O(d) time and memory. It is the
  default path used by the activations.

Inputs are never clamped. Non-finite results are tallied by
:data:`overflow_counter` for diagnostics only.
"""

import math
import threading
from dataclasses import dataclass

import numpy as np


class OverflowCounter:
    """Thread-safe tally of non-finite basis values seen during evaluation."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def record(self, values):
        bad = int(values.size - np.count_nonzero(np.isfinite(values)))
        if bad:
            with self._lock:
                self._count += bad

    @property
    def count(self):
        return self._count

    def reset(self):
        with self._lock:
            self._count = 0


overflow_counter = OverflowCounter()


@dataclass(frozen=True)
class HermiteTable:
    """Monomial coefficients and exponents of ``He_i(x) / i!`` for ``i <= degree``.

    Row ``i`` holds the terms of the explicit sum: ``coeff_grid[i, j]`` is the
    coefficient of ``x ** power_grid[i, j]``. Entries with ``j > i / 2`` are
    zero padding. Both arrays are read-only.
    """

    degree: int
    coeff_grid: np.ndarray
    power_grid: np.ndarray


def build_hermite_table(degree):
    """Build the coefficient/exponent grids for degrees ``0..degree``.

    Factorials are combined in log space before exponentiating, so the table
    stays finite well past the point where ``degree!`` overflows a double.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    cols = degree // 2 + 1
    coeffs = np.zeros((degree + 1, cols))
    powers = np.zeros((degree + 1, cols), dtype=np.int64)
    log2 = math.log(2.0)
    for i in range(degree + 1):
        for j in range(cols):
            if 2 * j <= i:
                log_mag = -math.lgamma(j + 1) - math.lgamma(i - 2 * j + 1) - j * log2
                coeffs[i, j] = (-1.0) ** j * math.exp(log_mag)
                powers[i, j] = i - 2 * j
    coeffs.setflags(write=False)
    powers.setflags(write=False)
    return HermiteTable(degree, coeffs, powers)


def _as_float(x):
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    return x


def signed_power(x, p):
    """``|x|**p * sign(x)**p`` with the convention ``0**0 == 1``."""
    x = _as_float(x)
    return np.abs(x) ** p * np.sign(x) ** p


def hermite_explicit(x, table):
    """Normalized Hermite values ``He_k(x) / k!`` for ``k = 0..table.degree``.

    Returns an array of shape ``np.shape(x) + (degree + 1,)``.
    """
    x = _as_float(x)
    n = table.degree
    out = np.empty(x.shape + (n + 1,), dtype=x.dtype)
    for i in range(n + 1):
        acc = np.zeros_like(x)
        for j in range(i // 2 + 1):
            acc = acc + x.dtype.type(table.coeff_grid[i, j]) * signed_power(x, table.power_grid[i, j])
        out[..., i] = acc
    overflow_counter.record(out)
    return out


def hermite_recursive(x, degree):
    """Unnormalized Hermite values ``He_k(x)`` for ``k = 0..degree``.

    Returns an array of shape ``np.shape(x) + (degree + 1,)``.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    x = _as_float(x)
    out = np.empty(x.shape + (degree + 1,), dtype=x.dtype)
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = x
    for k in range(2, degree + 1):
        out[..., k] = x * out[..., k - 1] - (k - 1) * out[..., k - 2]
    overflow_counter.record(out)
    return out


def iter_hermite(x, degree):
    """Yield ``He_0(x), ..., He_degree(x)`` one array at a time.

    Same arithmetic as :func:`hermite_recursive` without materializing the
    stacked basis, which keeps every step on contiguous memory.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError(f"degree must be >= 0, got {degree}")
    x = _as_float(x)
    prev = np.ones(x.shape, dtype=x.dtype)
    yield prev
    if degree == 0:
        return
    cur = x.copy()
    yield cur
    for k in range(2, degree + 1):
        prev, cur = cur, x * cur - (k - 1) * prev
        overflow_counter.record(cur)
        yield cur


def hermite_derivative_basis(he_values):
    """Derivatives ``He'_k = k He_{k-1}`` from values produced by :func:`hermite_recursive`."""
    he_values = np.asarray(he_values, dtype=np.float64)
    out = np.zeros_like(he_values)
    n = he_values.shape[-1]
    if n > 1:
        out[..., 1:] = np.arange(1, n) * he_values[..., :-1]
    return out
