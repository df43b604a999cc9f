"""Scalar building blocks: log-factorials, associated Laguerre polynomials and
sign-tracked log-domain products.

Every coefficient formula in the package is assembled as a log-magnitude plus a
separate sign (or phase), and only exponentiated once per amplitude.
"""

import math
import threading
from typing import Iterable, NamedTuple, Tuple

import numpy as np

from .errors import ValidationError

# ln(n!) is computed from the exact integer factorial up to this level.
EXACT_FACTORIAL_MAX = 20


class SignedLog(NamedTuple):
    """A real number stored as ``sign * exp(log)``; ``sign == 0`` is an exact zero."""

    log: float
    sign: int

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log)


EXACT_ZERO = SignedLog(-math.inf, 0)


class LogFactorialTable:
    """Immutable table ``values[n] = ln(n!)`` for ``0 <= n <= max_n``."""

    def __init__(self, max_n: int):
        if max_n < 0:
            raise ValidationError("max_n must be nonnegative")
        values = np.empty(max_n + 1)
        exact = min(max_n, EXACT_FACTORIAL_MAX)
        for n in range(exact + 1):
            values[n] = math.log(math.factorial(n))
        for n in range(exact + 1, max_n + 1):
            values[n] = values[n - 1] + math.log(n)
        values.setflags(write=False)
        self.values = values

    @property
    def max_n(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, n):
        return self.values[n]


_table = LogFactorialTable(4200)
_table_lock = threading.Lock()


def _table_for(max_n: int) -> LogFactorialTable:
    global _table
    table = _table
    if max_n <= table.max_n:
        return table
    with _table_lock:
        if max_n > _table.max_n:
            _table = LogFactorialTable(max(max_n, 2 * _table.max_n))
        return _table


def log_factorial(n):
    """Return ``ln(n!)``; accepts an int or an integer array."""
    arr = np.asarray(n)
    if arr.size and (arr.min() < 0):
        raise ValidationError("log_factorial needs n >= 0")
    if arr.ndim == 0:
        n = int(arr)
        return float(_table_for(n).values[n])
    return _table_for(int(arr.max()) if arr.size else 0).values[arr.astype(np.intp)]


def assoc_laguerre(k, l, x):
    """Associated Laguerre polynomial ``L_k^l(x)``.

    Evaluated with the three-term recurrence in the degree

        (j+1) L_{j+1} = (2j + l + 1 - x) L_j - (j + l) L_{j-1}

    seeded by ``L_0 = 1`` and ``L_1 = 1 + l - x``. The alternating power series is
    never used: it loses all precision once ``x`` exceeds a few times ``k``.

    Parameters
    ----------
    k : int or array of int
        Degree, ``k >= 0``.
    l : float or array
        Superscript, ``l >= 0``.
    x : float or array
        Argument, ``x >= 0``.

    Returns
    -------
    float or numpy.ndarray
        Broadcast result of the three inputs.
    """
    k_arr = np.asarray(k)
    l_arr = np.asarray(l, dtype=float)
    x_arr = np.asarray(x, dtype=float)
    scalar = k_arr.ndim == 0 and l_arr.ndim == 0 and x_arr.ndim == 0
    if k_arr.size and (np.any(k_arr < 0) or np.any(k_arr != np.floor(k_arr))):
        raise ValidationError("Laguerre degree must be a nonnegative integer")
    if np.any(l_arr < 0):
        raise ValidationError("Laguerre superscript must be nonnegative")
    if np.any(x_arr < 0):
        raise ValidationError("Laguerre argument must be nonnegative")

    k_arr, l_arr, x_arr = np.broadcast_arrays(k_arr.astype(np.intp), l_arr, x_arr)
    out = np.ones(k_arr.shape)
    kmax = int(k_arr.max()) if k_arr.size else 0
    if kmax >= 1:
        prev = np.ones(k_arr.shape)
        cur = 1.0 + l_arr - x_arr
        out = np.where(k_arr == 1, cur, out)
        for j in range(1, kmax):
            nxt = ((2 * j + 1 + l_arr - x_arr) * cur - (j + l_arr) * prev) / (j + 1)
            prev, cur = cur, nxt
            out = np.where(k_arr == j + 1, cur, out)
    if scalar:
        return float(out)
    return out


def signed_log(x):
    """Split ``x`` into ``(ln|x|, sign)`` elementwise; zeros get ``(-inf, 0)``."""
    x = np.asarray(x, dtype=float)
    sign = np.sign(x).astype(np.int8)
    with np.errstate(divide="ignore"):
        logs = np.where(sign == 0, -np.inf, np.log(np.abs(x)))
    if x.ndim == 0:
        return SignedLog(float(logs), int(sign))
    return logs, sign


def signed_log_product(factors: Iterable[Tuple[float, int]]) -> SignedLog:
    """Multiply numbers given as ``(ln|value|, sign)`` pairs.

    A factor whose sign is 0 makes the product an exact zero; the log
    magnitudes are not summed in that case, so no ``-inf`` arithmetic happens.
    """
    total = 0.0
    sign = 1
    for log_mag, s in factors:
        if s == 0:
            return EXACT_ZERO
        if s not in (1, -1):
            raise ValidationError(f"sign must be -1, 0 or +1, got {s!r}")
        total += log_mag
        sign *= s
    return SignedLog(total, sign)


def log_power(z: complex, p):
    """Return ``(p * ln|z|, p * arg z)`` for integer powers ``p >= 0``.

    ``z**0`` is exactly 1 even at ``z == 0``; positive powers of zero come back
    with ``-inf`` log magnitude, which callers treat as an exact zero.
    """
    p = np.asarray(p)
    r = abs(z)
    theta = math.atan2(z.imag, z.real) if r > 0 else 0.0
    if r == 0:
        logs = np.where(p == 0, 0.0, -np.inf)
    else:
        logs = p * math.log(r)
    return logs, p * theta
