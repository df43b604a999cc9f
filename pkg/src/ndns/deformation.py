"""Nonlinearity functions f(n) and their f-factorials [f(n)]! = f(n) f(n-1) ... f(1).

Physical prefactors (hbar b^2 / 2 mu Omega and the like) are set to 1: only their
product with the displacement parameter ever enters a state, so the
dimensionless forms below lose nothing.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ValidationError

IDENTITY = "identity"
RATIONAL = "rational"
GP = "gp"
SU2 = "su2"
CUSTOM = "custom"
KINDS = (IDENTITY, RATIONAL, GP, SU2, CUSTOM)

DEFAULT_MAX_LEVEL = 4097


def check_half_integer(value, name):
    """Accept 1/2, 1, 3/2, ...; return the value as a float."""
    try:
        twice = 2.0 * float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(twice) or abs(twice - round(twice)) > 1e-12 or round(twice) < 1:
        raise ValidationError(f"{name} must be a positive integer or half-integer, got {value!r}")
    return round(twice) / 2.0


@dataclass(frozen=True)
class NonlinearityFunction:
    """Deformation function f(n) with a precomputed f-factorial cache.

    Build instances with the class methods (:meth:`identity`, :meth:`rational`,
    :meth:`gilmore_perelomov`, :meth:`su2`, :meth:`custom`) rather than the raw
    constructor.
    """

    kind: str
    param: Optional[float] = None
    table: Optional[Tuple[float, ...]] = None
    max_level: int = DEFAULT_MAX_LEVEL
    _f: np.ndarray = field(init=False, repr=False, compare=False)
    _log_ff: np.ndarray = field(init=False, repr=False, compare=False)
    _zero: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind == RATIONAL:
            if self.param is None or not (self.param > 0 and math.isfinite(self.param)):
                raise ValidationError("rational nonlinearity needs k > 0")
        elif self.kind in (GP, SU2):
            object.__setattr__(
                self, "param", check_half_integer(self.param, "lambda" if self.kind == GP else "s")
            )
        elif self.kind == CUSTOM:
            if not self.table:
                raise ValidationError("custom nonlinearity needs a nonempty table")
            values = np.asarray(self.table, dtype=float)
            if np.any(~np.isfinite(values)) or np.any(values < 0):
                raise ValidationError("custom f(n) values must be finite and nonnegative")
            tail = values[1:]
            zeros = np.flatnonzero(tail == 0)
            if zeros.size and np.any(tail[zeros[0]:] != 0):
                raise ValidationError(
                    f"custom f(n) vanishes at n={zeros[0] + 1} but is nonzero later"
                )
            object.__setattr__(self, "table", tuple(float(v) for v in values))
            object.__setattr__(self, "max_level", len(values) - 1)
        f = self._evaluate(np.arange(self.max_level + 1))
        log_ff, zero = _log_f_factorials(f)
        for arr in (f, log_ff, zero):
            arr.setflags(write=False)
        object.__setattr__(self, "_f", f)
        object.__setattr__(self, "_log_ff", log_ff)
        object.__setattr__(self, "_zero", zero)

    @classmethod
    def identity(cls, max_level=DEFAULT_MAX_LEVEL):
        return cls(IDENTITY, max_level=max_level)

    @classmethod
    def rational(cls, k, max_level=DEFAULT_MAX_LEVEL):
        """f(n) = 1 / (1 + k n)."""
        return cls(RATIONAL, float(k), max_level=max_level)

    @classmethod
    def gilmore_perelomov(cls, lam, max_level=DEFAULT_MAX_LEVEL):
        """f(n) = sqrt(n + 2 lambda - 1) for Bargmann index lambda."""
        return cls(GP, lam, max_level=max_level)

    @classmethod
    def su2(cls, s, max_level=None):
        """f(n) = sqrt(2s + 1 - n), clamped to 0 above n = 2s + 1."""
        s = check_half_integer(s, "s")
        if max_level is None:
            max_level = int(round(2 * s)) + 2
        return cls(SU2, s, max_level=max_level)

    @classmethod
    def custom(cls, table):
        return cls(CUSTOM, table=tuple(table))

    @classmethod
    def from_file(cls, path):
        """Load a custom table: one nonnegative decimal per line, line index = n."""
        values = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: not a number: {line!r}") from None
        return cls.custom(values)

    def _evaluate(self, n):
        n = np.asarray(n, dtype=float)
        if self.kind == IDENTITY:
            return np.ones_like(n)
        if self.kind == RATIONAL:
            return 1.0 / (1.0 + self.param * n)
        if self.kind == GP:
            return np.sqrt(n + 2.0 * self.param - 1.0)
        if self.kind == SU2:
            return np.sqrt(np.clip(2.0 * self.param + 1.0 - n, 0.0, None))
        idx = n.astype(np.intp)
        if np.any(idx >= len(self.table)):
            raise ValidationError(
                f"custom nonlinearity is tabulated only up to n={len(self.table) - 1}"
            )
        return np.asarray(self.table)[idx]

    @property
    def cutoff(self) -> Optional[int]:
        """Smallest n >= 1 with f(n) = 0, or None when the spectrum never terminates."""
        if self.kind == SU2:
            return int(round(2 * self.param)) + 1
        if self.kind == CUSTOM:
            hits = np.flatnonzero(self._f[1:] == 0)
            return int(hits[0]) + 1 if hits.size else None
        return None

    def eval_f(self, n: int) -> float:
        if n < 0:
            raise ValidationError("f(n) needs n >= 0")
        if n <= self.max_level:
            return float(self._f[n])
        return float(self._evaluate(n))

    def values(self, N: int) -> np.ndarray:
        """f(0), ..., f(N) as an array."""
        if N <= self.max_level:
            return self._f[: N + 1]
        return self._evaluate(np.arange(N + 1))

    def log_f_factorial(self, n: int) -> Tuple[float, bool]:
        """Return ``(ln [f(n)]!, is_zero)``; the log is -inf when is_zero is set."""
        if n < 0:
            raise ValidationError("[f(n)]! needs n >= 0")
        logs, zero = self.log_f_factorials(n)
        return float(logs[n]), bool(zero[n])

    def log_f_factorials(self, N: int):
        """Arrays ``(ln [f(m)]!, is_zero)`` for m = 0..N."""
        if N <= self.max_level:
            return self._log_ff[: N + 1], self._zero[: N + 1]
        return _log_f_factorials(self._evaluate(np.arange(N + 1)))

    def describe(self) -> str:
        """Inverse of :func:`parse_nonlinearity` for the built-in kinds."""
        if self.kind == IDENTITY:
            return "identity"
        if self.kind == RATIONAL:
            return f"rational:k={self.param!r}"
        if self.kind == GP:
            return f"gp:lambda={self.param!r}"
        if self.kind == SU2:
            return f"su2:s={self.param!r}"
        return f"custom:{len(self.table)}-entries"


def _log_f_factorials(f):
    f = np.asarray(f, dtype=float)
    factors = f[1:]
    zero = np.concatenate(([False], np.cumsum(factors == 0) > 0))
    with np.errstate(divide="ignore"):
        logs = np.log(np.where(factors > 0, factors, 1.0))
    log_ff = np.concatenate(([0.0], np.cumsum(logs)))
    log_ff[zero] = -np.inf
    return log_ff, zero


def parse_nonlinearity(text: str) -> NonlinearityFunction:
    """Parse ``identity``, ``rational:k=0.1``, ``gp:lambda=1``, ``su2:s=1`` or ``file:PATH``."""
    kind, _, rest = text.strip().partition(":")
    kind = kind.lower()
    if kind == "identity" and not rest:
        return NonlinearityFunction.identity()
    if kind == "file":
        if not rest:
            raise ValidationError("file: nonlinearity needs a path")
        return NonlinearityFunction.from_file(rest)
    key, eq, value = rest.partition("=")
    expected = {"rational": "k", "gp": "lambda", "su2": "s"}
    if kind not in expected or not eq or key.strip() != expected[kind]:
        raise ValidationError(
            f"cannot parse nonlinearity {text!r}; expected identity, rational:k=K, "
            "gp:lambda=L, su2:s=S or file:PATH"
        )
    try:
        number = float(value)
    except ValueError:
        raise ValidationError(f"bad number in nonlinearity {text!r}") from None
    if kind == "rational":
        return NonlinearityFunction.rational(number)
    if kind == "gp":
        return NonlinearityFunction.gilmore_perelomov(number)
    return NonlinearityFunction.su2(number)
