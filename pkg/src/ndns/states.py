"""Closed-form Fock expansions of displaced number states and their deformations.

Six families are supported:

``dns``
    D(alpha)|n>, the undeformed displaced number state.
``manual-ndns``
    DNS coefficients divided by [f(m)]!, the hand-deformed variant.
``ndns-prime``
    exp(alpha A^+ - alpha^* B)|n>: DNS kernel times [f(m)]!/[f(n)]!.
``ndns-double-prime``
    exp(alpha B^+ - alpha^* A)|n>: DNS kernel times [f(n)]!/[f(m)]!.
``gp``
    SU(1,1) Gilmore-Perelomov displacement of |n>, parametrized by zeta.
``su2``
    SU(2) displacement of |n> on the finite ladder 0..2s, parametrized by gamma.

Every builder returns a unit-norm :class:`FockVector`. The pre-normalization norm
is kept for bookkeeping, and a single global constant replaces the separate
normalization factors that a branch-wise expansion would suggest.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .deformation import NonlinearityFunction
from .errors import TruncationError, ValidationError
from .numerics import assoc_laguerre, log_factorial, log_power

DNS = "dns"
MANUAL_NDNS = "manual-ndns"
NDNS_PRIME = "ndns-prime"
NDNS_DOUBLE_PRIME = "ndns-double-prime"
GP = "gp"
SU2 = "su2"
FAMILIES = (DNS, MANUAL_NDNS, NDNS_PRIME, NDNS_DOUBLE_PRIME, GP, SU2)
ALGEBRAIC_FAMILIES = (DNS, MANUAL_NDNS, NDNS_PRIME, NDNS_DOUBLE_PRIME)
GROUP_FAMILIES = (GP, SU2)

VERBATIM = "verbatim"
CORRECTED = "corrected"
ORACLE = "oracle"
GROUP_MODES = (VERBATIM, CORRECTED, ORACLE)

HARD_MAX_TRUNCATION = 4096
TAIL_WINDOW = 0.05


def max_truncation_from_env(default=HARD_MAX_TRUNCATION):
    """Cap on N, lowered by the ``NDNS_MAX_TRUNCATION`` environment variable."""
    raw = os.environ.get("NDNS_MAX_TRUNCATION")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"NDNS_MAX_TRUNCATION must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValidationError("NDNS_MAX_TRUNCATION must be positive")
    return min(default, value)


@dataclass(frozen=True)
class TruncationPolicy:
    """Geometric growth of the truncation N until the tail estimate is below tolerance."""

    start: int = 64
    cap: int = HARD_MAX_TRUNCATION
    tolerance: float = 1e-12
    growth: int = 2

    def __post_init__(self):
        if self.start < 1 or self.cap < 1:
            raise ValidationError("truncation levels must be positive")
        if self.growth < 2:
            raise ValidationError("truncation growth factor must be at least 2")
        if not self.tolerance > 0:
            raise ValidationError("tail tolerance must be positive")

    @classmethod
    def fixed(cls, N, tolerance=1e-12):
        return cls(start=N, cap=N, tolerance=tolerance)

    def levels(self):
        cap = min(self.cap, max_truncation_from_env())
        N = min(self.start, cap)
        while True:
            yield N
            if N >= cap:
                return
            N = min(N * self.growth, cap)


@dataclass
class FockVector:
    """Complex amplitudes over Fock levels 0..N plus truncation bookkeeping."""

    amplitudes: np.ndarray
    tail_bound: float = 0.0
    norm_before_normalization: float = 1.0
    family: str = ""
    n: int = 0
    displacement: complex = 0j
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)

    @property
    def truncation(self) -> int:
        return len(self.amplitudes) - 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def padded(self, N):
        """Amplitudes zero-padded (or checked) to length N + 1."""
        if N < self.truncation:
            if np.any(self.amplitudes[N + 1:] != 0):
                raise ValidationError("cannot shrink a vector with support above the target N")
            return self.amplitudes[: N + 1].copy()
        out = np.zeros(N + 1, dtype=complex)
        out[: len(self.amplitudes)] = self.amplitudes
        return out

    def to_dict(self):
        return {
            "family": self.family,
            "n": int(self.n),
            "displacement": [_json_float(self.displacement.real), _json_float(self.displacement.imag)],
            "truncation": self.truncation,
            "amplitudes": [[_json_float(a.real), _json_float(a.imag)] for a in self.amplitudes],
            "norm_before_normalization": _json_float(self.norm_before_normalization),
            "tail_bound": _json_float(self.tail_bound),
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, data):
        amps = np.array([complex(re, im) for re, im in data["amplitudes"]])
        if len(amps) != data["truncation"] + 1:
            raise ValidationError("amplitude count does not match truncation")
        re, im = data["displacement"]
        return cls(
            amplitudes=amps,
            tail_bound=_from_json_float(data["tail_bound"]),
            norm_before_normalization=_from_json_float(data["norm_before_normalization"]),
            family=data["family"],
            n=data["n"],
            displacement=complex(re, im),
            params=data.get("params", {}),
        )

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _from_json_float(x):
    return math.inf if x is None else float(x)


@dataclass(frozen=True)
class StateSpec:
    """Which state to build and with what parameters.

    ``displacement`` is alpha for the algebraic families, zeta for ``gp`` and
    gamma for ``su2``. ``lam`` and ``s`` fix the group nonlinearity.
    """

    family: str
    n: int
    displacement: complex = 0j
    f: Optional[NonlinearityFunction] = None
    lam: Optional[float] = None
    s: Optional[float] = None
    mode: str = VERBATIM
    truncation: TruncationPolicy = TruncationPolicy()

    def __post_init__(self):
        object.__setattr__(self, "displacement", complex(self.displacement))
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        _check_level(self.n)
        d = self.displacement
        if not (math.isfinite(d.real) and math.isfinite(d.imag)):
            raise ValidationError("displacement must be finite")
        if self.family in (MANUAL_NDNS, NDNS_PRIME, NDNS_DOUBLE_PRIME) and self.f is None:
            raise ValidationError(f"family {self.family} needs a nonlinearity function f")
        if self.family == GP:
            if self.lam is None:
                raise ValidationError("family gp needs lambda")
            _check_zeta(d)
        if self.family == SU2:
            if self.s is None:
                raise ValidationError("family su2 needs s")
            _check_su2_level(self.n, self.s)
        if self.family in GROUP_FAMILIES and self.mode not in GROUP_MODES:
            raise ValidationError(f"unknown group mode {self.mode!r}")

    def build(self) -> FockVector:
        if self.family == DNS:
            return build_dns(self.n, self.displacement, self.truncation)
        if self.family == MANUAL_NDNS:
            return build_manual_ndns(self.n, self.displacement, self.f, self.truncation)
        if self.family == NDNS_PRIME:
            return build_ndns_prime(self.n, self.displacement, self.f, self.truncation)
        if self.family == NDNS_DOUBLE_PRIME:
            return build_ndns_double_prime(self.n, self.displacement, self.f, self.truncation)
        if self.family == GP:
            return build_gp(self.n, self.displacement, self.lam, self.truncation, self.mode)
        return build_su2(self.n, self.displacement, self.s, self.mode)


def build_state(spec: StateSpec) -> FockVector:
    return spec.build()


def _check_level(n):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 0:
        raise ValidationError(f"Fock level n must be a nonnegative integer, got {n!r}")


def _check_zeta(zeta):
    if not abs(zeta) < 1:
        raise ValidationError(f"|zeta| must be < 1, got {abs(zeta)!r}")


def _check_su2_level(n, s):
    from .deformation import check_half_integer

    s = check_half_integer(s, "s")
    if n > 2 * s:
        raise ValidationError(f"n exceeds 2s (n={n}, s={s:g})")
    return s


def estimate_tail(probabilities, window=TAIL_WINDOW):
    """Upper estimate of the probability carried by the top levels and beyond.

    The top ``window`` fraction of levels is summed, and the mass beyond N is
    extrapolated with the mean geometric decay ratio observed across that window.
    A window that is not decaying gives ``inf``.
    """
    p = np.asarray(probabilities, dtype=float)
    total = p.sum()
    if total <= 0:
        raise ValidationError("cannot estimate the tail of a zero vector")
    p = p / total
    N = len(p) - 1
    w = max(1, int(math.ceil(window * (N + 1))))
    w = min(w, N) if N >= 1 else 1
    top = float(p[N - w + 1:].sum())
    last, first = p[N], p[N - w]
    if last == 0:
        return top
    if first == 0:
        return math.inf
    ratio = math.exp((math.log(last) - math.log(first)) / w)
    if ratio >= 1:
        return math.inf
    return top + float(last * ratio / (1.0 - ratio))


def _assemble(logs, signs, phases):
    """Turn per-level (ln|c|, sign, phase) into normalized amplitudes and the raw norm."""
    zero = (signs == 0) | np.isneginf(logs)
    if np.all(zero):
        raise ValidationError("all amplitudes vanish")
    shift = float(np.max(logs[~zero]))
    mags = np.where(zero, 0.0, np.exp(np.where(zero, 0.0, logs - shift)))
    amps = signs * mags * np.exp(1j * phases)
    amps = np.where(zero, 0.0, amps)
    scaled_norm = float(np.linalg.norm(amps))
    log_norm = shift + math.log(scaled_norm)
    norm_before = math.exp(log_norm) if log_norm < 709.0 else math.inf
    return amps / scaled_norm, norm_before


def _dns_log_kernel(n, alpha, N):
    """Log-domain DNS amplitudes <m|D(alpha)|n> for m = 0..N.

    Branch m <= n uses sqrt(m!/n!) (-alpha^*)^(n-m) L_m^(n-m)(|alpha|^2); branch
    m > n uses sqrt(n!/m!) alpha^(m-n) L_n^(m-n)(|alpha|^2). Both share the
    factor exp(-|alpha|^2/2). The m = n term is taken from the first branch.
    """
    x = abs(alpha) ** 2
    m = np.arange(N + 1)
    lf = log_factorial(np.arange(max(N, n) + 1))
    low = m <= n
    deg = np.where(low, m, n)
    sup = np.abs(n - m)
    lag = assoc_laguerre(deg, sup, x)
    pow_logs, pow_phase = log_power(complex(alpha), sup)
    _, neg_conj_phase = log_power(-complex(alpha).conjugate(), sup)
    phases = np.where(low, neg_conj_phase, pow_phase)
    fact = 0.5 * np.where(low, lf[m] - lf[n], lf[n] - lf[m])
    signs = np.sign(lag).astype(float)
    zero = (signs == 0) | np.isneginf(pow_logs)
    with np.errstate(divide="ignore"):
        lag_logs = np.log(np.abs(np.where(signs == 0, 1.0, lag)))
    finite_pow = np.where(np.isneginf(pow_logs), 0.0, pow_logs)
    logs = -0.5 * x + fact + finite_pow + lag_logs
    logs = np.where(zero, -np.inf, logs)
    signs = np.where(zero, 0.0, signs)
    return logs, signs, phases


def dns_amplitude(m: int, n: int, alpha: complex, branch: Optional[str] = None) -> complex:
    """Single DNS coefficient <m|D(alpha)|n> evaluated on a chosen branch.

    ``branch`` is ``"low"`` (m <= n formula), ``"high"`` (m >= n formula) or
    None to pick automatically. Both formulas are valid at m == n.
    """
    alpha = complex(alpha)
    x = abs(alpha) ** 2
    if branch is None:
        branch = "low" if m <= n else "high"
    if branch == "low":
        if m > n:
            raise ValidationError("low branch needs m <= n")
        base = -alpha.conjugate()
        k, l, power = m, n - m, n - m
        fact = 0.5 * (log_factorial(m) - log_factorial(n))
    elif branch == "high":
        if m < n:
            raise ValidationError("high branch needs m >= n")
        base = alpha
        k, l, power = n, m - n, m - n
        fact = 0.5 * (log_factorial(n) - log_factorial(m))
    else:
        raise ValidationError(f"unknown branch {branch!r}")
    return math.exp(-0.5 * x + fact) * base**power * assoc_laguerre(k, l, x)


def _check_positive_f(f, N):
    cutoff = f.cutoff
    if cutoff is not None and cutoff <= N:
        raise ValidationError(
            f"f vanishes at n={cutoff}, inside the truncation; [f(m)]! would divide by zero"
        )


def _adaptive(policy, make_logs, meta, horizon=None):
    """Grow N until the tail estimate is below tolerance.

    Each accepted level is also checked by evaluating the closed form out to 2N
    (or ``horizon``, the last level the formula is defined at): levels N+1..2N
    must carry less than the tolerance relative to levels 0..N. This catches
    expansions whose amplitudes dip and then grow again, which a tail estimate
    from the top few levels alone cannot see.
    """
    policy = policy or TruncationPolicy()
    tail = math.inf
    N = None
    for N in policy.levels():
        M = 2 * N if horizon is None else max(N, min(2 * N, horizon))
        logs, signs, phases = make_logs(M)
        amps, norm_before = _assemble(logs[: N + 1], signs[: N + 1], phases[: N + 1])
        tail = estimate_tail(np.abs(amps) ** 2)
        if M > N and tail < policy.tolerance:
            tail = max(tail, _mass_beyond(logs, signs, N))
        if tail < policy.tolerance:
            return FockVector(amps, tail, norm_before, **meta)
    raise TruncationError(
        f"{meta['family']}: tail estimate {tail:.3g} exceeds tolerance "
        f"{policy.tolerance:.3g} at N={N}",
        truncation=N,
        tail=tail,
    )


def _mass_beyond(logs, signs, N):
    """Probability on levels above N relative to levels 0..N, from log magnitudes."""
    live = (signs != 0) & np.isfinite(logs)
    inner = np.where(live[: N + 1], 2.0 * logs[: N + 1], -np.inf)
    outer = np.where(live[N + 1:], 2.0 * logs[N + 1:], -np.inf)
    if not np.any(np.isfinite(outer)):
        return 0.0
    ratio = float(np.exp(np.logaddexp.reduce(outer) - np.logaddexp.reduce(inner)))
    return ratio


def _algebraic(family, n, alpha, f, truncation, f_weight):
    _check_level(n)
    alpha = complex(alpha)
    params = {} if f is None else {"f": f.describe()}

    def make_logs(N):
        logs, signs, phases = _dns_log_kernel(n, alpha, N)
        if f is not None:
            _check_positive_f(f, max(N, n))
            lff, _ = f.log_f_factorials(max(N, n))
            logs = np.where(signs == 0, -np.inf, logs + f_weight(lff[: N + 1], lff[n]))
        return logs, signs, phases

    meta = dict(family=family, n=n, displacement=alpha, params=params)
    horizon = None
    if f is not None:
        if f.cutoff is not None:
            horizon = f.cutoff - 1
        elif f.kind == "custom":
            horizon = f.max_level
    return _adaptive(truncation, make_logs, meta, horizon)


def build_dns(n, alpha, truncation=None) -> FockVector:
    """Displaced number state D(alpha)|n>."""
    return _algebraic(DNS, n, alpha, None, truncation, None)


def build_manual_ndns(n, alpha, f, truncation=None) -> FockVector:
    """DNS with each |m> coefficient divided by [f(m)]!, then normalized."""
    return _algebraic(MANUAL_NDNS, n, alpha, f, truncation, lambda lff_m, lff_n: -lff_m)


def build_ndns_prime(n, alpha, f, truncation=None) -> FockVector:
    """exp(alpha A^+ - alpha^* B)|n>, with A = a f(n) and B = a / f(n)."""
    return _algebraic(NDNS_PRIME, n, alpha, f, truncation, lambda lff_m, lff_n: lff_m - lff_n)


def build_ndns_double_prime(n, alpha, f, truncation=None) -> FockVector:
    """exp(alpha B^+ - alpha^* A)|n>.

    With a decreasing f such as 1/(1 + k n) the weight [f(n)]!/[f(m)]! grows
    factorially, so for |alpha| of order one or more the expansion is not
    square-summable and the adaptive truncation reports failure.
    """
    return _algebraic(
        NDNS_DOUBLE_PRIME, n, alpha, f, truncation, lambda lff_m, lff_n: lff_n - lff_m
    )


def _group_log_sum(n, z, N, lff, log_prefactor, log_middle, mode):
    """Sum over p of the group-state closed form, done per level m in log domain.

    ``log_middle`` is ln(1 - |z|^2) for SU(1,1) and ln(1 + |z|^2) for SU(2).

    Printed form (``verbatim``):
        (-z^*)^m z^n (1 - 1/|z|^2)^p          for SU(1,1)
        (-z^*)^m z^n (-|z|^2/(1+|z|^2))^(-p)  for SU(2)
    rewritten without the 1/|z|^2 singularity as (-z^*)^(m-p) z^(n-p) w^p, where
    w = 1 - |z|^2 or 1 + |z|^2. The disentangled operator product
    exp(z K+) w^K0 exp(-z^* K-) gives instead (``corrected``)
    (-z^*)^(n-p) z^(m-p) w^p.
    """
    m = np.arange(N + 1)[:, None]
    p = np.arange(n + 1)[None, :]
    valid = p <= m
    mp = np.where(valid, m - p, 0)
    lf = log_factorial(np.arange(max(N, n) + 1))
    r = abs(z)
    theta = math.atan2(z.imag, z.real) if r > 0 else 0.0
    exponent = (n - p) + mp
    if r > 0:
        pow_logs = exponent * math.log(r)
    else:
        pow_logs = np.where(exponent == 0, 0.0, -np.inf)
    lff_m = lff[: N + 1][:, None]
    m_zero = np.isneginf(lff_m)
    logs = (
        log_prefactor
        + np.where(np.isneginf(pow_logs), 0.0, pow_logs)
        + p * log_middle
        + 0.5 * (lf[m] + lf[n])
        - lf[p]
        - lf[n - p]
        - lf[mp]
        + lff[n]
        + np.where(m_zero, 0.0, lff_m)
        - 2.0 * lff[p]
    )
    dead = ~valid | np.isneginf(pow_logs) | m_zero
    logs = np.where(dead, -np.inf, logs)
    if mode == VERBATIM:
        term_sign = np.where((m - p) % 2 == 0, 1.0, -1.0)
        phase = theta * (n - m[:, 0])
    else:
        term_sign = np.where((n - p) % 2 == 0, 1.0, -1.0)
        phase = theta * (m[:, 0] - n)

    row_max = np.max(logs, axis=1)
    alive = np.isfinite(row_max)
    shift = np.where(alive, row_max, 0.0)
    scaled = np.where(dead, 0.0, term_sign * np.exp(np.where(dead, 0.0, logs - shift[:, None])))
    total = scaled.sum(axis=1)
    signs = np.sign(total)
    with np.errstate(divide="ignore"):
        out_logs = np.where(signs == 0, -np.inf, shift + np.log(np.abs(np.where(signs == 0, 1.0, total))))
    return out_logs, signs, phase


def build_gp(n, zeta, lam, truncation=None, mode=VERBATIM) -> FockVector:
    """SU(1,1) displaced number state for Bargmann index ``lam``.

    ``mode`` selects the printed closed form (``verbatim``), the disentangled
    operator form (``corrected``) or the matrix-exponential oracle (``oracle``).
    Both closed forms are renormalized numerically.
    """
    _check_level(n)
    zeta = complex(zeta)
    _check_zeta(zeta)
    f = NonlinearityFunction.gilmore_perelomov(lam)
    if mode == ORACLE:
        from .oracle import build_group_oracle

        return build_group_oracle(GP, zeta, f.param, n, truncation=truncation)
    if mode not in GROUP_MODES:
        raise ValidationError(f"unknown group mode {mode!r}")
    x = abs(zeta) ** 2
    log_middle = math.log1p(-x)

    def make_logs(N):
        lff, _ = f.log_f_factorials(max(N, n))
        return _group_log_sum(n, zeta, N, lff, f.param * log_middle, log_middle, mode)

    meta = dict(family=GP, n=n, displacement=zeta, params={"lambda": f.param, "mode": mode})
    return _adaptive(truncation, make_logs, meta)


def build_su2(n, gamma, s, mode=VERBATIM, su2_map="tanh") -> FockVector:
    """SU(2) displaced number state on the ladder 0..2s.

    The vector is returned with truncation N = 2s + 1; the top level is exactly
    zero because f(2s + 1) = 0 kills every path that reaches it. ``su2_map`` only
    matters in ``oracle`` mode (see :func:`ndns.oracle.build_group_oracle`).
    """
    _check_level(n)
    gamma = complex(gamma)
    s = _check_su2_level(n, s)
    f = NonlinearityFunction.su2(s)
    if mode == ORACLE:
        from .oracle import build_group_oracle

        return build_group_oracle(SU2, gamma, s, n, su2_map=su2_map)
    if mode not in GROUP_MODES:
        raise ValidationError(f"unknown group mode {mode!r}")
    N = int(round(2 * s)) + 1
    log_middle = math.log1p(abs(gamma) ** 2)
    lff, _ = f.log_f_factorials(N)
    logs, signs, phases = _group_log_sum(n, gamma, N, lff, -s * log_middle, log_middle, mode)
    amps, norm_before = _assemble(logs, signs, phases)
    return FockVector(
        amps, 0.0, norm_before, family=SU2, n=n, displacement=gamma,
        params={"s": s, "mode": mode},
    )
