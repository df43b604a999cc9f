"""Photon statistics and Wigner grids for Fock-basis state vectors."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln

from .errors import TruncationError, ValidationError
from .states import VERBATIM, FockVector, StateSpec, TruncationPolicy

log = logging.getLogger(__name__)

SUB_POISSONIAN = "sub-Poissonian"
POISSONIAN = "Poissonian"
SUPER_POISSONIAN = "super-Poissonian"

DEFAULT_EPS_Q = 1e-9
NORM_TOLERANCE = 1e-9
WIGNER_TAIL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MandelResult:
    mean_n: float
    mean_n_squared: float
    q: float
    q_normally_ordered: float
    classification: str


def _amplitudes(state):
    if isinstance(state, FockVector):
        return state.amplitudes
    return np.asarray(state, dtype=complex)


def mandel_q(state, eps_q: float = DEFAULT_EPS_Q) -> MandelResult:
    """Mandel Q = (<n^2> - <n>^2) / <n> - 1 of a normalized state.

    The normally ordered route (<a^+2 a^2> - <n>^2) / <n> is evaluated alongside.
    The vacuum (<n> = 0) is reported as Poissonian with Q = 0.
    """
    amps = _amplitudes(state)
    p = np.abs(amps) ** 2
    total = float(p.sum())
    if abs(math.sqrt(total) - 1.0) > NORM_TOLERANCE:
        raise ValidationError(f"state is not normalized (norm {math.sqrt(total)!r})")
    m = np.arange(len(p), dtype=float)
    mean = float(np.dot(m, p))
    mean_sq = float(np.dot(m * m, p))
    if mean == 0:
        return MandelResult(0.0, 0.0, 0.0, 0.0, POISSONIAN)
    q = (mean_sq - mean**2) / mean - 1.0
    factorial_moment = float(np.dot(m * (m - 1.0), p))
    q_no = (factorial_moment - mean**2) / mean
    if q < -eps_q:
        label = SUB_POISSONIAN
    elif q > eps_q:
        label = SUPER_POISSONIAN
    else:
        label = POISSONIAN
    return MandelResult(mean, mean_sq, q, q_no, label)


def displaced_overlaps(psi, alphas, K: int) -> np.ndarray:
    """Overlaps <k, alpha|psi> = <k| D(alpha)^+ |psi> for k = 0..K at each alpha.

    Uses the closed form of the displacement matrix elements, for l >= 0,

        <j+l|D(alpha)|j> = sqrt(j!/(j+l)!) alpha^l e^{-|alpha|^2/2} L_j^l(|alpha|^2)
        <j|D(alpha)|j+l> = sqrt(j!/(j+l)!) (-alpha^*)^l e^{-|alpha|^2/2} L_j^l(|alpha|^2)

    walking the degree j upward once with every superscript l in flight, so
    each diagonal is visited in a single pass. Magnitudes are combined in the
    log domain. A plain recurrence in the row index would amplify rounding by
    roughly exp(|alpha|^2) and is avoided for that reason.

    Returns an array of shape (K + 1, len(alphas)).
    """
    psi = np.asarray(psi, dtype=complex)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    N = len(psi) - 1
    if K < N:
        raise ValidationError("parity cutoff must be at least the state truncation")
    x = np.abs(alphas) ** 2
    theta = np.angle(alphas)
    l = np.arange(K + 1)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(np.sqrt(x))
        l_logr = np.where(l == 0, 0.0, l * logr[None, :])
    up_phase = np.exp(1j * l * theta[None, :])
    down_phase = np.where(l % 2 == 0, 1.0, -1.0) * np.conj(up_phase)
    out = np.zeros((K + 1, len(alphas)), dtype=complex)
    prev = np.zeros((K + 1, len(alphas)))
    cur = np.ones((K + 1, len(alphas)))
    lf = gammaln(np.arange(N + K + 2) + 1.0)
    for j in range(N + 1):
        if j == 1:
            prev, cur = cur, 1.0 + l - x[None, :]
        elif j > 1:
            prev, cur = cur, ((2 * j - 1 + l - x[None, :]) * cur - (j - 1 + l) * prev) / j
        # cur holds L_j^l(x) for every l
        logpref = 0.5 * (lf[j] - lf[j + l]) + l_logr - 0.5 * x[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            mag = np.sign(cur) * np.exp(np.log(np.abs(cur)) + logpref)
        mag = np.nan_to_num(mag, nan=0.0)
        # <j+d|D|j>, d = 0..N-j: contributes to c_j through psi_{j+d}
        top = N - j
        out[j] += np.sum(np.conj(mag[: top + 1] * up_phase[: top + 1]) * psi[j : N + 1, None], axis=0)
        # <j|D|j+l>, l >= 1: contributes to c_{j+l} through psi_j
        if psi[j] != 0 and j < K:
            span = K - j
            out[j + 1 :] += np.conj(mag[1 : span + 1] * down_phase[1 : span + 1]) * psi[j]
    return out


# Amplitudes below this at the top of a vector are dropped before the parity
# sum; they move W by less than their square.
NEGLIGIBLE_AMPLITUDE = 1e-18


def effective_support(amps) -> np.ndarray:
    """The vector cut after its last amplitude above NEGLIGIBLE_AMPLITUDE."""
    amps = np.asarray(amps, dtype=complex)
    big = np.flatnonzero(np.abs(amps) > NEGLIGIBLE_AMPLITUDE)
    return amps[: int(big[-1]) + 1] if big.size else amps[:1]


def default_parity_terms(N: int, max_abs_alpha: float) -> int:
    """Number of displaced levels that comfortably holds D(-alpha) psi."""
    return int(math.ceil((math.sqrt(N + 1) + max_abs_alpha + 6.0) ** 2))


def _wigner_from_overlaps(c):
    weights = np.abs(c) ** 2
    parity = np.where(np.arange(c.shape[0]) % 2 == 0, 1.0, -1.0)
    W = (2.0 / math.pi) * (parity[:, None] * weights).sum(axis=0)
    tail = 1.0 - weights.sum(axis=0)
    return W, tail


def _check_normalized(amps):
    norm = float(np.linalg.norm(amps))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ValidationError(f"state is not normalized (norm {norm!r})")


def wigner_values(state, alphas, parity_terms: Optional[int] = None,
                  tail_tolerance: float = WIGNER_TAIL_TOLERANCE):
    """W(alpha) = (2/pi) sum_k (-1)^k |<k, alpha|psi>|^2 at each alpha.

    The parity sum runs over k = 0..K with K = ``parity_terms`` (default from
    :func:`default_parity_terms`). The neglected weight 1 - sum_k |<k,alpha|psi>|^2
    must stay below ``tail_tolerance``.
    """
    amps = _amplitudes(state)
    _check_normalized(amps)
    amps = effective_support(amps)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=complex))
    N = len(amps) - 1
    if parity_terms is None:
        K = default_parity_terms(N, float(np.max(np.abs(alphas))) if alphas.size else 0.0)
    else:
        if parity_terms < N:
            raise ValidationError("parity_terms must be at least the state support")
        K = int(parity_terms)
    W, tail = _wigner_from_overlaps(displaced_overlaps(amps, alphas, K))
    bad = np.flatnonzero(tail > tail_tolerance)
    if bad.size:
        i = int(bad[np.argmax(tail[bad])])
        raise TruncationError(
            f"parity sum truncated at K={K} leaves {tail[i]:.3g} of the weight at alpha={alphas[i]:.6g}",
            truncation=K,
            tail=float(tail[i]),
        )
    return W


def wigner_point(state, alpha: complex, parity_terms: Optional[int] = None) -> float:
    return float(wigner_values(state, [complex(alpha)], parity_terms)[0])


@dataclass(frozen=True)
class GridAxis:
    """Evenly spaced nodes ``start, start + step, ..., stop``."""

    start: float
    stop: float
    step: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValidationError("grid step must be positive")
        if self.stop < self.start:
            raise ValidationError("grid stop must not be below start")

    @classmethod
    def parse(cls, text: str) -> "GridAxis":
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"grid axis must look like MIN:MAX:STEP, got {text!r}")
        try:
            lo, hi, step = (float(p) for p in parts)
        except ValueError:
            raise ValidationError(f"bad number in grid axis {text!r}") from None
        return cls(lo, hi, step)

    @property
    def count(self) -> int:
        return int(round((self.stop - self.start) / self.step)) + 1

    def nodes(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    def as_tuple(self):
        return (self.start, self.stop, self.step)


@dataclass
class PhaseSpaceGrid:
    re_range: GridAxis
    im_range: GridAxis
    values: np.ndarray
    integral_estimate: float
    min_value: float
    max_abs_value: float
    negativity_volume: float
    parity_terms: int

    @property
    def re_nodes(self):
        return self.re_range.nodes()

    @property
    def im_nodes(self):
        return self.im_range.nodes()

    def argmin(self) -> complex:
        i, j = np.unravel_index(int(np.argmin(self.values)), self.values.shape)
        return complex(self.re_nodes[j], self.im_nodes[i])


def _grid_row(args):
    amps, re_nodes, im_value, K, tol = args
    alphas = re_nodes + 1j * im_value
    return wigner_values(amps, alphas, K, tol)


def wigner_grid(state, re_range: GridAxis, im_range: Optional[GridAxis] = None,
                jobs: int = 1, parity_terms: Optional[int] = None,
                tail_tolerance: float = WIGNER_TAIL_TOLERANCE) -> PhaseSpaceGrid:
    """Evaluate W on every node of a rectangular grid over the complex plane.

    Rows (fixed imaginary part) are the unit of work, and each row is computed
    identically whether it runs in-process or in a worker. The parity cutoff K
    is fixed once for the whole grid, so ``jobs`` never changes a single bit of
    the output. The integral uses the midpoint rule with cell area
    step_re * step_im.
    """
    im_range = im_range or re_range
    amps = _amplitudes(state)
    _check_normalized(amps)
    amps = effective_support(amps)
    re_nodes = re_range.nodes()
    im_nodes = im_range.nodes()
    N = len(amps) - 1
    reach = math.hypot(max(abs(re_nodes[0]), abs(re_nodes[-1])), max(abs(im_nodes[0]), abs(im_nodes[-1])))
    K = parity_terms if parity_terms is not None else default_parity_terms(N, reach)
    p = np.abs(amps) ** 2
    mean_n = float(np.dot(np.arange(N + 1), p))
    half_width = min(-re_nodes[0], re_nodes[-1], -im_nodes[0], im_nodes[-1])
    if half_width < math.sqrt(mean_n) + 3:
        log.warning("grid half-width %.3g may not cover the state (sqrt<n> + 3 = %.3g)",
                    half_width, math.sqrt(mean_n) + 3)
    tasks = [(amps, re_nodes, float(y), K, tail_tolerance) for y in im_nodes]
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_grid_row, tasks))
        else:
            rows = [_grid_row(t) for t in tasks]
    except TruncationError as err:
        raise TruncationError(f"wigner grid: {err}", truncation=err.truncation, tail=err.tail) from err
    values = np.vstack(rows)
    cell = re_range.step * im_range.step
    integral = float(values.sum() * cell)
    negativity = float((np.abs(values) - values).sum() * cell / 2.0)
    return PhaseSpaceGrid(
        re_range=re_range,
        im_range=im_range,
        values=values,
        integral_estimate=integral,
        min_value=float(values.min()),
        max_abs_value=float(np.abs(values).max()),
        negativity_volume=negativity,
        parity_terms=K,
    )


@dataclass(frozen=True)
class SweepPoint:
    value: float
    result: Optional[MandelResult] = None
    truncation: Optional[int] = None
    error: Optional[str] = None

    @property
    def q(self):
        return None if self.result is None else self.result.q


def _sweep_point(args):
    family, n, value, f, lam, s, mode, truncation, eps_q = args
    try:
        spec = StateSpec(family, n, value, f=f, lam=lam, s=s, mode=mode,
                         truncation=truncation or TruncationPolicy())
        state = spec.build()
        return SweepPoint(value, mandel_q(state, eps_q), state.truncation)
    except (TruncationError, ValidationError) as err:
        return SweepPoint(value, error=f"{type(err).__name__}: {err}")


def mandel_sweep(family: str, n: int, values: Sequence[float], f=None, lam=None, s=None,
                 mode: str = VERBATIM, truncation: Optional[TruncationPolicy] = None,
                 eps_q: float = DEFAULT_EPS_Q, jobs: int = 1) -> List[SweepPoint]:
    """Mandel Q along a list of real, nonnegative displacements.

    ``values`` are alpha for the algebraic families and zeta (gp) or gamma (su2)
    for the group families. Per-point failures are kept inline as ``error``
    entries; the sweep carries on.
    """
    values = [float(v) for v in values]
    if any(v < 0 or not math.isfinite(v) for v in values):
        raise ValidationError("sweep values must be finite and nonnegative")
    tasks = [(family, n, v, f, lam, s, mode, truncation, eps_q) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def sub_poissonian_endpoint(points: Sequence[SweepPoint]) -> Optional[float]:
    """First sweep value, scanning upward, at which Q stops being sub-Poissonian.

    Returns None when every successful point is sub-Poissonian. Failed points
    end the scan, since nothing beyond them can be trusted as contiguous.
    """
    for pt in points:
        if pt.result is None:
            return pt.value
        if pt.result.classification != SUB_POISSONIAN:
            return pt.value
    return None


def min_q(points: Sequence[SweepPoint]) -> Tuple[Optional[float], Optional[float]]:
    """Smallest Q over the successful points of a sweep, with its location."""
    good = [(pt.result.q, pt.value) for pt in points if pt.result is not None]
    if not good:
        return None, None
    q, v = min(good)
    return q, v


# Output formats. Floats are written with 17 significant digits so every
# double round-trips, and nothing depends on locale or wall-clock time.


def fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return format(x, ".17g")


def _header_lines(metadata: dict) -> List[str]:
    import json

    return [f"# {key}: {json.dumps(metadata[key], sort_keys=True)}" for key in metadata]


def sweep_to_csv(points: Sequence[SweepPoint], metadata: dict) -> str:
    """Rows ``alpha,q,mean_n,classification``; failed points carry the error text."""
    lines = _header_lines(metadata)
    lines.append("alpha,q,mean_n,classification")
    for pt in points:
        if pt.result is None:
            text = pt.error.replace(",", ";").replace("\n", " ")
            lines.append(f"{fmt(pt.value)},,,error: {text}")
        else:
            r = pt.result
            lines.append(f"{fmt(pt.value)},{fmt(r.q)},{fmt(r.mean_n)},{r.classification}")
    return "\n".join(lines) + "\n"


def sweep_to_dict(points: Sequence[SweepPoint], metadata: dict) -> dict:
    rows = []
    for pt in points:
        row = {"alpha": pt.value}
        if pt.result is None:
            row["error"] = pt.error
        else:
            row.update(
                q=pt.result.q,
                q_normally_ordered=pt.result.q_normally_ordered,
                mean_n=pt.result.mean_n,
                classification=pt.result.classification,
                truncation=pt.truncation,
            )
        rows.append(row)
    return {"metadata": metadata, "points": rows}


def grid_summary(grid: PhaseSpaceGrid) -> dict:
    where = grid.argmin()
    return {
        "integral_estimate": grid.integral_estimate,
        "min_value": grid.min_value,
        "argmin": [where.real, where.imag],
        "max_abs_value": grid.max_abs_value,
        "negativity_volume": grid.negativity_volume,
        "parity_terms": grid.parity_terms,
    }


def grid_to_csv(grid: PhaseSpaceGrid, metadata: dict) -> str:
    """Rows ``re,im,w``, imaginary part outermost."""
    lines = _header_lines(dict(metadata, summary=grid_summary(grid)))
    lines.append("re,im,w")
    re_nodes = grid.re_nodes
    for y, row in zip(grid.im_nodes, grid.values):
        ys = fmt(y)
        lines.extend(f"{fmt(x)},{ys},{fmt(w)}" for x, w in zip(re_nodes, row))
    return "\n".join(lines) + "\n"


def grid_to_dict(grid: PhaseSpaceGrid, metadata: dict) -> dict:
    return {
        "metadata": metadata,
        "summary": grid_summary(grid),
        "re": grid.re_nodes.tolist(),
        "im": grid.im_nodes.tolist(),
        "w": grid.values.tolist(),
    }
