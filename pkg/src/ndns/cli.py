"""Command-line interface: ``ndns {coeffs,mandel,wigner,verify}``.

Exit codes: 0 success, 1 verification failure, 2 invalid input, 3 truncation failure.
"""

import argparse
import json
import logging
import math
import re
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .deformation import NonlinearityFunction, parse_nonlinearity
from .errors import NDNSError, TruncationError, ValidationError
from .observables import (
    DEFAULT_EPS_Q,
    GridAxis,
    grid_to_csv,
    grid_to_dict,
    mandel_sweep,
    sweep_to_csv,
    sweep_to_dict,
    wigner_grid,
)
from .states import (
    ALGEBRAIC_FAMILIES,
    DNS,
    FAMILIES,
    GP,
    GROUP_MODES,
    MANUAL_NDNS,
    NDNS_DOUBLE_PRIME,
    NDNS_PRIME,
    ORACLE,
    SU2,
    VERBATIM,
    StateSpec,
    TruncationPolicy,
    build_dns,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_VALIDATION = 2
EXIT_TRUNCATION = 3

log = logging.getLogger("ndns")

# Default verification cases. NDNS'' is only certified where it is
# normalizable; with f = 1/(1 + k n) its amplitudes stop decaying once |alpha|
# approaches 1 and no truncation can hold the state.
VERIFY_ALPHAS = (0.5, 1.0, 1.5 + 0.5j, 2.0)
VERIFY_DOUBLE_PRIME_ALPHAS = (0.25, 0.5)
VERIFY_LEVELS = (0, 2, 5)
BCH_ALPHAS = (0.5, 1.0, 1.5 + 0.5j)
BCH_TRUNCATION = 160
RESIDUAL_TRUNCATION = 64
GP_CASES = [(lam, zeta, n) for lam in (0.5, 1.0, 2.0) for zeta in (0.3, 0.6j) for n in (0, 1, 2)]
SU2_CASES = [(s, gamma, n) for s in (1.0, 1.5, 2.0) for gamma in (0.4, 0.3 + 0.3j) for n in (0, 1)]


class _Parser(argparse.ArgumentParser):
    """argparse with validation-style exit (2) and a one-line diagnostic."""

    def error(self, message):
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _complex(text: str) -> complex:
    parts = text.split(",")
    if len(parts) > 2:
        raise ValidationError(f"expected RE or RE,IM, got {text!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise ValidationError(f"expected RE or RE,IM, got {text!r}") from None
    z = complex(values[0], values[1] if len(values) == 2 else 0.0)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValidationError(f"displacement must be finite, got {text!r}")
    return z


def parse_range(text: str) -> List[float]:
    """``A:B:STEP`` to the nodes A, A + STEP, ..., B (B included when hit)."""
    axis = GridAxis.parse(text)
    count = int(math.floor((axis.stop - axis.start) / axis.step + 1e-9)) + 1
    return [round(axis.start + i * axis.step, 12) for i in range(count)]


def _tanh_map(z: complex) -> complex:
    r = abs(z)
    return 0j if r == 0 else math.tanh(r) * z / r


def _displacement_text(args):
    """Return (raw text, name, needs tanh map) for the displacement flag given."""
    given = [(name, getattr(args, name)) for name in ("alpha", "zeta", "gamma", "xi", "eta")
             if getattr(args, name) is not None]
    if len(given) > 1:
        raise ValidationError("give only one of --alpha, --zeta, --gamma, --xi, --eta")
    if args.family in ALGEBRAIC_FAMILIES:
        allowed = ("alpha",)
    elif args.family == GP:
        allowed = ("zeta", "xi")
    else:
        allowed = ("gamma", "eta")
    if not given:
        raise ValidationError(f"family {args.family} needs --{allowed[0]}")
    name, text = given[0]
    if name not in allowed:
        raise ValidationError(f"family {args.family} takes --{' or --'.join(allowed)}, not --{name}")
    return text, name, name in ("xi", "eta")


def _nonlinearity(args) -> Optional[NonlinearityFunction]:
    if args.f is None:
        if args.family in (MANUAL_NDNS, NDNS_PRIME, NDNS_DOUBLE_PRIME):
            raise ValidationError(f"family {args.family} needs --f")
        return None
    return parse_nonlinearity(args.f)


def _policy(args) -> TruncationPolicy:
    if args.max_n is not None:
        if args.max_n < 1:
            raise ValidationError("--max-n must be positive")
        return TruncationPolicy(start=min(64, args.max_n), cap=args.max_n, tolerance=args.tol)
    return TruncationPolicy(tolerance=args.tol)


def _check_group_flags(args):
    if args.family == GP and args.lam is None:
        raise ValidationError("family gp needs --lambda")
    if args.family == SU2 and args.s is None:
        raise ValidationError("family su2 needs --s")


def _spec(args, displacement) -> StateSpec:
    return StateSpec(
        args.family,
        args.n,
        displacement,
        f=_nonlinearity(args),
        lam=args.lam,
        s=args.s,
        mode=args.mode,
        truncation=_policy(args),
    )


def _metadata(args, command, **extra) -> dict:
    meta = {
        "tool": "ndns",
        "version": __version__,
        "command": command,
        "family": args.family,
        "n": args.n,
    }
    for key in ("alpha", "zeta", "gamma", "xi", "eta", "f", "lam", "s", "mode", "max_n", "tol"):
        value = getattr(args, key, None)
        if value is not None:
            meta["lambda" if key == "lam" else key] = value
    meta.update(extra)
    return _jsonable(meta)


def _emit(text: str, output: Optional[str]):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=False, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def cmd_coeffs(args) -> int:
    _check_group_flags(args)
    text, _, mapped = _displacement_text(args)
    z = _complex(text)
    if mapped:
        z = _tanh_map(z)
    state = _spec(args, z).build()
    meta = _metadata(args, "coeffs", displacement=z, truncation=state.truncation)
    if args.format == "csv":
        lines = [f"# {k}: {json.dumps(_jsonable(v))}" for k, v in meta.items()]
        lines.append("m,re,im")
        lines.extend(f"{m},{format(a.real, '.17g')},{format(a.imag, '.17g')}"
                     for m, a in enumerate(state.amplitudes))
        _emit("\n".join(lines) + "\n", args.output)
    else:
        _emit(_dumps({"metadata": meta, "state": state.to_dict()}), args.output)
    return EXIT_OK


def cmd_mandel(args) -> int:
    _check_group_flags(args)
    text, name, mapped = _displacement_text(args)
    if ":" in text:
        values = parse_range(text)
    else:
        z = _complex(text)
        if z.imag != 0:
            raise ValidationError("mandel sweeps take real displacements")
        values = [z.real]
    if mapped:
        values = [math.tanh(v) for v in values]
    f = _nonlinearity(args)
    points = mandel_sweep(
        args.family, args.n, values, f=f, lam=args.lam, s=args.s, mode=args.mode,
        truncation=_policy(args), eps_q=args.eps_q, jobs=args.jobs,
    )
    meta = _metadata(args, "mandel", sweep_parameter="zeta" if name == "xi" else
                     "gamma" if name == "eta" else name, eps_q=args.eps_q)
    if args.format == "json":
        _emit(_dumps(sweep_to_dict(points, meta)), args.output)
    else:
        _emit(sweep_to_csv(points, meta), args.output)
    failed = [pt for pt in points if pt.error]
    for pt in failed:
        log.warning("point %s failed: %s", pt.value, pt.error)
    if failed and len(failed) == len(points):
        return EXIT_TRUNCATION if all("TruncationError" in pt.error for pt in failed) else EXIT_VALIDATION
    return EXIT_OK


def cmd_wigner(args) -> int:
    _check_group_flags(args)
    if args.grid is None:
        raise ValidationError("wigner needs --grid MIN:MAX:STEP")
    text, _, mapped = _displacement_text(args)
    z = _complex(text)
    if mapped:
        z = _tanh_map(z)
    state = _spec(args, z).build()
    re_axis = GridAxis.parse(args.grid)
    im_axis = GridAxis.parse(args.grid_im) if args.grid_im else re_axis
    grid = wigner_grid(state, re_axis, im_axis, jobs=args.jobs)
    meta = _metadata(args, "wigner", displacement=z, truncation=state.truncation,
                     grid_re=list(re_axis.as_tuple()), grid_im=list(im_axis.as_tuple()))
    if args.format == "json":
        _emit(_dumps(grid_to_dict(grid, meta)), args.output)
    else:
        _emit(grid_to_csv(grid, meta), args.output)
    return EXIT_OK


class _Suite:
    """Collects named checks for ``verify``."""

    def __init__(self):
        self.checks = []
        self.truncation_failures = 0

    def record(self, name, value, limit, hard=True, **info):
        passed = value is not None and math.isfinite(value) and value < limit
        self.checks.append(dict(name=name, value=value, limit=limit, hard=hard, passed=passed, **info))
        return passed

    def failure(self, name, err, hard=True):
        if isinstance(err, TruncationError):
            self.truncation_failures += 1
        self.checks.append(dict(name=name, value=None, limit=None, hard=hard, passed=False,
                                error=f"{type(err).__name__}: {err}"))

    def hard_failures(self, strict_group):
        return [c for c in self.checks if not c["passed"] and (c["hard"] or strict_group)]


def _run_verify(args, suite: _Suite, reports: list):
    from .oracle import algebra_residuals, compare_with_oracle, group_residuals, verify_bch_factorization
    from .observables import mandel_q

    f = parse_nonlinearity(args.f or "rational:k=0.1")
    dev_tol = args.dev_tol
    policy = _policy(args)
    cap = policy.cap

    for label, g in (("identity", NonlinearityFunction.identity()), (f.describe(), f)):
        N = min(RESIDUAL_TRUNCATION, cap) if args.max_n else RESIDUAL_TRUNCATION
        if g.cutoff is not None:
            continue
        for key, value in algebra_residuals(g, max(N, 8)).items():
            suite.record(f"algebra[{label}] {key}", value, 1e-12)

    if f.cutoff is None:
        N = min(BCH_TRUNCATION, cap)
        for alpha in BCH_ALPHAS:
            for n in VERIFY_LEVELS:
                name = f"bch alpha={alpha} n={n}"
                try:
                    suite.record(name, verify_bch_factorization(alpha, f, n, max(N, n + 1, 8)), dev_tol)
                except TruncationError as err:
                    suite.failure(name, err)

    cases = [(DNS, a, n) for a in VERIFY_ALPHAS for n in VERIFY_LEVELS]
    cases += [(NDNS_PRIME, a, n) for a in VERIFY_ALPHAS for n in VERIFY_LEVELS]
    cases += [(NDNS_DOUBLE_PRIME, a, n) for a in VERIFY_DOUBLE_PRIME_ALPHAS for n in VERIFY_LEVELS]
    for family, alpha, n in cases:
        name = f"oracle {family} alpha={alpha} n={n}"
        try:
            spec = StateSpec(family, n, alpha, f=None if family == DNS else f, truncation=policy)
            report = compare_with_oracle(spec)
        except TruncationError as err:
            suite.failure(name, err)
            continue
        reports.append(report.to_dict())
        suite.record(name, report.max_amplitude_deviation, dev_tol, truncation=report.truncation)
        if family == DNS:
            suite.record(f"unitarity {family} alpha={alpha} n={n}",
                         abs(report.closed_form_norm - 1.0), 1e-10)

    identity = NonlinearityFunction.identity()
    for alpha in (0.5, 1.5 + 0.5j):
        for n in VERIFY_LEVELS:
            try:
                ref = build_dns(n, alpha, policy)
                fixed = TruncationPolicy.fixed(ref.truncation, args.tol)
                for family in (MANUAL_NDNS, NDNS_PRIME, NDNS_DOUBLE_PRIME):
                    other = StateSpec(family, n, alpha, f=identity, truncation=fixed).build()
                    suite.record(f"reduction {family} f=identity alpha={alpha} n={n}",
                                 float(np.max(np.abs(other.amplitudes - ref.amplitudes))), 1e-12)
            except TruncationError as err:
                suite.failure(f"reduction alpha={alpha} n={n}", err)
    for family in ALGEBRAIC_FAMILIES:
        for n in VERIFY_LEVELS:
            state = StateSpec(family, n, 0, f=None if family == DNS else f, truncation=policy).build()
            off = np.delete(state.amplitudes, n)
            suite.record(f"zero displacement {family} n={n}",
                         float(np.max(np.abs(off), initial=0.0)) + abs(abs(state.amplitudes[n]) - 1), 1e-15)

    for n in (0, 1, 4):
        ref = build_dns(n, 0, policy)
        q = mandel_q(ref)
        expected = -1.0 if n else 0.0
        suite.record(f"mandel fock n={n}", abs(q.q - expected), 1e-12)
        suite.record(f"mandel routes fock n={n}", abs(q.q - q.q_normally_ordered), 1e-12)

    mode = args.mode if args.mode != ORACLE else VERBATIM
    for lam, zeta, n in GP_CASES:
        _verify_group(suite, reports, StateSpec(GP, n, zeta, lam=lam, mode=mode, truncation=policy),
                      dev_tol, group_residuals)
    for s, gamma, n in SU2_CASES:
        _verify_group(suite, reports, StateSpec(SU2, n, gamma, s=s, mode=mode, truncation=policy),
                      dev_tol, group_residuals)


def _verify_group(suite, reports, spec, dev_tol, group_residuals):
    from .oracle import build_group_oracle, compare_with_oracle

    param = spec.lam if spec.family == GP else spec.s
    label = f"{spec.family} {'lambda' if spec.family == GP else 's'}={param} z={spec.displacement} n={spec.n}"
    try:
        report = compare_with_oracle(spec)
    except TruncationError as err:
        suite.failure(f"group oracle {label}", err)
        return
    reports.append(report.to_dict())
    suite.record(f"group closed form ({spec.mode}) {label}", report.max_amplitude_deviation, dev_tol,
                 hard=False, magnitude_deviation=report.extra.get("magnitude_deviation"))
    for key, value in report.commutator_residuals.items():
        suite.record(f"group algebra {label} {key}", value, 1e-10)
    oracle = build_group_oracle(spec.family, spec.displacement, param, spec.n, truncation=spec.truncation)
    suite.record(f"group oracle norm {label}", abs(oracle.norm_before_normalization - 1.0), 1e-12)
    if spec.family == GP:
        M = oracle.truncation
        doubled = build_group_oracle(GP, spec.displacement, param, spec.n, N=2 * M)
        gap = float(np.max(np.abs(doubled.padded(2 * M) - oracle.padded(2 * M))))
        suite.record(f"group oracle N vs 2N {label}", gap, 1e-12)
    else:
        top = int(round(2 * param))
        state = spec.build()
        beyond = np.abs(state.amplitudes[top + 1:])
        suite.record(f"su2 support {label}", float(beyond.max(initial=0.0)), 1e-14)


def cmd_verify(args) -> int:
    if args.family is not None and args.family not in FAMILIES:
        raise ValidationError(f"unknown family {args.family!r}")
    suite = _Suite()
    reports = []
    _run_verify(args, suite, reports)
    failures = suite.hard_failures(args.strict_group)
    if suite.truncation_failures:
        status = EXIT_TRUNCATION
    elif failures:
        status = EXIT_VERIFY
    else:
        status = EXIT_OK
    meta = {
        "tool": "ndns",
        "version": __version__,
        "command": "verify",
        "f": args.f or "rational:k=0.1",
        "mode": args.mode,
        "strict_group": args.strict_group,
        "max_n": args.max_n,
        "tail_tolerance": args.tol,
        "deviation_tolerance": args.dev_tol,
    }
    summary = {
        "checks": len(suite.checks),
        "passed": sum(c["passed"] for c in suite.checks),
        "hard_failures": len(failures),
        "truncation_failures": suite.truncation_failures,
        "exit_status": status,
    }
    _emit(_dumps({"metadata": meta, "summary": summary, "checks": suite.checks, "reports": reports}),
          args.output)
    for c in failures:
        print(f"FAIL {c['name']}: {c.get('error') or c['value']}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ndns", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ndns {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, need_family=True):
        p.add_argument("--family", choices=FAMILIES, required=need_family)
        p.add_argument("--n", type=int, default=0, help="Fock level the displacement acts on")
        p.add_argument("--alpha", help="RE[,IM] (or A:B:STEP for mandel)")
        p.add_argument("--zeta", help="gp displacement inside the unit disk")
        p.add_argument("--gamma", help="su2 displacement")
        p.add_argument("--xi", help="gp group parameter; zeta = tanh|xi| e^{i arg xi}")
        p.add_argument("--eta", help="su2 group parameter; gamma = tanh|eta| e^{i arg eta}")
        p.add_argument("--lambda", dest="lam", type=float, help="Bargmann index for gp")
        p.add_argument("--s", type=float, help="spin for su2")
        p.add_argument("--f", help="identity | rational:k=K | gp:lambda=L | su2:s=S | file:PATH")
        p.add_argument("--mode", choices=GROUP_MODES, default=VERBATIM,
                       help="group closed form: verbatim, corrected or oracle")
        p.add_argument("--max-n", type=int, help="cap on the Fock truncation")
        p.add_argument("--tol", type=float, default=1e-12, help="tail tolerance for truncation")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--output", "-o", help="output file (default stdout)")

    p = sub.add_parser("coeffs", help="Fock amplitudes of one state")
    common(p)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("mandel", help="Mandel Q along a displacement sweep")
    common(p)
    p.add_argument("--eps-q", type=float, default=DEFAULT_EPS_Q)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_mandel)

    p = sub.add_parser("wigner", help="Wigner function on a phase-space grid")
    common(p)
    p.add_argument("--grid", help="MIN:MAX:STEP for the real axis (and imaginary axis by default)")
    p.add_argument("--grid-im", help="MIN:MAX:STEP for the imaginary axis")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_wigner)

    p = sub.add_parser("verify", help="operator-algebra and oracle verification suite")
    common(p, need_family=False)
    p.add_argument("--dev-tol", type=float, default=1e-10,
                   help="largest accepted closed-form/oracle amplitude deviation")
    p.add_argument("--strict-group", action="store_true",
                   help="treat group closed-form deviations as failures")
    p.set_defaults(func=cmd_verify)
    return parser


VALUE_FLAGS = ("--alpha", "--zeta", "--gamma", "--xi", "--eta", "--grid", "--grid-im")
_NEGATIVE = re.compile(r"^-[0-9.]")


def _join_negative_values(argv):
    """Turn ``--grid -4:4:0.05`` into ``--grid=-4:4:0.05`` so argparse keeps the value."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in VALUE_FLAGS and i + 1 < len(argv) and _NEGATIVE.match(argv[i + 1]):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="ndns: %(levelname)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("ndns: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"ndns: error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except TruncationError as err:
        print(f"ndns: truncation failure: {err}", file=sys.stderr)
        return EXIT_TRUNCATION
    except NDNSError as err:
        print(f"ndns: error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
