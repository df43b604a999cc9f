import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_genlaguerre

from ndns import NonlinearityFunction
from ndns.errors import TruncationError, ValidationError
from ndns.observables import (
    POISSONIAN,
    SUB_POISSONIAN,
    SUPER_POISSONIAN,
    GridAxis,
    displaced_overlaps,
    effective_support,
    grid_to_csv,
    grid_to_dict,
    mandel_q,
    mandel_sweep,
    min_q,
    sub_poissonian_endpoint,
    sweep_to_csv,
    sweep_to_dict,
    wigner_grid,
    wigner_point,
    wigner_values,
)
from ndns.states import build_dns, build_ndns_prime

K01 = NonlinearityFunction.rational(0.1)

# NDNS' (n=1, alpha=1, k=0.1) Wigner values from (2/pi) <psi|D(b) P D(b)^+|psi>
# with scipy.linalg.expm for D(b) and psi, on a 121-level truncation.
W_NDNS_PRIME = [
    (0, 0.44700960447734045),
    (0.9, -0.5208953784490661),
    (0.5 + 0.5j, 0.26905601584939315),
    (-1 + 0.3j, 0.005377466621446142),
]

# Mandel q of NDNS' (n=2, alpha=1.5, k=0.1) from the same expm vector.
Q_NDNS_PRIME_N2_A15 = 1.3309945484444032


def fock_wigner(n, a):
    x = 4 * abs(a) ** 2
    return 2 / math.pi * (-1) ** n * math.exp(-x / 2) * eval_genlaguerre(n, 0, x)


def test_mandel_fock_and_vacuum():
    assert mandel_q(build_dns(3, 0)).classification == SUB_POISSONIAN
    vac = mandel_q(build_dns(0, 0))
    assert vac.q == 0 and vac.classification == POISSONIAN


def test_mandel_against_expm_reference():
    r = mandel_q(build_ndns_prime(2, 1.5, K01))
    assert r.q == pytest.approx(Q_NDNS_PRIME_N2_A15, abs=1e-10)
    assert r.classification == SUPER_POISSONIAN


def test_mandel_rejects_unnormalized():
    with pytest.raises(ValidationError):
        mandel_q(np.array([1.0, 1.0]))


@given(st.floats(0, 2 * math.pi))
def test_mandel_global_phase_invariant(theta):
    v = build_ndns_prime(2, 0.8 + 0.3j, K01).amplitudes
    assert mandel_q(v * cmath.exp(1j * theta)).q == pytest.approx(mandel_q(v).q, abs=1e-13)


def test_classification_threshold():
    v = build_dns(0, 1.0)
    assert mandel_q(v).classification == POISSONIAN
    assert mandel_q(v, eps_q=0.0).q == pytest.approx(0.0, abs=1e-12)


def test_overlaps_reproduce_coherent_projection():
    # <k, alpha|0> = <k|D(-alpha)|0>, a coherent state in k
    alpha = 0.9 - 0.4j
    c = displaced_overlaps(np.array([1.0 + 0j]), [alpha], 40)[:, 0]
    k = np.arange(41)
    expected = np.array([cmath.exp(-abs(alpha) ** 2 / 2) * (-alpha) ** int(j) / math.sqrt(math.factorial(int(j)))
                         for j in k])
    assert np.max(np.abs(c - expected)) < 1e-15


@pytest.mark.parametrize("n", [0, 1, 3, 7, 12])
def test_fock_wigner_closed_form(n):
    rng = np.random.default_rng(n)
    pts = rng.normal(scale=2.0, size=25) + 1j * rng.normal(scale=2.0, size=25)
    W = wigner_values(build_dns(n, 0), pts)
    ref = np.array([fock_wigner(n, p) for p in pts])
    assert np.max(np.abs(W - ref)) < 1e-12


@pytest.mark.parametrize("point,value", W_NDNS_PRIME)
def test_wigner_against_parity_operator_reference(point, value):
    assert wigner_point(build_ndns_prime(1, 1.0, K01), point) == pytest.approx(value, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 6), st.complex_numbers(max_magnitude=2.0), st.complex_numbers(max_magnitude=3.0))
def test_wigner_bounded(n, alpha, point):
    w = wigner_point(build_dns(n, alpha), point)
    assert abs(w) <= 2 / math.pi + 1e-10


def test_wigner_rejects_small_cutoff():
    state = build_dns(2, 1.0)
    N = len(effective_support(state.amplitudes)) - 1
    assert wigner_point(state, 0.0, parity_terms=N) == pytest.approx(wigner_point(state, 0.0), abs=1e-14)
    with pytest.raises(TruncationError):
        wigner_point(state, -4.0, parity_terms=N)
    with pytest.raises(ValidationError):
        wigner_point(state, 0.0, parity_terms=2)


def test_effective_support():
    v = np.array([1.0, 1e-3, 1e-20, 0.0])
    assert len(effective_support(v)) == 2


def test_grid_axis_parse():
    ax = GridAxis.parse("-1:1:0.5")
    assert ax.count == 5
    assert ax.nodes().tolist() == [-1.0, -0.5, 0.0, 0.5, 1.0]
    for bad in ("1:2", "a:b:c", "0:1:0", "1:0:0.1"):
        with pytest.raises(ValidationError):
            GridAxis.parse(bad)


def test_grid_summary_and_parallel_identity():
    state = build_dns(1, 0.5)
    axis = GridAxis(-3.5, 3.5, 0.1)
    g1 = wigner_grid(state, axis)
    g2 = wigner_grid(state, axis, jobs=2)
    assert np.array_equal(g1.values, g2.values)
    assert g1.integral_estimate == pytest.approx(1.0, abs=1e-3)
    assert g1.min_value < 0
    assert g1.negativity_volume > 0
    assert abs(g1.argmin() - 0.5) < 0.06


def test_grid_rectangular():
    g = wigner_grid(build_dns(0, 1.0), GridAxis(-2, 4, 0.1), GridAxis(-3, 3, 0.2))
    assert g.values.shape == (31, 61)
    assert g.integral_estimate == pytest.approx(1.0, abs=1e-3)


def test_sweep_dns_poissonian():
    pts = mandel_sweep("dns", 0, [0.0, 0.5, 1.0])
    assert all(abs(p.q) < 1e-9 for p in pts)


def test_sweep_inline_errors():
    pts = mandel_sweep("ndns-double-prime", 1, [0.0, 0.5, 2.0], f=K01)
    assert pts[0].result is not None and pts[1].result is not None
    assert pts[2].result is None and "TruncationError" in pts[2].error
    assert min_q(pts) == (pytest.approx(-1.0), 0.0)
    assert sub_poissonian_endpoint(pts) == 2.0


def test_sweep_rejects_negative():
    with pytest.raises(ValidationError):
        mandel_sweep("dns", 0, [-0.1])


def test_sweep_parallel_identity():
    vals = [0.1 * i for i in range(8)]
    a = mandel_sweep("ndns-prime", 1, vals, f=K01)
    b = mandel_sweep("ndns-prime", 1, vals, f=K01, jobs=2)
    assert a == b


def test_emitters():
    pts = mandel_sweep("ndns-double-prime", 1, [0.5, 2.0], f=K01)
    text = sweep_to_csv(pts, {"family": "ndns-double-prime"})
    lines = text.splitlines()
    assert lines[0] == '# family: "ndns-double-prime"'
    assert lines[1] == "alpha,q,mean_n,classification"
    assert lines[2].startswith("0.5,")
    assert lines[3].startswith("2,,,error: TruncationError")
    d = sweep_to_dict(pts, {})
    assert "error" in d["points"][1]
    grid = wigner_grid(build_dns(0, 0), GridAxis(-2, 2, 0.5))
    rows = grid_to_csv(grid, {"family": "dns"}).splitlines()
    assert "re,im,w" in rows
    assert len(rows) - rows.index("re,im,w") - 1 == 81
    assert json.loads(json.dumps(grid_to_dict(grid, {})))["summary"]["parity_terms"] == grid.parity_terms
