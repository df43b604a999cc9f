import math

import numpy as np
import pytest

from ndns.deformation import NonlinearityFunction, check_half_integer, parse_nonlinearity
from ndns.errors import ValidationError


def test_identity_factorial_is_one():
    f = NonlinearityFunction.identity()
    logs, zero = f.log_f_factorials(50)
    assert np.all(logs == 0) and not zero.any()


def test_rational_values_and_factorial():
    f = NonlinearityFunction.rational(0.1)
    assert f.eval_f(0) == 1.0
    assert f.eval_f(10) == pytest.approx(0.5)
    log5, zero = f.log_f_factorial(5)
    assert not zero
    assert log5 == pytest.approx(-sum(math.log(1 + 0.1 * j) for j in range(1, 6)))


def test_gp_values():
    f = NonlinearityFunction.gilmore_perelomov(1.5)
    assert f.eval_f(3) == pytest.approx(math.sqrt(5))
    assert f.cutoff is None


def test_su2_cutoff_and_zero_factorials():
    f = NonlinearityFunction.su2(1)
    assert f.cutoff == 3
    assert f.values(4).tolist() == pytest.approx([math.sqrt(3), math.sqrt(2), 1.0, 0.0, 0.0])
    logs, zero = f.log_f_factorials(4)
    assert zero.tolist() == [False, False, False, True, True]
    assert np.isneginf(logs[3])


def test_values_beyond_cache():
    f = NonlinearityFunction.rational(0.2, max_level=10)
    v = f.values(20)
    assert v[20] == pytest.approx(1 / 5.0)
    logs, _ = f.log_f_factorials(20)
    assert logs[20] == pytest.approx(np.sum(np.log(v[1:])))


@pytest.mark.parametrize("value,expected", [(0.5, 0.5), (1, 1.0), ("1.5", 1.5), (3, 3.0)])
def test_half_integers_accepted(value, expected):
    assert check_half_integer(value, "s") == expected


@pytest.mark.parametrize("value", [0, -1, 0.3, 1.25, "x", float("nan")])
def test_bad_half_integers(value):
    with pytest.raises(ValidationError):
        check_half_integer(value, "s")


@pytest.mark.parametrize("k", [0, -0.1, float("inf")])
def test_rational_needs_positive_k(k):
    with pytest.raises(ValidationError):
        NonlinearityFunction.rational(k)


def test_custom_table(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("1.0\n0.5\n\n0.25\n0\n")
    f = parse_nonlinearity(f"file:{path}")
    assert f.kind == "custom"
    assert f.cutoff == 3
    assert f.eval_f(2) == 0.25


def test_custom_rejects_revival():
    with pytest.raises(ValidationError, match="vanishes"):
        NonlinearityFunction.custom([1.0, 1.0, 0.0, 2.0])


def test_custom_rejects_negative_and_bad_lines(tmp_path):
    with pytest.raises(ValidationError):
        NonlinearityFunction.custom([1.0, -0.5])
    path = tmp_path / "bad.txt"
    path.write_text("1\nabc\n")
    with pytest.raises(ValidationError, match="bad.txt:2"):
        NonlinearityFunction.from_file(path)


def test_custom_table_length_enforced():
    f = NonlinearityFunction.custom([1.0, 0.9, 0.8])
    with pytest.raises(ValidationError, match="tabulated"):
        f.values(5)


@pytest.mark.parametrize("text", ["identity", "rational:k=0.1", "gp:lambda=1.0", "su2:s=1.5"])
def test_parse_describe_roundtrip(text):
    f = parse_nonlinearity(text)
    assert parse_nonlinearity(f.describe()) == f


@pytest.mark.parametrize("text", ["rational", "rational:q=1", "gp:lambda=x", "cubic:k=1", "file:", "su2:s=0.7"])
def test_parse_errors(text):
    with pytest.raises(ValidationError):
        parse_nonlinearity(text)
