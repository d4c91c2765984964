from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from oracles import lagrange_at_zero, poly

from cpda_lab.errors import MagnitudeOverflow, SingularMatrix
from cpda_lab.exact import OpCounter, WIDE_LIMIT, check_wide, extract_base_coefficients, solve_vandermonde


@pytest.mark.parametrize("value,base,degree,expected", [
    (341207, 100, 2, (34, 12, 7)),
    (0, 100, 2, (0, 0, 0)),
    (5 + 7 * 1000 + 6 * 10**6, 1000, 2, (6, 7, 5)),
    (6_007_021, 1000, 2, (6, 7, 21)),
])
def test_extraction_examples(value, base, degree, expected):
    assert extract_base_coefficients(value, base, degree) == expected


def test_extraction_counts_divisions():
    ops = OpCounter()
    extract_base_coefficients(6_007_021, 1000, 2, ops)
    assert (ops.multiplications, ops.divisions) == (0, 2)


@pytest.mark.parametrize("value,base", [(-1, 10), (5, 1)])
def test_extraction_rejects_bad_input(value, base):
    with pytest.raises(ValueError):
        extract_base_coefficients(value, base, 2)


@given(st.integers(2, 2**40), st.lists(st.integers(0, 2**40), min_size=1, max_size=6))
def test_extraction_roundtrip(base, digits):
    digits = [d % base for d in digits]
    value = sum(d * base**t for t, d in enumerate(digits))
    parts = extract_base_coefficients(value, base, len(digits) - 1)
    assert parts == tuple(reversed(digits))


def test_vandermonde_worked_example():
    assert solve_vandermonde([1, 2, 3], [34, 59, 96]) == [21, 7, 6]


def test_vandermonde_constant():
    assert solve_vandermonde([1, 2, 3], [9, 9, 9]) == [9, 0, 0]


def test_vandermonde_duplicate_points():
    with pytest.raises(SingularMatrix):
        solve_vandermonde([1, 1, 3], [1, 2, 3])


def test_vandermonde_op_count_three_by_three():
    ops = OpCounter()
    solve_vandermonde([3, 5, 7], [1, 2, 3], ops)
    assert (ops.multiplications, ops.divisions) == (11, 6)


@given(
    st.lists(st.integers(1, 10**6), min_size=2, max_size=6, unique=True),
    st.integers(0, 1023),
    st.lists(st.integers(0, 2**32 - 1), min_size=5, max_size=5),
)
def test_vandermonde_matches_lagrange(points, constant, coeffs):
    coeffs = coeffs[: len(points) - 1]
    values = [poly(constant, coeffs, x) for x in points]
    solution = solve_vandermonde(points, values)
    assert solution[0] == lagrange_at_zero(points, values) == constant
    assert solution[1:] == [Fraction(c) for c in coeffs]


def test_wide_bound():
    assert check_wide(WIDE_LIMIT - 1) == WIDE_LIMIT - 1
    with pytest.raises(MagnitudeOverflow):
        check_wide(WIDE_LIMIT)
    with pytest.raises(MagnitudeOverflow):
        check_wide(-WIDE_LIMIT)
