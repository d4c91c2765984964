"""Exact integer/rational primitives used by the protocol and the attacks."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .errors import MagnitudeOverflow, SingularMatrix

WIDE_BITS = 120
WIDE_LIMIT = 1 << WIDE_BITS


def check_wide(value: int) -> int:
    """Return ``value`` unchanged, or raise if ``|value| >= 2**120``."""
    if -WIDE_LIMIT < value < WIDE_LIMIT:
        return value
    raise MagnitudeOverflow(f"|{value}| needs {abs(value).bit_length()} bits, limit is {WIDE_BITS}")


@dataclass
class OpCounter:
    multiplications: int = 0
    divisions: int = 0

    def __iadd__(self, other: "OpCounter") -> "OpCounter":
        self.multiplications += other.multiplications
        self.divisions += other.divisions
        return self


def evaluate(constant: int, coeffs: Sequence[int], point: int) -> int:
    """``constant + sum(coeffs[t-1] * point**t)`` by Horner's rule."""
    acc = 0
    for c in reversed(coeffs):
        acc = (acc + c) * point
    return constant + acc


def extract_base_coefficients(
    value: int, base: int, degree: int, ops: Optional[OpCounter] = None
) -> tuple[int, ...]:
    """Split ``value`` by floor division on ``base**degree`` down to ``base``.

    Returns ``(c_degree, ..., c_1, residual)`` with
    ``value == residual + sum(c_t * base**t)``.  The parts equal the true
    polynomial coefficients exactly when every true coefficient and the true
    constant are below ``base``.  One division per extracted coefficient.
    """
    if value < 0:
        raise ValueError(f"value must be non-negative, got {value}")
    if base < 2:
        raise ValueError(f"base must be >= 2, got {base}")
    parts = []
    rest = value
    for t in range(degree, 0, -1):
        q, rest = divmod(rest, base**t)
        parts.append(q)
    if ops is not None:
        ops.divisions += degree
    parts.append(rest)
    return tuple(parts)


def solve_vandermonde(
    points: Sequence[int], rhs: Sequence[int], ops: Optional[OpCounter] = None
) -> list[Fraction]:
    """Solve ``G u = rhs`` with ``G[i][t] = points[i]**t`` over the rationals.

    Plain Gaussian elimination on Fractions; every rational multiply and
    divide is tallied in ``ops``.
    """
    n = len(points)
    if len(rhs) != n:
        raise ValueError(f"{n} points but {len(rhs)} right-hand sides")
    if len(set(points)) != n:
        raise SingularMatrix(f"evaluation points are not distinct: {list(points)}")
    rows = [[Fraction(p) ** t for t in range(n)] + [Fraction(b)] for p, b in zip(points, rhs)]
    mul = div = 0

    for col in range(n):
        pivot = next((r for r in range(col, n) if rows[r][col] != 0), None)
        if pivot is None:
            raise SingularMatrix("zero pivot during elimination")
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for r in range(col + 1, n):
            if rows[r][col] == 0:
                continue
            factor = rows[r][col] / rows[col][col]
            div += 1
            for c in range(col + 1, n + 1):
                rows[r][c] -= factor * rows[col][c]
                mul += 1
            rows[r][col] = Fraction(0)

    u = [Fraction(0)] * n
    for r in range(n - 1, -1, -1):
        acc = rows[r][n]
        for c in range(r + 1, n):
            acc -= rows[r][c] * u[c]
            mul += 1
        u[r] = acc / rows[r][r]
        div += 1

    if ops is not None:
        ops.multiplications += mul
        ops.divisions += div
    return u
