"""Score equation matrix A with A e^y = w, residuals, and exact determinants.

A is assembled per simplex: for j in sigma,

    A(sigma)_{j,j} = vol (prod_{a in sigma\\j} 1/(y_j - y_a)) (1 - sum_a 1/(y_j - y_a))
    A(sigma)_{i,j} = vol (prod_{a in sigma\\j} 1/(y_j - y_a)) (1/(y_j - y_i))

with vol the normalized simplex volume.  Entries are exact Fractions when
the heights are rational, mpfr otherwise.  Heights must be pairwise
distinct within every simplex.
"""

from __future__ import annotations

from fractions import Fraction

from gmpy2 import mpfr
import gmpy2

from ._num import prec_ctx, to_mpfr
from .geometry import HeightVector, Triangulation


class CoincidentHeightsError(ValueError):
    """Heights coincide inside a simplex; use a reduced chart instead."""


def _values(y, n, precision):
    if isinstance(y, HeightVector):
        y = y.values
    vals = list(y)
    if len(vals) != n:
        raise ValueError("height vector length mismatch")
    if all(isinstance(v, (int, Fraction)) for v in vals):
        return [Fraction(v) for v in vals], True
    return [to_mpfr(v, precision) for v in vals], False


def build_A(T: Triangulation, y, n: int, precision: int = 256):
    """n x n score equation matrix for triangulation T at heights y."""
    vals, exact = _values(y, n, precision)
    zero = Fraction(0) if exact else mpfr(0)
    A = [[zero for _ in range(n)] for _ in range(n)]

    def accumulate():
        for s in T.simplices:
            vol = s.norm_volume if exact else to_mpfr(s.norm_volume, precision + 32)
            for j in s.vertices:
                others = [a for a in s.vertices if a != j]
                prod = vol
                ssum = zero
                for a in others:
                    diff = vals[j] - vals[a]
                    if diff == 0:
                        raise CoincidentHeightsError(
                            f"y[{j}] == y[{a}] inside simplex {s.vertices}")
                    prod /= diff
                    ssum += 1 / diff
                A[j][j] += prod * (1 - ssum)
                for i in others:
                    A[i][j] += prod / (vals[j] - vals[i])

    if exact:
        accumulate()
    else:
        with prec_ctx(precision + 32):
            accumulate()
        A = [[x if isinstance(x, Fraction) else mpfr(x, precision) for x in row] for row in A]
    return A


def residual(T: Triangulation, y, w, n: int, precision: int = 256):
    """A e^y - w at working precision (equals -grad_S componentwise)."""
    vals, _ = _values(y, n, precision)
    wp = precision + 32
    with prec_ctx(wp):
        A = build_A(T, [to_mpfr(v, wp) for v in vals], n, wp)
        ey = [gmpy2.exp(to_mpfr(v, wp)) for v in vals]
        out = []
        for i in range(n):
            s = -to_mpfr(Fraction(w[i]), wp)
            for j in range(n):
                if A[i][j] != 0:
                    s += A[i][j] * ey[j]
            out.append(mpfr(s, precision))
        return out


def det_A_exact(T: Triangulation, y, n: int) -> Fraction:
    """Exact rational determinant of A; y must be rational."""
    vals = [Fraction(v) for v in y]
    A = build_A(T, vals, n)
    return det_fraction(A)


def det_fraction(M) -> Fraction:
    """Fraction-free Bareiss elimination over the rationals."""
    n = len(M)
    a = [[Fraction(x) for x in row] for row in M]
    sign = 1
    prev = Fraction(1)
    for k in range(n - 1):
        if a[k][k] == 0:
            piv = next((i for i in range(k + 1, n) if a[i][k] != 0), None)
            if piv is None:
                return Fraction(0)
            a[k], a[piv] = a[piv], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev
            a[i][k] = Fraction(0)
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def build_B(T: Triangulation, y, n: int):
    """A with column j scaled by prod_{a in N(j)} (y_j - y_a)^2 (rational y)."""
    vals = [Fraction(v) for v in y]
    A = build_A(T, vals, n)
    nb = T.neighborhoods
    for j in range(n):
        scale = Fraction(1)
        if j < len(nb):
            for a in nb[j]:
                scale *= (vals[j] - vals[a]) ** 2
        for i in range(n):
            A[i][j] *= scale
    return A
