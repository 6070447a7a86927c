"""Arbitrary-precision scalar and dense linear algebra helpers.

All numeric kernels in this package run on gmpy2's MPFR floats.  Precision
is always passed explicitly in bits and applied through a thread-local
context, never through the global default.  Matrices are plain lists of
lists of mpfr; the sizes involved (at most a few dozen rows) do not justify
anything heavier.
"""

from __future__ import annotations

import hashlib
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr


def prec_ctx(prec: int):
    """Context manager activating `prec` bits of working precision."""
    return gmpy2.context(precision=int(prec))


def to_mpfr(x, prec: int) -> mpfr:
    """Convert ints, Fractions, decimal strings, floats or mpfr to mpfr."""
    if isinstance(x, Fraction):
        return mpfr(gmpy2.mpq(x.numerator, x.denominator), prec)
    if isinstance(x, str):
        return mpfr(x, prec)
    return mpfr(x, prec)


def mpfr_to_decimal(x, digits: int) -> str:
    """Render an mpfr as a plain decimal string with `digits` significant digits."""
    if gmpy2.is_nan(x):
        return "nan"
    if not gmpy2.is_finite(x):
        return "-inf" if x < 0 else "inf"
    if x == 0:
        return "0"
    mant, exp10, _ = x.digits(10, digits)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    # mant is `digits` digits, value = 0.mant * 10**exp10
    if 0 < exp10 <= digits + 4:
        intpart = mant[:exp10].ljust(exp10, "0")
        fracpart = mant[exp10:].rstrip("0")
        return sign + intpart + ("." + fracpart if fracpart else "")
    if -6 < exp10 <= 0:
        return sign + "0." + "0" * (-exp10) + mant.rstrip("0")
    frac = mant[1:].rstrip("0")
    return "%s%s%se%+d" % (sign, mant[0], "." + frac if frac else "", exp10 - 1)


def fraction_from_text(text) -> Fraction:
    """Parse "p/q", decimal strings or numbers into an exact Fraction.

    Binary floats are converted exactly (no decimal reinterpretation);
    decimal strings go through Fraction's exact decimal parser.
    """
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, float):
        return Fraction(text)
    if isinstance(text, str):
        return Fraction(text.strip())
    raise TypeError(f"cannot interpret {text!r} as a rational")


def up(x, prec: int):
    """Nudge a nonnegative bound upward by one part in 2^(prec//4).

    The slack dominates accumulated mpfr roundoff at working precision, so
    bounds adjusted this way remain sound upper bounds.
    """
    return x * (1 + to_mpfr(1, prec) / (1 << max(prec // 4, 8)))


# ---------------------------------------------------------------------------
# dense linear algebra on lists of lists of mpfr


def mat_vec(a, v):
    return [sum((row[j] * v[j] for j in range(len(v))), mpfr(0)) for row in a]


def vec_norm2(v):
    return gmpy2.sqrt(sum((x * x for x in v), mpfr(0)))


def vec_norm_inf(v):
    return max((abs(x) for x in v), default=mpfr(0))


class SingularMatrixError(ArithmeticError):
    """Raised when LU elimination meets a vanishing pivot."""


def lu_factor(a):
    """Partial-pivot LU decomposition; returns (packed LU, permutation)."""
    n = len(a)
    lu = [row[:] for row in a]
    perm = list(range(n))
    for k in range(n):
        piv, pv = k, abs(lu[k][k])
        for i in range(k + 1, n):
            if abs(lu[i][k]) > pv:
                piv, pv = i, abs(lu[i][k])
        if pv == 0:
            raise SingularMatrixError(f"zero pivot at column {k}")
        if piv != k:
            lu[k], lu[piv] = lu[piv], lu[k]
            perm[k], perm[piv] = perm[piv], perm[k]
        inv_p = 1 / lu[k][k]
        for i in range(k + 1, n):
            m = lu[i][k] * inv_p
            lu[i][k] = m
            for j in range(k + 1, n):
                lu[i][j] -= m * lu[k][j]
    return lu, perm


def lu_solve(lu, perm, b):
    n = len(lu)
    x = [b[perm[i]] for i in range(n)]
    for i in range(1, n):
        s = x[i]
        for j in range(i):
            s -= lu[i][j] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, n):
            s -= lu[i][j] * x[j]
        x[i] = s / lu[i][i]
    return x


def solve(a, b):
    lu, perm = lu_factor(a)
    return lu_solve(lu, perm, b)


def invert(a):
    n = len(a)
    lu, perm = lu_factor(a)
    cols = []
    for j in range(n):
        e = [mpfr(0)] * n
        e[j] = mpfr(1)
        cols.append(lu_solve(lu, perm, e))
    return [[cols[j][i] for j in range(n)] for i in range(n)]


def norm_inf(a):
    return max(sum((abs(x) for x in row), mpfr(0)) for row in a)


def spectral_norm_ub(a, prec: int):
    """Upper estimate of the spectral norm by power iteration on AᵀA.

    Iterates until the Rayleigh estimate is stable to 2^-(prec//4) relative,
    then rounds the result upward by the same tolerance.
    """
    n = len(a)
    m = len(a[0]) if n else 0
    if n == 0 or m == 0:
        return mpfr(0)
    at = [[a[i][j] for i in range(n)] for j in range(m)]
    v = [to_mpfr(1 + (j % 3), prec) for j in range(m)]
    nv = vec_norm2(v)
    v = [x / nv for x in v]
    tol = to_mpfr(1, prec) / (1 << max(prec // 4, 8))
    est = mpfr(0)
    for _ in range(max(64, prec)):
        w = mat_vec(a, v)
        u = mat_vec(at, w)
        nu = vec_norm2(u)
        if nu == 0:
            return mpfr(0)
        new_est = gmpy2.sqrt(nu)  # = sqrt(|AᵀAv|) -> σ_max for unit v
        v = [x / nu for x in u]
        if est and abs(new_est - est) <= tol * new_est:
            est = new_est
            break
        est = new_est
    return est * (1 + tol)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
