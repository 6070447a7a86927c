"""r-Lambert and generalized W-Lambert evaluation, and the closed-form
heights of the one-cell estimate in one dimension.

W_r(a) inverts x e^x + r x; its real branches are the monotone pieces cut
by the critical points of that map, indexed left to right.  W(t; s; a)
inverts e^x (x - t)/(x - s) and reduces to W_r through

    W(t; s; a) = t + W_{-a exp(-t)}( a exp(-t) (t - s) ).
"""

from __future__ import annotations

from fractions import Fraction

import gmpy2
from gmpy2 import mpfr

from ._num import prec_ctx, to_mpfr


class BranchError(ValueError):
    """Requested branch does not exist for the given arguments."""


def _lambert_w(x, branch: int, wp: int):
    """Classical W_0 / W_-1 by seeded Newton on w e^w = x."""
    x = to_mpfr(x, wp)
    if branch not in (0, -1):
        raise BranchError(f"classical W branch {branch} not real")
    einv = -gmpy2.exp(mpfr(-1))
    if x < einv:
        raise BranchError("argument below -1/e")
    if x == 0:
        if branch == 0:
            return mpfr(0)
        raise BranchError("W_-1 undefined at 0")
    if branch == -1 and x >= 0:
        raise BranchError("W_-1 needs argument in (-1/e, 0)")
    if branch == 0:
        w = gmpy2.log1p(x) if x > -0.25 else mpfr(-0.5)
    else:
        lx = gmpy2.log(-x)
        w = lx - gmpy2.log(-lx) if x > -0.25 else mpfr(-2) - gmpy2.sqrt(2 * (1 + gmpy2.exp(mpfr(1)) * x))
    for _ in range(wp):
        ew = gmpy2.exp(w)
        f = w * ew - x
        d = ew * (w + 1)
        if d == 0:
            break
        step = f / d
        w -= step
        if abs(step) <= abs(w) * mpfr(2) ** (-wp + 8):
            break
    return w


def _critical_points(r, wp: int):
    """Roots of e^x (x+1) + r = 0, ascending: the branch cut points."""
    r = to_mpfr(r, wp)
    if r == 0:
        return [mpfr(-1)]
    target = -r * gmpy2.exp(mpfr(1))  # t e^t = -r e with t = x+1
    if r > 0:
        lim = gmpy2.exp(mpfr(-2))
        if r >= lim:
            return []
        return [_lambert_w(target, -1, wp) - 1, _lambert_w(target, 0, wp) - 1]
    return [_lambert_w(target, 0, wp) - 1]


def branch_count(r, precision: int = 64) -> int:
    """Number of real branches of W_r per the sign regime of r."""
    crit = _critical_points(r, precision + 16)
    return len(crit) + 1


def _f(x, r):
    return x * gmpy2.exp(x) + r * x


def r_lambert(r, a, branch: int, precision: int):
    """Solve x e^x + r x = a on the requested monotone branch.

    Branches are indexed left to right over the monotone pieces; a root is
    located by bracketing within the piece and polished by safeguarded
    Newton to residual below 2^-(precision-8) relative.
    """
    wp = precision + 32
    with prec_ctx(wp):
        r = to_mpfr(r, wp)
        a = to_mpfr(a, wp)
        crit = _critical_points(r, wp)
        pieces = len(crit) + 1
        if not 0 <= branch < pieces:
            raise BranchError(
                f"branch {branch} of W_r: only {pieces} real branches for r={float(r)}")
        lo_inf = branch == 0
        hi_inf = branch == pieces - 1
        lo = None if lo_inf else crit[branch - 1]
        hi = None if hi_inf else crit[branch]

        # expand toward the unbounded side until f passes a
        def fval(x):
            return _f(x, r)

        if lo_inf and hi_inf:
            anchor = mpfr(0)
            lo, hi = anchor - 1, anchor + 1
            spread = mpfr(1)
            while fval(lo) > a:
                spread *= 2
                lo = anchor - spread
            spread = mpfr(1)
            while fval(hi) < a:
                spread *= 2
                hi = anchor + spread
        elif lo_inf:
            hi_v = fval(hi)
            lo = hi - 1
            spread = mpfr(1)
            increasing = fval(lo) < hi_v
            while (fval(lo) > a) if increasing else (fval(lo) < a):
                spread *= 2
                lo = hi - spread
                if spread > mpfr(2) ** 64:
                    raise BranchError("branch does not attain the requested value")
        elif hi_inf:
            lo_v = fval(lo)
            hi = lo + 1
            spread = mpfr(1)
            increasing = fval(hi) > lo_v
            while (fval(hi) < a) if increasing else (fval(hi) > a):
                spread *= 2
                hi = lo + spread
                if spread > mpfr(2) ** 64:
                    raise BranchError("branch does not attain the requested value")

        flo, fhi = fval(lo), fval(hi)
        if flo == a:
            return mpfr(lo, precision)
        if fhi == a:
            return mpfr(hi, precision)
        if (flo < a) == (fhi < a):
            raise BranchError(
                f"value {float(a)} not attained on branch {branch} "
                f"(range [{float(min(flo, fhi))}, {float(max(flo, fhi))}])")
        rising = flo < a

        x = (lo + hi) / 2
        tol = mpfr(2) ** (-(precision - 8))
        for _ in range(8 * wp):
            fx = fval(x) - a
            scale = max(mpfr(1), abs(a))
            if abs(fx) <= tol * scale:
                break
            if (fx > 0) == rising:
                hi = x
            else:
                lo = x
            d = gmpy2.exp(x) * (x + 1) + r
            if d != 0:
                nx = x - fx / d
                if lo < nx < hi:
                    x = nx
                    continue
            x = (lo + hi) / 2
        return mpfr(x, precision)


def generalized_lambert(t, s, a, branch: int, precision: int):
    """Branch value of W(t; s; a): solve e^x (x - t)/(x - s) = a.

    W(;;a) (no upper or lower parameters) degenerates to log(a).  The general
    case reduces to the r-Lambert function with r = -a e^-t; the result is
    residual-checked and must avoid the pole x = s.
    """
    wp = precision + 32
    with prec_ctx(wp):
        if t is None and s is None:
            a = to_mpfr(a, wp)
            if a <= 0:
                raise BranchError("W(;;a) needs a > 0")
            return mpfr(gmpy2.log(a), precision)
        if t is None or s is None:
            raise BranchError("unsupported parameter pattern (need both t and s)")
        t = to_mpfr(t, wp)
        s = to_mpfr(s, wp)
        a = to_mpfr(a, wp)
        r = -a * gmpy2.exp(-t)
        arg = a * gmpy2.exp(-t) * (t - s)
        x = t + r_lambert(r, arg, branch, wp)
        if x == s:
            raise BranchError("branch value hits the pole x = s")
        resid = gmpy2.exp(x) * (x - t) / (x - s) - a
        if abs(resid) > max(mpfr(1), abs(a)) * mpfr(2) ** (-(precision - 8)):
            raise BranchError("residual check failed for requested branch")
        return mpfr(x, precision)


def one_cell_heights(w1, w2, vol, precision: int):
    """Tent-pole heights of the single-cell estimate on a segment.

    Solves exp(d) = ((1+d) w1 + w2)/(w1 + (1-d) w2) for the nonzero height
    difference d through the generalized Lambert reduction, then

        y1 = log(w1 d + w1 + w2) - log(vol)
        y2 = log(-w2 d + w1 + w2) - log(vol).

    Equal weights give the flat solution (-log vol, -log vol).
    """
    w1f, w2f = Fraction(w1), Fraction(w2)
    if w1f <= 0 or w2f <= 0:
        raise ValueError("weights must be positive")
    wp = precision + 32
    with prec_ctx(wp):
        volm = to_mpfr(Fraction(vol), wp)
        if volm <= 0:
            raise ValueError("volume must be positive")
        if w1f == w2f:
            flat = -gmpy2.log(volm)
            return mpfr(flat, precision), mpfr(flat, precision)
        rho = to_mpfr(w1f / w2f, wp)
        t = rho + 1
        s = -1 / rho - 1
        # the relevant branch: rightmost piece when rho > 1, leftmost otherwise
        branch = 2 if rho > 1 else 0
        d = generalized_lambert(t, s, -rho, branch, wp)
        w1m = to_mpfr(w1f, wp)
        w2m = to_mpfr(w2f, wp)
        y1 = gmpy2.log(w1m * d + w1m + w2m) - gmpy2.log(volm)
        y2 = gmpy2.log(-w2m * d + w1m + w2m) - gmpy2.log(volm)
        return mpfr(y1, precision), mpfr(y2, precision)


def two_cell_reduced_residual(y12, y23, v1, v2, w, precision: int):
    """Residuals of the two-cell reduction in the height differences.

    The two equations eliminate the common scale from the three-point
    critical system; inputs are y12 = y1-y2, y23 = y2-y3, segment volumes
    v1, v2 and the weight triple.  Returns exp(lhs) - rhs for each.
    """
    wp = precision + 32
    with prec_ctx(wp):
        a = to_mpfr(y12, wp)
        b = to_mpfr(y23, wp)
        v1 = to_mpfr(Fraction(v1), wp)
        v2 = to_mpfr(Fraction(v2), wp)
        w1, w2, w3 = (to_mpfr(Fraction(x), wp) for x in w)
        num1 = (-(1 + a) * (1 + b) + (v2 / v1) * a * a) * w1 + (-1 - b) * w2 - w3
        mid = (-1 - b) * w1 + (-1 + a) * (1 + b) * w2 + (-1 + a) * w3
        den2 = -w1 + (a - 1) * w2 + (-(a - 1) * (b - 1) + (v1 / v2) * b * b) * w3
        if mid == 0 or den2 == 0:
            raise ZeroDivisionError("two-cell reduction denominator vanishes")
        r1 = gmpy2.exp(a) - num1 / mid
        r2 = gmpy2.exp(b) - mid / den2
        return mpfr(r1, precision), mpfr(r2, precision)
