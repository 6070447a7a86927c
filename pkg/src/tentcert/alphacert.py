"""Smale alpha-theory certification for polynomial-exponential systems.

For the square system G = [P(y,u); u_i - exp(y_i)] the gamma constant is
bounded by

    gamma(G, X) <= mu(G, X) * ( D^(3/2) / (2 ||X||_1) + sum_i A(1, y_i) )

with A(l, t) = max(|l|, |l^2 exp(l t) / 2|) and mu the conditioned block
norm max{1, ||DG^-1 [C_P ||P|| ; I]||}.  A point is certified when
alpha = beta * gamma_bound falls strictly below (13 - 3 sqrt(17))/4.

Every quantity feeding the comparison is rounded outward, so a `certified`
verdict is conservative with respect to working-precision roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import gmpy2
from gmpy2 import mpfr

from ._num import (
    SingularMatrixError,
    invert,
    lu_factor,
    lu_solve,
    mat_vec,
    mpfr_to_decimal,
    norm_inf,
    prec_ctx,
    spectral_norm_ub,
    to_mpfr,
    up,
    vec_norm2,
)
from .polysys import PolyExpSystem, bombieri_norm


class CertificationError(RuntimeError):
    """Jacobian singular or too ill-conditioned to certify."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


def alpha_threshold(precision: int):
    """(13 - 3 sqrt(17))/4 evaluated at working precision."""
    with prec_ctx(precision):
        return (13 - 3 * gmpy2.sqrt(mpfr(17, precision))) / 4


@dataclass
class Certificate:
    """Outcome of one alpha test of a point against a system."""

    system_id: str
    system_label: str
    point_y: tuple
    point_u: tuple
    precision: int
    beta: Optional[mpfr] = None
    mu: Optional[mpfr] = None
    gamma_bound: Optional[mpfr] = None
    alpha: Optional[mpfr] = None
    threshold: Optional[mpfr] = None
    certified: bool = False
    clearing_factors: tuple = ()
    reason: Optional[str] = None
    digits_appended: Optional[int] = None

    def to_json(self, digits: int = 40) -> dict:
        def fmt(x):
            return None if x is None else mpfr_to_decimal(x, digits)

        return {
            "system_id": self.system_id,
            "system_label": self.system_label,
            "certified": self.certified,
            "alpha": fmt(self.alpha),
            "beta": fmt(self.beta),
            "mu": fmt(self.mu),
            "gamma_bound": fmt(self.gamma_bound),
            "threshold": fmt(self.threshold),
            "precision": self.precision,
            "point": {
                "y": [mpfr_to_decimal(v, digits) for v in self.point_y],
                "u": [mpfr_to_decimal(v, digits) for v in self.point_u],
            },
            "clearing_factors": list(self.clearing_factors),
            "digits_appended": self.digits_appended,
            "reason": self.reason,
        }


def _jacobian_inverse(G: PolyExpSystem, X, precision: int):
    jac = G.jacobian().eval(X, precision)
    try:
        inv = invert(jac)
    except SingularMatrixError as e:
        raise CertificationError(f"singular Jacobian: {e}") from e
    cond = norm_inf(jac) * norm_inf(inv)
    if cond >= mpfr(2) ** (precision // 2):
        raise CertificationError(
            f"Jacobian condition estimate {mpfr_to_decimal(cond, 6)} exceeds "
            f"2^{precision // 2}", condition=cond)
    return jac, inv


def beta(G: PolyExpSystem, X, precision: int):
    """Newton step norm ||DG(X)^-1 G(X)||, by linear solve."""
    with prec_ctx(precision + 16):
        jac = G.jacobian().eval(X, precision)
        gval = G.eval(X, precision)
        try:
            lu, perm = lu_factor(jac)
            step = lu_solve(lu, perm, gval)
        except SingularMatrixError as e:
            raise CertificationError(f"singular Jacobian: {e}") from e
        return up(vec_norm2(step), precision)


def norm1_point(X, precision: int):
    """||X||_1 = sqrt(1 + ||X||^2)."""
    with prec_ctx(precision + 16):
        s = sum((to_mpfr(v, precision + 16) ** 2 for v in X), mpfr(1))
        return gmpy2.sqrt(s)


def mu(G: PolyExpSystem, X, precision: int, _inv=None, _pnorm=None):
    """max{1, ||DG(X)^-1 diag(C_P ||P||, I)||} with spectral matrix norm."""
    with prec_ctx(precision + 16):
        if _inv is None:
            _, _inv = _jacobian_inverse(G, X, precision)
        pnorm = bombieri_norm(G, precision) if _pnorm is None else _pnorm
        nx1 = norm1_point(X, precision)
        scales = []
        for d in G.degrees:
            scales.append(gmpy2.sqrt(mpfr(max(d, 0), precision)) * nx1 ** max(d - 1, 0) * pnorm)
        scales.extend([mpfr(1)] * G.n_u)
        scaled = [[row[j] * scales[j] for j in range(len(scales))] for row in _inv]
        snorm = spectral_norm_ub(scaled, precision)
        return up(max(mpfr(1), snorm), precision)


def gamma_bound(G: PolyExpSystem, X, precision: int, _inv=None, _pnorm=None, _mu=None):
    """Upper bound mu * (D^(3/2)/(2||X||_1) + sum A(1, y_i))."""
    with prec_ctx(precision + 16):
        m = mu(G, X, precision, _inv=_inv, _pnorm=_pnorm) if _mu is None else _mu
        nx1 = norm1_point(X, precision)
        D = to_mpfr(G.max_degree, precision)
        first = D * gmpy2.sqrt(D) / (2 * nx1)
        asum = mpfr(0)
        for i in range(G.n_u):
            yi = to_mpfr(X[i], precision + 16)
            asum += max(mpfr(1), gmpy2.exp(yi) / 2)
        return up(m * (first + asum), precision)


def alpha_value(G: PolyExpSystem, X, precision: int):
    """(alpha, beta, mu, gamma_bound) at X, sharing one Jacobian inverse."""
    with prec_ctx(precision + 16):
        jac, inv = _jacobian_inverse(G, X, precision)
        gval = G.eval(X, precision)
        b = up(vec_norm2(mat_vec(inv, gval)), precision)
        pnorm = bombieri_norm(G, precision)
        m = mu(G, X, precision, _inv=inv, _pnorm=pnorm)
        g = gamma_bound(G, X, precision, _inv=inv, _pnorm=pnorm, _mu=m)
        a = up(b * g, precision)
        return a, b, m, g


def certify(G: PolyExpSystem, y, precision: int) -> Certificate:
    """Certify heights y against G, taking u = exp(y) at working precision."""
    with prec_ctx(precision):
        yv = tuple(to_mpfr(v, precision) for v in y)
        uv = tuple(gmpy2.exp(v) for v in yv)
        X = list(yv) + list(uv)
        thr = alpha_threshold(precision)
        cert = Certificate(
            system_id=G.system_id(), system_label=G.label,
            point_y=yv, point_u=uv, precision=precision,
            threshold=thr, clearing_factors=tuple(G.clearing_strings()))
        try:
            a, b, m, g = alpha_value(G, X, precision)
        except CertificationError as e:
            cert.reason = str(e)
            return cert
        cert.alpha, cert.beta, cert.mu, cert.gamma_bound = a, b, m, g
        cert.certified = bool(a < thr)
        if not cert.certified and cert.reason is None:
            cert.reason = "alpha above threshold"
        return cert


def newton_iterate(G: PolyExpSystem, X, precision: int, k: int = 1):
    """k Newton steps on the full (y, u) vector at working precision."""
    with prec_ctx(precision + 16):
        cur = [to_mpfr(v, precision + 16) for v in X]
        for step in range(k):
            jac = G.jacobian().eval(cur, precision)
            gval = G.eval(cur, precision)
            try:
                lu, perm = lu_factor(jac)
                delta = lu_solve(lu, perm, gval)
            except SingularMatrixError as e:
                raise CertificationError(
                    f"singular Jacobian at Newton step {step}: {e}") from e
            cur = [c - d for c, d in zip(cur, delta)]
        return [mpfr(v, precision) for v in cur]
