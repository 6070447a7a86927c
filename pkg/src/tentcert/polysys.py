"""Exact sparse polynomials and cleared polynomial-exponential systems.

The critical equations of the objective are rational in the heights y and
linear in the exponentials u_i = exp(y_i).  Clearing each equation by the
least common multiple of its difference-factor denominators yields a square
system

    G(y, u) = [ P(y, u) ; u_i - exp(y_i) ]

with P exact polynomials over the rationals.  Coefficients are gmpy2.mpq;
exponent vectors are dense tuples over the variable order y-block then
u-block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr, mpq

from ._num import prec_ctx, sha256_hex, to_mpfr, up
from .geometry import Triangulation
from .objective import ReducedChart

DEFAULT_TERM_BUDGET = 10**7


class TermBudgetExceeded(RuntimeError):
    """Expansion grew past the configured term budget."""


def _q(x) -> mpq:
    if isinstance(x, mpq):
        return x
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    return mpq(x)


class SparsePoly:
    """Immutable sparse polynomial: exponent tuple -> nonzero mpq."""

    __slots__ = ("nvars", "terms", "_degree")

    def __init__(self, nvars: int, terms=None):
        self.nvars = nvars
        clean = {}
        for expo, coeff in (terms or {}).items():
            c = _q(coeff)
            if c != 0:
                clean[tuple(expo)] = c
        self.terms = clean
        self._degree = max((sum(e) for e in clean), default=0)

    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def constant(cls, nvars, c):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars, idx):
        e = [0] * nvars
        e[idx] = 1
        return cls(nvars, {tuple(e): 1})

    @property
    def degree(self) -> int:
        return self._degree

    def __len__(self):
        return len(self.terms)

    def __eq__(self, other):
        return isinstance(other, SparsePoly) and self.nvars == other.nvars \
            and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, tuple(sorted(self.terms.items()))))

    def __add__(self, other):
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            s = out.get(e, mpq(0)) + c
            if s == 0:
                out.pop(e, None)
            else:
                out[e] = s
        return SparsePoly(self.nvars, out)

    def __neg__(self):
        return SparsePoly(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, SparsePoly):
            return self.scale(other)
        self._check(other)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                s = out.get(e, mpq(0)) + c1 * c2
                if s == 0:
                    out.pop(e, None)
                else:
                    out[e] = s
        return SparsePoly(self.nvars, out)

    __rmul__ = __mul__

    def scale(self, c):
        c = _q(c)
        if c == 0:
            return SparsePoly.zero(self.nvars)
        return SparsePoly(self.nvars, {e: c * k for e, k in self.terms.items()})

    def diff(self, var: int):
        out = {}
        for e, c in self.terms.items():
            if e[var] == 0:
                continue
            ne = list(e)
            ne[var] -= 1
            out[tuple(ne)] = c * e[var]
        return SparsePoly(self.nvars, out)

    def eval(self, values):
        """Evaluate at a vector of mpq (exact) or mpfr values."""
        powers = [None] * self.nvars
        total = None
        for e, c in self.terms.items():
            term = c if all(k == 0 for k in e) else None
            if term is None:
                term = c
                for v, k in enumerate(e):
                    if k == 0:
                        continue
                    if powers[v] is None:
                        maxk = max(t[v] for t in self.terms)
                        cache = [None] * (maxk + 1)
                        cache[0] = 1
                        for kk in range(1, maxk + 1):
                            cache[kk] = cache[kk - 1] * values[v]
                        powers[v] = cache
                    term = term * powers[v][k]
            total = term if total is None else total + term
        if total is None:
            return mpq(0)
        return total

    def _check(self, other):
        if self.nvars != other.nvars:
            raise ValueError("dimension mismatch")

    def to_json(self):
        return [[f"{c.numerator}/{c.denominator}", list(e)]
                for e, c in sorted(self.terms.items())]

    def __repr__(self):
        return f"SparsePoly(nvars={self.nvars}, terms={len(self.terms)}, deg={self.degree})"


def bombieri_norm(obj, precision: int = 256):
    """Bombieri-Weyl coefficient norm of a polynomial or system P-block.

    For one polynomial of degree d: ||g||^2 = (1/d!) sum rho!(d-|rho|)! a_rho^2;
    for a system, the root-sum-square of component norms.  Computed exactly
    in rational arithmetic, then rounded up at `precision`.
    """
    if isinstance(obj, PolyExpSystem):
        sq = sum((_bombieri_sq(p) for p in obj.polys), mpq(0))
    else:
        sq = _bombieri_sq(obj)
    with prec_ctx(precision):
        return up(gmpy2.sqrt(mpfr(sq, precision)), precision)


def _factorial(k):
    out = 1
    for i in range(2, k + 1):
        out *= i
    return out


def _bombieri_sq(p: SparsePoly) -> mpq:
    d = p.degree
    if not p.terms:
        return mpq(0)
    total = mpq(0)
    for e, c in p.terms.items():
        rho_fact = 1
        for k in e:
            rho_fact *= _factorial(k)
        total += mpq(rho_fact * _factorial(d - sum(e))) * c * c
    return total / _factorial(d)


# ---------------------------------------------------------------------------
# system construction


@dataclass(frozen=True)
class PolyExpSystem:
    """Square system [P(y,u); u_i - exp(y_i)] of size n_y + n_u.

    Variable order: y_0..y_{k-1}, u_0..u_{k-1}.  y_labels maps y-variable
    positions back to sample-point indices of the originating configuration.
    clearing[j] lists ((a, b), multiplicity) difference factors (y_a - y_b)
    used to clear equation j.
    """

    polys: tuple
    n_y: int
    n_u: int
    y_labels: tuple
    clearing: tuple
    label: str = "system"

    def __post_init__(self):
        if len(self.polys) != self.n_y:
            raise ValueError("system is not square")

    @property
    def size(self) -> int:
        return self.n_y + self.n_u

    @property
    def degrees(self) -> tuple:
        return tuple(p.degree for p in self.polys)

    @property
    def max_degree(self) -> int:
        return max(self.degrees) if self.degrees else 0

    def term_count(self) -> int:
        return sum(len(p) for p in self.polys)

    def eval(self, point, precision: int):
        """G(X) for X = (y-block, u-block) at working precision."""
        wp = precision + 16
        with prec_ctx(wp):
            vals = [to_mpfr(v, wp) for v in point]
            out = [p.eval(vals) for p in self.polys]
            for i in range(self.n_u):
                out.append(vals[self.n_y + i] - gmpy2.exp(vals[i]))
            return [mpfr(v, precision) for v in out]

    def clearing_strings(self):
        out = []
        for factors in self.clearing:
            parts = [f"(y{a}-y{b})^{m}" if m != 1 else f"(y{a}-y{b})"
                     for (a, b), m in factors]
            out.append("*".join(parts) if parts else "1")
        return out

    def to_json(self):
        return {
            "label": self.label,
            "n_y": self.n_y,
            "n_u": self.n_u,
            "y_labels": list(self.y_labels),
            "equations": [p.to_json() for p in self.polys],
            "links": [{"u": i, "y": i, "delta": "1"} for i in range(self.n_u)],
            "clearing_factors": self.clearing_strings(),
        }

    def system_id(self) -> str:
        return sha256_hex(json.dumps(self.to_json(), sort_keys=True).encode())

    def jacobian(self) -> "SystemJacobian":
        return SystemJacobian(self)


class SystemJacobian:
    """Symbolic Jacobian: polynomial block rows plus exponential link rows."""

    def __init__(self, system: PolyExpSystem):
        self.system = system
        n = system.size
        self.partials = [[p.diff(v) for v in range(n)] for p in system.polys]

    def eval(self, point, precision: int):
        sysm = self.system
        wp = precision + 16
        with prec_ctx(wp):
            vals = [to_mpfr(v, wp) for v in point]
            n = sysm.size
            rows = []
            for parts in self.partials:
                rows.append([mpfr(parts[v].eval(vals), precision) for v in range(n)])
            for i in range(sysm.n_u):
                row = [mpfr(0)] * n
                row[i] = mpfr(-gmpy2.exp(vals[i]), precision)
                row[sysm.n_y + i] = mpfr(1)
                rows.append(row)
            return rows


class _Budget:
    """Caps both any single expansion and the total expanded system size."""

    def __init__(self, limit):
        self.limit = limit
        self.final = 0

    def charge(self, poly):
        if len(poly) > self.limit:
            raise TermBudgetExceeded(
                f"expansion exceeded term budget ({len(poly)} > {self.limit})")
        return poly

    def finalize(self, poly):
        self.final += len(poly)
        if self.final > self.limit:
            raise TermBudgetExceeded(
                f"system exceeded term budget ({self.final} > {self.limit})")
        return poly


def _canon_factor(a: int, b: int):
    """(y_a - y_b) as (key, sign) with key = (min, max)."""
    if a < b:
        return (a, b), 1
    return (b, a), -1


def _gradient_terms(T: Triangulation, k: int):
    """Symbolic terms of dS/dy_j over variable positions 0..k-1.

    Returns per-j lists of (coeff, u_index or None, {factor: mult}).
    The constant w_j is added by the caller.
    """
    rows = [[] for _ in range(k)]
    for s in T.simplices:
        vol = _q(Fraction(s.norm_volume))
        for j in s.vertices:
            others = [a for a in s.vertices if a != j]
            base = {}
            sign = 1
            for a in others:
                key, sg = _canon_factor(j, a)
                base[key] = base.get(key, 0) + 1
                sign *= sg
            # -vol u_j / prod (y_j - y_a)
            rows[j].append((-sign * vol, j, dict(base)))
            # +vol u_j / (prod (y_j - y_a)) * 1/(y_j - y_b) for each b
            for b in others:
                fac = dict(base)
                key, sg = _canon_factor(j, b)
                fac[key] = fac.get(key, 0) + 1
                rows[j].append((sign * sg * vol, j, fac))
            # -vol u_i / (prod_{a in s\i} (y_i - y_a)) / (y_i - y_j)
            for i in others:
                fac = {}
                sgn = 1
                for a in s.vertices:
                    if a == i:
                        continue
                    key, sg = _canon_factor(i, a)
                    fac[key] = fac.get(key, 0) + 1
                    sgn *= sg
                key, sg = _canon_factor(i, j)
                fac[key] = fac.get(key, 0) + 1
                sgn *= sg
                rows[j].append((-sgn * vol, i, fac))
    return rows


def _clear_equation(terms, const_coeff, k, budget):
    """lcm-clear one rational equation into a SparsePoly in 2k variables.

    `terms` are (coeff, u_index or None, {factor: mult}); const_coeff is the
    denominator-free additive constant (the weight).
    """
    nvars = 2 * k
    lcm = {}
    for _, _, fac in terms:
        for key, m in fac.items():
            lcm[key] = max(lcm.get(key, 0), m)

    memo = {}

    def factor_poly(key, power):
        if (key, power) in memo:
            return memo[key, power]
        a, b = key
        ea = [0] * nvars
        ea[a] = 1
        eb = [0] * nvars
        eb[b] = 1
        lin = SparsePoly(nvars, {tuple(ea): 1, tuple(eb): -1})
        out = SparsePoly.constant(nvars, 1)
        for _ in range(power):
            out = budget.charge(out * lin)
        memo[key, power] = out
        return out

    cleared = SparsePoly.constant(nvars, const_coeff)
    for key, m in sorted(lcm.items()):
        cleared = budget.charge(cleared * factor_poly(key, m))
    for coeff, u_idx, fac in terms:
        part = SparsePoly.constant(nvars, coeff)
        for key, m in sorted(lcm.items()):
            rem = m - fac.get(key, 0)
            if rem:
                part = budget.charge(part * factor_poly(key, rem))
        if u_idx is not None:
            part = part * SparsePoly.variable(nvars, k + u_idx)
        cleared = budget.charge(cleared + part)
    clearing = tuple(sorted((key, m) for key, m in lcm.items()))
    return budget.finalize(cleared), clearing


def build_system(T: Triangulation, w, n: int, label: str = "full",
                 term_budget: int = DEFAULT_TERM_BUDGET,
                 y_labels=None) -> PolyExpSystem:
    """Cleared critical-equation system of a triangulation over n heights.

    Points contained in no simplex contribute the constant equation w_j
    (their height does not enter the objective's integral part).
    """
    budget = _Budget(term_budget)
    grads = _gradient_terms(T, n)
    polys = []
    clearing = []
    for j in range(n):
        poly, factors = _clear_equation(grads[j], _q(Fraction(w[j])), n, budget)
        polys.append(poly)
        clearing.append(factors)
    return PolyExpSystem(tuple(polys), n, n,
                         tuple(range(n)) if y_labels is None else tuple(y_labels),
                         tuple(clearing), label=label)


def build_reduced_system(chart: ReducedChart, label: str = "reduced",
                         term_budget: int = DEFAULT_TERM_BUDGET) -> PolyExpSystem:
    """System for the substituted objective of a subdivision chart.

    Simplex-celled charts reduce to the plain system of the coarse
    triangulation with reduced weights over the free heights.  Charts with
    merged (non-simplex) cells keep all heights as variables: the chart's
    linear relations join the polynomial block and the free equations are
    the chain-ruled gradient combinations, cleared the same way.
    """
    if chart.simplicial:
        sub, coarse = chart.coarse_subconfig()
        return build_system(coarse, chart.reduced_weights, sub.n,
                            label=label, term_budget=term_budget,
                            y_labels=chart.free_indices)

    X = chart.config
    n = X.n
    budget = _Budget(term_budget)
    grads = _gradient_terms(chart.triangulation, n)
    w = [_q(Fraction(wi)) for wi in X.weights]
    polys = []
    clearing = []
    nvars = 2 * n
    for j, combo in sorted(chart.rows.items()):
        e = [0] * nvars
        e[j] = 1
        terms = {tuple(e): mpq(1)}
        for i, lam in combo:
            e = [0] * nvars
            e[i] = 1
            terms[tuple(e)] = -_q(lam)
        polys.append(budget.finalize(SparsePoly(nvars, terms)))
        clearing.append(())
    for f in chart.free_indices:
        combined = [(c, u, fac) for (c, u, fac) in grads[f]]
        const = w[f]
        for j, combo in chart.rows.items():
            lam = dict(combo).get(f)
            if lam is None:
                continue
            lamq = _q(lam)
            const += lamq * w[j]
            combined.extend((lamq * c, u, fac) for (c, u, fac) in grads[j])
        poly, factors = _clear_equation(combined, const, n, budget)
        polys.append(poly)
        clearing.append(factors)
    return PolyExpSystem(tuple(polys), n, n, tuple(range(n)),
                         tuple(clearing), label=label)
