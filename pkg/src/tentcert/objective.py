"""Objective evaluation: divided differences of exp, values, gradients and
reduced objectives for non-maximal subdivisions.

The per-simplex building block is the divided difference of exp at the
simplex heights; repeated nodes are legal and are what the gradient and
Hessian identities produce, so every evaluator here is total on finite
inputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import gmpy2
from gmpy2 import mpfr

from ._num import prec_ctx, to_mpfr
from .geometry import (
    PointConfig,
    Subdivision,
    Triangulation,
    HeightVector,
    _cross,
    barycentric,
    cell_corners,
    convex_hull_2d,
    induced_subdivision,
    make_simplex,
    refine_to_triangulation,
)

# Relative node gap below which the confluent series replaces the explicit sum.
EPS_SWITCH = Fraction(1, 10**6)


def divided_diff_exp(nodes, precision: int):
    """Divided difference [y_0,...,y_m]exp, stable near coincident nodes.

    Sorted-node recursion divides only by the full spread; clusters tighter
    than EPS_SWITCH (relative) are evaluated by the shifted series
    e^mean * sum_k h_k(z)/(k+m)! truncated at 2^-(precision+8).
    """
    wp = precision + 32
    with prec_ctx(wp):
        vals = sorted(to_mpfr(v, wp) for v in nodes)
        out = _dd_sorted(vals, wp, precision)
        return mpfr(out, precision)


def _dd_sorted(vals, wp, precision):
    m = len(vals) - 1
    if m == 0:
        return gmpy2.exp(vals[0])
    spread = vals[-1] - vals[0]
    scale = max(mpfr(1), abs(vals[0]), abs(vals[-1]))
    if spread <= to_mpfr(EPS_SWITCH, wp) * scale:
        return _dd_series(vals, wp, precision)
    lo = _dd_sorted(vals[:-1], wp, precision)
    hi = _dd_sorted(vals[1:], wp, precision)
    return (hi - lo) / spread


def _dd_series(vals, wp, precision):
    m = len(vals) - 1
    mean = sum(vals, mpfr(0)) / (m + 1)
    z = [v - mean for v in vals]
    # h[j] = complete homogeneous symmetric polynomial h_k(z_0..z_{j-1}),
    # updated in place as k advances.
    nvars = len(z)
    h = [mpfr(1)] * (nvars + 1)
    fact = mpfr(1)
    for i in range(2, m + 1):
        fact *= i
    total = mpfr(1) / fact  # k = 0 term: h_0/( m! )
    cutoff = to_mpfr(Fraction(1, 1 << (precision + 8)), wp)
    k = 0
    while True:
        k += 1
        h[0] = mpfr(0)
        for j in range(1, nvars + 1):
            h[j] = h[j - 1] + z[j - 1] * h[j]
        fact *= m + k
        term = h[nvars] / fact
        total += term
        if abs(term) <= cutoff * max(mpfr(1), abs(total)) and k >= 2:
            break
        if k > wp + 64:
            break
    return gmpy2.exp(mean) * total


def eval_S(T: Triangulation, w, y, precision: int):
    """Objective value w.y - sum_sigma norm_vol(sigma) [y|sigma]exp."""
    vals = _heights(y)
    wp = precision + 32
    with prec_ctx(wp):
        total = mpfr(0)
        for wi, yi in zip(w, vals):
            total += to_mpfr(wi, wp) * to_mpfr(yi, wp)
        for s in T.simplices:
            nodes = [vals[i] for i in s.vertices]
            total -= to_mpfr(s.norm_volume, wp) * _dd_sorted(
                sorted(to_mpfr(v, wp) for v in nodes), wp, precision)
        return mpfr(total, precision)


def grad_S(T: Triangulation, w, y, precision: int):
    """Gradient of eval_S: dS/dy_j = w_j - sum_sigma norm_vol [y|sigma, y_j]exp."""
    vals = _heights(y)
    wp = precision + 32
    with prec_ctx(wp):
        mv = [to_mpfr(v, wp) for v in vals]
        grad = [to_mpfr(wi, wp) for wi in w]
        for s in T.simplices:
            base = [mv[i] for i in s.vertices]
            nv = to_mpfr(s.norm_volume, wp)
            for j in s.vertices:
                nodes = sorted(base + [mv[j]])
                grad[j] -= nv * _dd_sorted(nodes, wp, precision)
        return [mpfr(g, precision) for g in grad]


def hess_S(T: Triangulation, w, y, precision: int):
    """Hessian of eval_S via twice-repeated divided-difference nodes."""
    vals = _heights(y)
    n = len(vals)
    wp = precision + 32
    with prec_ctx(wp):
        mv = [to_mpfr(v, wp) for v in vals]
        hess = [[mpfr(0)] * n for _ in range(n)]
        for s in T.simplices:
            base = [mv[i] for i in s.vertices]
            nv = to_mpfr(s.norm_volume, wp)
            for a in s.vertices:
                for b in s.vertices:
                    mult = 2 if a == b else 1
                    nodes = sorted(base + [mv[a], mv[b]])
                    hess[a][b] -= mult * nv * _dd_sorted(nodes, wp, precision)
        return [[mpfr(h, precision) for h in row] for row in hess]


def integral_exp_tent(X: PointConfig, y, precision: int, tol_flat=None):
    """Integral of exp(tent) over conv(X): per-cell closed form."""
    if not isinstance(y, HeightVector):
        y = HeightVector(tuple(y), precision)
    kwargs = {} if tol_flat is None else {"tol_flat": tol_flat}
    S = induced_subdivision(X, y, **kwargs)
    T = refine_to_triangulation(S, X)
    wp = precision + 32
    with prec_ctx(wp):
        total = mpfr(0)
        for s in T.simplices:
            nodes = sorted(to_mpfr(y.values[i], wp) for i in s.vertices)
            total += to_mpfr(s.norm_volume, wp) * _dd_sorted(nodes, wp, precision)
        return mpfr(total, precision)


def _heights(y):
    return list(y.values) if isinstance(y, HeightVector) else list(y)


# ---------------------------------------------------------------------------
# reduced objectives


class ChartError(ValueError):
    pass


@dataclass(frozen=True)
class ReducedChart:
    """Substitution chart for a subdivision.

    free_indices are the surviving height variables; rows[j] expresses each
    determined height y_j as an exact affine combination of free heights.
    Heights of points interior to a cell carry nonnegative coefficients;
    corners of cells with more than d+1 corners are determined by the
    coplanarity constraint and may carry signed coefficients.
    """

    config: PointConfig
    subdivision: Subdivision
    triangulation: Triangulation
    free_indices: tuple
    rows: dict
    reduced_weights: tuple
    coarse: Triangulation            # fan of cells over corner vertices only
    simplicial: bool                 # True when every cell has <= d+1 corners

    @property
    def k(self) -> int:
        return len(self.free_indices)

    def lift(self, y_free, precision: int):
        """Full height vector from free heights."""
        n = self.config.n
        wp = precision + 32
        with prec_ctx(wp):
            full = [None] * n
            for pos, i in enumerate(self.free_indices):
                full[i] = to_mpfr(y_free[pos], wp)
            for j, combo in self.rows.items():
                full[j] = sum(
                    (to_mpfr(lam, wp) * full[i] for i, lam in combo), mpfr(0))
            return [mpfr(v, precision) for v in full]

    def reduced_grad(self, y_free, precision: int):
        """Chain-ruled gradient of the substituted objective."""
        full = self.lift(y_free, precision + 16)
        g = grad_S(self.triangulation, self.config.weights, full, precision + 16)
        wp = precision + 16
        with prec_ctx(wp):
            out = []
            for i in self.free_indices:
                gi = g[i]
                for j, combo in self.rows.items():
                    lam = dict(combo).get(i)
                    if lam is not None:
                        gi += to_mpfr(lam, wp) * g[j]
                out.append(mpfr(gi, precision))
            return out

    def reduced_value(self, y_free, precision: int):
        full = self.lift(y_free, precision + 16)
        return eval_S(self.triangulation, self.config.weights, full, precision)

    def reduced_hess(self, y_free, precision: int):
        full = self.lift(y_free, precision + 16)
        H = hess_S(self.triangulation, self.config.weights, full, precision + 16)
        wp = precision + 16
        with prec_ctx(wp):
            n = self.config.n
            k = self.k
            jac = [[mpfr(0)] * k for _ in range(n)]
            for pos, i in enumerate(self.free_indices):
                jac[i][pos] = mpfr(1)
            for j, combo in self.rows.items():
                for i, lam in combo:
                    pos = self.free_indices.index(i)
                    jac[j][pos] = to_mpfr(lam, wp)
            out = [[mpfr(0)] * k for _ in range(k)]
            for a in range(k):
                for b in range(k):
                    s = mpfr(0)
                    for p in range(n):
                        if jac[p][a] == 0:
                            continue
                        for q in range(n):
                            if jac[q][b] == 0:
                                continue
                            s += jac[p][a] * H[p][q] * jac[q][b]
                    out[a][b] = mpfr(s, precision)
            return out

    def coarse_subconfig(self):
        """(sub-PointConfig on free points, relabeled coarse triangulation).

        Only available for simplicial charts, where the substituted objective
        equals the plain objective of the coarse triangulation with reduced
        weights.
        """
        if not self.simplicial:
            raise ChartError("coarse identification needs simplex cells")
        relabel = {i: pos for pos, i in enumerate(self.free_indices)}
        pts = tuple(self.config.points[i] for i in self.free_indices)
        sub = PointConfig(pts, self.reduced_weights)
        simps = tuple(
            make_simplex(sub, tuple(relabel[v] for v in s.vertices))
            for s in self.coarse.simplices)
        return sub, Triangulation(simps)


def reduce_objective(X: PointConfig, T: Triangulation, S: Subdivision, w=None) -> ReducedChart:
    """Build the substitution chart for subdivision S refined by T.

    Every non-corner point of a cell is replaced by its barycentric
    combination inside the containing corner simplex; cells with more than
    d+1 corners additionally determine their excess corners through the
    coplanarity constraint.  Constraints are reduced by exact Gaussian
    elimination, eliminating each constraint's subject variable.
    """
    n = X.n
    d = X.dim
    w = tuple(Fraction(x) for x in (X.weights if w is None else w))

    constraints = []  # rows: dict var -> Fraction, meaning sum coeff*y = 0
    coarse_simplices = []
    simplicial = True
    for cell in S.cells:
        corners = cell_corners(X, cell)
        fan = _corner_fan(X, corners)
        coarse_simplices.extend(fan)
        if len(corners) > d + 1:
            simplicial = False
            anchors = _anchor_simplex(X, corners)
            for j in corners:
                if j in anchors:
                    continue
                lam = barycentric(X, anchors, X.points[j])
                row = {j: Fraction(-1)}
                for a, l in zip(anchors, lam):
                    row[a] = row.get(a, Fraction(0)) + l
                constraints.append((j, row))
        interior = [j for j in cell if j not in corners]
        for j in interior:
            tri = _containing_simplex(X, fan, X.points[j])
            if tri is None:
                raise ChartError(f"point {j} outside its cell")
            lam = barycentric(X, tri, X.points[j])
            if any(l < 0 for l in lam):
                raise ChartError(f"point {j} outside its cell")
            row = {j: Fraction(-1)}
            for a, l in zip(tri, lam):
                row[a] = row.get(a, Fraction(0)) + l
            constraints.append((j, row))

    solved = {}  # var -> dict(var -> Fraction): y_var = sum coeff*y
    for subject, row in constraints:
        row = _substitute(row, solved)
        row = {v: c for v, c in row.items() if c != 0}
        if not row:
            continue
        pivot = subject if row.get(subject) else max(row)
        pc = row.pop(pivot)
        expr = {v: -c / pc for v, c in row.items()}
        for var, ex in solved.items():
            if pivot in ex:
                coeff = ex.pop(pivot)
                for v, c in expr.items():
                    ex[v] = ex.get(v, Fraction(0)) + coeff * c
                solved[var] = {v: c for v, c in ex.items() if c != 0}
        solved[pivot] = expr

    free = tuple(i for i in range(n) if i not in solved)
    rows = {j: tuple(sorted(ex.items())) for j, ex in solved.items()}
    wtil = {i: w[i] for i in free}
    for j, combo in rows.items():
        for i, lam in combo:
            wtil[i] += lam * w[j]
    reduced_weights = tuple(wtil[i] for i in free)

    coarse = Triangulation(tuple(
        make_simplex(X, t) for t in sorted(set(coarse_simplices))))
    return ReducedChart(
        config=X, subdivision=S, triangulation=T, free_indices=free,
        rows=rows, reduced_weights=reduced_weights, coarse=coarse,
        simplicial=simplicial)


def _substitute(row, solved):
    out = dict(row)
    changed = True
    while changed:
        changed = False
        for v in list(out):
            if v in solved and out[v] != 0:
                coeff = out.pop(v)
                for u, c in solved[v].items():
                    out[u] = out.get(u, Fraction(0)) + coeff * c
                changed = True
    return out


def chart_for(X: PointConfig, S: Subdivision, w=None) -> ReducedChart:
    """Convenience wrapper building T = refine_to_triangulation(S) first."""
    T = refine_to_triangulation(S, X)
    return reduce_objective(X, T, S, w)


def _corner_fan(X, corners):
    if X.dim == 1:
        return [tuple(sorted(corners))]
    cyc = convex_hull_2d(list(corners), X.points)
    apex_pos = min(range(len(cyc)), key=lambda k: cyc[k])
    cyc = cyc[apex_pos:] + cyc[:apex_pos]
    out = []
    for a, b in zip(cyc[1:], cyc[2:]):
        if _cross(X.points[cyc[0]], X.points[a], X.points[b]) != 0:
            out.append(tuple(sorted((cyc[0], a, b))))
    return out


def _anchor_simplex(X, corners):
    """Lexicographically first affinely independent d+1 subset of corners."""
    for tup in itertools.combinations(sorted(corners), X.dim + 1):
        pts = [X.points[i] for i in tup]
        if X.dim == 1:
            if pts[0][0] != pts[1][0]:
                return tup
        elif _cross(*pts) != 0:
            return tup
    raise ChartError("cell corners affinely dependent")


def _containing_simplex(X, fan, p):
    for tri in fan:
        lam = barycentric(X, tri, p)
        if lam is not None and all(l >= 0 for l in lam):
            return tri
    return None
