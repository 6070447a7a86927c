"""Point configurations, lifted-hull subdivisions and tent functions.

Points and weights are exact rationals; heights are arbitrary-precision
floats.  Subdivision cells record every sample index whose lifted point lies
on the supporting hyperplane of the cell, so a cell can carry more indices
than its polytope has corners (those extras sit on the tent but are not
vertices of the cell).

Indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import gmpy2
from gmpy2 import mpfr

from ._num import fraction_from_text, prec_ctx, to_mpfr

TOL_FLAT_DEFAULT = Fraction(1, 10**8)

NEG_INF = mpfr("-inf")


class DegenerateConfigError(ValueError):
    """Configuration does not affinely span its ambient space."""


def _factorial(d: int) -> int:
    out = 1
    for k in range(2, d + 1):
        out *= k
    return out


@dataclass(frozen=True)
class PointConfig:
    """Weighted sample points in dimension 1 or 2."""

    points: tuple
    weights: tuple

    def __post_init__(self):
        pts = tuple(tuple(Fraction(c) for c in p) for p in self.points)
        wts = tuple(Fraction(w) for w in self.weights)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        n = len(pts)
        if n == 0:
            raise ValueError("empty point configuration")
        d = len(pts[0])
        if d not in (1, 2):
            raise ValueError(f"dimension {d} unsupported (need 1 or 2)")
        if any(len(p) != d for p in pts):
            raise ValueError("points of mixed dimension")
        if len(wts) != n:
            raise ValueError("weights length mismatch")
        if any(w < 0 for w in wts):
            raise ValueError("negative weight")
        if sum(wts) != 1:
            raise ValueError("weights must sum to 1 exactly")
        if len(set(pts)) != n:
            raise ValueError("points must be pairwise distinct")
        if n < d + 1 or not _affinely_spans(pts, d):
            raise DegenerateConfigError("points do not affinely span R^d")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return len(self.points[0])

    @classmethod
    def from_json(cls, obj) -> "PointConfig":
        if isinstance(obj, str):
            obj = json.loads(obj)
        pts = []
        for p in obj["points"]:
            if isinstance(p, (list, tuple)):
                pts.append(tuple(fraction_from_text(c) for c in p))
            else:
                pts.append((fraction_from_text(p),))
        wts = [fraction_from_text(w) for w in obj["weights"]]
        return cls(tuple(pts), tuple(wts))

    def to_json(self) -> dict:
        return {
            "points": [[str(c) for c in p] for p in self.points],
            "weights": [str(w) for w in self.weights],
        }

    def hull_volume(self) -> Fraction:
        """Exact Euclidean volume of conv(X)."""
        if self.dim == 1:
            xs = [p[0] for p in self.points]
            return max(xs) - min(xs)
        hull = convex_hull_2d(list(range(self.n)), self.points)
        return polygon_area(hull, self.points)


@dataclass(frozen=True)
class Simplex:
    vertices: tuple
    euclid_volume: Fraction
    norm_volume: Fraction

    def __post_init__(self):
        if self.euclid_volume <= 0:
            raise ValueError(f"degenerate simplex {self.vertices}")


@dataclass(frozen=True)
class Subdivision:
    """Cells as sorted index tuples; cells sorted lexicographically."""

    cells: tuple
    provenance: str = "user-supplied"

    def __post_init__(self):
        cells = tuple(sorted(tuple(sorted(c)) for c in self.cells))
        object.__setattr__(self, "cells", cells)


@dataclass(frozen=True)
class Triangulation:
    simplices: tuple
    neighborhoods: tuple = field(default=None)

    def __post_init__(self):
        simps = tuple(sorted(self.simplices, key=lambda s: s.vertices))
        object.__setattr__(self, "simplices", simps)
        if self.neighborhoods is None:
            n = 1 + max(max(s.vertices) for s in simps)
            nb = [set() for _ in range(n)]
            for s in simps:
                for i in s.vertices:
                    for j in s.vertices:
                        if i != j:
                            nb[i].add(j)
            object.__setattr__(self, "neighborhoods", tuple(frozenset(s) for s in nb))

    @property
    def vertex_set(self) -> frozenset:
        out = set()
        for s in self.simplices:
            out.update(s.vertices)
        return frozenset(out)


@dataclass(frozen=True)
class HeightVector:
    values: tuple
    precision: int

    def __post_init__(self):
        vals = tuple(to_mpfr(v, self.precision) for v in self.values)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    @classmethod
    def from_decimals(cls, strings: Sequence[str], precision: int) -> "HeightVector":
        return cls(tuple(to_mpfr(s, precision) for s in strings), precision)


# ---------------------------------------------------------------------------
# exact rational predicates


def _affinely_spans(pts, d) -> bool:
    if d == 1:
        return len({p[0] for p in pts}) >= 2
    p0 = pts[0]
    for a, b in itertools.combinations(pts[1:], 2):
        if _cross(p0, a, b) != 0:
            return True
    return False


def _cross(o, a, b) -> Fraction:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull_2d(indices, points):
    """Monotone-chain hull; returns corner indices in CCW order (no collinear)."""
    idx = sorted(indices, key=lambda i: (points[i][0], points[i][1], i))
    if len(idx) <= 2:
        return list(idx)

    def build(seq):
        out = []
        for i in seq:
            while len(out) >= 2 and _cross(points[out[-2]], points[out[-1]], points[i]) <= 0:
                out.pop()
            out.append(i)
        return out

    lower = build(idx)
    upper = build(reversed(idx))
    return lower[:-1] + upper[:-1]


def boundary_cycle_2d(indices, points):
    """Hull boundary in CCW order, keeping collinear on-edge points."""
    corners = convex_hull_2d(indices, points)
    if len(corners) <= 2:
        return sorted(indices, key=lambda i: (points[i][0], points[i][1], i))
    cycle = []
    cset = set(indices)
    for k, c in enumerate(corners):
        nxt = corners[(k + 1) % len(corners)]
        pc, pn = points[c], points[nxt]
        on_edge = []
        for i in cset:
            if i in (c, nxt):
                continue
            if _cross(pc, pn, points[i]) == 0 and _between(pc, pn, points[i]):
                on_edge.append(i)
        on_edge.sort(key=lambda i: ((points[i][0] - pc[0]) ** 2 + (points[i][1] - pc[1]) ** 2))
        cycle.append(c)
        cycle.extend(on_edge)
    return cycle


def _between(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def polygon_area(cycle, points) -> Fraction:
    area = Fraction(0)
    for k in range(len(cycle)):
        a = points[cycle[k]]
        b = points[cycle[(k + 1) % len(cycle)]]
        area += a[0] * b[1] - b[0] * a[1]
    return abs(area) / 2


def simplex_volume(X: PointConfig, vertices) -> Fraction:
    pts = [X.points[i] for i in vertices]
    if X.dim == 1:
        return abs(pts[1][0] - pts[0][0])
    return abs(_cross(pts[0], pts[1], pts[2])) / 2


def make_simplex(X: PointConfig, vertices) -> Simplex:
    vol = simplex_volume(X, vertices)
    if vol == 0:
        raise ValueError(f"zero volume simplex {tuple(vertices)}")
    return Simplex(tuple(sorted(vertices)), vol, _factorial(X.dim) * vol)


def cell_corners(X: PointConfig, cell) -> tuple:
    """Indices in `cell` that are polytope vertices of conv(cell)."""
    if X.dim == 1:
        order = sorted(cell, key=lambda i: X.points[i][0])
        return (order[0], order[-1])
    return tuple(sorted(convex_hull_2d(list(cell), X.points)))


def point_in_simplex(X: PointConfig, vertices, p) -> bool:
    lam = barycentric(X, vertices, p)
    return lam is not None and all(c >= 0 for c in lam)


def barycentric(X: PointConfig, vertices, p):
    """Exact barycentric coordinates of rational point p wrt a simplex."""
    pts = [X.points[i] for i in vertices]
    if X.dim == 1:
        a, b = pts[0][0], pts[1][0]
        if a == b:
            return None
        t = (p[0] - a) / (b - a)
        return (1 - t, t)
    det = _cross(pts[0], pts[1], pts[2])
    if det == 0:
        return None
    l1 = _cross(p, pts[1], pts[2]) / det
    l2 = _cross(pts[0], p, pts[2]) / det
    return (l1, l2, 1 - l1 - l2)


# ---------------------------------------------------------------------------
# lifted upper hull


def _upper_facets(X: PointConfig, y: HeightVector, wp: int):
    """Supporting hyperplanes of the lifted upper hull.

    Returns a list of (coeffs, on_set) where coeffs = (a_1..a_d, b) describes
    z = a.x + b and on_set holds every index whose lifted point lies on the
    plane within representation tolerance.  Enumerates affinely independent
    index tuples; fine for the configuration sizes this package targets.
    """
    n, d = X.n, X.dim
    with prec_ctx(wp):
        xs = [[to_mpfr(c, wp) for c in p] for p in X.points]
        ys = [to_mpfr(v, wp) for v in y.values]
        scale = max([mpfr(1)] + [abs(v) for v in ys])
        eps = scale * to_mpfr(Fraction(1, 1 << (wp - 16)), wp)
        facets = {}
        for tup in itertools.combinations(range(n), d + 1):
            pts = [X.points[i] for i in tup]
            if d == 1:
                if pts[0][0] == pts[1][0]:
                    continue
                a = (ys[tup[1]] - ys[tup[0]]) / to_mpfr(pts[1][0] - pts[0][0], wp)
                coeffs = (a, ys[tup[0]] - a * xs[tup[0]][0])
            else:
                if _cross(pts[0], pts[1], pts[2]) == 0:
                    continue
                coeffs = _plane_through(xs, ys, tup)
            support = True
            on_set = []
            for m in range(n):
                val = sum(coeffs[k] * xs[m][k] for k in range(d)) + coeffs[-1]
                diff = ys[m] - val
                if diff > eps:
                    support = False
                    break
                if abs(diff) <= eps:
                    on_set.append(m)
            if not support:
                continue
            key = tuple(on_set)
            if key not in facets:
                facets[key] = coeffs
        return [(facets[k], k) for k in sorted(facets)], eps


def _plane_through(xs, ys, tup):
    i, j, k = tup
    ux, uy = xs[j][0] - xs[i][0], xs[j][1] - xs[i][1]
    vx, vy = xs[k][0] - xs[i][0], xs[k][1] - xs[i][1]
    det = ux * vy - uy * vx
    du, dv = ys[j] - ys[i], ys[k] - ys[i]
    a1 = (du * vy - dv * uy) / det
    a2 = (dv * ux - du * vx) / det
    b = ys[i] - a1 * xs[i][0] - a2 * xs[i][1]
    return (a1, a2, b)


def induced_subdivision(X: PointConfig, y: HeightVector, tol_flat=TOL_FLAT_DEFAULT) -> Subdivision:
    """Cells of linearity of the tent function.

    Exact upper facets of the lifted hull are merged whenever two adjacent
    facets carry affine functions agreeing within `tol_flat` relative on the
    coefficient vector.  Merging is resolved by union-find over facet pairs
    taken in lexicographic order.
    """
    if not all(gmpy2.is_finite(v) for v in y.values):
        raise ValueError("heights must be finite")
    tol_flat = Fraction(tol_flat) if not isinstance(tol_flat, Fraction) else tol_flat
    if tol_flat < 0:
        raise ValueError("tol_flat must be nonnegative")
    wp = max(y.precision, 64) + 32
    facets, _ = _upper_facets(X, y, wp)
    d = X.dim
    with prec_ctx(wp):
        tol = to_mpfr(tol_flat, wp)
        parent = list(range(len(facets)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for fa, fb in itertools.combinations(range(len(facets)), 2):
            ca, sa = facets[fa]
            cb, sb = facets[fb]
            if len(set(sa) & set(sb)) < d:
                continue
            mag = max([mpfr(1)] + [abs(c) for c in ca] + [abs(c) for c in cb])
            if all(abs(ca[k] - cb[k]) <= tol * mag for k in range(d + 1)):
                ra, rb = find(fa), find(fb)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

        groups = {}
        for f in range(len(facets)):
            groups.setdefault(find(f), set()).update(facets[f][1])
    cells = tuple(tuple(sorted(g)) for g in groups.values())
    return Subdivision(cells, provenance="lifted-from-heights")


def tent_eval(X: PointConfig, y: HeightVector, t):
    """Tent function value at point t; -inf outside conv(X)."""
    d = X.dim
    t = tuple(t) if isinstance(t, (list, tuple)) else (t,)
    wp = max(y.precision, 64) + 32
    with prec_ctx(wp):
        tm = [to_mpfr(c, wp) for c in t]
        if not _in_hull(X, t, tm, wp):
            return NEG_INF
        facets, _ = _upper_facets(X, y, wp)
        vals = []
        for coeffs, _on in facets:
            vals.append(sum(coeffs[k] * tm[k] for k in range(d)) + coeffs[-1])
        return mpfr(min(vals), y.precision)


def _in_hull(X: PointConfig, t, tm, wp) -> bool:
    exact = all(isinstance(c, (int, Fraction)) for c in t)
    if X.dim == 1:
        xs = [p[0] for p in X.points]
        lo, hi = min(xs), max(xs)
        if exact:
            return lo <= Fraction(t[0]) <= hi
        return to_mpfr(lo, wp) <= tm[0] <= to_mpfr(hi, wp)
    hull = convex_hull_2d(list(range(X.n)), X.points)
    for k in range(len(hull)):
        a = X.points[hull[k]]
        b = X.points[hull[(k + 1) % len(hull)]]
        if exact:
            tf = tuple(Fraction(c) for c in t)
            if _cross(a, b, tf) < 0:
                return False
        else:
            am = [to_mpfr(c, wp) for c in a]
            bm = [to_mpfr(c, wp) for c in b]
            cr = (bm[0] - am[0]) * (tm[1] - am[1]) - (bm[1] - am[1]) * (tm[0] - am[0])
            if cr < 0:
                return False
    return True


def refine_to_triangulation(S: Subdivision, X: PointConfig) -> Triangulation:
    """Triangulation refining S.

    1-D cells split at their interior sample points; 2-D cells fan from the
    lowest-index boundary vertex over the boundary cycle (on-edge sample
    points are kept as fan vertices, strictly interior ones are not).
    """
    simplices = []
    for cell in S.cells:
        if X.dim == 1:
            order = sorted(cell, key=lambda i: X.points[i][0])
            for a, b in zip(order, order[1:]):
                simplices.append(make_simplex(X, (a, b)))
        else:
            cycle = boundary_cycle_2d(cell, X.points)
            apex_pos = min(range(len(cycle)), key=lambda k: cycle[k])
            cycle = cycle[apex_pos:] + cycle[:apex_pos]
            apex = cycle[0]
            for a, b in zip(cycle[1:], cycle[2:]):
                if _cross(X.points[apex], X.points[a], X.points[b]) != 0:
                    simplices.append(make_simplex(X, (apex, a, b)))
    return Triangulation(tuple(simplices))


def maximal_refinement(S: Subdivision, X: PointConfig) -> Triangulation:
    """Triangulation of S in which every carried sample point is a vertex."""
    base = refine_to_triangulation(S, X)
    if X.dim == 1:
        return base
    tris = [list(s.vertices) for s in base.simplices]
    carried = sorted({i for cell in S.cells for i in cell})
    for p in carried:
        if any(p in t for t in tris):
            continue
        pt = X.points[p]
        new_tris = []
        placed = False
        for t in tris:
            lam = barycentric(X, t, pt)
            if lam is None or any(c < 0 for c in lam):
                new_tris.append(t)
                continue
            placed = True
            for k in range(3):
                corner = [t[0], t[1], t[2]]
                corner[k] = p
                if _cross(*[X.points[i] for i in corner]) != 0:
                    new_tris.append(corner)
        if not placed:
            raise ValueError(f"carried point {p} outside every cell triangle")
        tris = new_tris
    return Triangulation(tuple(make_simplex(X, t) for t in tris))


def simplex_volumes(X: PointConfig, T: Triangulation):
    """Exact (euclid, normalized) volume pairs, in simplex order."""
    return [(s.euclid_volume, s.norm_volume) for s in T.simplices]
