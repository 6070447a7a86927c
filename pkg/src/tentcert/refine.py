"""Certifiability testing by binary digit refinement.

Each round evaluates the alpha value over the 3^k neighborhood
y + eps 2^-p, eps in {-1,0,1}^k, keeps the minimum and deepens p while the
best alpha keeps improving.  Candidates are ranked through the first-order
identity DG^-1 G(X+delta) = DG^-1 G(X) + delta (u offsets included), which
is exact enough at offsets of 2^-p to order the neighborhood; any winner
falling below the threshold is re-certified from scratch before the round
may declare success, so accepted certificates never rest on the prediction.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import gmpy2
from gmpy2 import mpfr

from ._num import (
    SingularMatrixError,
    invert,
    mat_vec,
    mpfr_to_decimal,
    norm_inf,
    prec_ctx,
    to_mpfr,
    vec_norm2,
)
from .alphacert import (
    Certificate,
    CertificationError,
    alpha_threshold,
    certify,
    gamma_bound,
    mu,
)
from .geometry import (
    PointConfig,
    Subdivision,
    induced_subdivision,
    maximal_refinement,
    refine_to_triangulation,
)
from .objective import ReducedChart, grad_S, reduce_objective
from .polysys import (
    DEFAULT_TERM_BUDGET,
    PolyExpSystem,
    TermBudgetExceeded,
    bombieri_norm,
    build_reduced_system,
    build_system,
)

logger = logging.getLogger("tentcert.refine")

MAX_FREE_VARS = 12


class RefineInfeasible(RuntimeError):
    """3^k neighborhood enumeration infeasible for this many variables."""


@dataclass
class RefinementState:
    point: list
    p: int
    best_alpha: Optional[mpfr] = None
    stall_count: int = 0
    history: list = field(default_factory=list)


@dataclass
class RefineResult:
    success: bool
    point: tuple
    certificate: Optional[Certificate]
    rounds: int
    digits: int
    history: list
    reason: str


def default_start_digit(decimal_strings) -> int:
    """Trusted binary digit position for decimal input heights.

    Significant decimal digits are converted to binary, backed off by two
    digits, and shifted by the magnitude of the largest height so that the
    result indexes absolute binary positions as Algorithm 1's step does.
    """
    sig = 0
    mag = 0.0
    for s in decimal_strings:
        digits = sum(c.isdigit() for c in s.lstrip("-+0.").replace(".", ""))
        lead = s.lstrip("-+").lstrip("0").lstrip(".")
        sig = max(sig, digits if lead else 1)
        try:
            mag = max(mag, abs(float(s)))
        except ValueError:
            pass
    p = int(sig * math.log2(10)) - 2
    if mag >= 1:
        p -= int(math.log2(mag)) + 1
    return max(p, 1)


def digit_refine(G: PolyExpSystem, y0, p0: int, max_stall: int = 5,
                 p_max: int = 512, precision_floor: int = 256) -> RefineResult:
    """Algorithm-1 style refinement of y0 against the system G.

    Returns a certified point and Certificate on success; otherwise a
    failure report carrying the best alpha reached.  Working precision for
    the alpha evaluations grows as max(precision_floor, 4p).
    """
    k = G.n_y
    if k > MAX_FREE_VARS:
        raise RefineInfeasible(
            f"{k} free heights need 3^{k} candidates per round; cap is {MAX_FREE_VARS}")
    if len(y0) != k:
        raise ValueError("start point length does not match system")

    state = RefinementState(point=list(y0), p=int(p0))
    rounds = 0
    reason = ""
    while True:
        wp = max(precision_floor, 4 * state.p)
        rounds += 1
        with prec_ctx(wp + 16):
            center = [to_mpfr(v, wp) for v in state.point]
            ucen = [gmpy2.exp(v) for v in center]
            X = center + ucen
            try:
                jac = G.jacobian().eval(X, wp)
                inv = invert(jac)
                gval = G.eval(X, wp)
                step = mat_vec(inv, gval)
                pnorm = bombieri_norm(G, wp)
                m = mu(G, X, wp, _inv=inv, _pnorm=pnorm)
                gbound = gamma_bound(G, X, wp, _inv=inv, _pnorm=pnorm, _mu=m)
            except (CertificationError, SingularMatrixError) as e:
                reason = f"round {rounds}: {e}"
                break
            thr = alpha_threshold(wp)
            h = mpfr(2) ** (-state.p)
            dplus = gmpy2.expm1(h)
            dminus = gmpy2.expm1(-h)

            best_eps = None
            best_pred = None
            for eps in itertools.product((-1, 0, 1), repeat=k):
                moved = list(step)
                for i, e in enumerate(eps):
                    if e == 0:
                        continue
                    de = h if e > 0 else -h
                    moved[i] = moved[i] + de
                    moved[k + i] = moved[k + i] + ucen[i] * (dplus if e > 0 else dminus)
                pred = vec_norm2(moved) * gbound
                if best_pred is None or pred < best_pred:
                    best_pred = pred
                    best_eps = eps

            new_point = [c + e * h for c, e in zip(center, best_eps)]
            state.history.append((state.p, best_pred))
            logger.info("round=%d p=%d alpha=%s best=%s", rounds, state.p,
                        mpfr_to_decimal(best_pred, 8),
                        mpfr_to_decimal(state.best_alpha, 8) if state.best_alpha is not None else "-")

            if best_pred < thr:
                cert = certify(G, new_point, wp)
                if cert.certified:
                    cert.digits_appended = state.p
                    state.point = new_point
                    return RefineResult(
                        True, tuple(mpfr(v, wp) for v in new_point), cert,
                        rounds, state.p, state.history, "certified")

            if state.best_alpha is None or best_pred < state.best_alpha:
                state.best_alpha = best_pred
                state.stall_count = 0
            else:
                state.stall_count += 1
            state.point = new_point
            state.p += 1

        if state.stall_count >= max_stall:
            reason = f"no alpha improvement for {max_stall} rounds"
            break
        if state.p > p_max:
            reason = f"digit position exceeded p_max={p_max}"
            break

    best = mpfr_to_decimal(state.best_alpha, 8) if state.best_alpha is not None else "n/a"
    return RefineResult(False, tuple(state.point), None, rounds, state.p,
                        state.history, f"{reason} (best alpha {best})")


# ---------------------------------------------------------------------------
# candidate systems for a height vector


@dataclass
class CandidateSystem:
    """One subdivision hypothesis plus a lazily built system."""

    label: str
    subdivision: Subdivision
    chart: Optional[ReducedChart]     # None for the full maximal system
    config: PointConfig
    term_budget: int = DEFAULT_TERM_BUDGET
    _system: Optional[PolyExpSystem] = None
    _build_error: Optional[str] = None

    @property
    def free_indices(self) -> tuple:
        if self.chart is not None:
            if self.chart.simplicial:
                return self.chart.free_indices
            return tuple(range(self.config.n))
        return tuple(range(self.config.n))

    def project(self, y_full):
        """System variables from a full height vector."""
        return [y_full[i] for i in self.free_indices]

    def residual_vector(self, y_full, precision: int):
        """Reduced gradient at the supplied heights (diagnostic vector)."""
        if self.chart is not None:
            y_free = [y_full[i] for i in self.chart.free_indices]
            return self.chart.reduced_grad(y_free, precision)
        T = maximal_refinement(self.subdivision, self.config)
        return grad_S(T, self.config.weights, y_full, precision)

    def build(self) -> PolyExpSystem:
        if self._system is not None:
            return self._system
        if self._build_error is not None:
            raise TermBudgetExceeded(self._build_error)
        try:
            if self.chart is not None:
                self._system = build_reduced_system(
                    self.chart, label=self.label, term_budget=self.term_budget)
            else:
                T = maximal_refinement(self.subdivision, self.config)
                self._system = build_system(
                    T, self.config.weights, self.config.n,
                    label=self.label, term_budget=self.term_budget)
        except TermBudgetExceeded as e:
            self._build_error = str(e)
            raise
        return self._system


def merge_adjacent_pairs(X: PointConfig, S: Subdivision):
    """Subdivisions obtained by merging one pair of facet-adjacent cells."""
    out = []
    cells = list(S.cells)
    d = X.dim
    for a, b in itertools.combinations(range(len(cells)), 2):
        shared = set(cells[a]) & set(cells[b])
        if len(shared) < d:
            continue
        merged = tuple(sorted(set(cells[a]) | set(cells[b])))
        rest = [c for i, c in enumerate(cells) if i not in (a, b)]
        out.append(Subdivision(tuple(rest + [merged]), provenance="user-supplied"))
    uniq = []
    seen = set()
    for s in sorted(out, key=lambda s: s.cells):
        if s.cells not in seen:
            seen.add(s.cells)
            uniq.append(s)
    return uniq


def complete_subdivision(X: PointConfig, cells) -> Subdivision:
    """User-supplied cells with uncovered sample points absorbed.

    A point listed in no cell is added to the lexicographically first cell
    whose polytope contains it (exact rational containment).
    """
    cells = [tuple(sorted(c)) for c in cells]
    covered = set().union(*map(set, cells)) if cells else set()
    for j in range(X.n):
        if j in covered:
            continue
        home = None
        for i in sorted(range(len(cells)), key=lambda i: cells[i]):
            if _cell_contains(X, cells[i], j):
                home = i
                break
        if home is None:
            raise ValueError(f"point {j} lies in no supplied cell")
        cells[home] = tuple(sorted(set(cells[home]) | {j}))
    return Subdivision(tuple(cells), provenance="user-supplied")


def _cell_contains(X: PointConfig, cell, j) -> bool:
    from .geometry import barycentric, convex_hull_2d, _cross
    p = X.points[j]
    if X.dim == 1:
        xs = [X.points[i][0] for i in cell]
        return min(xs) <= p[0] <= max(xs)
    hull = convex_hull_2d(list(cell), X.points)
    for k in range(len(hull)):
        a = X.points[hull[k]]
        b = X.points[hull[(k + 1) % len(hull)]]
        if _cross(a, b, p) < 0:
            return False
    return True


def candidate_systems(X: PointConfig, w, y0, tol_flat=None,
                      term_budget: int = DEFAULT_TERM_BUDGET):
    """Ordered subdivision hypotheses for certifying heights y0.

    (1) the reduced system of the subdivision induced by y0; (2) reduced
    systems of its one-pair merges; (3) the full system of the maximal
    induced triangulation.  Duplicates (an already-maximal induced
    subdivision makes (1) and (3) coincide) are dropped.
    """
    kwargs = {} if tol_flat is None else {"tol_flat": tol_flat}
    S0 = induced_subdivision(X, y0, **kwargs)
    out = []
    seen = set()

    def add(label, S, chart):
        key = (S.cells, tuple(chart.free_indices) if chart else tuple(range(X.n)))
        if key in seen:
            return
        seen.add(key)
        out.append(CandidateSystem(label, S, chart, X, term_budget))

    chart0 = reduce_objective(X, refine_to_triangulation(S0, X), S0, w)
    add("induced", S0, chart0)
    for i, S in enumerate(merge_adjacent_pairs(X, S0)):
        chart = reduce_objective(X, refine_to_triangulation(S, X), S, w)
        add(f"merge-{i}", S, chart)
    maxT = maximal_refinement(S0, X)
    if frozenset(maxT.vertex_set) == frozenset(range(X.n)) and \
            chart0.simplicial and len(chart0.free_indices) == X.n:
        pass  # induced chart already is the full maximal system
    else:
        add("full", S0, None)
    return out
