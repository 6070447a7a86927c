"""Maximizer for the unconstrained objective w.y - integral exp(tent).

Phase 1 is diminishing-step supergradient ascent: the gradient of the
objective restricted to the triangulation currently induced by the iterate
is a supergradient of the concave objective wherever the two touch, and
heights strictly below the tent contribute their full weight (the integral
ignores them).  Once the induced subdivision survives a stability window,
phase 2 polishes the free heights of its chart by damped Newton on the
reduced critical equations; the result must reproduce its own subdivision
or the outer loop resumes with the improved point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import gmpy2
from gmpy2 import mpfr

from ._num import SingularMatrixError, prec_ctx, solve, to_mpfr, vec_norm2
from .geometry import (
    HeightVector,
    PointConfig,
    Subdivision,
    induced_subdivision,
    maximal_refinement,
    refine_to_triangulation,
)
from .objective import (
    ReducedChart,
    eval_S,
    grad_S,
    integral_exp_tent,
    reduce_objective,
)
from .refine import complete_subdivision, merge_adjacent_pairs


@dataclass
class SolveSettings:
    precision: int = 256
    gtol: Fraction = Fraction(1, 1 << 40)
    tol_flat: Fraction = Fraction(1, 10**8)
    max_iter: int = 4000
    stable_window: int = 25
    step_scale: Fraction = Fraction(1, 2)
    max_outer: int = 40
    newton_steps: int = 60


@dataclass
class SolveResult:
    heights: HeightVector
    subdivision: Subdivision
    chart: ReducedChart
    objective: mpfr
    integral: mpfr
    iterations: int
    converged: bool
    warnings: list = field(default_factory=list)


def supergradient(X: PointConfig, w, y, precision: int, tol_flat):
    """(supergradient of the objective at y, subdivision it came from)."""
    hv = y if isinstance(y, HeightVector) else HeightVector(tuple(y), precision)
    S = induced_subdivision(X, hv, tol_flat)
    T = maximal_refinement(S, X)
    g = grad_S(T, w, hv.values, precision)
    return g, S, T


def objective_value(X: PointConfig, y, precision: int, tol_flat):
    hv = y if isinstance(y, HeightVector) else HeightVector(tuple(y), precision)
    wp = precision + 16
    with prec_ctx(wp):
        wy = sum((to_mpfr(wi, wp) * v for wi, v in zip(X.weights, hv.values)), mpfr(0))
        return mpfr(wy - integral_exp_tent(X, hv, wp, tol_flat), precision)


def polish(chart: ReducedChart, y_free, precision: int,
           gtol=Fraction(1, 1 << 40), max_steps: int = 60):
    """Damped Newton on the reduced critical equations.

    Accepts steps that increase the substituted objective (backtracking
    halvings), stops at gradient norm below gtol.  Returns (free heights,
    converged flag); a singular reduced Hessian returns the input flagged.
    """
    wp = precision + 16
    with prec_ctx(wp):
        cur = [to_mpfr(v, wp) for v in y_free]
        gtol_m = to_mpfr(Fraction(gtol), wp)
        val = chart.reduced_value(cur, wp)
        for _ in range(max_steps):
            g = chart.reduced_grad(cur, wp)
            gn = vec_norm2(g)
            if gn < gtol_m:
                return [mpfr(v, precision) for v in cur], True
            H = chart.reduced_hess(cur, wp)
            try:
                step = solve(H, g)
            except SingularMatrixError:
                return [mpfr(v, precision) for v in cur], False
            # ascent direction: Newton step on grad=0, line-searched on value
            t = mpfr(1)
            improved = False
            for _ in range(40):
                cand = [c - t * s for c, s in zip(cur, step)]
                cval = chart.reduced_value(cand, wp)
                cg = vec_norm2(chart.reduced_grad(cand, wp))
                if cval > val or cg < gn / 2:
                    cur, val = cand, cval
                    improved = True
                    break
                t /= 2
            if not improved:
                return [mpfr(v, precision) for v in cur], False
        g = chart.reduced_grad(cur, wp)
        return [mpfr(v, precision) for v in cur], bool(vec_norm2(g) < gtol_m)


def maximize(X: PointConfig, w=None, settings: Optional[SolveSettings] = None) -> SolveResult:
    """Two-phase maximization of the log-concave MLE objective."""
    settings = settings or SolveSettings()
    w = tuple(Fraction(x) for x in (X.weights if w is None else w))
    prec = settings.precision
    wp = prec + 16
    warnings = []
    with prec_ctx(wp):
        vol = X.hull_volume()
        y = [-gmpy2.log(to_mpfr(vol, wp))] * X.n
        c = to_mpfr(Fraction(settings.step_scale), wp)
        prev_cells = None
        stable = 0
        outer = 0
        iters = 0
        for it in range(1, settings.max_iter + 1):
            iters = it
            g, S, _T = supergradient(X, w, y, wp, settings.tol_flat)
            if S.cells == prev_cells:
                stable += 1
            else:
                stable = 0
                prev_cells = S.cells
            # the stability trigger alone never fires at kink optima, where
            # iterates alternate sides of the subdivision boundary; attempt
            # Newton periodically as well
            if stable >= settings.stable_window or it % settings.stable_window == 0:
                hit, best_y = _try_newton(X, w, S, y, settings)
                if hit is not None:
                    final, chart, S_fin = hit
                    return _finish(X, w, final, chart, S_fin, settings, iters, True, warnings)
                outer += 1
                stable = 0
                prev_cells = None
                if outer >= settings.max_outer:
                    break
                # keep ascending from the best point Newton reached
                y = [to_mpfr(v, wp) for v in best_y]
                continue
            step = c / gmpy2.sqrt(mpfr(it))
            y = [v + step * gv for v, gv in zip(y, g)]
        warnings.append("no self-consistent critical point within iteration budget")
        S = induced_subdivision(X, HeightVector(tuple(y), wp), settings.tol_flat)
        chart = reduce_objective(X, refine_to_triangulation(S, X), S, w)
        return _finish(X, w, y, chart, S, settings, iters, False, warnings)


def _try_newton(X, w, S, y, settings):
    """Polish on the chart of S and of its one-pair merges.

    Returns ((heights, chart, subdivision), best_point) where the first item
    is a self-consistent critical point or None, and best_point is the
    highest-objective iterate seen (for resuming the ascent).
    """
    wp = settings.precision + 16
    S = complete_subdivision(X, S.cells)
    candidates = [S] + [complete_subdivision(X, m.cells)
                        for m in merge_adjacent_pairs(X, S)]
    best_y = list(y)
    best_val = objective_value(X, best_y, wp, settings.tol_flat)
    for Sc in candidates:
        chart = reduce_objective(X, refine_to_triangulation(Sc, X), Sc, w)
        y_free = [y[i] for i in chart.free_indices]
        polished, ok = polish(chart, y_free, wp, settings.gtol, settings.newton_steps)
        lifted = chart.lift(polished, wp)
        val = objective_value(X, lifted, wp, settings.tol_flat)
        if ok:
            S_new = induced_subdivision(
                X, HeightVector(tuple(lifted), wp), settings.tol_flat)
            if S_new.cells == Sc.cells and _transversally_optimal(
                    X, w, S_new, lifted, wp, settings):
                return (lifted, chart, Sc), best_y
        if val > best_val:
            best_val = val
            best_y = lifted
    return None, best_y


def _transversally_optimal(X, w, S, y, wp, settings) -> bool:
    """Reject stratum-critical points that single-pole raises improve.

    Raising one on-tent pole off its cell bumps the tent by the stellar fan
    around it, so the one-sided derivative in +e_j is the gradient component
    of the maximal refinement; positivity means the point is stationary on
    its stratum but not a maximum of the concave objective.
    """
    T = maximal_refinement(S, X)
    g = grad_S(T, w, y, wp)
    tol = to_mpfr(Fraction(1, 1 << 30), wp)
    return all(gj <= tol for gj in g)


def _finish(X, w, y, chart, S, settings, iters, converged, warnings):
    prec = settings.precision
    hv = HeightVector(tuple(mpfr(v, prec) for v in y), prec)
    obj = objective_value(X, hv, prec, settings.tol_flat)
    integ = integral_exp_tent(X, hv, prec, settings.tol_flat)
    return SolveResult(hv, S, chart, obj, integ, iters, converged, warnings)
