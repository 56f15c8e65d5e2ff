"""Sparse convex QP solver for box constraints.

Minimizes 0.5 <x, H x> - <g, x> subject to lower <= x <= upper with H
symmetric positive definite. The workhorse is a primal active-set
iteration: a working set of variables pinned at a bound is seeded from the
warm start by clamping every at-bound variable whose gradient points
outward, the remaining free block is solved exactly by sparse LU with
iterative refinement, and the step toward that block minimizer is cut at
the first blocking bound (a ratio test), pinning every variable that hits
its bound there. Once the free block is minimized without blocking,
working variables whose multiplier comes out negative are released and the
cycle repeats. Progress is combinatorial - the working set changes every
round - and never relies on comparing floating-point objective values,
which cannot resolve the shrinking decrements near the minimizer of an
ill-conditioned system. Ties in classification resolve toward the lowest
dof index because all scans run in index order.

Warm-started solves (time stepping) and well-conditioned systems finish in
a handful of rounds. When the bound-active face is nearly degenerate -
many variables with both the value and the multiplier close to zero, as
happens for strongly anisotropic operators - the combinatorial iteration
can churn, so if it has not converged within a fixed round budget the
solver switches to a primal-dual interior-point method (Mehrotra
predictor-corrector on the perturbed complementarity system, one sparse
factorization of H plus a positive diagonal per step) which identifies the
optimal face without combinatorics, and then crosses back over to the
active-set iteration for an exact finish on that face.

Bound components may be +/-inf (detected with isfinite, never encoded as a
large finite float). At the reported solution every active variable sits
exactly on its bound and the multipliers are read off the gradient, so the
complementarity products vanish identically; the stationarity residual on
the free block is whatever the refined direct solve achieved, and it is
reported rather than assumed. With the default tolerance of 100 machine
epsilons (times max(1, |g|_inf)) a solve on a well-scaled system ends with
status "optimal"; if the release loop ever stagnates on a degenerate
working set, the iterate is still the exact minimizer of its final free
block and is returned with status "relaxed" and the achieved residuals on
record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

MACHINE_EPS = float(np.finfo(float).eps)
DEFAULT_TOL = 100.0 * MACHINE_EPS


class SolverError(RuntimeError):
    """Raised when a linear solve or the QP iteration fails.

    If the QP iteration hit its cap, the best iterate is attached as the
    `solution` attribute with its achieved residuals.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class QpSolution:
    """Solution of a box QP with its optimality certificates.

    lam_lo and lam_up are the multipliers of the lower and upper bounds.
    residuals records the achieved KKT quantities: stationarity
    |Hx - g - lam_lo + lam_up|_inf, dual (most negative multiplier, clamped
    at zero), complementarity (largest |<x - lower, lam_lo>| and
    |<upper - x, lam_up>|), feasibility (largest bound overshoot), and
    scale, the reference max(1, |g|_inf) that relative tolerances and the
    reported residuals should be compared against.
    """

    x: np.ndarray
    lam_lo: np.ndarray
    lam_up: np.ndarray
    iterations: int
    objective: float
    residuals: dict[str, float] = field(default_factory=dict)
    status: str = "optimal"


def _as_csc(H) -> sp.csc_matrix:
    if sp.issparse(H):
        return H.tocsc()
    return sp.csc_matrix(np.asarray(H, dtype=float))


def _factor(H: sp.csc_matrix):
    try:
        return spla.splu(H)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc


def _refined_solve(lu, A: sp.csc_matrix, rhs: np.ndarray, target: float, max_refine: int = 6) -> np.ndarray:
    """Direct solve plus iterative refinement until the residual stalls."""
    x = lu.solve(rhs)
    best_x, best_r = x, np.linalg.norm(rhs - A @ x, np.inf)
    for _ in range(max_refine):
        if best_r <= target:
            break
        x = best_x + lu.solve(rhs - A @ best_x)
        r = np.linalg.norm(rhs - A @ x, np.inf)
        if r >= best_r:
            break
        best_x, best_r = x, r
    return best_x


def solve_unconstrained(H, g, tol: float = 1e-10) -> np.ndarray:
    """Solve H x = g by sparse LU, refined to |Hx-g|_inf <= tol*max(1,|g|_inf)."""
    Hc = _as_csc(H)
    g = np.asarray(g, dtype=float)
    if Hc.shape[0] == 0:
        return np.zeros(0)
    target = tol * max(1.0, np.linalg.norm(g, np.inf))
    x = _refined_solve(_factor(Hc), Hc, g, target)
    resid = np.linalg.norm(g - Hc @ x, np.inf)
    if not np.isfinite(resid) or resid > target:
        raise SolverError(f"unconstrained solve residual {resid:.3e} exceeds target {target:.3e}")
    return x


def _broadcast_bound(b, n: int, default: float) -> np.ndarray:
    if b is None:
        return np.full(n, default)
    arr = np.asarray(b, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"bound shape {arr.shape} does not match problem size {n}")
    return arr.copy()


def solve_box_qp(
    H,
    g,
    lower=None,
    upper=None,
    x0: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
) -> QpSolution:
    """Minimize 0.5 <x,Hx> - <g,x> over the box [lower, upper].

    H must be symmetric positive definite (sparse or dense). Bounds may be
    scalars, vectors, or None for unbounded; x0 is an optional warm start
    and is clipped into the box. Raises SolverError if the iteration cap is
    reached, with the best iterate attached.
    """
    Hc = _as_csc(H)
    g = np.asarray(g, dtype=float)
    n = len(g)
    lo = _broadcast_bound(lower, n, -np.inf)
    up = _broadcast_bound(upper, n, np.inf)
    if np.any(lo > up):
        raise ValueError("lower bound exceeds upper bound")
    if n == 0:
        return QpSolution(
            x=np.zeros(0), lam_lo=np.zeros(0), lam_up=np.zeros(0), iterations=0, objective=0.0,
            residuals={"stationarity": 0.0, "dual": 0.0, "complementarity": 0.0, "feasibility": 0.0, "scale": 1.0},
        )

    scale = max(1.0, np.linalg.norm(g, np.inf))
    kkt_target = tol * scale
    solve_target = 0.25 * kkt_target
    # Working variables whose multiplier dips below the release threshold are
    # freed again; violations smaller than that sit inside the final KKT
    # budget, so chasing them would only make the working set flicker.
    release_tol = 0.5 * kkt_target
    fixed = lo == up
    if max_iter is None:
        max_iter = max(200, n)

    if x0 is not None:
        x = np.clip(np.asarray(x0, dtype=float), lo, up)
    else:
        x = np.clip(_refined_solve(_factor(Hc), Hc, g, solve_target), lo, up)

    # Seed the working set: at-bound variables whose gradient points outward.
    grad = Hc @ x - g
    w_lo = (x <= lo) & (grad > 0.0) & ~fixed
    w_up = (x >= up) & (grad < 0.0) & ~fixed

    # Phase 1: active-set rounds. Warm starts and benign systems finish
    # here; the budget stops combinatorial churn on degenerate faces.
    budget = min(max_iter, _ACTIVE_SET_BUDGET)
    used, outcome = _active_set_rounds(
        Hc, g, lo, up, fixed, x, w_lo, w_up, solve_target, release_tol, budget,
    )
    if outcome != "converged" and used < max_iter:
        # Phase 2: interior-point rescue identifies the optimal face of a
        # degenerate problem without combinatorics, then the active-set
        # iteration crosses over for an exact finish on that face.
        used += _interior_point(Hc, g, lo, up, fixed, x, w_lo, w_up, scale)
        if used < max_iter:
            more, outcome = _active_set_rounds(
                Hc, g, lo, up, fixed, x, w_lo, w_up, solve_target, release_tol,
                max_iter - used,
            )
            used += more

    grad = Hc @ x - g
    at_lo = (x <= lo) | fixed
    at_up = (x >= up) | fixed
    if outcome is None:
        sol = _finalize(x, grad, at_lo, at_up, fixed, lo, up, used, kkt_target, scale, g, Hc)
        sol.status = "iteration_cap"
        raise SolverError(f"box QP did not converge within {max_iter} iterations", solution=sol)
    return _finalize(x, grad, at_lo, at_up, fixed, lo, up, used, kkt_target, scale, g, Hc)


_ACTIVE_SET_BUDGET = 40
_IP_MAX_ROUNDS = 100
_IP_BOUNDARY_FRACTION = 0.9995


def _active_set_rounds(Hc, g, lo, up, fixed, x, w_lo, w_up, solve_target, release_tol, budget):
    """Run primal active-set rounds in place; see the module docstring.

    Returns (rounds_used, outcome) where outcome is "converged" when the
    KKT conditions hold to within the release threshold, "stalled" when
    the worst dual violation stopped shrinking across successive subspace
    optima (degenerate release cycle), or None when the budget ran out
    first. x, w_lo and w_up are updated in place. Releases start in bulk;
    once the violation stagnates they fall back to one variable at a time,
    whose re-solve moves that variable strictly inward, before giving up.
    """
    patience = 0
    best_viol = np.inf
    release_all = True
    for it in range(1, budget + 1):
        active = w_lo | w_up | fixed
        free = np.flatnonzero(~active)
        at_optimum = True
        if len(free):
            xa = np.where(active, x, 0.0)
            Hff = Hc[free][:, free]
            rhs = (g - Hc @ xa)[free] if active.any() else g[free]
            target_f = _refined_solve(_factor(Hff), Hff, rhs, solve_target)

            # Ratio test: longest feasible fraction of the step toward the
            # free-block minimizer before some free variable hits a bound.
            x_f = x[free]
            p_f = target_f - x_f
            ratios = np.full(len(free), np.inf)
            move_dn = (p_f < 0.0) & np.isfinite(lo[free])
            move_up = (p_f > 0.0) & np.isfinite(up[free])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios[move_dn] = (lo[free][move_dn] - x_f[move_dn]) / p_f[move_dn]
                ratios[move_up] = (up[free][move_up] - x_f[move_up]) / p_f[move_up]
            alpha = float(ratios.min(initial=np.inf))
            if alpha < 1.0:
                # Cut the step at the first blocking bound and pin every
                # variable that reaches its bound there (exact snap; the
                # small tolerance groups near-ties into one round).
                at_optimum = False
                alpha = max(alpha, 0.0)
                blocked = ratios <= alpha + 1e-12
                x[free] = x_f + alpha * p_f
                hit_lo = blocked & move_dn
                hit_up = blocked & move_up
                x[free[hit_lo]] = lo[free[hit_lo]]
                x[free[hit_up]] = up[free[hit_up]]
                w_lo[free[hit_lo]] = True
                w_up[free[hit_up]] = True
                np.clip(x, lo, up, out=x)
            else:
                # Unblocked: land exactly on the free-block minimizer. The
                # clip only guards against roundoff grazing a bound.
                x[free] = np.clip(target_f, lo[free], up[free])

        if at_optimum:
            # Free block minimized; release working variables with negative
            # multipliers (gradient pointing into the feasible box).
            grad = Hc @ x - g
            viol_lo = np.where(w_lo, -grad, 0.0)
            viol_up = np.where(w_up, grad, 0.0)
            viol = max(float(viol_lo.max(initial=0.0)), float(viol_up.max(initial=0.0)))
            if viol <= release_tol:
                return it, "converged"
            if viol < 0.9 * best_viol:
                patience = 0
            else:
                patience += 1
                if release_all and patience >= 2:
                    # Bulk releases are bouncing back; go one at a time.
                    release_all = False
                    patience = 0
                elif patience >= 4:
                    return it, "stalled"
            best_viol = min(best_viol, viol)
            if release_all:
                w_lo &= ~(viol_lo > release_tol)
                w_up &= ~(viol_up > release_tol)
            else:
                worst = int(np.argmax(np.maximum(viol_lo, viol_up)))
                w_lo[worst] = False
                w_up[worst] = False
    return budget, None


def _interior_point(Hc, g, lo, up, fixed, x, w_lo, w_up, scale):
    """Primal-dual interior-point pass; writes its face estimate in place.

    Runs a Mehrotra predictor-corrector iteration on the box QP, then snaps
    the variables it classifies as bound-active onto their bounds and
    rewrites x, w_lo, w_up accordingly. Returns the number of rounds spent
    (one sparse factorization each). The caller is expected to polish the
    returned face with active-set rounds.
    """
    n = len(g)
    nf = np.flatnonzero(~fixed)
    if len(nf) == 0:
        return 0
    if fixed.any():
        # Eliminate the pinned rows once and work on the genuine unknowns.
        xs_fix = np.where(fixed, lo, 0.0)
        Hr = Hc[nf][:, nf].tocsc()
        gr = (g - Hc @ xs_fix)[nf]
        lor, upr = lo[nf], up[nf]
        xr = x[nf].copy()
    else:
        Hr, gr, lor, upr, xr = Hc, g, lo, up, x.copy()

    has_lo = np.isfinite(lor)
    has_up = np.isfinite(upr)
    m = int(has_lo.sum()) + int(has_up.sum())
    if m == 0:
        return 0

    # Strictly interior start near the current iterate.
    span = upr - lor
    pad = np.where(
        np.isfinite(span),
        np.minimum(0.25 * np.where(np.isfinite(span), span, 1.0), 1e-2),
        1e-2,
    )
    xr = np.where(has_lo, np.maximum(xr, lor + pad), xr)
    xr = np.where(has_up, np.minimum(xr, upr - pad), xr)
    zl = np.where(has_lo, 0.1 * scale, 0.0)
    zu = np.where(has_up, 0.1 * scale, 0.0)

    rounds = 0
    for _ in range(_IP_MAX_ROUNDS):
        rounds += 1
        sl = np.where(has_lo, xr - lor, 1.0)
        su = np.where(has_up, upr - xr, 1.0)
        mu = (float(zl @ np.where(has_lo, sl, 0.0)) + float(zu @ np.where(has_up, su, 0.0))) / m
        r_d = Hr @ xr - gr - zl + zu
        rd_norm = float(np.linalg.norm(r_d, np.inf))
        if mu <= 1e-16 * scale and rd_norm <= 1e-12 * scale:
            break
        sigma_diag = np.where(has_lo, zl / sl, 0.0) + np.where(has_up, zu / su, 0.0)
        A = (Hr + sp.diags(sigma_diag)).tocsc()
        lu = _factor(A)

        # Affine predictor probes how far pure Newton descent can go.
        base = gr - Hr @ xr
        dx_aff = lu.solve(base)
        dzl_aff = np.where(has_lo, -zl - (zl / sl) * dx_aff, 0.0)
        dzu_aff = np.where(has_up, -zu + (zu / su) * dx_aff, 0.0)
        alpha_aff = _boundary_step(sl, dx_aff, has_lo, 1.0)
        alpha_aff = _boundary_step(su, -dx_aff, has_up, alpha_aff)
        alpha_aff = _boundary_step(zl, dzl_aff, has_lo, alpha_aff)
        alpha_aff = _boundary_step(zu, dzu_aff, has_up, alpha_aff)
        mu_aff = (
            float((zl + alpha_aff * dzl_aff) @ np.where(has_lo, sl + alpha_aff * dx_aff, 0.0))
            + float((zu + alpha_aff * dzu_aff) @ np.where(has_up, su - alpha_aff * dx_aff, 0.0))
        ) / m
        sigma = min(max((max(mu_aff, 0.0) / mu) ** 3, 1e-8), 1.0 - 1e-8)
        tau = sigma * mu

        # Corrector recenters and absorbs the predictor's curvature term.
        corr_l = np.where(has_lo, dx_aff * dzl_aff, 0.0)
        corr_u = np.where(has_up, -dx_aff * dzu_aff, 0.0)
        rhs = (
            base
            + np.where(has_lo, (tau - corr_l) / sl, 0.0)
            - np.where(has_up, (tau - corr_u) / su, 0.0)
        )
        dx = lu.solve(rhs)
        dzl = np.where(has_lo, (tau - corr_l) / sl - zl - (zl / sl) * dx, 0.0)
        dzu = np.where(has_up, (tau - corr_u) / su - zu + (zu / su) * dx, 0.0)
        alpha = _boundary_step(sl, dx, has_lo, 1.0)
        alpha = _boundary_step(su, -dx, has_up, alpha)
        alpha = _boundary_step(zl, dzl, has_lo, alpha)
        alpha = _boundary_step(zu, dzu, has_up, alpha)
        alpha *= _IP_BOUNDARY_FRACTION
        if alpha <= 1e-12:
            break
        xr = xr + alpha * dx
        zl = zl + alpha * dzl
        zu = zu + alpha * dzu

    # Classify the face: a bound is active where the multiplier dominates
    # the slack (both measured against their natural scales).
    xscale = max(1.0, float(np.linalg.norm(xr, np.inf)))
    sl = np.where(has_lo, xr - lor, np.inf)
    su = np.where(has_up, upr - xr, np.inf)
    act_lo = has_lo & (zl * xscale > sl * scale)
    act_up = has_up & (zu * xscale > su * scale) & ~act_lo
    xr = np.where(act_lo, lor, xr)
    xr = np.where(act_up, upr, xr)
    np.clip(xr, lor, upr, out=xr)

    x[nf] = xr
    w_lo[:] = False
    w_up[:] = False
    w_lo[nf] = act_lo
    w_up[nf] = act_up
    return rounds


def _boundary_step(v, dv, mask, alpha):
    """Largest step in [0, alpha] keeping masked entries of v + a*dv positive."""
    shrink = mask & (dv < 0.0)
    if not shrink.any():
        return alpha
    return float(min(alpha, np.min(v[shrink] / -dv[shrink])))


def _finalize(x, grad, at_lo, at_up, fixed, lo, up, iterations, kkt_target, scale, g, Hc) -> QpSolution:
    lam_lo = np.where(at_lo, np.where(fixed, np.maximum(grad, 0.0), grad), 0.0)
    lam_up = np.where(at_up, np.where(fixed, np.maximum(-grad, 0.0), -grad), 0.0)
    # Multipliers in the tiny negative band are rounded up to keep dual
    # feasibility exact; the stationarity report below absorbs the change.
    np.maximum(lam_lo, 0.0, out=lam_lo)
    np.maximum(lam_up, 0.0, out=lam_up)
    stat = float(np.linalg.norm(grad - lam_lo + lam_up, np.inf)) if len(x) else 0.0
    # Positive multipliers only occur at finite bounds, so the masked
    # products below never touch the infinite bound entries.
    mlo, mup = lam_lo > 0, lam_up > 0
    comp_lo = float(abs(np.sum((x[mlo] - lo[mlo]) * lam_lo[mlo])))
    comp_up = float(abs(np.sum((up[mup] - x[mup]) * lam_up[mup])))
    feas = float(max(np.max(lo - x, initial=0.0), np.max(x - up, initial=0.0)))
    residuals = {
        "stationarity": stat,
        "dual": float(max(0.0, -min(lam_lo.min(initial=0.0), lam_up.min(initial=0.0)))),
        "complementarity": max(comp_lo, comp_up),
        "feasibility": feas,
        "scale": float(scale),
    }
    status = "optimal" if stat <= kkt_target else "relaxed"
    obj = 0.5 * float(x @ (Hc @ x)) - float(g @ x)
    return QpSolution(
        x=x.copy(), lam_lo=lam_lo, lam_up=lam_up, iterations=iterations,
        objective=obj, residuals=residuals, status=status,
    )


# ---------------------------------------------------------------------------
# on-disk round trip
# ---------------------------------------------------------------------------


def save_problem(directory, H, g, lower, upper, x0=None) -> None:
    """Write a box QP to a directory (Matrix Market matrix, text vectors)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(d / "hessian.mtx", sp.coo_matrix(_as_csc(H)))
    n = len(np.asarray(g))
    np.savetxt(d / "linear.txt", np.asarray(g, dtype=float))
    np.savetxt(d / "lower.txt", _broadcast_bound(lower, n, -np.inf))
    np.savetxt(d / "upper.txt", _broadcast_bound(upper, n, np.inf))
    if x0 is not None:
        np.savetxt(d / "warm_start.txt", np.asarray(x0, dtype=float))


def load_problem(directory) -> dict:
    d = Path(directory)
    problem = {
        "H": scipy.io.mmread(d / "hessian.mtx").tocsc(),
        "g": np.atleast_1d(np.loadtxt(d / "linear.txt")),
        "lower": np.atleast_1d(np.loadtxt(d / "lower.txt")),
        "upper": np.atleast_1d(np.loadtxt(d / "upper.txt")),
    }
    warm = d / "warm_start.txt"
    if warm.exists():
        problem["x0"] = np.atleast_1d(np.loadtxt(warm))
    return problem


def save_solution(directory, sol: QpSolution) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    np.savetxt(d / "solution.txt", sol.x)
    np.savetxt(d / "multiplier_lower.txt", sol.lam_lo)
    np.savetxt(d / "multiplier_upper.txt", sol.lam_up)
    with open(d / "summary.txt", "w") as f:
        f.write(f"status = {sol.status}\n")
        f.write(f"iterations = {sol.iterations}\n")
        f.write(f"objective = {sol.objective!r}\n")
        for key in sorted(sol.residuals):
            f.write(f"residual_{key} = {sol.residuals[key]!r}\n")


def load_solution(directory) -> QpSolution:
    d = Path(directory)
    meta: dict[str, str] = {}
    with open(d / "summary.txt") as f:
        for line in f:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    residuals = {k.removeprefix("residual_"): float(v) for k, v in meta.items() if k.startswith("residual_")}
    return QpSolution(
        x=np.atleast_1d(np.loadtxt(d / "solution.txt")),
        lam_lo=np.atleast_1d(np.loadtxt(d / "multiplier_lower.txt")),
        lam_up=np.atleast_1d(np.loadtxt(d / "multiplier_upper.txt")),
        iterations=int(meta["iterations"]),
        objective=float(meta["objective"]),
        residuals=residuals,
        status=meta["status"],
    )
