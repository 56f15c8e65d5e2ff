"""Steady and transient scalar solves under three formulations.

"galerkin" solves the unmodified discrete system, "clipped" clamps the
Galerkin result into the bounds afterwards, and "constrained" solves the
bound-constrained QP whose objective is the discrete energy, which is the
only variant that satisfies the bounds while still solving an optimality
system. Transient problems use backward Euler: each step minimizes the
energy of (M/dt + K) with linear term f(t_next) + M c_prev / dt, so the
consistent capacity matrix appears on both sides and no step restriction
applies. Boundary data is evaluated at the new time level and the QP of
each step warm-starts from the previous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import AssembledSystem
from .boxqp import QpSolution, solve_box_qp, solve_unconstrained

GALERKIN = "galerkin"
CLIPPED = "clipped"
CONSTRAINED = "constrained"
FORMULATIONS = (GALERKIN, CLIPPED, CONSTRAINED)


@dataclass(frozen=True)
class Bounds:
    """Closed interval the field must stay in; either side may be infinite."""

    lower: float = 0.0
    upper: float = math.inf

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"empty bound interval [{self.lower}, {self.upper}]")

    def clip(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)

    def contains(self, values: np.ndarray, slack: float = 0.0) -> bool:
        return bool(np.all(values >= self.lower - slack) and np.all(values <= self.upper + slack))


UNBOUNDED = Bounds(-math.inf, math.inf)
NONNEGATIVE = Bounds(0.0, math.inf)


@dataclass
class NodalField:
    """Nodal values of one scalar quantity with provenance tags."""

    values: np.ndarray
    quantity: str
    formulation: str
    time: float | None = None


@dataclass
class TransientResult:
    """Backward Euler history: one field per time level, t=0 first."""

    times: np.ndarray
    fields: list[NodalField]
    qp_solutions: list[QpSolution | None]

    @property
    def final(self) -> NodalField:
        return self.fields[-1]


def _check_formulation(formulation: str) -> None:
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")


def _check_dirichlet_in_bounds(values: np.ndarray, bounds: Bounds) -> None:
    if len(values) and not bounds.contains(values, slack=1e-12):
        raise ValueError("Dirichlet data violates the requested bounds")


def _solve_reduced(
    A_ff: sp.csc_matrix,
    rhs: np.ndarray,
    bounds: Bounds,
    formulation: str,
    tol: float | None,
    warm_start: np.ndarray | None,
):
    """Free-dof solve under one formulation; returns (values, qp or None)."""
    if formulation == CONSTRAINED:
        kwargs = {} if tol is None else {"tol": tol}
        qp = solve_box_qp(A_ff, rhs, bounds.lower, bounds.upper, x0=warm_start, **kwargs)
        return qp.x, qp
    x = solve_unconstrained(A_ff, rhs) if tol is None else solve_unconstrained(A_ff, rhs, tol=tol)
    if formulation == CLIPPED:
        x = bounds.clip(x)
    return x, None


def solve_steady(
    system: AssembledSystem,
    bounds: Bounds = NONNEGATIVE,
    formulation: str = CONSTRAINED,
    quantity: str = "concentration",
    f: np.ndarray | None = None,
    tol: float | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[NodalField, QpSolution | None]:
    """Solve the steady diffusion system K c = f under one formulation.

    The steady problem needs a non-empty Dirichlet set; for clipped and
    constrained formulations the returned field satisfies the bounds
    exactly (boundary data is validated against them).
    """
    _check_formulation(formulation)
    if len(system.dirichlet_nodes) == 0:
        raise ValueError("steady problem requires at least one Dirichlet node")
    load = system.f if f is None else f
    K_ff = system.reduce_matrix(system.K)
    rhs = system.reduce_rhs(system.K, load)
    if formulation != GALERKIN:
        _check_dirichlet_in_bounds(system.dirichlet_values, bounds)
    x, qp = _solve_reduced(K_ff, rhs, bounds, formulation, tol, warm_start)
    values = system.scatter(x)
    if formulation == CLIPPED:
        values = bounds.clip(values)
    return NodalField(values=values, quantity=quantity, formulation=formulation), qp


def solve_transient(
    system: AssembledSystem,
    f_of_t: Callable[[float], np.ndarray],
    initial: np.ndarray,
    bounds: Bounds = NONNEGATIVE,
    formulation: str = CONSTRAINED,
    dt: float = 0.1,
    n_steps: int = 10,
    dirichlet_of_t: Callable[[float], np.ndarray] | None = None,
    quantity: str = "concentration",
    tol: float | None = None,
    t0: float = 0.0,
) -> TransientResult:
    """March the capacity-stiffness system with backward Euler.

    f_of_t(t) returns the full assembled load at time t; dirichlet_of_t(t)
    returns prescribed values on system.dirichlet_nodes (defaults to the
    values stored in the system). The initial field is taken as given at
    t0 and is not modified, so it should satisfy the boundary data there.
    """
    _check_formulation(formulation)
    if dt <= 0:
        raise ValueError("time step must be positive")
    if n_steps < 1:
        raise ValueError("need at least one time step")
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (system.n_dofs,):
        raise ValueError("initial field size does not match the system")

    A = (system.M / dt + system.K).tocsr()
    A_ff = system.reduce_matrix(A)
    times = t0 + dt * np.arange(n_steps + 1)
    fields = [NodalField(values=initial.copy(), quantity=quantity, formulation=formulation, time=float(times[0]))]
    qp_solutions: list[QpSolution | None] = [None]

    c_prev = initial.copy()
    warm = None
    for step in range(1, n_steps + 1):
        t = float(times[step])
        dvals = system.dirichlet_values if dirichlet_of_t is None else np.asarray(dirichlet_of_t(t), dtype=float)
        if formulation != GALERKIN:
            _check_dirichlet_in_bounds(dvals, bounds)
        g_full = f_of_t(t) + system.M @ c_prev / dt
        rhs = system.reduce_rhs(A, g_full, dirichlet_values=dvals)
        x, qp = _solve_reduced(A_ff, rhs, bounds, formulation, tol, warm)
        values = system.scatter(x, dirichlet_values=dvals)
        if formulation == CLIPPED:
            values = bounds.clip(values)
        fields.append(NodalField(values=values, quantity=quantity, formulation=formulation, time=t))
        qp_solutions.append(qp)
        c_prev = values
        warm = values[system.free]
    return TransientResult(times=times, fields=fields, qp_solutions=qp_solutions)
