"""Error norms, bound-violation statistics, and convergence rates."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .assembly import quadrature_rule, shape_functions
from .mesh import Mesh
from .solvers import Bounds


def _element_quadrature(mesh: Mesh, values: np.ndarray):
    """Quadrature data one order above assembly, batched over elements.

    Yields nothing; returns (weights*detJ, physical points, uh, grad_uh)
    stacked over all quadrature points of all elements.
    """
    coords = mesh.nodes[mesh.elements]
    nodal = values[mesh.elements]
    pts, wts = quadrature_rule(mesh.kind, "raised")
    N, dN = shape_functions(mesh.kind, pts)
    w_all, x_all, u_all, g_all = [], [], [], []
    for g in range(len(wts)):
        J = np.einsum("eai,aj->eij", coords, dN[g])
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        inv[:, 1, 1] = J[:, 0, 0]
        inv /= detJ[:, None, None]
        grad = np.einsum("ak,eki->eai", dN[g], inv)
        w_all.append(wts[g] * detJ)
        x_all.append(np.einsum("a,eai->ei", N[g], coords))
        u_all.append(nodal @ N[g])
        g_all.append(np.einsum("ea,eai->ei", nodal, grad))
    return (np.concatenate(w_all), np.vstack(x_all), np.concatenate(u_all), np.vstack(g_all))


def l2_error(mesh: Mesh, values: np.ndarray, exact) -> float:
    """L2 norm of (interpolant - exact), exact given as callable(points)."""
    w, x, uh, _ = _element_quadrature(mesh, np.asarray(values, dtype=float))
    diff = uh - np.asarray(exact(x), dtype=float)
    return float(np.sqrt(np.sum(w * diff**2)))


def h1_seminorm_error(mesh: Mesh, values: np.ndarray, exact_gradient) -> float:
    """H1 seminorm of the error; exact_gradient maps (k,2) points to (k,2)."""
    w, x, _, gh = _element_quadrature(mesh, np.asarray(values, dtype=float))
    diff = gh - np.asarray(exact_gradient(x), dtype=float)
    return float(np.sqrt(np.sum(w * np.sum(diff**2, axis=1))))


def l2_norm(mesh: Mesh, values: np.ndarray) -> float:
    w, _, uh, _ = _element_quadrature(mesh, np.asarray(values, dtype=float))
    return float(np.sqrt(np.sum(w * uh**2)))


def integrated_concentration_over_y(
    mesh: Mesh, values: np.ndarray, x_samples: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid integrals of a nodal field along mesh columns.

    Requires a structured mesh. Returns (x locations, integrals); with
    x_samples given, only the nearest mesh columns are evaluated.
    """
    if mesh.shape is None:
        raise ValueError("column integrals need a structured mesh")
    nx, ny = mesh.shape
    grid = np.asarray(values, dtype=float).reshape(ny, nx)
    xs = mesh.nodes[:nx, 0]
    ys = mesh.nodes[::nx, 1]
    if x_samples is None:
        cols = np.arange(nx)
    else:
        cols = np.unique([int(np.argmin(np.abs(xs - x))) for x in np.atleast_1d(x_samples)])
    integrals = np.trapezoid(grid[:, cols], ys, axis=0)
    return xs[cols], integrals


def violation_stats(values: np.ndarray, bounds: Bounds = Bounds(0.0, np.inf)) -> dict[str, float]:
    """Summary of how far a nodal field strays below its lower bound.

    min_over_max_percent is 100*min/max (the signed undershoot relative to
    the field scale); percent_nodes_violating counts nodes strictly below
    the lower bound.
    """
    v = np.asarray(values, dtype=float)
    vmin = float(v.min())
    vmax = float(v.max())
    ratio = 100.0 * vmin / vmax if vmax != 0 else float("nan")
    violating = int(np.count_nonzero(v < bounds.lower))
    return {
        "min": vmin,
        "max": vmax,
        "min_over_max_percent": ratio,
        "percent_nodes_violating": 100.0 * violating / len(v),
        "nodes_violating": violating,
    }


@dataclass
class ConvergenceFit:
    """Log-log least squares fit of errors against mesh size."""

    slope: float
    pairwise: np.ndarray

    def __repr__(self):
        pairs = ", ".join(f"{p:.3f}" for p in self.pairwise)
        return f"ConvergenceFit(slope={self.slope:.3f}, pairwise=[{pairs}])"


def convergence_rates(hs, errors) -> ConvergenceFit:
    """Observed order from errors on a sequence of refined meshes."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(hs) != len(errors) or len(hs) < 2:
        raise ValueError("need matching h and error sequences of length >= 2")
    if np.any(errors <= 0) or np.any(hs <= 0):
        raise ValueError("rates need positive h and error values")
    lh, le = np.log(hs), np.log(errors)
    slope = float(np.polyfit(lh, le, 1)[0])
    pairwise = np.diff(le) / np.diff(lh)
    return ConvergenceFit(slope=slope, pairwise=pairwise)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """CSV writer with deterministic float formatting (17 significant digits)."""

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
