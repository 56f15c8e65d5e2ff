"""Finite element assembly of diffusion stiffness and capacity matrices.

Element integrals run batched over all elements with one pass per
quadrature point. The diffusivity is a TensorField evaluated at physical
quadrature points; symmetry and positive definiteness are checked there
unless explicitly disabled. Dirichlet conditions are applied by symmetric
elimination: the assembled operators keep full size and the reduction to
free dofs (with boundary data moved to the right-hand side) happens through
AssembledSystem helpers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import DIRICHLET, NEUMANN, QUAD4, TRI3, Mesh, nearest_node

SYMMETRY_TOL = 1e-14


class AssemblyError(ValueError):
    """Raised for degenerate elements or invalid coefficient data."""


# ---------------------------------------------------------------------------
# quadrature rules and shape functions
# ---------------------------------------------------------------------------

_GAUSS_1D = {
    2: (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0])),
    3: (
        np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]),
        np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
    ),
}

# Symmetric rules on the reference triangle (0,0)-(1,0)-(0,1); weights sum
# to the reference area 1/2.
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
_TRI_RULES = {
    "degree2": (
        np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]),
        np.full(3, 1 / 6),
    ),
    "degree4": (
        np.array(
            [
                [_A1, _A1],
                [1 - 2 * _A1, _A1],
                [_A1, 1 - 2 * _A1],
                [_A2, _A2],
                [1 - 2 * _A2, _A2],
                [_A2, 1 - 2 * _A2],
            ]
        ),
        0.5 * np.array([_W1, _W1, _W1, _W2, _W2, _W2]),
    ),
}


def quadrature_rule(kind: str, level: str = "default") -> tuple[np.ndarray, np.ndarray]:
    """Reference-element quadrature points and weights.

    level "default" integrates the bilinear/linear element matrices; level
    "raised" is one order higher and is used by the error norms.
    """
    if kind == QUAD4:
        n = 2 if level == "default" else 3
        x, w = _GAUSS_1D[n]
        pts = np.array([[a, b] for b in x for a in x])
        wts = np.array([wa * wb for wb in w for wa in w])
        return pts, wts
    if kind == TRI3:
        return _TRI_RULES["degree2" if level == "default" else "degree4"]
    raise AssemblyError(f"unknown element kind {kind!r}")


def shape_functions(kind: str, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape values N (npts, nen) and reference gradients dN (npts, nen, 2)."""
    pts = np.asarray(pts, dtype=float)
    xi, eta = pts[:, 0], pts[:, 1]
    if kind == QUAD4:
        N = 0.25 * np.stack(
            [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)],
            axis=1,
        )
        dN = np.empty((len(pts), 4, 2))
        dN[:, 0] = np.stack([-(1 - eta), -(1 - xi)], axis=1) * 0.25
        dN[:, 1] = np.stack([(1 - eta), -(1 + xi)], axis=1) * 0.25
        dN[:, 2] = np.stack([(1 + eta), (1 + xi)], axis=1) * 0.25
        dN[:, 3] = np.stack([-(1 + eta), (1 - xi)], axis=1) * 0.25
        return N, dN
    if kind == TRI3:
        N = np.stack([1 - xi - eta, xi, eta], axis=1)
        dN = np.broadcast_to(np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]), (len(pts), 3, 2)).copy()
        return N, dN
    raise AssemblyError(f"unknown element kind {kind!r}")


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------


@dataclass
class TensorField:
    """Symmetric positive definite 2x2 diffusivity as a function of position.

    evaluate maps an (k, 2) array of points to (k, 2, 2) tensors.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(np.asarray(points, dtype=float))


def constant_tensor(matrix, name: str = "constant") -> TensorField:
    D = np.asarray(matrix, dtype=float).reshape(2, 2)

    def evaluate(points):
        return np.broadcast_to(D, (len(points), 2, 2))

    return TensorField(evaluate, name)


def isotropic(d: float, name: str = "isotropic") -> TensorField:
    return constant_tensor(np.eye(2) * float(d), name)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_anisotropic(d1: float, d2: float, theta: float, name: str = "rotated") -> TensorField:
    """Constant tensor with principal diffusivities d1, d2 rotated by theta."""
    R = rotation_matrix(theta)
    return constant_tensor(R @ np.diag([d1, d2]) @ R.T, name)


def rotated_field(field: TensorField, theta: float, name: str = "") -> TensorField:
    """Pointwise similarity transform R D(x) R^T of another tensor field."""
    R = rotation_matrix(theta)

    def evaluate(points):
        D = field(points)
        return np.einsum("ij,kjl,ml->kim", R, D, R)

    return TensorField(evaluate, name or f"rotated({field.name})")


def as_tensor_field(obj) -> TensorField:
    if isinstance(obj, TensorField):
        return obj
    return constant_tensor(obj)


def evaluate_scalar_field(f, pts: np.ndarray, t: float | None = None) -> np.ndarray:
    """Evaluate a scalar coefficient: None, a number, or callable(pts, t)."""
    if f is None:
        return np.zeros(len(pts))
    if callable(f):
        return np.broadcast_to(np.asarray(f(pts, t), dtype=float), (len(pts),)).copy()
    return np.full(len(pts), float(f))


def _check_tensor_batch(D: np.ndarray, where: str) -> None:
    scale = np.maximum(1.0, np.abs(D).reshape(len(D), 4).max(axis=1))
    asym = np.abs(D[:, 0, 1] - D[:, 1, 0])
    if np.any(asym > SYMMETRY_TOL * scale):
        k = int(np.argmax(asym / scale))
        raise AssemblyError(f"non-symmetric diffusivity at {where}, element {k}")
    det = D[:, 0, 0] * D[:, 1, 1] - D[:, 0, 1] * D[:, 1, 0]
    if np.any(det <= 0) or np.any(D[:, 0, 0] + D[:, 1, 1] <= 0):
        k = int(np.argmin(det))
        raise AssemblyError(f"diffusivity not positive definite at {where}, element {k}")


# ---------------------------------------------------------------------------
# element and global assembly
# ---------------------------------------------------------------------------


def _batched_element_matrices(
    kind: str,
    coords: np.ndarray,
    tensor: TensorField | None,
    source,
    time: float | None,
    quadrature: str,
    check_tensor: bool,
    need_capacity: bool,
):
    """Stiffness, capacity, and load contributions for all elements at once.

    coords has shape (ne, nen, 2). Any of the three outputs may be None when
    the corresponding coefficient is absent.
    """
    ne, nen = coords.shape[0], coords.shape[1]
    pts, wts = quadrature_rule(kind, quadrature)
    N, dN = shape_functions(kind, pts)

    Ke = np.zeros((ne, nen, nen)) if tensor is not None else None
    Me = np.zeros((ne, nen, nen)) if need_capacity else None
    fe = np.zeros((ne, nen)) if source is not None else None

    for g in range(len(wts)):
        J = np.einsum("eai,aj->eij", coords, dN[g])
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        if np.any(detJ <= 0):
            raise AssemblyError(f"non-positive Jacobian in element {int(np.argmin(detJ))}")
        w = wts[g] * detJ
        if Ke is not None or fe is not None:
            xq = np.einsum("a,eai->ei", N[g], coords)
        if Ke is not None:
            inv = np.empty_like(J)
            inv[:, 0, 0] = J[:, 1, 1]
            inv[:, 0, 1] = -J[:, 0, 1]
            inv[:, 1, 0] = -J[:, 1, 0]
            inv[:, 1, 1] = J[:, 0, 0]
            inv /= detJ[:, None, None]
            grad = np.einsum("ak,eki->eai", dN[g], inv)
            D = np.asarray(tensor(xq), dtype=float)
            if check_tensor:
                _check_tensor_batch(D, f"quadrature point {g}")
            Ke += w[:, None, None] * np.einsum("eai,eij,ebj->eab", grad, D, grad)
        if Me is not None:
            Me += w[:, None, None] * np.outer(N[g], N[g])
        if fe is not None:
            fe += (w * evaluate_scalar_field(source, xq, time))[:, None] * N[g]

    return Ke, Me, fe


def element_stiffness(coords, tensor, quadrature: str = "default", check_tensor: bool = True) -> np.ndarray:
    """Diffusion stiffness matrix of a single element.

    coords is (4, 2) for quad4 or (3, 2) for tri3; tensor is a TensorField
    or a constant 2x2 matrix.
    """
    coords = np.asarray(coords, dtype=float)
    kind = QUAD4 if coords.shape[0] == 4 else TRI3
    Ke, _, _ = _batched_element_matrices(
        kind, coords[None], as_tensor_field(tensor), None, None, quadrature, check_tensor, False
    )
    return Ke[0]


def element_capacity(coords, quadrature: str = "default") -> np.ndarray:
    """Consistent capacity (mass) matrix of a single element."""
    coords = np.asarray(coords, dtype=float)
    kind = QUAD4 if coords.shape[0] == 4 else TRI3
    _, Me, _ = _batched_element_matrices(kind, coords[None], None, None, None, quadrature, False, True)
    return Me[0]


def lump_capacity(M: sp.spmatrix) -> sp.csr_matrix:
    """Row-sum lumping of a consistent capacity matrix (diagnostic only).

    Lumping discards the variational structure of the transient form; it is
    provided for experiments that quantify that loss, never as a default.
    """
    return sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()


@dataclass
class AssembledSystem:
    """Full-size discrete operators plus the Dirichlet bookkeeping.

    K and M keep all dofs; free lists the dofs not fixed by Dirichlet data.
    Reduction to the free block (with prescribed values brought to the
    right-hand side) is done on demand so transient solvers can reuse the
    same structure with time-dependent boundary values.
    """

    mesh: Mesh
    K: sp.csr_matrix
    M: sp.csr_matrix
    f: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    free: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_nodes

    def reduce_matrix(self, A: sp.spmatrix) -> sp.csc_matrix:
        return A.tocsr()[self.free][:, self.free].tocsc()

    def reduce_rhs(self, A: sp.spmatrix, g: np.ndarray, dirichlet_values: np.ndarray | None = None) -> np.ndarray:
        """g restricted to free dofs with Dirichlet columns moved to the rhs."""
        vals = self.dirichlet_values if dirichlet_values is None else dirichlet_values
        out = g[self.free]
        if len(self.dirichlet_nodes):
            out = out - A.tocsr()[self.free][:, self.dirichlet_nodes] @ vals
        return out

    def scatter(self, x_free: np.ndarray, dirichlet_values: np.ndarray | None = None) -> np.ndarray:
        vals = self.dirichlet_values if dirichlet_values is None else dirichlet_values
        full = np.empty(self.n_dofs)
        full[self.free] = x_free
        full[self.dirichlet_nodes] = vals
        return full

    def expand(self, x_free: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter a free-dof vector with a constant on Dirichlet nodes."""
        full = np.full(self.n_dofs, fill)
        full[self.free] = x_free
        return full


def _resolve_dirichlet(mesh: Mesh, dirichlet, time):
    values: dict[int, float] = {}
    for marker in sorted(mesh.markers_with_role(DIRICHLET)):
        if dirichlet is None or marker not in dirichlet:
            raise AssemblyError(f"Dirichlet marker {marker!r} has no prescribed data")
        nodes = mesh.nodes_with_marker(marker)
        vals = evaluate_scalar_field(dirichlet[marker], mesh.nodes[nodes], time)
        for n, v in zip(nodes, vals):
            values[int(n)] = float(v)
    nodes = np.array(sorted(values), dtype=int)
    return nodes, np.array([values[n] for n in nodes])


def assemble_neumann(mesh: Mesh, neumann, time: float | None = None) -> np.ndarray:
    """Boundary load from prescribed normal fluxes, via 2-point edge Gauss.

    Markers with the Neumann role but no data entry get the natural zero
    flux. Data on other markers is rejected.
    """
    f = np.zeros(mesh.n_nodes)
    if not neumann:
        return f
    x1, w1 = _GAUSS_1D[2]
    for marker, data in sorted(neumann.items()):
        if mesh.marker_roles.get(marker) != NEUMANN:
            raise AssemblyError(f"flux data given for non-Neumann marker {marker!r}")
        edges = mesh.edges_with_marker(marker)
        if not len(edges):
            continue
        p0, p1 = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
        half_len = 0.5 * np.linalg.norm(p1 - p0, axis=1)
        for s, w in zip(x1, w1):
            na, nb = 0.5 * (1 - s), 0.5 * (1 + s)
            pts = na * p0 + nb * p1
            h = evaluate_scalar_field(data, pts, time)
            np.add.at(f, edges[:, 0], w * half_len * h * na)
            np.add.at(f, edges[:, 1], w * half_len * h * nb)
    return f


def assemble_load(
    mesh: Mesh,
    source=None,
    neumann=None,
    point_loads=None,
    time: float | None = None,
    quadrature: str = "default",
) -> np.ndarray:
    """Global load vector from volume source, boundary flux, and point rates.

    Point loads are lumped onto the nearest mesh node with the full molar
    rate, which is exact when the source location coincides with a node.
    """
    f = np.zeros(mesh.n_nodes)
    if source is not None:
        coords = mesh.nodes[mesh.elements]
        _, _, fe = _batched_element_matrices(mesh.kind, coords, None, source, time, quadrature, False, False)
        np.add.at(f, mesh.elements.ravel(), fe.ravel())
    f += assemble_neumann(mesh, neumann, time)
    if point_loads:
        for point, rate in point_loads:
            f[nearest_node(mesh, point)] += float(rate)
    return f


def assemble(
    mesh: Mesh,
    tensor,
    source=None,
    neumann=None,
    dirichlet=None,
    point_loads=None,
    time: float | None = None,
    quadrature: str = "default",
    check_tensor: bool = True,
) -> AssembledSystem:
    """Assemble stiffness, capacity, load, and Dirichlet data for a mesh.

    Data fields are scalars or callables f(points, t); initial reduction is
    deferred (see AssembledSystem). Raises AssemblyError for inverted
    elements, non-SPD diffusivity, or missing Dirichlet data.
    """
    tensor = as_tensor_field(tensor)
    coords = mesh.nodes[mesh.elements]
    Ke, Me, _ = _batched_element_matrices(mesh.kind, coords, tensor, None, time, quadrature, check_tensor, True)

    nen = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, nen, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nen)).ravel()
    n = mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    f = assemble_load(mesh, source, neumann, point_loads, time, quadrature)
    dn, dv = _resolve_dirichlet(mesh, dirichlet, time)
    free = np.setdiff1d(np.arange(n), dn)
    return AssembledSystem(mesh=mesh, K=K, M=M, f=f, dirichlet_nodes=dn, dirichlet_values=dv, free=free)


def dump_system(system: AssembledSystem, directory) -> None:
    """Write operators and vectors to disk (Matrix Market + plain text)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(d / "stiffness.mtx", sp.coo_matrix(system.K))
    scipy.io.mmwrite(d / "capacity.mtx", sp.coo_matrix(system.M))
    np.savetxt(d / "load.txt", system.f)
    np.savetxt(d / "free_dofs.txt", system.free, fmt="%d")
    pairs = np.column_stack([system.dirichlet_nodes, system.dirichlet_values])
    np.savetxt(d / "dirichlet.txt", pairs.reshape(-1, 2))
