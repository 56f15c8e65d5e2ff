"""Structured 2D meshes of bilinear quadrilaterals or linear triangles.

Nodes are laid out row-major on a uniform lattice (x varies fastest).
Boundary edges carry string markers; a marker-to-role map declares each
marker as Dirichlet or Neumann. Triangular meshes split every lattice
cell along the diagonal from the lower-left to the upper-right corner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

QUAD4 = "quad4"
TRI3 = "tri3"
KINDS = (QUAD4, TRI3)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
ROLES = (DIRICHLET, NEUMANN)

SIDE_MARKERS = ("left", "right", "bottom", "top")


class MeshError(ValueError):
    """Raised for invalid mesh parameters or inconsistent marker data."""


@dataclass
class Mesh:
    """Conforming 2D mesh with marked boundary edges.

    Attributes:
        kind: element type, "quad4" or "tri3".
        nodes: (n_nodes, 2) coordinates.
        elements: (n_elements, 4) or (n_elements, 3) connectivity,
            counterclockwise.
        boundary_edges: (n_edges, 2) node index pairs on the boundary.
        edge_markers: marker string per boundary edge.
        marker_roles: marker -> "dirichlet" | "neumann".
        shape: (nx, ny) node lattice dimensions for structured meshes,
            None otherwise.
    """

    kind: str
    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    edge_markers: np.ndarray
    marker_roles: dict[str, str]
    shape: tuple[int, int] | None = None

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def edges_with_marker(self, marker: str) -> np.ndarray:
        """Boundary edges tagged with the given marker, as an (m, 2) array."""
        mask = self.edge_markers == marker
        return self.boundary_edges[mask]

    def nodes_with_marker(self, marker: str) -> np.ndarray:
        """Sorted unique node indices on edges tagged with the marker."""
        return np.unique(self.edges_with_marker(marker))

    def markers_with_role(self, role: str) -> list[str]:
        return [m for m, r in self.marker_roles.items() if r == role]

    def dirichlet_nodes(self) -> np.ndarray:
        """Sorted unique node indices on all Dirichlet-marked edges."""
        edges = [self.edges_with_marker(m) for m in self.markers_with_role(DIRICHLET)]
        if not edges:
            return np.empty(0, dtype=int)
        stacked = np.vstack([e for e in edges if len(e)] or [np.empty((0, 2), int)])
        return np.unique(stacked)

    def element_areas(self) -> np.ndarray:
        """Signed polygon areas via the shoelace formula (positive if CCW)."""
        x = self.nodes[self.elements, 0]
        y = self.nodes[self.elements, 1]
        xn = np.roll(x, -1, axis=1)
        yn = np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * yn - xn * y, axis=1)

    def max_edge_length(self) -> float:
        """Longest element edge, the mesh size used in convergence plots."""
        p = self.nodes[self.elements]
        d = p - np.roll(p, -1, axis=1)
        return float(np.sqrt((d**2).sum(axis=2)).max())

    def with_roles(self, roles: dict[str, str]) -> "Mesh":
        """Copy of the mesh with marker roles replaced."""
        merged = dict(self.marker_roles)
        merged.update(roles)
        _check_roles(merged, set(self.edge_markers.tolist()))
        return replace(self, marker_roles=merged)

    def split_marker(self, marker: str, classify, roles: dict[str, str]) -> "Mesh":
        """Retag edges of one marker by classifying their midpoints.

        classify(midpoint) returns the new marker name, or None to keep the
        old tag. New markers must appear in roles.
        """
        if marker not in self.marker_roles:
            raise MeshError(f"unknown marker {marker!r}")
        new_markers = self.edge_markers.copy()
        for k in np.flatnonzero(self.edge_markers == marker):
            mid = self.nodes[self.boundary_edges[k]].mean(axis=0)
            tag = classify(mid)
            if tag is not None:
                new_markers[k] = tag
        merged = dict(self.marker_roles)
        merged.update(roles)
        present = set(new_markers.tolist())
        merged = {m: r for m, r in merged.items() if m in present}
        _check_roles(merged, present)
        return replace(self, boundary_edges=self.boundary_edges, edge_markers=new_markers, marker_roles=merged)

    def validate(self) -> None:
        """Check structural invariants; raises MeshError on failure."""
        if self.kind not in KINDS:
            raise MeshError(f"unknown element kind {self.kind!r}")
        nen = 4 if self.kind == QUAD4 else 3
        if self.elements.shape[1] != nen:
            raise MeshError("connectivity width does not match element kind")
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise MeshError("element connectivity references missing nodes")
        if np.any(self.element_areas() <= 0):
            raise MeshError("found element with non-positive area (not CCW)")
        _check_roles(self.marker_roles, set(self.edge_markers.tolist()))

        # Every element side must be shared by exactly two elements, except
        # boundary sides which appear once and must carry a marker.
        counts: dict[tuple[int, int], int] = {}
        for elem in self.elements:
            for a in range(nen):
                key = tuple(sorted((int(elem[a]), int(elem[(a + 1) % nen]))))
                counts[key] = counts.get(key, 0) + 1
        marked = {tuple(sorted(map(int, e))) for e in self.boundary_edges}
        for key, c in counts.items():
            if c == 1 and key not in marked:
                raise MeshError(f"boundary side {key} carries no marker")
            if c > 2:
                raise MeshError(f"side {key} shared by {c} elements")
        for key in marked:
            if counts.get(key) != 1:
                raise MeshError(f"marked edge {key} is not a boundary side")


def _check_roles(roles: dict[str, str], present: set[str]) -> None:
    for m in present:
        if m not in roles:
            raise MeshError(f"marker {m!r} has no assigned role")
        if roles[m] not in ROLES:
            raise MeshError(f"marker {m!r} has invalid role {roles[m]!r}")


def generate_structured(
    origin: tuple[float, float],
    lengths: tuple[float, float],
    seeds: tuple[int, int],
    kind: str = QUAD4,
    marker_roles: dict[str, str] | None = None,
) -> Mesh:
    """Uniform structured mesh on an axis-aligned rectangle.

    seeds gives the node counts (nx, ny) per direction, so the mesh has
    (nx-1) x (ny-1) cells. The four sides are marked left/right/bottom/top;
    all sides default to the Dirichlet role.
    """
    nx, ny = int(seeds[0]), int(seeds[1])
    lx, ly = float(lengths[0]), float(lengths[1])
    if nx < 2 or ny < 2:
        raise MeshError("need at least two nodes per direction")
    if lx <= 0 or ly <= 0:
        raise MeshError("domain lengths must be positive")
    if kind not in KINDS:
        raise MeshError(f"unknown element kind {kind!r}")

    xs = origin[0] + np.linspace(0.0, lx, nx)
    ys = origin[1] + np.linspace(0.0, ly, ny)
    xg, yg = np.meshgrid(xs, ys)
    nodes = np.column_stack([xg.ravel(), yg.ravel()])

    def nid(i, j):
        return j * nx + i

    i = np.arange(nx - 1)
    j = np.arange(ny - 1)
    ii, jj = np.meshgrid(i, j)
    ll = nid(ii, jj).ravel()
    lr = nid(ii + 1, jj).ravel()
    ur = nid(ii + 1, jj + 1).ravel()
    ul = nid(ii, jj + 1).ravel()
    if kind == QUAD4:
        elements = np.column_stack([ll, lr, ur, ul])
    else:
        # Fixed split along the lower-left to upper-right diagonal.
        lower = np.column_stack([ll, lr, ur])
        upper = np.column_stack([ll, ur, ul])
        elements = np.empty((2 * len(ll), 3), dtype=int)
        elements[0::2] = lower
        elements[1::2] = upper

    edges = []
    markers = []
    for ib in range(nx - 1):
        edges.append((nid(ib, 0), nid(ib + 1, 0)))
        markers.append("bottom")
    for jb in range(ny - 1):
        edges.append((nid(nx - 1, jb), nid(nx - 1, jb + 1)))
        markers.append("right")
    for ib in range(nx - 1):
        edges.append((nid(ib + 1, ny - 1), nid(ib, ny - 1)))
        markers.append("top")
    for jb in range(ny - 1):
        edges.append((nid(0, jb + 1), nid(0, jb)))
        markers.append("left")

    roles = {m: DIRICHLET for m in SIDE_MARKERS}
    if marker_roles:
        roles.update(marker_roles)

    return Mesh(
        kind=kind,
        nodes=nodes,
        elements=elements,
        boundary_edges=np.array(edges, dtype=int),
        edge_markers=np.array(markers, dtype=object),
        marker_roles=roles,
        shape=(nx, ny),
    )


def nearest_node(mesh: Mesh, point: tuple[float, float]) -> int:
    """Index of the mesh node closest to the point (lowest index on ties)."""
    d = np.linalg.norm(mesh.nodes - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))
