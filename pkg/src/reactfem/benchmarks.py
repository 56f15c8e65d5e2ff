"""Benchmark problem definitions.

Five cases exercise the solver stack:

* manufactured: steady anisotropic diffusion with closed-form invariant
  fields, for convergence studies. The invariant sources change sign, so
  this case prescribes invariant-level data directly.
* tank: steady inflow of two reactants into a recirculating dispersive
  flow, with bounds [0, 1] and [0, 10] on the invariants.
* point_sources: steady transport with nodal injection of both reactants
  and a spatially varying, strongly anisotropic diffusivity.
* slug: transient washout of a square initial slug of one reactant while
  the other enters through the boundary.
* comparison_counterexample: a 1D diffusion-decay system with ordered
  loads whose discrete solutions are not ordered, under either
  formulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import TensorField, rotated_anisotropic, rotated_field
from .boxqp import solve_box_qp, solve_unconstrained
from .mesh import DIRICHLET, NEUMANN, QUAD4, Mesh, generate_structured
from .reaction import InvariantData, ProblemSpec, SpeciesData, Stoichiometry, recover_species
from .solvers import Bounds, NONNEGATIVE


@dataclass
class BenchmarkCase:
    """A ProblemSpec plus whatever reference data the case carries."""

    spec: ProblemSpec
    exact: dict[str, Callable] = dc_field(default_factory=dict)
    description: str = ""


# ---------------------------------------------------------------------------
# manufactured solution on an anisotropic medium
# ---------------------------------------------------------------------------

MANUFACTURED_LENGTHS = (2.0, 1.0)
MANUFACTURED_D = (1000.0, 1.0)
MANUFACTURED_THETA = math.pi / 3


def manufactured(seeds: tuple[int, int] = (41, 41), kind: str = QUAD4) -> BenchmarkCase:
    """Steady case with exact invariants sin*sin and cos*cos.

    The principal diffusivities (1000, 1) are rotated by 60 degrees, which
    makes the discrete operator non-monotone on reasonable meshes. Exact
    invariant traces are prescribed on the whole boundary.
    """
    lx, ly = MANUFACTURED_LENGTHS
    d1, d2 = MANUFACTURED_D
    theta = MANUFACTURED_THETA
    kx, ky = math.pi / (2 * lx), math.pi / (2 * ly)

    def cf(pts):
        return np.sin(kx * pts[:, 0]) * np.sin(ky * pts[:, 1])

    def cg(pts):
        return np.cos(kx * pts[:, 0]) * np.cos(ky * pts[:, 1])

    def grad_cf(pts):
        return np.stack(
            [kx * np.cos(kx * pts[:, 0]) * np.sin(ky * pts[:, 1]),
             ky * np.sin(kx * pts[:, 0]) * np.cos(ky * pts[:, 1])],
            axis=1,
        )

    def grad_cg(pts):
        return np.stack(
            [-kx * np.sin(kx * pts[:, 0]) * np.cos(ky * pts[:, 1]),
             -ky * np.cos(kx * pts[:, 0]) * np.sin(ky * pts[:, 1])],
            axis=1,
        )

    c2, s2 = math.cos(theta) ** 2, math.sin(theta) ** 2
    principal = (math.pi**2 / 4) * (d1 * (c2 / lx**2 + s2 / ly**2) + d2 * (s2 / lx**2 + c2 / ly**2))
    cross = (math.pi**2 / (2 * lx * ly)) * (d1 - d2) * math.sin(theta) * math.cos(theta)

    def source_f(pts, t=None):
        return principal * cf(pts) - cross * cg(pts)

    def source_g(pts, t=None):
        return principal * cg(pts) - cross * cf(pts)

    mesh = generate_structured((0.0, 0.0), (lx, ly), seeds, kind)
    trace_f = lambda pts, t=None: cf(pts)
    trace_g = lambda pts, t=None: cg(pts)
    sides = ("left", "right", "bottom", "top")
    spec = ProblemSpec(
        mesh=mesh,
        tensor=rotated_anisotropic(d1, d2, theta, name="rotated(1000,1)"),
        stoichiometry=Stoichiometry(2.0, 3.0, 1.0),
        invariants={
            "f": InvariantData(source=source_f, dirichlet={m: trace_f for m in sides}, bounds=NONNEGATIVE),
            "g": InvariantData(source=source_g, dirichlet={m: trace_g for m in sides}, bounds=NONNEGATIVE),
        },
        name="manufactured",
    )

    st = spec.stoichiometry

    def species(pts):
        return recover_species(cf(pts), cg(pts), st)

    return BenchmarkCase(
        spec=spec,
        exact={
            "invariant_f": cf, "invariant_g": cg,
            "grad_invariant_f": grad_cf, "grad_invariant_g": grad_cg,
            "source_f": source_f, "source_g": source_g,
            "species": species,
        },
        description="steady manufactured invariants on a rotated anisotropic medium",
    )


# ---------------------------------------------------------------------------
# recirculating flow helpers shared by tank and slug
# ---------------------------------------------------------------------------

STREAM_AMPLITUDES = (0.08, 0.02, 0.01)
STREAM_P = (4, 5, 10)
STREAM_Q = (1, 5, 10)
DISPERSIVITY_L = 1.0
DISPERSIVITY_T = 1e-4
VELOCITY_FLOOR = 1e-12


def stream_function(lx: float, ly: float) -> Callable[[np.ndarray], np.ndarray]:
    """Perturbed channel stream function scaled to the given box."""

    def psi(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = -y
        for a, p, q in zip(STREAM_AMPLITUDES, STREAM_P, STREAM_Q):
            out = out - a * np.cos(p * math.pi * x / lx - math.pi / 2) * np.sin(q * math.pi * y / ly)
        return out

    return psi


def stream_velocity(lx: float, ly: float) -> Callable[[np.ndarray], np.ndarray]:
    """Divergence-free velocity of the recirculating channel flow."""

    def velocity(pts):
        x, y = pts[:, 0], pts[:, 1]
        vx = np.ones(len(pts))
        vy = np.zeros(len(pts))
        for a, p, q in zip(STREAM_AMPLITUDES, STREAM_P, STREAM_Q):
            vx = vx + a * (q * math.pi / ly) * np.cos(p * math.pi * x / lx - math.pi / 2) * np.cos(q * math.pi * y / ly)
            vy = vy + a * (p * math.pi / lx) * np.sin(p * math.pi * x / lx - math.pi / 2) * np.sin(q * math.pi * y / ly)
        return np.stack([vx, vy], axis=1)

    return velocity


def dispersion_tensor(
    velocity: Callable[[np.ndarray], np.ndarray],
    alpha_l: float = DISPERSIVITY_L,
    alpha_t: float = DISPERSIVITY_T,
    name: str = "dispersion",
) -> TensorField:
    """Velocity-dependent dispersion a_t|v| I + (a_l - a_t)/|v| v x v.

    Where |v| drops below 1e-12 the tensor degenerates; those points fall
    back to a_t * I to stay positive definite.
    """

    def evaluate(pts):
        v = np.asarray(velocity(pts), dtype=float)
        speed = np.linalg.norm(v, axis=1)
        k = len(pts)
        D = np.zeros((k, 2, 2))
        ok = speed >= VELOCITY_FLOOR
        s = np.where(ok, speed, 1.0)
        outer = np.einsum("ki,kj->kij", v, v) / s[:, None, None]
        D[:, 0, 0] = alpha_t * s
        D[:, 1, 1] = alpha_t * s
        D += (alpha_l - alpha_t) * outer
        if not ok.all():
            D[~ok] = alpha_t * np.eye(2)
        return D

    return TensorField(evaluate, name)


# ---------------------------------------------------------------------------
# tank with two inlets
# ---------------------------------------------------------------------------

TANK_LENGTHS = (2.0, 1.0)
TANK_INLET_A_VALUE = 1.0
TANK_INLET_B_VALUE = 10.0


def tank(seeds: tuple[int, int] = (97, 97), kind: str = QUAD4) -> BenchmarkCase:
    """Steady dispersive mixing tank with inlets on the left face.

    Reactant A enters on the bottom sixth of the left face, reactant B on
    the top sixth; every other piece of boundary is a zero-flux wall. Edge
    retagging uses edge midpoints, so inlet extents are exact whenever
    seeds-1 is divisible by 6.
    """
    lx, ly = TANK_LENGTHS
    mesh = generate_structured(
        (0.0, 0.0), (lx, ly), seeds, kind,
        marker_roles={m: NEUMANN for m in ("left", "right", "bottom", "top")},
    )

    def classify(mid):
        if mid[1] < ly / 6:
            return "inlet_a"
        if mid[1] > 5 * ly / 6:
            return "inlet_b"
        return None

    mesh = mesh.split_marker("left", classify, {"inlet_a": DIRICHLET, "inlet_b": DIRICHLET})
    velocity = stream_velocity(lx, ly)
    spec = ProblemSpec(
        mesh=mesh,
        tensor=dispersion_tensor(velocity),
        stoichiometry=Stoichiometry(1.0, 1.0, 2.0),
        species={
            "a": SpeciesData(dirichlet={"inlet_a": TANK_INLET_A_VALUE}),
            "b": SpeciesData(dirichlet={"inlet_b": TANK_INLET_B_VALUE}),
            "c": SpeciesData(),
        },
        bounds_f=Bounds(0.0, TANK_INLET_A_VALUE),
        bounds_g=Bounds(0.0, TANK_INLET_B_VALUE),
        name="tank",
    )
    return BenchmarkCase(
        spec=spec,
        exact={"velocity": velocity, "stream_function": stream_function(lx, ly)},
        description="steady two-inlet mixing tank with velocity-dependent dispersion",
    )


# ---------------------------------------------------------------------------
# interior point sources
# ---------------------------------------------------------------------------

POINT_SOURCE_LENGTHS = (2.0, 1.0)
POINT_SOURCE_EPSILON = 1e-3
POINT_SOURCE_THETA = math.pi / 3
# The injection sites alternate between the species: each reactant has one
# source on the lower band (y = 0.3) and one on the upper band (y = 0.7), on
# opposite ends of the domain.
POINT_SOURCES_A = (((0.2, 0.3), 0.1), ((1.6, 0.7), 0.05))
POINT_SOURCES_B = (((1.6, 0.3), 0.1), ((0.2, 0.7), 0.1))


def point_source_base_tensor(epsilon: float = POINT_SOURCE_EPSILON) -> TensorField:
    """Spatially varying tensor with radial eigenvalue eps*(x^2+y^2).

    The eigenvector (x, y) has eigenvalue eps*(x^2+y^2) and the tangential
    direction (-y, x) has eigenvalue x^2+y^2, so the anisotropy ratio is
    1/eps everywhere away from the origin.
    """

    def evaluate(pts):
        x, y = pts[:, 0], pts[:, 1]
        D = np.empty((len(pts), 2, 2))
        D[:, 0, 0] = y**2 + epsilon * x**2
        D[:, 0, 1] = -(1 - epsilon) * x * y
        D[:, 1, 0] = D[:, 0, 1]
        D[:, 1, 1] = epsilon * y**2 + x**2
        return D

    return TensorField(evaluate, "point_source_base")


def point_sources(seeds: tuple[int, int] = (21, 21), kind: str = QUAD4) -> BenchmarkCase:
    """Steady injection of both reactants with zero boundary concentration.

    Source locations coincide with lattice nodes for the seed counts used
    in the studies (21, 51, 101), so nearest-node lumping is exact.
    """
    mesh = generate_structured((0.0, 0.0), POINT_SOURCE_LENGTHS, seeds, kind)
    spec = ProblemSpec(
        mesh=mesh,
        tensor=rotated_field(point_source_base_tensor(), POINT_SOURCE_THETA, name="point_source"),
        stoichiometry=Stoichiometry(1.0, 1.0, 2.0),
        species={
            "a": SpeciesData(point_sources=list(POINT_SOURCES_A)),
            "b": SpeciesData(point_sources=list(POINT_SOURCES_B)),
            "c": SpeciesData(),
        },
        name="point_sources",
    )
    return BenchmarkCase(spec=spec, description="steady nodal injections in a heterogeneous anisotropic medium")


# ---------------------------------------------------------------------------
# transient slug washout
# ---------------------------------------------------------------------------

SLUG_LENGTHS = (10.0, 5.0)
SLUG_BOX = (4.0, 6.0, 2.0, 3.0)
SLUG_THETA = math.pi / 6
SLUG_INITIAL_A = 10.0


def slug(
    seeds: tuple[int, int] = (101, 101),
    dt: float = 0.05,
    horizon: float = 1.0,
    kind: str = QUAD4,
) -> BenchmarkCase:
    """Transient washout of a rectangular slug of reactant A.

    Reactant B floods in through all four sides with concentration
    1 - exp(-t); the dispersion tensor of the recirculating flow is
    rotated by 30 degrees.
    """
    lx, ly = SLUG_LENGTHS
    x0, x1, y0, y1 = SLUG_BOX
    mesh = generate_structured((0.0, 0.0), (lx, ly), seeds, kind)
    velocity = stream_velocity(lx, ly)

    def initial_a(pts):
        inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        return np.where(inside, SLUG_INITIAL_A, 0.0)

    def inflow_b(pts, t=None):
        return np.full(len(pts), 1.0 - math.exp(-(t if t is not None else 0.0)))

    sides = ("left", "right", "bottom", "top")
    spec = ProblemSpec(
        mesh=mesh,
        tensor=rotated_field(dispersion_tensor(velocity), SLUG_THETA, name="slug_dispersion"),
        stoichiometry=Stoichiometry(2.0, 2.0, 1.0),
        species={
            "a": SpeciesData(initial=initial_a),
            "b": SpeciesData(dirichlet={m: inflow_b for m in sides}),
            "c": SpeciesData(),
        },
        dt=dt,
        horizon=horizon,
        name="slug",
    )
    return BenchmarkCase(
        spec=spec,
        exact={"velocity": velocity, "initial_a": initial_a},
        description="transient slug washout in a rotated dispersive flow",
    )


# ---------------------------------------------------------------------------
# ordered loads without ordered solutions
# ---------------------------------------------------------------------------


@dataclass
class CounterexampleResult:
    """Ordered loads on a 1D diffusion-decay system and their solutions.

    All vectors live on the interior dofs of a uniform unit-interval mesh
    with homogeneous Dirichlet ends. galerkin and constrained hold the
    responses to f1 <= f2 <= f3; each formulation has at least one node
    where solution 3 drops below solution 2.
    """

    xs: np.ndarray
    H: np.ndarray
    loads: tuple[np.ndarray, np.ndarray, np.ndarray]
    galerkin: tuple[np.ndarray, np.ndarray, np.ndarray]
    constrained: tuple[np.ndarray, np.ndarray, np.ndarray]
    violation_galerkin: np.ndarray
    violation_constrained: np.ndarray


def comparison_counterexample(n_elements: int = 6, decay: float = 2e4) -> CounterexampleResult:
    """Construct ordered loads that break the discrete comparison principle.

    The operator decay*M + K on linear elements has positive off-diagonal
    entries once decay*h/6 > 1/h, so its inverse oscillates in sign and
    single-node loads interact non-monotonically. The search scans node
    pairs in index order and returns the first pair where both the plain
    Galerkin responses and the non-negative constrained responses violate
    the ordering.
    """
    h = 1.0 / n_elements
    n_free = n_elements - 1
    main = np.full(n_free, decay * 2 * h / 3 + 2 / h)
    off = np.full(n_free - 1, decay * h / 6 - 1 / h)
    H = sp.diags([off, main, off], (-1, 0, 1)).tocsc()
    Hd = H.toarray()
    xs = np.linspace(0.0, 1.0, n_elements + 1)[1:-1]

    f1 = np.zeros(n_free)
    for j in range(n_free):
        for k in range(n_free):
            if j == k:
                continue
            f2 = np.zeros(n_free)
            f2[j] = 1.0
            f3 = f2.copy()
            f3[k] += 1.0
            g2 = solve_unconstrained(H, f2)
            g3 = solve_unconstrained(H, f3)
            gal_viol = np.flatnonzero(g3 < g2 - 1e-12)
            if not len(gal_viol):
                continue
            q2 = solve_box_qp(H, f2, 0.0, np.inf).x
            q3 = solve_box_qp(H, f3, 0.0, np.inf).x
            con_viol = np.flatnonzero(q3 < q2 - 1e-12)
            if not len(con_viol):
                continue
            return CounterexampleResult(
                xs=xs, H=Hd, loads=(f1, f2, f3),
                galerkin=(np.zeros(n_free), g2, g3),
                constrained=(np.zeros(n_free), q2, q3),
                violation_galerkin=gal_viol,
                violation_constrained=con_viol,
            )
    raise RuntimeError("no ordering violation found; decay too small for this mesh")


BENCHMARKS = {
    "manufactured": manufactured,
    "tank": tank,
    "point_sources": point_sources,
    "slug": slug,
}

DEFAULT_SEEDS = {
    "manufactured": 41,
    "tank": 97,
    "point_sources": 21,
    "slug": 101,
}
