"""Fast irreversible bimolecular reaction via reaction invariants.

For n_a A + n_b B -> n_c C with an instantaneous reaction, the linear
combinations

    c_f = c_a + (n_a / n_c) c_c        c_g = c_b + (n_b / n_c) c_c

are reaction invariants: each satisfies an uncoupled diffusion equation
whose data is the same linear combination of the species data. Solving the
two scalar problems and intersecting them with the fast-reaction limit
(c_a * c_b = 0 pointwise) recovers the species algebraically, node by node.
The recovery never subtracts the invariants from each other except inside
the switch that decides which reactant survives, so non-negative invariants
yield non-negative species by construction.

Problem data is stated per species. A ProblemSpec may instead carry the
invariant-level data directly (used by verification problems with
manufactured invariant fields, whose sources need not be non-negative);
species-level data is validated as non-negative wherever it is sampled,
matching the hypotheses under which the bounds are provable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .assembly import AssembledSystem, TensorField, assemble, assemble_load, evaluate_scalar_field
from .boxqp import MACHINE_EPS, QpSolution
from .mesh import DIRICHLET, Mesh
from .solvers import (
    CONSTRAINED,
    Bounds,
    NodalField,
    NONNEGATIVE,
    TransientResult,
    solve_steady,
    solve_transient,
)

SPECIES = ("a", "b", "c")
INVARIANT_F = "invariant_f"
INVARIANT_G = "invariant_g"


class DataError(ValueError):
    """Raised when problem data violates the model hypotheses."""


@dataclass(frozen=True)
class Stoichiometry:
    """Coefficients of n_a A + n_b B -> n_c C; all must be positive."""

    n_a: float
    n_b: float
    n_c: float

    def __post_init__(self):
        if min(self.n_a, self.n_b, self.n_c) <= 0:
            raise DataError("stoichiometric coefficients must be positive")

    @property
    def a_over_c(self) -> float:
        return self.n_a / self.n_c

    @property
    def b_over_c(self) -> float:
        return self.n_b / self.n_c

    @property
    def a_over_b(self) -> float:
        return self.n_a / self.n_b


@dataclass
class SpeciesData:
    """Data of one chemical species.

    source and the boundary dicts hold scalars or callables f(points, t);
    initial holds a scalar or callable f(points). point_sources lists
    ((x, y), molar_rate) pairs applied at the nearest mesh node.
    """

    source: object = 0.0
    dirichlet: dict[str, object] = dc_field(default_factory=dict)
    neumann: dict[str, object] = dc_field(default_factory=dict)
    initial: object = 0.0
    point_sources: list[tuple[tuple[float, float], float]] = dc_field(default_factory=list)


@dataclass
class InvariantData:
    """Scalar diffusion problem data for one reaction invariant."""

    source: object = 0.0
    dirichlet: dict[str, object] = dc_field(default_factory=dict)
    neumann: dict[str, object] = dc_field(default_factory=dict)
    initial: object = 0.0
    point_sources: list[tuple[tuple[float, float], float]] = dc_field(default_factory=list)
    bounds: Bounds = NONNEGATIVE


@dataclass
class ProblemSpec:
    """Complete bimolecular problem statement on a marked mesh.

    Either species data (keys "a", "b", "c") or explicit invariant data
    (keys "f", "g") must be given. Steady problems leave dt and horizon
    None.
    """

    mesh: Mesh
    tensor: TensorField
    stoichiometry: Stoichiometry
    species: dict[str, SpeciesData] | None = None
    invariants: dict[str, InvariantData] | None = None
    bounds_f: Bounds = NONNEGATIVE
    bounds_g: Bounds = NONNEGATIVE
    dt: float | None = None
    horizon: float | None = None
    name: str = ""

    def __post_init__(self):
        if (self.species is None) == (self.invariants is None):
            raise DataError("give exactly one of species data or invariant data")
        if self.species is not None and sorted(self.species) != sorted(SPECIES):
            raise DataError(f"species data must cover exactly {SPECIES}")
        if self.invariants is not None and sorted(self.invariants) != ["f", "g"]:
            raise DataError("invariant data must cover exactly ('f', 'g')")

    @property
    def steady(self) -> bool:
        return self.dt is None

    def n_steps(self) -> int:
        if self.steady:
            raise DataError("steady problem has no time steps")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise DataError("horizon must be an integer multiple of dt")
        return int(round(n))


def _nonneg_wrap(fn, label: str):
    """Wrap a combined data field so sampling validates non-negativity."""

    def wrapped(pts, t=None):
        vals = fn(pts, t)
        if np.any(np.asarray(vals) < 0):
            raise DataError(f"{label} is negative where sampled")
        return vals

    return wrapped


def _combine(first, second, ratio: float, label: str, initial: bool = False):
    """Linear combination first + ratio*second with non-negativity checks."""
    if initial:
        def fn(pts, t=None):
            return evaluate_scalar_field(_strip_time(first), pts) + ratio * evaluate_scalar_field(
                _strip_time(second), pts
            )
    else:
        def fn(pts, t=None):
            return evaluate_scalar_field(first, pts, t) + ratio * evaluate_scalar_field(second, pts, t)

    def checked(pts, t=None):
        for part, name in ((first, "first"), (second, "second")):
            vals = evaluate_scalar_field(_strip_time(part) if initial else part, pts, t)
            if np.any(vals < 0):
                raise DataError(f"negative species data in {label}")
        return fn(pts, t)

    return checked


def _strip_time(f):
    """Adapt an initial-data callable f(points) to the (points, t) shape."""
    if callable(f):
        return lambda pts, t=None: f(pts)
    return f


def to_invariants(spec: ProblemSpec) -> tuple[InvariantData, InvariantData]:
    """Transform species data into the two invariant problems.

    With invariant-level data on the spec, it is returned as given (the
    non-negativity hypothesis applies to species data only).
    """
    if spec.invariants is not None:
        return spec.invariants["f"], spec.invariants["g"]

    st = spec.stoichiometry
    out = []
    for reactant, ratio, bounds, tag in (
        ("a", st.a_over_c, spec.bounds_f, "invariant f"),
        ("b", st.b_over_c, spec.bounds_g, "invariant g"),
    ):
        sa = spec.species[reactant]
        sc = spec.species["c"]
        # Every Dirichlet marker needs data for every species; omitted
        # entries mean the species is absent there (value zero).
        markers = set(spec.mesh.markers_with_role(DIRICHLET)) | set(sa.dirichlet) | set(sc.dirichlet)
        dirichlet = {
            m: _combine(sa.dirichlet.get(m, 0.0), sc.dirichlet.get(m, 0.0), ratio, f"{tag} Dirichlet data on {m!r}")
            for m in markers
        }
        nmarkers = set(sa.neumann) | set(sc.neumann)
        neumann = {
            m: _combine(sa.neumann.get(m, 0.0), sc.neumann.get(m, 0.0), ratio, f"{tag} flux data on {m!r}")
            for m in nmarkers
        }
        points = [(p, r) for p, r in sa.point_sources]
        points += [(p, ratio * r) for p, r in sc.point_sources]
        for _, rate in points:
            if rate < 0:
                raise DataError(f"negative point source rate in {tag}")
        out.append(
            InvariantData(
                source=_combine(sa.source, sc.source, ratio, f"{tag} source"),
                dirichlet=dirichlet,
                neumann=neumann,
                initial=_combine(sa.initial, sc.initial, ratio, f"{tag} initial data", initial=True),
                point_sources=points,
                bounds=bounds,
            )
        )
    return out[0], out[1]


def recover_species(
    c_f: np.ndarray,
    c_g: np.ndarray,
    st: Stoichiometry,
    eps: float = MACHINE_EPS,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover species concentrations from the two invariants, nodewise.

    The sign of d = c_f - (n_a/n_b) c_g decides which reactant is exhausted;
    within the noise band |d| <= eps both reactants vanish. For non-negative
    invariant inputs all three outputs are non-negative, and the products
    c_a * c_b vanish identically.
    """
    c_f = np.asarray(c_f, dtype=float)
    c_g = np.asarray(c_g, dtype=float)
    if eps < 0:
        raise DataError("recovery band eps must be non-negative")
    d = c_f - st.a_over_b * c_g
    a_side = d > eps
    b_side = d < -eps
    c_a = np.where(a_side, d, 0.0)
    c_b = np.where(b_side, c_g - c_f / st.a_over_b, 0.0)
    c_c = np.where(a_side, (st.n_c / st.n_b) * c_g, (st.n_c / st.n_a) * c_f)
    return c_a, c_b, c_c


@dataclass
class ReactionResult:
    """Invariant and species fields of one steady solve."""

    invariant_f: NodalField
    invariant_g: NodalField
    species_a: NodalField
    species_b: NodalField
    species_c: NodalField
    qp_f: QpSolution | None
    qp_g: QpSolution | None
    system_f: AssembledSystem
    system_g: AssembledSystem

    def fields(self) -> dict[str, NodalField]:
        return {
            INVARIANT_F: self.invariant_f,
            INVARIANT_G: self.invariant_g,
            "species_a": self.species_a,
            "species_b": self.species_b,
            "species_c": self.species_c,
        }


@dataclass
class TransientReactionResult:
    """Invariant histories plus recovered species at every time level."""

    times: np.ndarray
    invariant_f: TransientResult
    invariant_g: TransientResult
    species_a: list[NodalField]
    species_b: list[NodalField]
    species_c: list[NodalField]
    system_f: AssembledSystem
    system_g: AssembledSystem

    def fields_at(self, level: int) -> dict[str, NodalField]:
        return {
            INVARIANT_F: self.invariant_f.fields[level],
            INVARIANT_G: self.invariant_g.fields[level],
            "species_a": self.species_a[level],
            "species_b": self.species_b[level],
            "species_c": self.species_c[level],
        }


def build_invariant_system(spec: ProblemSpec, data: InvariantData, time: float | None = None) -> AssembledSystem:
    """Assemble the scalar diffusion system of one invariant."""
    return assemble(
        spec.mesh,
        spec.tensor,
        source=data.source,
        neumann=data.neumann,
        dirichlet=data.dirichlet,
        point_loads=data.point_sources,
        time=time,
    )


def _recover_fields(
    vf: NodalField, vg: NodalField, st: Stoichiometry, eps: float, formulation: str, time=None
) -> tuple[NodalField, NodalField, NodalField]:
    c_a, c_b, c_c = recover_species(vf.values, vg.values, st, eps)
    mk = lambda v, q: NodalField(values=v, quantity=q, formulation=formulation, time=time)
    return mk(c_a, "species_a"), mk(c_b, "species_b"), mk(c_c, "species_c")


def run_steady(
    spec: ProblemSpec,
    formulation: str = CONSTRAINED,
    tol: float | None = None,
    eps: float = MACHINE_EPS,
) -> ReactionResult:
    """Solve both invariant problems and recover the species fields.

    The two scalar solves are independent and run on separate threads.
    """
    if not spec.steady:
        raise DataError("run_steady needs a steady ProblemSpec")
    data_f, data_g = to_invariants(spec)
    if not spec.mesh.markers_with_role(DIRICHLET):
        raise DataError("steady problem requires Dirichlet boundary")

    def solve_one(data: InvariantData, quantity: str):
        system = build_invariant_system(spec, data)
        fld, qp = solve_steady(
            system, bounds=data.bounds, formulation=formulation, quantity=quantity, tol=tol
        )
        return system, fld, qp

    with ThreadPoolExecutor(max_workers=2) as pool:
        fut_f = pool.submit(solve_one, data_f, INVARIANT_F)
        fut_g = pool.submit(solve_one, data_g, INVARIANT_G)
        system_f, field_f, qp_f = fut_f.result()
        system_g, field_g, qp_g = fut_g.result()

    sa, sb, sc = _recover_fields(field_f, field_g, spec.stoichiometry, eps, formulation)
    return ReactionResult(
        invariant_f=field_f, invariant_g=field_g,
        species_a=sa, species_b=sb, species_c=sc,
        qp_f=qp_f, qp_g=qp_g, system_f=system_f, system_g=system_g,
    )


def run_transient(
    spec: ProblemSpec,
    formulation: str = CONSTRAINED,
    tol: float | None = None,
    eps: float = MACHINE_EPS,
) -> TransientReactionResult:
    """March both invariant problems and recover species at each level."""
    if spec.steady:
        raise DataError("run_transient needs dt and horizon on the ProblemSpec")
    n_steps = spec.n_steps()
    data_f, data_g = to_invariants(spec)

    def solve_one(data: InvariantData, quantity: str):
        system = build_invariant_system(spec, data, time=0.0)
        nodes = spec.mesh.nodes

        def f_of_t(t):
            return assemble_load(
                spec.mesh, source=data.source, neumann=data.neumann,
                point_loads=data.point_sources, time=t,
            )

        def dirichlet_of_t(t):
            vals = {}
            for marker in sorted(spec.mesh.markers_with_role(DIRICHLET)):
                idx = spec.mesh.nodes_with_marker(marker)
                vv = evaluate_scalar_field(data.dirichlet[marker], nodes[idx], t)
                vals.update(zip(idx.tolist(), vv))
            return np.array([vals[i] for i in system.dirichlet_nodes.tolist()])

        initial = evaluate_scalar_field(_strip_time(data.initial), nodes)
        return system, solve_transient(
            system, f_of_t, initial, bounds=data.bounds, formulation=formulation,
            dt=spec.dt, n_steps=n_steps,
            dirichlet_of_t=dirichlet_of_t if system.dirichlet_nodes.size else None,
            quantity=quantity, tol=tol,
        )

    with ThreadPoolExecutor(max_workers=2) as pool:
        fut_f = pool.submit(solve_one, data_f, INVARIANT_F)
        fut_g = pool.submit(solve_one, data_g, INVARIANT_G)
        system_f, hist_f = fut_f.result()
        system_g, hist_g = fut_g.result()

    species = {q: [] for q in ("species_a", "species_b", "species_c")}
    for level in range(n_steps + 1):
        sa, sb, sc = _recover_fields(
            hist_f.fields[level], hist_g.fields[level], spec.stoichiometry, eps,
            formulation, time=float(hist_f.times[level]),
        )
        species["species_a"].append(sa)
        species["species_b"].append(sb)
        species["species_c"].append(sc)

    return TransientReactionResult(
        times=hist_f.times, invariant_f=hist_f, invariant_g=hist_g,
        species_a=species["species_a"], species_b=species["species_b"], species_c=species["species_c"],
        system_f=system_f, system_g=system_g,
    )
