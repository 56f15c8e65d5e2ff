"""Command line front end for the benchmark problems.

`run` solves one benchmark under one or more formulations and mesh sizes and
writes VTK fields, a diagnostics CSV, and a run manifest per run directory;
benchmarks with exact solutions also get a convergence CSV. `compare` repeats
the run under all three formulations and adds combined violation and
field-difference tables. Exit codes: 0 on success, 2 for invalid
configuration, 3 when a linear or QP solve fails. The manifest is written
last, so its presence marks a complete run.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import l2_error, l2_norm, h1_seminorm_error, violation_stats, write_csv
from .assembly import AssemblyError, dump_system
from .benchmarks import BENCHMARKS, DEFAULT_SEEDS, comparison_counterexample
from .boxqp import SolverError
from .mesh import KINDS, MeshError, QUAD4
from .reaction import DataError, run_steady, run_transient
from .solvers import CONSTRAINED, FORMULATIONS
from .vtkio import write_vtk

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


class CliError(Exception):
    """Invalid command line or config file content."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--benchmark", required=True,
                   choices=sorted(BENCHMARKS) + ["counterexample"], help="benchmark problem to run")
    p.add_argument("--seeds", default=None,
                   help="nodes per side: N or NXxNY, comma-separated for a mesh sweep "
                        "(default depends on benchmark)")
    p.add_argument("--kind", default=None, choices=KINDS, help="element kind (default quad4)")
    p.add_argument("--dt", type=float, default=None, help="time step for transient benchmarks")
    p.add_argument("--horizon", type=float, default=None, help="final time for transient benchmarks")
    p.add_argument("--tol", type=float, default=None, help="QP convergence tolerance (relative)")
    p.add_argument("--eps", type=float, default=None, help="species recovery switching band")
    p.add_argument("--out-dir", default=None, help="output directory (default runs/<benchmark>)")
    p.add_argument("--dump-system", action="store_true", default=None,
                   help="also write assembled operators in Matrix Market form")
    p.add_argument("--config", default=None, help="key = value file; command line flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="reactfem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="solve one benchmark under selected formulations")
    _add_common(run_p)
    run_p.add_argument("--formulation", default=None,
                       help="comma-separated subset of galerkin,clipped,constrained "
                            "(default constrained)")
    cmp_p = sub.add_parser("compare", help="solve under all formulations and tabulate differences")
    _add_common(cmp_p)
    return parser


def _load_config(path: str) -> dict[str, str]:
    config = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected 'key = value'")
        config[key.strip().replace("-", "_")] = value.strip()
    return config


_CONFIG_KEYS = {
    "benchmark": str, "seeds": str, "kind": str, "formulation": str,
    "dt": float, "horizon": float, "tol": float, "eps": float,
    "out_dir": str, "dump_system": lambda s: s.lower() in ("1", "true", "yes"),
}


def _resolve_options(args: argparse.Namespace) -> dict:
    """Merge command line flags over config file entries."""
    opts = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    if args.config:
        config = _load_config(args.config)
        unknown = set(config) - set(_CONFIG_KEYS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        for key, raw in config.items():
            if opts.get(key) is None:
                try:
                    opts[key] = _CONFIG_KEYS[key](raw)
                except ValueError as exc:
                    raise CliError(f"config key {key}: {exc}") from exc
    if opts["benchmark"] is None:
        raise CliError("a benchmark must be selected")
    if opts["kind"] is None:
        opts["kind"] = QUAD4
    if opts["formulation"] is None:
        opts["formulation"] = CONSTRAINED
    if opts["benchmark"] in BENCHMARKS and opts["seeds"] is None:
        opts["seeds"] = str(DEFAULT_SEEDS[opts["benchmark"]])
    if opts["out_dir"] is None:
        opts["out_dir"] = str(Path("runs") / opts["benchmark"])
    return opts


def _parse_one_seeds(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            nx, ny = text.lower().split("x")
            seeds = (int(nx), int(ny))
        else:
            seeds = (int(text), int(text))
    except ValueError as exc:
        raise CliError(f"invalid --seeds value {text!r}") from exc
    if min(seeds) < 2:
        raise CliError("--seeds must be at least 2")
    return seeds


def _parse_seeds_list(text: str) -> list[tuple[int, int]]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise CliError("empty --seeds value")
    return [_parse_one_seeds(p) for p in parts]


def _parse_formulations(text: str) -> list[str]:
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        if part not in FORMULATIONS:
            raise CliError(f"unknown formulation {part!r} (choose from {', '.join(FORMULATIONS)})")
        if part not in out:
            out.append(part)
    if not out:
        raise CliError("empty --formulation value")
    return out


def _seed_label(seeds: tuple[int, int]) -> str:
    return str(seeds[0]) if seeds[0] == seeds[1] else f"{seeds[0]}x{seeds[1]}"


def _build_case(opts: dict, seeds: tuple[int, int]):
    name = opts["benchmark"]
    factory = BENCHMARKS[name]
    kwargs = {"seeds": seeds, "kind": opts["kind"]}
    if name == "slug":
        if opts["dt"] is not None:
            kwargs["dt"] = opts["dt"]
        if opts["horizon"] is not None:
            kwargs["horizon"] = opts["horizon"]
    elif opts["dt"] is not None or opts["horizon"] is not None:
        raise CliError(f"benchmark {name} is steady; --dt/--horizon do not apply")
    try:
        return factory(**kwargs)
    except (MeshError, DataError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def _solver_kwargs(opts: dict) -> dict:
    kwargs = {}
    if opts["tol"] is not None:
        kwargs["tol"] = opts["tol"]
    if opts["eps"] is not None:
        kwargs["eps"] = opts["eps"]
    return kwargs


_STAT_HEADER = [
    "benchmark", "seeds", "kind", "formulation", "quantity", "time",
    "min", "max", "min_over_max_percent", "percent_nodes_violating", "nodes_violating",
]

_CONV_HEADER = ["benchmark", "kind", "formulation", "seeds", "h", "quantity", "l2_error", "h1_error"]

_DIFF_HEADER = ["benchmark", "seeds", "kind", "quantity", "formulation_a", "formulation_b", "l2_difference"]


def _stat_rows(name: str, label: str, kind: str, formulation: str, fields: dict, time_value) -> list[list]:
    rows = []
    for quantity in sorted(fields):
        fld = fields[quantity]
        stats = violation_stats(fld.values)
        rows.append([
            name, label, kind, formulation, quantity,
            "" if time_value is None else float(time_value),
            stats["min"], stats["max"], stats["min_over_max_percent"],
            stats["percent_nodes_violating"], int(stats["nodes_violating"]),
        ])
    return rows


def _error_rows(case, label: str, formulation: str, fields: dict) -> list[list]:
    """Rows of exact-solution errors, for cases that carry exact fields."""
    ex = case.exact
    if "invariant_f" not in ex:
        return []
    mesh = case.spec.mesh
    h = mesh.max_edge_length()
    rows = []
    for quantity in ("invariant_f", "invariant_g"):
        vals = fields[quantity].values
        rows.append([
            case.spec.name, mesh.kind, formulation, label, h, quantity,
            l2_error(mesh, vals, ex[quantity]),
            h1_seminorm_error(mesh, vals, ex["grad_" + quantity]),
        ])
    if "species" in ex:
        for i, quantity in enumerate(("species_a", "species_b", "species_c")):
            exact_i = lambda pts, i=i: ex["species"](pts)[i]
            rows.append([
                case.spec.name, mesh.kind, formulation, label, h, quantity,
                l2_error(mesh, fields[quantity].values, exact_i), "",
            ])
    return rows


def _qp_summary(prefix: str, qp) -> dict:
    if qp is None:
        return {}
    out = {f"{prefix}_status": qp.status, f"{prefix}_iterations": qp.iterations}
    for key, val in sorted(qp.residuals.items()):
        out[f"{prefix}_residual_{key}"] = f"{val:.6e}"
    return out


def _aggregate_qp(prefix: str, qps) -> dict:
    qps = [q for q in qps if q is not None]
    if not qps:
        return {}
    out = {f"{prefix}_iterations": sum(q.iterations for q in qps)}
    statuses = sorted({q.status for q in qps})
    out[f"{prefix}_status"] = ",".join(statuses)
    for key in sorted(qps[0].residuals):
        out[f"{prefix}_residual_{key}"] = f"{max(q.residuals[key] for q in qps):.6e}"
    return out


def _write_manifest(path, entries: dict) -> None:
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key} = {value}\n")


def _run_benchmark(case, opts: dict, formulation: str, out_dir: Path, label: str) -> dict:
    """Solve one benchmark/formulation pair and write its outputs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = case.spec
    manifest: dict = {
        "package_version": __version__,
        "benchmark": spec.name,
        "description": case.description,
        "formulation": formulation,
        "kind": spec.mesh.kind,
        "seeds": label,
        "n_nodes": spec.mesh.n_nodes,
        "n_elements": spec.mesh.n_elements,
        "qp_tol": opts["tol"] if opts["tol"] is not None else "default(100*eps)",
        "recovery_eps": opts["eps"] if opts["eps"] is not None else "default(machine eps)",
        "bounds_f": f"[{spec.bounds_f.lower}, {spec.bounds_f.upper}]",
        "bounds_g": f"[{spec.bounds_g.lower}, {spec.bounds_g.upper}]",
    }
    t_start = time.perf_counter()
    rows = []
    if spec.steady:
        result = run_steady(spec, formulation=formulation, **_solver_kwargs(opts))
        fields = result.fields()
        for quantity, fld in fields.items():
            write_vtk(out_dir / f"{quantity}.vtk", spec.mesh, {quantity: fld.values}, title=spec.name)
        if result.qp_f is not None:
            write_vtk(out_dir / "multiplier_f.vtk", spec.mesh,
                      {"lambda_lower": result.system_f.expand(result.qp_f.lam_lo),
                       "lambda_upper": result.system_f.expand(result.qp_f.lam_up)}, title=spec.name)
            write_vtk(out_dir / "multiplier_g.vtk", spec.mesh,
                      {"lambda_lower": result.system_g.expand(result.qp_g.lam_lo),
                       "lambda_upper": result.system_g.expand(result.qp_g.lam_up)}, title=spec.name)
        rows += _stat_rows(spec.name, label, spec.mesh.kind, formulation, fields, None)
        manifest.update(_qp_summary("qp_invariant_f", result.qp_f))
        manifest.update(_qp_summary("qp_invariant_g", result.qp_g))
        systems = (result.system_f, result.system_g)
        final_fields = fields
    else:
        result = run_transient(spec, formulation=formulation, **_solver_kwargs(opts))
        manifest["dt"] = spec.dt
        manifest["horizon"] = spec.horizon
        for level, t in enumerate(result.times):
            fields = result.fields_at(level)
            for quantity, fld in fields.items():
                write_vtk(out_dir / f"{quantity}_{level:04d}.vtk", spec.mesh,
                          {quantity: fld.values}, title=f"{spec.name} t={t:g}")
            rows += _stat_rows(spec.name, label, spec.mesh.kind, formulation, fields, t)
        manifest.update(_aggregate_qp("qp_invariant_f", result.invariant_f.qp_solutions))
        manifest.update(_aggregate_qp("qp_invariant_g", result.invariant_g.qp_solutions))
        systems = (result.system_f, result.system_g)
        final_fields = result.fields_at(len(result.times) - 1)
    manifest["wall_time_seconds"] = f"{time.perf_counter() - t_start:.3f}"
    write_csv(out_dir / "diagnostics.csv", _STAT_HEADER, rows)
    conv_rows = _error_rows(case, label, formulation, final_fields)
    if conv_rows:
        write_csv(out_dir / "errors.csv", _CONV_HEADER, conv_rows)
    if opts["dump_system"]:
        dump_system(systems[0], out_dir / "system_invariant_f")
        dump_system(systems[1], out_dir / "system_invariant_g")
    _write_manifest(out_dir / "manifest.txt", manifest)
    return {"manifest": manifest, "rows": rows, "convergence": conv_rows, "final_fields": final_fields}


def _run_counterexample(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    res = comparison_counterexample()
    header = ["x", "f1", "f2", "f3", "galerkin_1", "galerkin_2", "galerkin_3",
              "constrained_1", "constrained_2", "constrained_3"]
    rows = []
    for i, x in enumerate(res.xs):
        rows.append([float(x)]
                    + [float(f[i]) for f in res.loads]
                    + [float(v[i]) for v in res.galerkin]
                    + [float(v[i]) for v in res.constrained])
    write_csv(out_dir / "counterexample.csv", header, rows)
    _write_manifest(out_dir / "manifest.txt", {
        "package_version": __version__,
        "benchmark": "counterexample",
        "description": "ordered loads with non-ordered discrete solutions",
        "violation_nodes_galerkin": " ".join(map(str, res.violation_galerkin.tolist())),
        "violation_nodes_constrained": " ".join(map(str, res.violation_constrained.tolist())),
    })


def _cmd_run(opts: dict) -> None:
    formulations = _parse_formulations(opts["formulation"])
    seed_list = _parse_seeds_list(opts["seeds"])
    out_root = Path(opts["out_dir"])
    single = len(formulations) == 1 and len(seed_list) == 1
    stat_rows, conv_rows = [], []
    for formulation in formulations:
        for seeds in seed_list:
            label = _seed_label(seeds)
            case = _build_case(opts, seeds)
            sub = out_root if single else out_root / f"{formulation}_{label}"
            result = _run_benchmark(case, opts, formulation, sub, label)
            stat_rows += result["rows"]
            conv_rows += result["convergence"]
    if not single:
        write_csv(out_root / "diagnostics.csv", _STAT_HEADER, stat_rows)
        if conv_rows:
            write_csv(out_root / "convergence.csv", _CONV_HEADER, conv_rows)


def _cmd_compare(opts: dict) -> None:
    seed_list = _parse_seeds_list(opts["seeds"])
    out_root = Path(opts["out_dir"])
    stat_rows, conv_rows, diff_rows = [], [], []
    for seeds in seed_list:
        label = _seed_label(seeds)
        case = _build_case(opts, seeds)
        fields_by_form = {}
        for formulation in FORMULATIONS:
            sub = out_root / (formulation if len(seed_list) == 1 else f"{formulation}_{label}")
            result = _run_benchmark(case, opts, formulation, sub, label)
            stat_rows += result["rows"]
            conv_rows += result["convergence"]
            fields_by_form[formulation] = result["final_fields"]
        mesh = case.spec.mesh
        quantities = sorted(fields_by_form[FORMULATIONS[0]])
        for quantity in quantities:
            for i, fa in enumerate(FORMULATIONS):
                for fb in FORMULATIONS[i + 1:]:
                    diff = fields_by_form[fa][quantity].values - fields_by_form[fb][quantity].values
                    diff_rows.append([case.spec.name, label, mesh.kind, quantity, fa, fb,
                                      l2_norm(mesh, diff)])
    write_csv(out_root / "compare.csv", _STAT_HEADER, stat_rows)
    write_csv(out_root / "differences.csv", _DIFF_HEADER, diff_rows)
    if conv_rows:
        write_csv(out_root / "convergence.csv", _CONV_HEADER, conv_rows)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = _resolve_options(args)
        if opts["benchmark"] == "counterexample":
            _run_counterexample(Path(opts["out_dir"]))
            return EXIT_OK
        if args.command == "run":
            _cmd_run(opts)
        else:
            _cmd_compare(opts)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MeshError, AssemblyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
