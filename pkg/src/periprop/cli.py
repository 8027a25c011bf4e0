"""Command-line drivers: resistance, linear, nonlinear, sweep, mesh, report.

Configuration is an optional TOML file with sections [problem], [domain],
[time], [coupling]; flags override file values and the manifest records the
effective merged config.  Every run writes its numerical outputs (JSON
summary plus delimited CSV) next to a manifest JSON holding the config echo,
the mesh content hash, the produced file names, and the wall time.  Floats in
CSV columns are printed with %.17g so a rerun with equal config is
byte-identical in the numerical columns.

Exit codes: 0 success, 2 bad configuration or arguments, 3 mesh/solver
failure, 4 run finished but did not converge (outputs are still written).
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    """Honor PERIPROP_THREADS before the first numpy import loads a BLAS."""
    cap = os.environ.get("PERIPROP_THREADS")
    if not cap:
        return
    for var in (
        "OPENBLAS_NUM_THREADS",
        "OMP_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(var, cap)


_cap_threads()

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import auxstokes, forcing, meshgen, nonlinear, thrust
from .geometry import BodyShape, DomainSpec
from .linsolve import NewtonDivergenceError, SolverError
from .meshgen import MeshError, MeshFormatError, generate_mesh
from .timeloop import SimConfig, SubiterationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_NOCONV = 4

_SOLVER_ERRORS = (SolverError, SubiterationError, NewtonDivergenceError, MeshError)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class RunSettings:
    """Effective run configuration after merging defaults, file, and flags.

    Defaults are the desk-scale working set (R=8, size_body=0.05,
    size_far=0.5, N=200).  omega defaults to "auto" (the optimal constant
    relaxation from the measured added-mass feedback) because a fixed 0.8
    diverges for h near 1 and stalls at h=8 on desk meshes.
    """

    shape: str = "drop"
    force: str = "y2"
    h: float | None = None
    radius: float = 8.0
    size_body: float = 0.05
    size_far: float = 0.5
    nsteps: int = 200
    omega: float | str = "auto"
    subiter_tol: float = 1e-9
    subiter_max: int = 50
    periodic_tol: float = 1e-6
    cycle_tol: float = 1e-5
    state_tol: float = 1e-4
    periods_max: int = 60

    def sim_config(self, h: float | None = None) -> SimConfig:
        hval = self.h if h is None else h
        if hval is None:
            raise ValueError("Stokes number h is required (flag --h or [problem] h)")
        return SimConfig(
            h=float(hval),
            R=self.radius,
            size_far=self.size_far,
            size_body=self.size_body,
            N=self.nsteps,
            omega=self.omega,
            subiter_tol=self.subiter_tol,
            subiter_max=self.subiter_max,
            periodic_tol=self.periodic_tol,
            max_cycles=self.periods_max,
        )

    def body(self) -> BodyShape:
        return BodyShape.from_name(self.shape)


_TOML_SECTIONS = {
    "problem": ("shape", "force", "h"),
    "domain": ("radius", "size_body", "size_far"),
    "time": ("nsteps",),
    "coupling": (
        "omega",
        "subiter_tol",
        "subiter_max",
        "periodic_tol",
        "cycle_tol",
        "state_tol",
        "periods_max",
    ),
}


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    flat: dict = {}
    for section, content in data.items():
        if section not in _TOML_SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ValueError(f"config section [{section}] must be a table")
        for key, value in content.items():
            if key not in _TOML_SECTIONS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            flat[key] = value
    return flat


def _parse_omega(text: str) -> float | str:
    if str(text).strip().lower() == "auto":
        return "auto"
    return float(text)


def build_settings(args: argparse.Namespace) -> RunSettings:
    """Merge defaults <- config file <- explicit flags into one settings set."""
    values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(_load_toml(config_path))
    for f in fields(RunSettings):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if "omega" in values:
        values["omega"] = _parse_omega(values["omega"])
    known = {f.name for f in fields(RunSettings)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown settings: {sorted(unknown)}")
    settings = RunSettings(**values)
    if settings.shape is not None:
        BodyShape.from_name(settings.shape)  # validate early
    return settings


def _native(value):
    """Coerce numpy scalars to plain Python so json sees standard types."""
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    return value


def _write_json(path: Path, payload: dict) -> None:
    payload = {k: _native(v) for k, v in payload.items()}
    payload["display"] = {
        k: format(v, ".6g") for k, v in payload.items() if isinstance(v, float)
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, manifest_name: str, header: str, rows) -> None:
    lines = [f"# manifest: {manifest_name}", header]
    for row in rows:
        lines.append(
            ",".join(
                _fmt(v) if isinstance(v, float) else str(v)
                for v in (_native(c) for c in row)
            )
        )
    path.write_text("\n".join(lines) + "\n")


def _write_manifest(
    out_dir: Path, stem: str, command: str, settings: RunSettings, mesh_sha: str | None, outputs: list, wall: float
) -> str:
    name = f"{stem}.manifest.json"
    payload = {
        "command": command,
        "config": {k: v for k, v in asdict(settings).items()},
        "mesh_sha256": mesh_sha,
        "outputs": sorted(outputs),
        "wall_time_s": round(wall, 3),
    }
    (out_dir / name).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return name


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out", None) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _h_tag(h: float) -> str:
    return format(float(h), "g").replace(".", "p").replace("-", "m")


# ---------------------------------------------------------------------------
# subcommands


def cmd_resistance(args: argparse.Namespace) -> int:
    settings = build_settings(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    shape = settings.body()
    mesh = generate_mesh(shape, DomainSpec(settings.radius), settings.size_far, settings.size_body)
    from . import fem

    dofmap = fem.build_spaces(mesh)
    ops = fem.assemble_operators(mesh, dofmap)
    h3 = auxstokes.solve_auxiliary(mesh, dofmap, ops, far_field=args.far_field)
    res = auxstokes.compute_resistance(mesh, dofmap, h3, ops)
    stem = f"resistance-{settings.shape}"
    record = auxstokes.resistance_record(settings.shape, settings.radius, settings.size_body, mesh, res)
    record["far_field"] = args.far_field
    record["identity_gap"] = res.identity_gap()
    outputs = [f"{stem}.json", f"{stem}.mesh.txt"]
    record["manifest"] = f"{stem}.manifest.json"
    _write_json(out / f"{stem}.json", record)
    meshgen.write_mesh(mesh, out / f"{stem}.mesh.txt")
    _write_manifest(out, stem, "resistance", settings, meshgen.mesh_hash(mesh), outputs, time.perf_counter() - t0)
    print(f"K = {_fmt(res.K)}  (energy identity gap {res.identity_gap():.2e}, {res.dofs} dofs)")
    return EXIT_OK


def _linear_single(settings: RunSettings, problem=None):
    """One full linear pipeline; returns (problem, solution, thrust result)."""
    cfg = settings.sim_config()
    if problem is None:
        problem = thrust.LinearProblem.build(settings.body(), cfg)
    force = forcing.ForcingProfile.from_name(settings.force, cfg.N)
    sol, th = problem.run(force, h=cfg.h)
    return problem, sol, th


def cmd_linear(args: argparse.Namespace) -> int:
    settings = build_settings(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    problem, sol, th = _linear_single(settings)
    stem = f"linear-{settings.shape}-{settings.force}-h{_h_tag(th.h)}"
    manifest_name = f"{stem}.manifest.json"
    record = thrust.thrust_record(settings.shape, settings.force, th)
    record.update(
        K_energy=problem.resistance.K_energy,
        converged=sol.converged,
        cycles=sol.cycle_count,
        periodic_residual=sol.periodic_residual,
        mean_body_velocity=sol.mean_body_velocity,
        mean_field_norm=sol.mean_field_norm,
        subiter_mean=sol.subiter_mean,
        dofs=problem.dofmap.n_total,
        mesh_sha256=meshgen.mesh_hash(problem.mesh),
        manifest=manifest_name,
    )
    outputs = [f"{stem}.json", f"{stem}.trace.csv"]
    _write_json(out / f"{stem}.json", record)
    _write_csv(
        out / f"{stem}.trace.csv",
        manifest_name,
        "cycle,step,t,gamma,drag,subiters",
        sol.trace,
    )
    _write_manifest(out, stem, "linear", settings, record["mesh_sha256"], outputs, time.perf_counter() - t0)
    print(f"G_z = {_fmt(th.G_z)}  K = {_fmt(th.K)}  gamma0_bar = {_fmt(th.gamma0_bar)}")
    if not sol.converged:
        print(
            f"mean projection did not converge: residual {sol.periodic_residual:.3e} "
            f"after {sol.cycle_count} cycles (tol {settings.periodic_tol:.1e})",
            file=sys.stderr,
        )
        return EXIT_NOCONV
    return EXIT_OK


def cmd_nonlinear(args: argparse.Namespace) -> int:
    settings = build_settings(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    cfg = settings.sim_config()
    force = forcing.ForcingProfile.from_name(settings.force, cfg.N)
    result = nonlinear.run_to_periodic(
        cfg,
        force,
        settings.body(),
        cycle_tol=settings.cycle_tol,
        state_tol=settings.state_tol,
        max_cycles=settings.periods_max,
        accelerate=not args.no_accelerate,
    )
    stem = f"nonlinear-{settings.shape}-{settings.force}-h{_h_tag(cfg.h)}"
    manifest_name = f"{stem}.manifest.json"
    record = {
        "shape": settings.shape,
        "force": settings.force,
        "h": cfg.h,
        "mean_gamma": result.mean_gamma,
        "cycles_run": result.cycles_run,
        "cycle_residual": result.cycle_residual,
        "converged": result.converged,
        "warm_subiters": result.warm_subiters,
        "manifest": manifest_name,
    }
    outputs = [f"{stem}.json", f"{stem}.periods.csv", f"{stem}.trajectory.csv"]
    _write_json(out / f"{stem}.json", record)
    _write_csv(
        out / f"{stem}.periods.csv",
        manifest_name,
        "period,mean_gamma,state_change",
        result.summary_rows(),
    )
    t, eta, mean_line = nonlinear.trajectory(result)
    _write_csv(
        out / f"{stem}.trajectory.csv",
        manifest_name,
        "t,eta,mean_line",
        zip(t.tolist(), eta.tolist(), mean_line.tolist()),
    )
    if args.trace:
        outputs.append(f"{stem}.trace.csv")
        _write_csv(
            out / f"{stem}.trace.csv",
            manifest_name,
            "t,gamma",
            zip(result.times.tolist(), result.gammas.tolist()),
        )
    _write_manifest(out, stem, "nonlinear", settings, None, outputs, time.perf_counter() - t0)
    print(
        f"mean_gamma = {_fmt(result.mean_gamma)}  cycles = {result.cycles_run}  "
        f"residual = {result.cycle_residual:.3e}"
    )
    if not result.converged:
        print(
            f"period map did not settle: mean-change residual {result.cycle_residual:.3e} "
            f"after {result.cycles_run} periods (cycle_tol {settings.cycle_tol:.1e}, "
            f"state_tol {settings.state_tol:.1e})",
            file=sys.stderr,
        )
        return EXIT_NOCONV
    return EXIT_OK


def _sweep_item(payload: dict):
    """One sweep item in a worker process; returns (h, record dict or None, error)."""
    settings = RunSettings(**payload["settings"])
    h = payload["h"]
    try:
        if payload["mode"] == "linear":
            _, sol, th = _linear_single(
                RunSettings(**{**payload["settings"], "h": h})
            )
            return h, {
                "G_z": th.G_z,
                "K": th.K,
                "gamma0_bar": th.gamma0_bar,
                "converged": sol.converged,
            }, None
        cfg = settings.sim_config(h=h)
        force = forcing.ForcingProfile.from_name(settings.force, cfg.N)
        result = nonlinear.run_to_periodic(
            cfg,
            force,
            settings.body(),
            cycle_tol=settings.cycle_tol,
            state_tol=settings.state_tol,
            max_cycles=settings.periods_max,
        )
        return h, {
            "mean_gamma": result.mean_gamma,
            "cycles": result.cycles_run,
            "converged": result.converged,
        }, None
    except Exception as exc:  # per-item isolation is part of the contract
        return h, None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = build_settings(args)
    out = _out_dir(args)
    t0 = time.perf_counter()
    try:
        h_values = [float(tok) for tok in args.h_list.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"bad --h-list: {exc}") from None
    if not h_values:
        raise ValueError("empty --h-list")
    items: dict = {}
    if args.jobs > 1:
        payloads = [
            {"settings": asdict(settings), "h": h, "mode": args.mode} for h in h_values
        ]
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for h, rec, err in pool.map(_sweep_item, payloads):
                items[h] = (rec, err)
    elif args.mode == "linear":
        # sequential path shares one mesh and auxiliary solve across h
        problem = None
        for h in h_values:
            try:
                problem, sol, th = _linear_single(
                    RunSettings(**{**asdict(settings), "h": h}), problem=problem
                )
                items[h] = (
                    {"G_z": th.G_z, "K": th.K, "gamma0_bar": th.gamma0_bar, "converged": sol.converged},
                    None,
                )
            except Exception as exc:
                items[h] = (None, f"{type(exc).__name__}: {exc}")
    else:
        for h in h_values:
            _, rec, err = _sweep_item({"settings": asdict(settings), "h": h, "mode": args.mode})
            items[h] = (rec, err)

    stem = f"sweep-{args.mode}-{settings.shape}-{settings.force}"
    manifest_name = f"{stem}.manifest.json"
    if args.mode == "linear":
        header = "h,G_z,K,gamma0_bar"
        value_key = "gamma0_bar"
        row_keys = ("G_z", "K", "gamma0_bar")
    else:
        header = "h,mean_gamma,cycles,converged"
        value_key = "mean_gamma"
        row_keys = ("mean_gamma", "cycles", "converged")
    rows = []
    plot_rows = []
    n_ok = 0
    for h in sorted(set(h_values)):
        rec, err = items[h]
        if rec is None:
            rows.append((h, *(["NA"] * len(row_keys))))
            print(f"h={format(h, 'g')}: FAILED ({err})", file=sys.stderr)
            continue
        n_ok += 1
        rows.append((h, *(rec[k] for k in row_keys)))
        plot_rows.append((h, rec[value_key]))
        print(f"h={format(h, 'g')}: {value_key} = {_fmt(rec[value_key])}")
    outputs = [f"{stem}.csv", f"{stem}.dat"]
    _write_csv(out / f"{stem}.csv", manifest_name, header, rows)
    (out / f"{stem}.dat").write_text(
        "\n".join(f"{_fmt(h)} {_fmt(v)}" for h, v in plot_rows) + "\n"
    )
    _write_manifest(out, stem, "sweep", settings, None, outputs, time.perf_counter() - t0)
    return EXIT_OK if n_ok else EXIT_SOLVER


def cmd_mesh(args: argparse.Namespace) -> int:
    if args.mesh_action == "generate":
        settings = build_settings(args)
        shape = settings.body()
        mesh = generate_mesh(shape, DomainSpec(settings.radius), settings.size_far, settings.size_body)
        path = Path(args.out or f"mesh-{settings.shape}.txt")
        path.parent.mkdir(parents=True, exist_ok=True)
        meshgen.write_mesh(mesh, path)
        print(
            f"{mesh.vertices.shape[0]} vertices, {mesh.cells.shape[0]} cells, "
            f"min angle {meshgen.min_angle(mesh):.1f} deg, sha256 {meshgen.mesh_hash(mesh)[:16]}"
        )
        return EXIT_OK
    mesh = meshgen.read_mesh(args.path)
    tags = {}
    for tag in mesh.boundary_tags:
        tags[tag.name] = tags.get(tag.name, 0) + 1
    print(f"vertices:  {mesh.vertices.shape[0]}")
    print(f"cells:     {mesh.cells.shape[0]}")
    print(f"min angle: {meshgen.min_angle(mesh):.2f} deg")
    print(f"r extent:  [0, {mesh.vertices[:, 0].max():.6g}]")
    print(f"z extent:  [{mesh.vertices[:, 1].min():.6g}, {mesh.vertices[:, 1].max():.6g}]")
    print(f"sha256:    {meshgen.mesh_hash(mesh)}")
    for name in sorted(tags):
        print(f"boundary {name}: {tags[name]} edges")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    from . import report

    return report.run_report(args.target, Path(args.runs), Path(args.out), normalize=not args.no_normalize)


# ---------------------------------------------------------------------------
# parser


def _add_run_flags(p: argparse.ArgumentParser, with_force: bool = True) -> None:
    p.add_argument("--config", help="TOML config file; flags override its values")
    p.add_argument("--shape", help="body shape: ellipsoid, drop, flipped-drop, sphere")
    if with_force:
        p.add_argument("--force", help="forcing profile: y1, y2, y3")
    p.add_argument("--radius", type=float, help="outer domain radius R")
    p.add_argument("--size-body", dest="size_body", type=float, help="target edge length at the body")
    p.add_argument("--size-far", dest="size_far", type=float, help="target edge length at the outer boundary")
    p.add_argument("--nsteps", type=int, help="time steps per period")
    p.add_argument("--omega", help="body-coupling relaxation in (0,1] or 'auto'")
    p.add_argument("--subiter-tol", dest="subiter_tol", type=float, help="body subiteration tolerance")
    p.add_argument("--subiter-max", dest="subiter_max", type=int, help="max body subiterations per step")
    p.add_argument("--out", help="output directory (default runs/)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periprop",
        description="Self-propulsion of a rigid axisymmetric body driven by a zero-mean periodic internal force.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resistance", help="steady auxiliary Stokes solve and resistance K")
    _add_run_flags(p, with_force=False)
    p.add_argument("--far-field", dest="far_field", choices=("matched", "zero"), default="matched")
    p.set_defaults(func=cmd_resistance)

    p = sub.add_parser("linear", help="periodic linearized flow, thrust G_z, prediction G_z/K")
    _add_run_flags(p)
    p.add_argument("--h", type=float, help="Stokes number")
    p.add_argument("--periods-max", dest="periods_max", type=int, help="max mean-projection cycles")
    p.set_defaults(func=cmd_linear)

    p = sub.add_parser("nonlinear", help="direct nonlinear integration to the periodic regime")
    _add_run_flags(p)
    p.add_argument("--h", type=float, help="Stokes number")
    p.add_argument("--periods-max", dest="periods_max", type=int, help="max marched periods")
    p.add_argument("--cycle-tol", dest="cycle_tol", type=float, help="per-period mean velocity tolerance")
    p.add_argument("--state-tol", dest="state_tol", type=float, help="period-boundary state tolerance")
    p.add_argument("--trace", action="store_true", help="also write the full t,gamma history")
    p.add_argument(
        "--no-accelerate",
        action="store_true",
        help="disable transient subspace extrapolation between periods",
    )
    p.set_defaults(func=cmd_nonlinear)

    p = sub.add_parser("sweep", help="repeat a pipeline over a list of Stokes numbers")
    _add_run_flags(p)
    p.add_argument("--mode", choices=("linear", "nonlinear"), default="linear")
    p.add_argument("--h-list", dest="h_list", required=True, help="comma-separated Stokes numbers")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--periods-max", dest="periods_max", type=int)
    p.add_argument("--cycle-tol", dest="cycle_tol", type=float)
    p.add_argument("--state-tol", dest="state_tol", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("mesh", help="generate or inspect a mesh file")
    mesh_sub = p.add_subparsers(dest="mesh_action", required=True)
    pg = mesh_sub.add_parser("generate")
    _add_run_flags(pg, with_force=False)
    pg.set_defaults(func=cmd_mesh)
    pi = mesh_sub.add_parser("inspect")
    pi.add_argument("path", help="mesh text file")
    pi.set_defaults(func=cmd_mesh)

    p = sub.add_parser("report", help="tabulate run outputs against published reference values")
    p.add_argument("--target", required=True, choices=("table1", "table2", "table3", "table4"))
    p.add_argument("--runs", required=True, help="directory holding run outputs")
    p.add_argument("--out", required=True, help="markdown output path (CSV and PNG twins alongside)")
    p.add_argument("--no-normalize", action="store_true", help="skip the fitted single-constant normalization")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, MeshFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
