"""Command-line front end: ``chlog {run,convergence,mg-bench,compare,positivity}``.

Exit codes: 0 success, 2 invalid configuration, 3 solver non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, config
from .config import ConfigError, RunConfig, dump_config, load_config
from .diagnostics import (
    SchemeVariant,
    Trajectory,
    comparison_study,
    convergence_study,
    energy_audit,
    init_convergence_profile,
    mg_complexity_study,
    positivity_study,
    random_initial,
    run_simulation,
)
from .grid import CellField, GridSpec
from .multigrid import ConvergenceError
from .potential import ModelParams
from .schemes import SchemeKind, SchemeState
from .utils import steps_for, write_csv

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

SERIES_HEADER = (
    "step",
    "time",
    "energy",
    "modified_energy",
    "mass",
    "phi_min",
    "phi_max",
    "vcycles",
    "final_residual",
    "saturated",
)


def write_snapshot(
    stem: str | Path,
    phi: CellField,
    time: float,
    scheme: SchemeKind,
    params: ModelParams,
    step: int = 0,
) -> Path:
    """Raw little-endian float64 values (x fastest) in ``<stem>.bin`` plus a JSON ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    phi.data.astype("<f8").tofile(stem.with_suffix(".bin"))
    sidecar = {
        "dim": phi.grid.dim,
        "n": phi.grid.n,
        "length": phi.grid.length,
        "time": time,
        "step": step,
        "scheme": scheme.value,
        "epsilon": params.epsilon,
        "theta0": params.theta0,
        "delta": params.delta,
        "stabilization_a": params.stabilization_a,
        "mobility": params.mobility.kind,
        "mobility_value": params.mobility.value,
        "dtype": "<f8",
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return stem.with_suffix(".bin")


def read_snapshot(stem: str | Path) -> tuple[CellField, dict[str, Any]]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text(encoding="utf-8"))
    grid = GridSpec(int(meta["dim"]), int(meta["n"]), float(meta["length"]))
    data = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    if data.size != grid.size:
        raise OSError(f"{stem}.bin holds {data.size} values, sidecar says {grid.size}")
    return CellField(grid, data.astype(np.float64)), meta


def _series_rows(traj: Trajectory) -> list[tuple[object, ...]]:
    return [
        (
            r.step,
            r.time,
            r.energy,
            r.modified_energy,
            r.mass,
            r.phi_min,
            r.phi_max,
            r.vcycles,
            r.final_residual,
            r.saturation_flag,
        )
        for r in traj.records
    ]


def initial_field(cfg: RunConfig, grid: GridSpec) -> CellField:
    init = cfg.init
    if init.kind == "random":
        return random_initial(grid, init.mean, init.amplitude, init.seed)
    if init.kind == "convergence_profile":
        try:
            return init_convergence_profile(grid)
        except ValueError as exc:
            raise ConfigError(f"grid.length: {exc}") from exc
    if init.kind == "zero":
        return CellField.zeros(grid)
    phi, _ = read_snapshot(init.path)
    if phi.grid != grid:
        raise ConfigError(f"init.path: snapshot grid {phi.grid} does not match {grid}")
    return phi


def _grid(cfg: RunConfig) -> GridSpec:
    try:
        return GridSpec(cfg.grid.dim, cfg.grid.n, cfg.grid.length)
    except ValueError as exc:
        raise ConfigError(f"grid.{exc}") from exc


def cmd_run(cfg: RunConfig, out: Path) -> int:
    grid = _grid(cfg)
    params = cfg.model_params()
    kind = SchemeKind(cfg.model.scheme)
    every = cfg.output.snapshot_every

    def snapshot(state: SchemeState) -> None:
        if every and state.step_index % every == 0:
            write_snapshot(
                out / f"phi_{state.step_index:06d}", state.phi_curr, state.time, kind, params,
                state.step_index,
            )

    try:
        steps_for(cfg.time.t_final, cfg.time.dt)
    except ValueError as exc:
        raise ConfigError(f"time.dt: {exc}") from exc
    phi0 = initial_field(cfg, grid)
    try:
        traj = run_simulation(
            phi0, kind, params, cfg.time.dt, cfg.time.t_final, grid, cfg.mg_config(),
            record_every=cfg.output.record_every, on_step=snapshot,
        )
    except ConvergenceError as exc:
        partial = exc.trajectory
        if isinstance(partial, Trajectory):
            write_csv(out / "series.csv", SERIES_HEADER, _series_rows(partial))
        raise
    write_csv(out / "series.csv", SERIES_HEADER, _series_rows(traj))
    assert traj.state is not None
    write_snapshot(out / "phi_final", traj.state.phi_curr, traj.state.time, kind, params, traj.steps)
    audit = energy_audit(traj, cfg.mg.tol_tau)
    log.info(
        "run done: %d steps, %d %s records checked, %d violations",
        traj.steps, audit.checked, audit.series, len(audit.violations),
    )
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, out: Path) -> int:
    res = cfg.study.resolutions
    if len(res) < 2 or any(b != 2 * a for a, b in zip(res, res[1:])):
        raise ConfigError(f"study.resolutions must double at every entry, got {list(res)}")
    if cfg.grid.length != config.CONV_LENGTH:
        raise ConfigError(f"grid.length must be {config.CONV_LENGTH} for the convergence profile")
    rows = convergence_study(
        SchemeKind(cfg.model.scheme),
        cfg.model_params(),
        res,
        cfg.mg_config(),
        length=cfg.grid.length,
        t_final=cfg.time.t_final,
        dt_factor=cfg.study.dt_factor,
    )
    write_csv(
        out / "convergence.csv",
        ("h_coarse", "h_fine", "error_l2", "rate"),
        [(r.h_coarse, r.h_fine, r.error_l2, r.rate) for r in rows],
    )
    return EXIT_OK


def cmd_mg_bench(cfg: RunConfig, out: Path) -> int:
    curves = mg_complexity_study(
        SchemeKind(cfg.model.scheme),
        cfg.model_params(),
        cfg.study.theta0s,
        cfg.study.grid_sizes,
        cfg.mg_config(),
        dt=cfg.time.dt,
        steps=cfg.study.steps,
        length=cfg.grid.length,
    )
    rows = [
        (c.theta0, c.n, k, r) for c in curves for k, r in enumerate(c.residuals)
    ]
    write_csv(out / "mg_residuals.csv", ("theta0", "grid_n", "cycle_index", "residual"), rows)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, out: Path) -> int:
    grid = _grid(cfg)
    try:
        variants = [SchemeVariant.parse(label) for label in cfg.study.schemes]
    except ValueError as exc:
        raise ConfigError(f"study.schemes: {exc}") from exc
    probes = cfg.study.probe_times
    rows = comparison_study(
        variants,
        cfg.model_params(),
        cfg.study.dt_list,
        grid,
        cfg.mg_config(),
        cfg.study.target_dt,
        initial_field(cfg, grid),
        probe_times=probes,
    )
    header = ("scheme", "dt", *(f"err_t{t}" for t in probes), "avg_vcycles", "max_phi")
    write_csv(
        out / "comparison.csv",
        header,
        [(r.label, r.dt, *(r.errors[t] for t in probes), r.avg_vcycles, r.max_phi) for r in rows],
    )
    return EXIT_OK


def cmd_positivity(cfg: RunConfig, out: Path) -> int:
    grid = _grid(cfg)
    rows = positivity_study(
        cfg.study.positivity_rows,
        cfg.model_params(),
        grid,
        cfg.mg_config(),
        initial_field(cfg, grid),
        dt=cfg.time.dt,
        t_final=cfg.time.t_final,
        kind=SchemeKind(cfg.model.scheme),
    )
    write_csv(
        out / "positivity.csv",
        ("theta0", "delta", "lambda", "max_phi", "min_phi"),
        [(r.theta0, r.delta, r.sweeps, r.max_phi, r.min_phi) for r in rows],
    )
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "convergence": cmd_convergence,
    "mg-bench": cmd_mg_bench,
    "compare": cmd_compare,
    "positivity": cmd_positivity,
}


def default_config(command: str) -> RunConfig:
    """Built-in protocol for ``command`` when no ``--config`` file is given."""
    cfg = RunConfig()
    if command == "convergence":
        return replace(
            cfg,
            model=replace(
                cfg.model, epsilon=config.CONV_EPSILON, theta0=config.CONV_THETA0,
                delta=config.CONV_DELTA,
            ),
            grid=replace(cfg.grid, length=config.CONV_LENGTH, n=config.CONV_RESOLUTIONS[-1]),
            time=replace(cfg.time, t_final=config.CONV_T_FINAL),
            init=replace(cfg.init, kind="convergence_profile"),
        )
    if command == "mg-bench":
        return replace(
            cfg,
            model=replace(cfg.model, epsilon=config.MGB_EPSILON),
            grid=replace(cfg.grid, length=config.MGB_LENGTH),
            time=replace(cfg.time, dt=config.MGB_DT, t_final=config.MGB_DT * config.MGB_STEPS),
            init=replace(cfg.init, kind="convergence_profile"),
        )
    return cfg


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        cfg = replace(cfg, init=replace(cfg.init, seed=args.seed))
    if args.parallel is not None:
        cfg = replace(cfg, mg=replace(cfg.mg, parallel=args.parallel))
    if args.t_final is not None:
        cfg = replace(cfg, time=replace(cfg.time, t_final=args.t_final))
    if args.n is not None:
        cfg = replace(cfg, grid=replace(cfg.grid, n=args.n))
    if args.output is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=args.output))
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument(
        "--dump-config", action="store_true", help="print the effective configuration and exit"
    )
    common.add_argument("--seed", type=int, help="seed of the random initial data")
    mode = common.add_mutually_exclusive_group()
    mode.add_argument(
        "--serial", dest="parallel", action="store_false", default=None,
        help="deterministic serial smoother kernels",
    )
    mode.add_argument(
        "--parallel", dest="parallel", action="store_true", help="multithreaded colour sweeps"
    )
    common.add_argument("--output", help="output directory")
    common.add_argument("--t-final", type=float, dest="t_final")
    common.add_argument("--n", type=int, help="cells per axis")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(
        prog="chlog",
        description="Positivity-preserving Cahn-Hilliard / Allen-Cahn solvers with FAS multigrid",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single simulation, writes series.csv")
    sub.add_parser("convergence", parents=[common], help="refinement-path error table")
    sub.add_parser("mg-bench", parents=[common], help="V-cycle residual histories")
    sub.add_parser("compare", parents=[common], help="scheme errors against a BDF2 target")
    sub.add_parser("positivity", parents=[common], help="solution extremes per quench parameter")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        base = load_config(args.config) if args.config else default_config(args.command)
        cfg = apply_overrides(base, args)
        if args.dump_config:
            print(dump_config(cfg), end="")
            return EXIT_OK
        out = Path(cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        log.error("solver failed: %s", exc)
        return EXIT_SOLVER
    except ValueError as exc:
        # parameters that only reach a model or solver inside a study (positivity rows, theta0s)
        log.error("invalid study parameter: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
