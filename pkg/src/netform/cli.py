"""Command-line front end.

    netform --preset base --out-dir out --verify-nash
    netform --config run.json --mc-paths 10000 --seed 7
    netform --manifest out/manifest.json --out-dir again

Exit codes: 0 success, 1 invalid input, 2 solver did not converge,
3 Nash verification failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .best_response import SingularSystemError
from .fbode import EquilibriumSolution, SolverDivergence, fixed_point_solve
from .model import (
    WEIGHT_RULES,
    ModelParams,
    SolverConfig,
    TimeGrid,
    ValidationError,
    config_from_dict,
    config_to_dict,
    load_config,
    PRESETS,
    preset,
)
from .montecarlo import RNG_NAME, empirical_cost, simulate_paths
from .nash import deviation_check, evaluate_cost

log = logging.getLogger("netform")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_VERIFY = 0, 1, 2, 3
MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for non-convergence here.
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    params: ModelParams
    grid: TimeGrid
    config: SolverConfig
    preset: str | None = None
    options: dict = field(default_factory=dict)
    converged: bool = False
    iterations: int = 0
    final_residual: float | None = None
    weights_in_unit_interval: bool = True
    wall_time_s: float = 0.0
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "manifest_version": MANIFEST_VERSION,
            "software": f"netform {self.version}",
            "preset": self.preset,
            "config": config_to_dict(self.params, self.grid, self.config),
            "options": dict(self.options),
            "outcome": {
                "converged": self.converged,
                "iterations": self.iterations,
                "final_residual": self.final_residual,
                "weights_in_unit_interval": self.weights_in_unit_interval,
                "wall_time_s": self.wall_time_s,
            },
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        if doc.get("manifest_version") != MANIFEST_VERSION:
            raise ValidationError("bad-manifest", f"unsupported manifest_version {doc.get('manifest_version')!r}")
        params, grid, config = config_from_dict(doc["config"])
        out = doc.get("outcome", {})
        software = doc.get("software", "")
        return cls(
            params=params,
            grid=grid,
            config=config,
            preset=doc.get("preset"),
            options=dict(doc.get("options", {})),
            converged=out.get("converged", False),
            iterations=out.get("iterations", 0),
            final_residual=out.get("final_residual"),
            weights_in_unit_interval=out.get("weights_in_unit_interval", True),
            wall_time_s=out.get("wall_time_s", 0.0),
            version=software.removeprefix("netform "),
            extra=dict(doc.get("extra", {})),
        )


def _fmt(v: float) -> str:
    return f"{v:.16e}"


def _atomic_write_rows(path: Path, header: list[str], rows) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_csv(solution: EquilibriumSolution | None, destination: str | Path) -> tuple[Path, Path]:
    """Write ``trajectories.csv`` and ``weights.csv`` into ``destination``.

    Columns are ordered by group (1-based labels), then by target group.
    Nothing is written if the solution is missing or empty.
    """
    if solution is None or solution.trajectories.xbar.size == 0:
        raise ValueError("cannot emit an empty solution")
    tr = solution.trajectories
    K, n_nodes = tr.xbar.shape
    if solution.weights.w.shape != (K, K, n_nodes):
        raise ValueError("weights and trajectories disagree in shape")
    t = tr.grid.times
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)

    traj_header = ["t"] + [f"{name}_{k + 1}" for k in range(K) for name in ("xbar", "ybar", "zbar")]
    traj_cols = [t] + [series[k] for k in range(K) for series in (tr.xbar, tr.ybar, tr.zbar)]
    w_header = ["t"] + [f"w_{k + 1}_{l + 1}" for k in range(K) for l in range(K)]
    w_cols = [t] + [solution.weights.w[k, l] for k in range(K) for l in range(K)]

    traj_rows = [[_fmt(c[i]) for c in traj_cols] for i in range(n_nodes)]
    w_rows = [[_fmt(c[i]) for c in w_cols] for i in range(n_nodes)]
    traj_path, w_path = dest / "trajectories.csv", dest / "weights.csv"
    _atomic_write_rows(traj_path, traj_header, traj_rows)
    _atomic_write_rows(w_path, w_header, w_rows)
    return traj_path, w_path


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netform", description="Equilibrium network formation among K groups of agents.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    src.add_argument("--config", type=Path, help="JSON config file")
    src.add_argument("--manifest", type=Path, help="re-run from a manifest written by a previous run")
    p.add_argument("--out-dir", type=Path, default=Path("out"))
    p.add_argument("--eps", type=float, help="sup-norm convergence tolerance")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--damping", type=float)
    p.add_argument("--weight-rule", choices=WEIGHT_RULES)
    p.add_argument("--verify-nash", action="store_true", help="run the unilateral deviation check")
    p.add_argument("--nash-tol", type=float, default=None, help="relative tolerance on the Nash gap (default 1e-4)")
    p.add_argument("--mc-paths", type=int, help="number of Monte Carlo paths (needs --seed)")
    p.add_argument("--seed", type=int)
    p.add_argument("--refine", action="store_true", help="also solve with dt/2 and report the difference")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> tuple[ModelParams, TimeGrid, SolverConfig, str | None, dict]:
    options = {"verify_nash": False, "nash_tol": 1e-4, "mc_paths": None, "seed": None, "refine": False}
    name = None
    if args.preset is not None:
        params, grid, config = preset(args.preset)
        name = args.preset
    elif args.config is not None:
        try:
            params, grid, config = load_config(args.config)
        except OSError as exc:
            raise ValidationError("bad-config", str(exc)) from None
    else:
        try:
            doc = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError("bad-manifest", str(exc)) from None
        man = RunManifest.from_dict(doc)
        params, grid, config, name = man.params, man.grid, man.config, man.preset
        options.update(man.options)

    if args.dt is not None:
        grid = TimeGrid(grid.horizon_T, args.dt)
    overrides = {"epsilon": args.eps, "max_iters": args.max_iter, "damping": args.damping,
                 "weight_rule": args.weight_rule}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        config = SolverConfig(**{**config.__dict__, **overrides})
    if args.verify_nash:
        options["verify_nash"] = True
    if args.nash_tol is not None:
        options["nash_tol"] = args.nash_tol
    if args.refine:
        options["refine"] = True
    if (args.mc_paths is None) != (args.seed is None):
        raise UsageError("--mc-paths and --seed must be given together")
    if args.mc_paths is not None:
        if args.mc_paths < 1:
            raise UsageError("--mc-paths must be >= 1")
        options["mc_paths"], options["seed"] = args.mc_paths, args.seed
    return params, grid, config, name, options


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"netform: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    try:
        params, grid, config, name, options = _resolve(args)
    except (ValidationError, UsageError) as exc:
        print(f"netform: error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out_dir)
    manifest = RunManifest(params, grid, config, preset=name, options=options)
    start = time.perf_counter()
    try:
        solution = fixed_point_solve(params, grid, config)
    except (SolverDivergence, SingularSystemError) as exc:
        print(f"netform: solver failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ValueError as exc:
        print(f"netform: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    manifest.wall_time_s = time.perf_counter() - start
    manifest.converged = solution.converged
    manifest.iterations = solution.iterations
    manifest.final_residual = solution.residual_history[-1] if solution.residual_history else None
    manifest.weights_in_unit_interval = solution.weights_in_unit_interval
    if not solution.weights_in_unit_interval:
        log.info("equilibrium weights leave [0, 1] (unconstrained minimiser)")

    emit_csv(solution, out)
    log.info("solved in %d iterations (converged=%s); wrote %s", solution.iterations, solution.converged, out)

    status = EXIT_OK
    if not solution.converged:
        status = EXIT_NOT_CONVERGED

    if options["refine"] and solution.converged:
        fine_grid = grid.refined(2)
        try:
            fine = fixed_point_solve(params, fine_grid, config)
        except (SolverDivergence, SingularSystemError) as exc:
            print(f"netform: refined solve failed: {exc}", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        diff = fine.trajectories.xbar[:, -1] - solution.trajectories.xbar[:, -1]
        manifest.extra["refinement"] = {
            "dt": grid.dt,
            "dt_refined": fine_grid.dt,
            "refined_converged": fine.converged,
            "terminal_xbar_difference": diff.tolist(),
        }

    if options["verify_nash"] and solution.converged:
        tol = options["nash_tol"]
        reports = [deviation_check(solution, k, params, grid) for k in range(params.K)]
        passed = all(r.passes(tol) for r in reports)
        _write_json(out / "nash_report.json", {
            "relative_tolerance": tol,
            "passed": passed,
            "groups": [r.to_dict() for r in reports],
        })
        if not passed:
            print("netform: Nash verification failed", file=sys.stderr)
            status = EXIT_VERIFY

    if options["mc_paths"] is not None and solution.converged:
        pathset = simulate_paths(solution, params, grid, options["mc_paths"], options["seed"])
        estimates = empirical_cost(pathset, solution, params, grid)
        rows = []
        for est in estimates:
            k = est.group
            analytic = evaluate_cost(k, solution.weights.w[k], solution.trajectories.xbar, params, grid).total
            mean_err = np.abs(pathset.paths[:, k].mean(axis=0) - solution.trajectories.xbar[k]).max()
            rows.append([k + 1, pathset.M, pathset.seed, _fmt(est.mean),
                         "" if est.std_error is None else _fmt(est.std_error), _fmt(analytic), _fmt(mean_err)])
        _atomic_write_rows(out / "mc_summary.csv",
                           ["group", "paths", "seed", "cost_estimate", "std_error", "analytic_cost",
                            "max_abs_mean_error"], rows)
        manifest.extra["rng"] = RNG_NAME

    _write_json(out / "manifest.json", manifest.to_dict())
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
