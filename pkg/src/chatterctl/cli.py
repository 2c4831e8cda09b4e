"""Command-line front end: solve runs, validation checks, fixture export.

Subcommands
-----------
solve            run the shooting solver on a built-in problem and export the
                 trajectory CSV, chattering schedule CSV and convergence JSON
validate         run oracle comparisons (lqr | lp | gradients | tables)
export-fixtures  write the grocer parameter tables as CSV

Exit codes: 0 success/converged, 2 iteration budget exhausted, 1 error.
Verbosity comes from the CHATTER_LOG env var (quiet | info | debug).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import problems, shooting
from .chattering import GridParams, InfeasibleLevels, realize_signal, solve_measure_lp
from .model import (
    ControlProblem,
    HamiltonianContext,
    NonFiniteEvaluation,
    eval_dynamics,
    grad_h_costate,
    grad_h_state,
)
from .problems import ConfigError
from .propagation import TimePartition, Trajectory

log = logging.getLogger("chatterctl")

#: the grocer benchmark runs on a unit horizon; interval count is the knob
SUPPLY_CHAIN_HORIZON = 1.0

PROBLEM_CHOICES = ("lqr", "supply-chain")
VALIDATE_CHOICES = ("lqr", "lp", "gradients", "tables")


@dataclass
class SolveConfig:
    """One solve run, as configured from flags and/or a JSON config file."""

    problem: str = "lqr"
    intervals: int = 100
    levels: int = 101
    level_cap: int = 4096
    gamma: float = 0.5
    delta_p: Optional[float] = None
    eps: float = 1e-3
    max_iters: int = 500
    ridge: float = 1e-8
    p0: Optional[List[float]] = None
    demand: str = "seasonal"
    amplitude: float = 5.0
    period: float = 0.5
    fixed_cost_mode: str = "on-order"
    out_dir: str = "."

    def validate(self) -> None:
        if self.problem not in PROBLEM_CHOICES:
            raise ConfigError(f"problem must be one of {PROBLEM_CHOICES}")
        if self.intervals < 1:
            raise ConfigError("intervals must be >= 1")
        if self.levels < 2:
            raise ConfigError("levels must be >= 2")
        if self.level_cap < 1:
            raise ConfigError("level-cap must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.delta_p is not None and not self.delta_p > 0:
            raise ConfigError("delta-p must be positive")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if self.max_iters < 1:
            raise ConfigError("max-iters must be >= 1")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.demand not in problems.DEMAND_PROFILES:
            raise ConfigError(f"demand must be one of {problems.DEMAND_PROFILES}")
        if self.fixed_cost_mode not in ("on-order", "always"):
            raise ConfigError("fixed-cost-mode must be 'on-order' or 'always'")

    def to_json_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            out[f.name.replace("_", "-")] = getattr(self, f.name)
        return out

    @classmethod
    def from_json_dict(cls, raw: dict) -> "SolveConfig":
        known = {f.name.replace("_", "-"): f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[known[key]] = value
        return cls(**kwargs)


def parse_config_file(path: str) -> SolveConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    return SolveConfig.from_json_dict(raw)


def serialize_config(config: SolveConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_problem(config: SolveConfig) -> ControlProblem:
    if config.problem == "lqr":
        return problems.build_lqr()
    demand = problems.synthetic_demand(config.demand, config.amplitude, config.period)
    return problems.build_supply_chain(
        demand,
        SUPPLY_CHAIN_HORIZON,
        config.intervals,
        fixed_cost_mode=config.fixed_cost_mode,
    )


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def _num(value: float) -> str:
    return format(float(value), ".17g")


def export_trajectory(trajectory: Trajectory, path) -> None:
    """CSV of the control law: one row per interval start plus a terminal row
    with empty control/Hamiltonian cells.  Numbers carry 17 significant
    digits so parsing them back reproduces the exact doubles."""
    pts = trajectory.points
    n = pts[0].x.size
    m = pts[0].u.size if pts[0].u is not None else 0
    header = (
        ["t"]
        + [f"x_{j}" for j in range(n)]
        + [f"p_{j}" for j in range(n)]
        + [f"u_{j}" for j in range(m)]
        + ["H", "J_cum"]
    )
    cum = 0.0
    lines = [",".join(header)]
    for i, pt in enumerate(pts):
        cells = [_num(pt.t)]
        cells += [_num(v) for v in pt.x]
        cells += [_num(v) for v in pt.p]
        if pt.u is not None:
            cells += [_num(v) for v in pt.u]
            cells += [_num(pt.h_value), _num(cum)]
            cum += float(trajectory.stage_costs[i])
        else:
            cells += ["" for _ in range(m)]
            cells += ["", _num(trajectory.accumulated_cost)]
        lines.append(",".join(cells))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise OSError(f"failed writing trajectory CSV to {path}: {err}") from err


def export_schedule(trajectory: Trajectory, path) -> None:
    """CSV of the realized chattering schedule: the duty-cycle segments of
    every interval with their level vectors."""
    pts = trajectory.points
    m = pts[0].u.size if pts[0].u is not None else 0
    header = ["interval", "start", "end", "level_index"] + [f"u_{j}" for j in range(m)]
    lines = [",".join(header)]
    for i in range(len(pts) - 1):
        pt = pts[i]
        dt = pts[i + 1].t - pt.t
        signal = realize_signal(pt.grid, pt.measure, pt.t, dt)
        for start, end, k in signal.segments:
            cells = [str(i), _num(start), _num(end), str(k)]
            cells += [_num(v) for v in pt.grid.levels[k]]
            lines.append(",".join(cells))
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as err:
        raise OSError(f"failed writing schedule CSV to {path}: {err}") from err


def export_convergence(result: shooting.ShootingResult, path) -> None:
    payload = {
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "residual": float(result.residual),
        "residual_history": [float(r) for r in result.residual_history],
        "cost": float(result.trajectory.accumulated_cost) if result.trajectory else None,
        "p0": [float(v) for v in result.p0_final],
        "p_T": [float(v) for v in result.trajectory.terminal.p] if result.trajectory else None,
        "message": result.message,
    }
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as err:
        raise OSError(f"failed writing convergence JSON to {path}: {err}") from err


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def run_solve(config: SolveConfig) -> int:
    try:
        config.validate()
        problem = build_problem(config)
        if config.p0 is not None and len(config.p0) != problem.state_dim:
            raise ConfigError(
                f"p0 must have {problem.state_dim} entries, got {len(config.p0)}"
            )
        partition = TimePartition.uniform(problem.horizon, config.intervals)
        p0 = np.zeros(problem.state_dim) if config.p0 is None else np.asarray(config.p0, float)
        shooting_config = shooting.ShootingConfig(
            p0_initial=p0,
            gamma=config.gamma,
            delta_p=config.delta_p,
            epsilon=config.eps,
            max_iterations=config.max_iters,
            ridge=config.ridge,
        )
        grid_params = GridParams(config.levels, config.level_cap)

        def progress(iteration: int, residual: float, cost: float) -> None:
            log.debug(
                "iteration %d: residual %.6e cost %.6e", iteration, residual, cost
            )

        started = time.perf_counter()
        result = shooting.solve(
            problem, partition, shooting_config, grid_params, progress=progress
        )
        elapsed = time.perf_counter() - started
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if result.trajectory is not None:
            export_trajectory(result.trajectory, out_dir / "trajectory.csv")
            export_schedule(result.trajectory, out_dir / "schedule.csv")
        export_convergence(result, out_dir / "convergence.json")
        log.info(
            "%s: %s after %d iteration(s) in %.2fs; best residual %.3e; cost %s",
            config.problem,
            "converged" if result.converged else "not converged",
            result.iterations,
            elapsed,
            result.residual,
            f"{result.trajectory.accumulated_cost:.6g}" if result.trajectory else "n/a",
        )
        if not result.converged and result.message:
            log.info("%s", result.message)
        return 0 if result.converged else 2
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (NonFiniteEvaluation, InfeasibleLevels) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def check_lqr(intervals: int = 100, levels: int = 101) -> Tuple[bool, List[str]]:
    """Solve the regulator and compare the state trajectory and cost against
    the closed-form optimum."""
    problem = problems.build_lqr()
    partition = TimePartition.uniform(problem.horizon, intervals)
    config = shooting.ShootingConfig(p0_initial=np.zeros(1))
    result = shooting.solve(problem, partition, config, GridParams(levels, 4096))
    trajectory = result.trajectory
    exact = np.array([problems.lqr_analytic_solution(t)[0] for t in partition.times])
    states = trajectory.states()[:, 0]
    rel_err = float(np.max(np.abs(states - exact) / np.abs(exact)))
    j_star = problems.lqr_analytic_solution(0.0)[3]
    cost_err = abs(trajectory.accumulated_cost - j_star) / j_star
    ok = result.converged and rel_err <= 0.05 and cost_err <= 0.05
    lines = [
        f"shooting converged: {result.converged} ({result.iterations} iterations, "
        f"residual {result.residual:.3e})",
        f"max relative state error vs analytic solution: {rel_err:.4f} (limit 0.05)",
        f"relative cost error vs analytic optimum: {cost_err:.4f} (limit 0.05)",
    ]
    return ok, lines


def check_lp(instances: int = 1000, seed: int = 20250810) -> Tuple[bool, List[str]]:
    """Measure LP against brute-force vertex enumeration on random instances."""
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(instances):
        k = int(rng.integers(1, 9))
        h = rng.uniform(-10.0, 10.0, size=k)
        measure = solve_measure_lp(h)
        w = measure.weights
        objective = float(w @ h)
        vertex_best = min(float(h[j]) for j in range(k))
        simplex_ok = (
            abs(float(w.sum()) - 1.0) <= 1e-12
            and np.all(w >= 0.0)
            and np.all(w <= 1.0)
        )
        if objective != vertex_best or not simplex_ok:
            failures += 1
    ok = failures == 0
    return ok, [f"{instances - failures}/{instances} instances match the vertex oracle exactly"]


def _fd_reference(problem: ControlProblem, ctx: HamiltonianContext, u) -> np.ndarray:
    stripped = dataclasses.replace(problem, hamiltonian_x_gradient=None)
    return grad_h_state(stripped, ctx, u)


def check_gradients(points_per_problem: int = 500, seed: int = 20250811) -> Tuple[bool, List[str]]:
    """Analytic dH/dx against central differences, and dH/dp against the
    dynamics, on random evaluation points for both built-in problems."""
    rng = np.random.default_rng(seed)
    lines: List[str] = []
    ok = True
    demand = problems.synthetic_demand("seasonal", 5.0, 0.5)
    cases = [
        ("lqr", problems.build_lqr(), 20.0, 50.0),
        ("supply-chain", problems.build_supply_chain(demand, 1.0, 200), 20.0, 100.0),
    ]
    for name, problem, x_scale, p_scale in cases:
        worst = 0.0
        bad = 0
        for _ in range(points_per_problem):
            t = float(rng.uniform(0.0, problem.horizon))
            x = rng.uniform(0.0, x_scale, size=problem.state_dim)
            if problem.state_lower is None:
                x = x - 0.5 * x_scale
            p = rng.uniform(-p_scale, p_scale, size=problem.state_dim)
            u = rng.uniform(problem.control_lower, problem.control_upper)
            ctx = HamiltonianContext(t, x, p)
            analytic = grad_h_state(problem, ctx, u)
            fd = _fd_reference(problem, ctx, u)
            tol = max(1e-6, 1e-4 * float(np.linalg.norm(analytic)))
            err = float(np.max(np.abs(analytic - fd)))
            worst = max(worst, err / tol)
            if err > tol:
                bad += 1
            if not np.array_equal(
                grad_h_costate(problem, ctx, u), eval_dynamics(problem, t, x, u)
            ):
                bad += 1
        ok = ok and bad == 0
        lines.append(
            f"{name}: {points_per_problem - bad}/{points_per_problem} points within "
            f"tolerance (worst err/tol {worst:.2e}); dH/dp identical to dynamics"
        )
    return ok, lines


def check_tables() -> Tuple[bool, List[str]]:
    """Byte-compare the embedded parameter tables, canonically rendered,
    against the shipped CSV fixtures."""
    lines = []
    ok = True
    for table, render in problems.RENDERERS.items():
        expected = problems.fixture_text(table)
        actual = render()
        match = expected == actual
        ok = ok and match
        lines.append(f"{table}: {'match' if match else 'MISMATCH'}")
    return ok, lines


CHECKS = {
    "lqr": check_lqr,
    "lp": check_lp,
    "gradients": check_gradients,
    "tables": check_tables,
}


def run_validate(target: str) -> int:
    if target not in CHECKS:
        print(f"error: unknown validation target {target!r}", file=sys.stderr)
        return 1
    ok, lines = CHECKS[target]()
    for line in lines:
        print(f"  {line}")
    print(f"validate {target}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def run_export_fixtures(out_dir: str) -> int:
    try:
        target = Path(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        for table, fname in problems.FIXTURE_FILES.items():
            (target / fname).write_text(problems.RENDERERS[table](), encoding="utf-8")
            print(f"wrote {target / fname}")
        return 0
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _parse_p0(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"could not parse --p0 {text!r}: {err}") from err


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chatterctl",
        description="Chattering-based Hamiltonian optimal control solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the shooting solver on a built-in problem")
    sp.add_argument("--problem", choices=PROBLEM_CHOICES)
    sp.add_argument("--intervals", type=int)
    sp.add_argument("--levels", type=int)
    sp.add_argument("--level-cap", type=int, dest="level_cap")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--delta-p", type=float, dest="delta_p")
    sp.add_argument("--eps", type=float)
    sp.add_argument("--max-iters", type=int, dest="max_iters")
    sp.add_argument("--ridge", type=float)
    sp.add_argument("--p0", type=str, help="comma-separated initial costate guess")
    sp.add_argument("--demand", choices=problems.DEMAND_PROFILES)
    sp.add_argument("--amplitude", type=float)
    sp.add_argument("--period", type=float)
    sp.add_argument(
        "--fixed-cost-mode", choices=("on-order", "always"), dest="fixed_cost_mode"
    )
    sp.add_argument("--out-dir", type=str, dest="out_dir")
    sp.add_argument("--config", type=str, help="JSON config file; flags override it")

    vp = sub.add_parser("validate", help="run oracle comparisons")
    vp.add_argument("target", choices=VALIDATE_CHOICES)

    ep = sub.add_parser("export-fixtures", help="write the parameter tables as CSV")
    ep.add_argument("--out-dir", type=str, dest="out_dir", default=".")

    return parser


def config_from_args(args: argparse.Namespace) -> SolveConfig:
    config = parse_config_file(args.config) if args.config else SolveConfig()
    for field in dataclasses.fields(SolveConfig):
        value = getattr(args, field.name, None)
        if value is None:
            continue
        if field.name == "p0":
            value = _parse_p0(value)
        setattr(config, field.name, value)
    return config


def setup_logging() -> None:
    name = os.environ.get("CHATTER_LOG", "info").strip().lower()
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        name, logging.INFO
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(message)s")
    log.setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        # argparse reports usage problems itself; fold them into the error code
        return 0 if err.code in (0, None) else 1
    if args.command == "solve":
        try:
            config = config_from_args(args)
        except (ConfigError, OSError, json.JSONDecodeError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        return run_solve(config)
    if args.command == "validate":
        return run_validate(args.target)
    if args.command == "export-fixtures":
        return run_export_fixtures(args.out_dir)
    parser.error(f"unknown command {args.command!r}")
    return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
