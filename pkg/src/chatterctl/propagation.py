"""Forward propagation of state and costate across the time partition.

Each interval is one explicit Euler step driven by the chattering measure:
the state moves along the measure-weighted dynamics and the costate against
the measure-weighted Hamiltonian state-gradient, both evaluated at the
interval start.  The recorded trajectory, one point per interval start plus a
terminal point, is the control law the solver ultimately returns.

Runs are sequential in the interval index by data dependence, but independent
runs (say a nominal and its perturbations) share no mutable state and may
execute concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import chattering
from .chattering import (
    ChatteringMeasure,
    GridParams,
    InfeasibleLevels,
    LevelGrid,
    control_from_measure,
    solve_measure_lp,
)
from .model import (
    Array,
    ControlProblem,
    HamiltonianContext,
    NonFiniteEvaluation,
    eval_dynamics_batch,
    eval_running_cost,
    eval_running_cost_batch,
    eval_terminal_cost,
    grad_h_state,
)

#: an optional measurement source consulted before each interval solve;
#: returning an array replaces the propagated state (open-loop feedback)
MeasurementSource = Callable[[int, float, Array], Optional[Array]]


@dataclass(frozen=True)
class TimePartition:
    """Interval endpoints 0 = t_0 < t_1 < ... < t_I = T."""

    times: Array

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("a partition needs at least two time points")
        if times[0] != 0.0:
            raise ValueError("partition must start at t=0")
        deltas = np.diff(times)
        if np.any(deltas <= 0.0):
            raise ValueError("partition times must be strictly increasing")
        if abs(float(deltas.sum()) - float(times[-1])) > 1e-10:
            raise ValueError("interval lengths must sum to the horizon within 1e-10")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, horizon: float, intervals: int) -> "TimePartition":
        if intervals < 1:
            raise ValueError("intervals must be >= 1")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        return cls(np.linspace(0.0, horizon, intervals + 1))

    @property
    def deltas(self) -> Array:
        return np.diff(self.times)

    @property
    def intervals(self) -> int:
        return int(self.times.size - 1)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class TrajectoryPoint:
    """One record of the control law: (t_i, x_i, p_i, u_i) plus the measure,
    grid support and Hamiltonian value behind u_i.  The terminal point
    carries no control."""

    t: float
    x: Array
    p: Array
    u: Optional[Array] = None
    measure: Optional[ChatteringMeasure] = None
    grid: Optional[LevelGrid] = None
    h_value: Optional[float] = None

    def __post_init__(self):
        for name in ("x", "p"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"trajectory point has non-finite {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.u is not None:
            u = np.array(self.u, dtype=float)
            u.setflags(write=False)
            object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class Trajectory:
    """Points at every interval start plus the terminal state/costate, with
    the accumulated discretized cost and a count of state-bound clampings."""

    points: Tuple[TrajectoryPoint, ...]
    accumulated_cost: float
    stage_costs: Array  # g(t_i, x_i, u_i) * dt_i per interval
    clamp_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        stage = np.array(self.stage_costs, dtype=float)
        stage.setflags(write=False)
        object.__setattr__(self, "stage_costs", stage)
        ts = [pt.t for pt in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory points must be ordered by time")

    @property
    def intervals(self) -> int:
        return len(self.points) - 1

    @property
    def terminal(self) -> TrajectoryPoint:
        return self.points[-1]

    @property
    def times(self) -> Array:
        return np.array([pt.t for pt in self.points])

    def states(self) -> Array:
        return np.stack([pt.x for pt in self.points])

    def costates(self) -> Array:
        return np.stack([pt.p for pt in self.points])

    def controls(self) -> Array:
        return np.stack([pt.u for pt in self.points[:-1]])


def _chattered_drift(
    problem: ControlProblem, ctx: HamiltonianContext, grid: LevelGrid, measure: ChatteringMeasure
) -> Array:
    if grid.K != measure.K:
        raise chattering.DimensionMismatch(
            f"grid has {grid.K} levels but measure has {measure.K} weights"
        )
    f = eval_dynamics_batch(problem, ctx.time, ctx.state, grid.levels)
    return measure.weights @ f


def _clamp(problem: ControlProblem, x: Array) -> Tuple[Array, bool]:
    clamped = x
    if problem.state_lower is not None:
        clamped = np.maximum(clamped, problem.state_lower)
    if problem.state_upper is not None:
        clamped = np.minimum(clamped, problem.state_upper)
    return clamped, bool(np.any(clamped != x))


def step_state(
    problem: ControlProblem,
    ctx: HamiltonianContext,
    grid: LevelGrid,
    measure: ChatteringMeasure,
    dt: float,
) -> Array:
    """x_{i+1} = x_i + dt * sum_k a_k f(t_i, x_i, c_k), clamped to the state
    box when bounds exist."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_next = ctx.state + dt * _chattered_drift(problem, ctx, grid, measure)
    clamped, _ = _clamp(problem, x_next)
    return clamped


def step_costate(
    problem: ControlProblem,
    ctx: HamiltonianContext,
    grid: LevelGrid,
    measure: ChatteringMeasure,
    dt: float,
    fd_step: Optional[float] = None,
) -> Array:
    """p_{i+1} = p_i - dt * sum_k a_k dH/dx(t_i, x_i, p_i, c_k)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    acc = np.zeros(problem.state_dim)
    for k in measure.support():
        grad = grad_h_state(problem, ctx, grid.levels[k], fd_step=fd_step)
        acc = acc + measure.weights[k] * grad
    return ctx.costate - dt * acc


def _support_pair(
    grid: LevelGrid, measure: ChatteringMeasure
) -> Tuple[LevelGrid, ChatteringMeasure]:
    """Shrink a grid/measure pair to the measure's support (the zero-weight
    levels contribute nothing and recording all of them is wasteful)."""
    support = measure.support()
    if support.size == measure.K:
        return grid, measure
    return (
        LevelGrid(grid.levels[support], grid.interval_index),
        ChatteringMeasure(measure.weights[support], measure.interval_index),
    )


def _annotate(err: Exception, interval: int, t: float) -> Exception:
    tagged = type(err)(f"{err} [interval {interval}, t={t}]")
    tagged.interval_index = interval
    return tagged


def propagate_forward(
    problem: ControlProblem,
    partition: TimePartition,
    p0: Array,
    grid_params: GridParams = GridParams(),
    fd_step: Optional[float] = None,
    measurement_source: Optional[MeasurementSource] = None,
) -> Trajectory:
    """Run the full per-interval pipeline from (x_0, p0) to the horizon.

    Per interval: build the level grid at the current state, evaluate the
    Hamiltonian at every level, solve the measure LP, reconstruct the
    interval control, then advance state and costate.  The running cost is
    accumulated as a left-endpoint sum, plus the terminal cost at x_T.

    With a ``measurement_source`` the predicted state may be replaced by an
    injected measurement before each interval solve (open-loop feedback).
    """
    p0 = np.asarray(p0, dtype=float)
    if not np.all(np.isfinite(p0)):
        raise ValueError("p0 must be finite")
    x = np.array(problem.initial_state)
    p = np.array(p0)
    points: List[TrajectoryPoint] = []
    stage_costs: List[float] = []
    cost = 0.0
    clamp_count = 0
    times = partition.times
    deltas = partition.deltas
    for i in range(partition.intervals):
        t = float(times[i])
        dt = float(deltas[i])
        if measurement_source is not None:
            measured = measurement_source(i, t, x)
            if measured is not None:
                x = np.asarray(measured, dtype=float)
                x, _ = _clamp(problem, x)
        ctx = HamiltonianContext(t, x, p)
        try:
            grid, f_vals = chattering.generate_levels_with_dynamics(
                problem, t, x, dt, grid_params.k_per_dim, grid_params.cap, interval_index=i
            )
            if f_vals is None:
                f_vals = eval_dynamics_batch(problem, t, x, grid.levels)
            g_vals = eval_running_cost_batch(problem, t, x, grid.levels)
            h_vals = g_vals + f_vals @ p
            if not np.all(np.isfinite(h_vals)):
                raise NonFiniteEvaluation(f"Hamiltonian is non-finite at t={t}")
            measure = solve_measure_lp(h_vals, interval_index=i)
            u = control_from_measure(grid, measure)
            h_value = float(measure.weights @ h_vals)
            stage = eval_running_cost(problem, t, x, u) * dt
            x_raw = x + dt * (measure.weights @ f_vals)
            x_next, clamped = _clamp(problem, x_raw)
            p_next = step_costate(problem, ctx, grid, measure, dt, fd_step=fd_step)
        except (NonFiniteEvaluation, InfeasibleLevels) as err:
            raise _annotate(err, i, t) from err
        grid_s, measure_s = _support_pair(grid, measure)
        points.append(TrajectoryPoint(t, x, p, u, measure_s, grid_s, h_value))
        stage_costs.append(stage)
        cost += stage
        if clamped:
            clamp_count += 1
        x, p = x_next, p_next
    cost += eval_terminal_cost(problem, x)
    points.append(TrajectoryPoint(float(times[-1]), x, p))
    return Trajectory(tuple(points), cost, np.asarray(stage_costs), clamp_count)


def accumulate_cost(problem: ControlProblem, trajectory: Trajectory) -> float:
    """Recompute the discretized cost from the stored points: left-endpoint
    sum of the running cost plus the terminal cost."""
    total = 0.0
    pts = trajectory.points
    for a, b in zip(pts[:-1], pts[1:]):
        total += eval_running_cost(problem, a.t, a.x, a.u) * (b.t - a.t)
    return total + eval_terminal_cost(problem, pts[-1].x)


def replay_measurement_source(replacements: Mapping[int, Sequence[float]]) -> MeasurementSource:
    """Measurement source that replays recorded states keyed by interval
    index; intervals without an entry keep the propagated prediction."""
    table = {int(k): np.asarray(v, dtype=float) for k, v in replacements.items()}

    def source(i: int, t: float, x_pred: Array) -> Optional[Array]:
        return table.get(i)

    return source


def load_replay_file(path) -> MeasurementSource:
    """Load a JSON replay file mapping interval index to a state vector."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return replay_measurement_source({int(k): v for k, v in raw.items()})
