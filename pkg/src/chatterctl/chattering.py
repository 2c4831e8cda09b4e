"""Chattering level grids, the per-interval measure LP, and signal realization.

On each time interval the control set is discretized into a finite set of
*levels* (constant control vectors).  A *chattering measure* assigns each
level a time share on the interval; rapidly switching between levels with
those duty cycles emulates, in time average, any control in the levels'
convex hull.  Minimizing the interval Hamiltonian over measures is a linear
program on the probability simplex whose optimum is analytic: put all weight
on the level(s) with the smallest Hamiltonian value.

Everything here is a pure function of its inputs; grids, measures and signals
are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .model import (
    Array,
    ControlProblem,
    eval_dynamics_batch,
)

#: all ties within this absolute distance of the minimum share weight
TIE_TOL = 1e-9
#: a level is admissible if one explicit Euler step stays inside the state
#: box within this absolute slack
STEP_FEASIBILITY_TOL = 1e-9
#: bisection iterations for the per-dimension level bound search
BOUND_SEARCH_ITERATIONS = 32


class InfeasibleLevels(RuntimeError):
    """No control level keeps the one-step state prediction inside the state
    box; the state bounds and step size are incompatible at this state."""


class EmptyGrid(ValueError):
    """The measure LP was handed zero levels."""


class DimensionMismatch(ValueError):
    """Grid and measure disagree on the number of levels."""


@dataclass(frozen=True)
class GridParams:
    """Level generation knobs: requested points per control dimension and the
    hard cap on the total level count."""

    k_per_dim: int = 101
    cap: int = 4096

    def __post_init__(self):
        if self.k_per_dim < 2:
            raise ValueError("k_per_dim must be >= 2")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")


@dataclass(frozen=True)
class LevelGrid:
    """The ordered control levels for one interval, as a (K, m) array.

    Rows are distinct and sorted lexicographically; within each control
    dimension the distinct scalar values form an ascending grid.
    """

    levels: Array
    interval_index: int = 0

    def __post_init__(self):
        levels = np.array(self.levels, dtype=float)
        if levels.ndim != 2 or levels.shape[0] < 1:
            raise ValueError("levels must be a non-empty (K, m) array")
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @property
    def K(self) -> int:
        return int(self.levels.shape[0])

    @property
    def control_dim(self) -> int:
        return int(self.levels.shape[1])


@dataclass(frozen=True)
class ChatteringMeasure:
    """Simplex weights over the levels of one interval: each weight is the
    fraction of the interval spent at that level."""

    weights: Array
    interval_index: int = 0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a non-empty 1-d array")
        if np.any(w < -1e-12) or np.any(w > 1.0 + 1e-12):
            raise ValueError("weights must lie in [0, 1]")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    def support(self) -> Array:
        return np.flatnonzero(self.weights)


@dataclass(frozen=True)
class ChatteringSignal:
    """A duty-cycle switching schedule: (start, end, level_index) segments
    tiling one interval without gaps or overlaps."""

    segments: Tuple[Tuple[float, float, int], ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("signal must contain at least one segment")
        prev_end = None
        for start, end, _ in self.segments:
            if end < start:
                raise ValueError("segment ends before it starts")
            if prev_end is not None and start != prev_end:
                raise ValueError("segments must tile the interval contiguously")
            prev_end = end
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def start(self) -> float:
        return self.segments[0][0]

    @property
    def end(self) -> float:
        return self.segments[-1][1]

    def occupation_times(self, num_levels: int) -> Array:
        """Total dwell time per level index."""
        occ = np.zeros(num_levels)
        for s, e, k in self.segments:
            occ[k] += e - s
        return occ


def solve_measure_lp(h_values: Array, interval_index: int = 0) -> ChatteringMeasure:
    """Analytic minimizer of sum_k h_k * a_k over the probability simplex.

    The optimum of a linear objective over the simplex sits at a vertex, so
    the solution is a point mass on the argmin; all levels within ``TIE_TOL``
    of the minimum share the weight uniformly, which is what produces genuine
    chattering mixtures on symmetric problems and keeps the result
    deterministic.
    """
    h = np.asarray(h_values, dtype=float)
    if h.ndim != 1:
        raise ValueError("h_values must be 1-d")
    if h.size == 0:
        raise EmptyGrid("cannot solve the measure LP over zero levels")
    if not np.all(np.isfinite(h)):
        raise ValueError("h_values must be finite")
    h_min = float(h.min())
    tied = np.flatnonzero(h <= h_min + TIE_TOL)
    weights = np.zeros(h.size)
    weights[tied] = 1.0 / tied.size
    return ChatteringMeasure(weights, interval_index)


def control_from_measure(grid: LevelGrid, measure: ChatteringMeasure) -> Array:
    """Convex combination sum_k a_k c_k; lies in the hull of the levels and
    hence inside the control box."""
    if grid.K != measure.K:
        raise DimensionMismatch(
            f"grid has {grid.K} levels but measure has {measure.K} weights"
        )
    return measure.weights @ grid.levels


def realize_signal(
    grid: LevelGrid, measure: ChatteringMeasure, t_start: float, dt: float
) -> ChatteringSignal:
    """Lay out one segment per nonzero weight, in level order, with duration
    ``weights[k] * dt``; the segments tile [t_start, t_start + dt] exactly."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if grid.K != measure.K:
        raise DimensionMismatch(
            f"grid has {grid.K} levels but measure has {measure.K} weights"
        )
    support = measure.support()
    segments: List[Tuple[float, float, int]] = []
    t = float(t_start)
    for k in support:
        end = t + float(measure.weights[k]) * dt
        segments.append((t, end, int(k)))
        t = end
    # pin the final endpoint so the tiling is exact despite rounding
    last_start, _, last_k = segments[-1]
    segments[-1] = (last_start, t_start + dt, last_k)
    return ChatteringSignal(tuple(segments))


def signal_time_average(signal: ChatteringSignal, grid: LevelGrid) -> Array:
    """Time average of the realized control over its interval, one value per
    control dimension."""
    total = signal.end - signal.start
    acc = np.zeros(grid.control_dim)
    for s, e, k in signal.segments:
        acc += (e - s) * grid.levels[k]
    return acc / total


# ---------------------------------------------------------------------------
# Level generation
# ---------------------------------------------------------------------------


def _coarsen_counts(problem: ControlProblem, k_per_dim: int, cap: int) -> np.ndarray:
    """Per-dimension level counts, as uniform as possible, with product <= cap.

    Counts are raised round-robin from 1 toward ``k_per_dim``, stopping as
    soon as another increment would bust the cap.  Within a round, dimensions
    with a wider control range come first (ties by index): under heavy cap
    pressure only some dimensions can afford a second point, and an extra
    point buys the most where the range it discretizes is widest.
    """
    m = problem.control_dim
    widths = problem.control_upper - problem.control_lower
    order = sorted(range(m), key=lambda j: (-widths[j], j))
    counts = np.ones(m, dtype=int)
    product = 1
    while True:
        bumped = False
        for j in order:
            if counts[j] >= k_per_dim:
                continue
            trial = product // counts[j] * (counts[j] + 1)
            if trial <= cap:
                counts[j] += 1
                product = trial
                bumped = True
        if not bumped:
            return counts


def _feasible_from_dynamics(
    problem: ControlProblem, x: Array, dt: float, f: Array
) -> np.ndarray:
    x_next = x + dt * f
    ok = np.ones(f.shape[0], dtype=bool)
    if problem.state_lower is not None:
        ok &= np.all(x_next >= problem.state_lower - STEP_FEASIBILITY_TOL, axis=1)
    if problem.state_upper is not None:
        ok &= np.all(x_next <= problem.state_upper + STEP_FEASIBILITY_TOL, axis=1)
    return ok


def _step_feasible(
    problem: ControlProblem, t: float, x: Array, dt: float, controls: Array
) -> np.ndarray:
    """Which rows of ``controls`` keep x + dt * f(t, x, u) inside the state
    box (within STEP_FEASIBILITY_TOL)."""
    f = eval_dynamics_batch(problem, t, x, controls)
    return _feasible_from_dynamics(problem, x, dt, f)


def _anchor_candidates(problem: ControlProblem) -> List[Array]:
    mid = 0.5 * (problem.control_lower + problem.control_upper)
    return [mid, np.array(problem.control_lower), np.array(problem.control_upper)]


def _search_dims(
    problem: ControlProblem, t: float, x: Array, dt: float, dims: List[int]
) -> List[Tuple[float, float]]:
    """Feasible scalar range per requested control dimension.

    The remaining dimensions are held at the midpoint of the control box; if
    the whole midpoint slice for a dimension is infeasible the search retries
    with the off-dimensions pinned at the lower and then the upper control
    bound before declaring the dimension infeasible.  Within a slice the
    boundary between feasible and infeasible is located by bisection from
    each violated end, which assumes the violation is monotone toward that
    end.
    """
    if not problem.has_state_bounds:
        return [
            (float(problem.control_lower[d]), float(problem.control_upper[d]))
            for d in dims
        ]
    anchors = _anchor_candidates(problem)
    results: dict[int, Tuple[float, float]] = {}
    pending = list(dims)
    for anchor in anchors:
        if not pending:
            break
        pending = _search_dims_at_anchor(problem, t, x, dt, pending, anchor, results)
    if pending:
        raise InfeasibleLevels(
            f"no admissible control level found for dimension(s) {pending} "
            f"at t={t}: state bounds and step size are incompatible here"
        )
    return [results[d] for d in dims]


def _search_dims_at_anchor(
    problem: ControlProblem,
    t: float,
    x: Array,
    dt: float,
    dims: List[int],
    anchor: Array,
    results: dict,
) -> List[int]:
    """Run the bisection search for ``dims`` with off-dimensions at ``anchor``.
    Fills ``results`` for dimensions that admit a feasible range; returns the
    dimensions that do not."""
    lower = problem.control_lower
    upper = problem.control_upper

    # endpoint feasibility, one batched evaluation for all dims and both ends
    dims_arr = np.asarray(dims, dtype=int)
    probe = np.tile(anchor, (2 * len(dims), 1))
    probe[0::2][np.arange(len(dims)), dims_arr] = lower[dims_arr]
    probe[1::2][np.arange(len(dims)), dims_arr] = upper[dims_arr]
    ok = _step_feasible(problem, t, x, dt, probe)
    lo_ok = {d: bool(ok[2 * i]) for i, d in enumerate(dims)}
    hi_ok = {d: bool(ok[2 * i + 1]) for i, d in enumerate(dims)}

    # midpoint anchor value for dims with both ends infeasible
    both_bad = [d for d in dims if not lo_ok[d] and not hi_ok[d]]
    mid_ok: dict[int, bool] = {}
    if both_bad:
        bad_arr = np.asarray(both_bad, dtype=int)
        mids = np.tile(anchor, (len(both_bad), 1))
        mids[np.arange(len(both_bad)), bad_arr] = 0.5 * (lower[bad_arr] + upper[bad_arr])
        ok_mid = _step_feasible(problem, t, x, dt, mids)
        mid_ok = {d: bool(ok_mid[i]) for i, d in enumerate(both_bad)}

    failed = [d for d in both_bad if not mid_ok[d]]

    # set up bisection brackets: (feasible end, infeasible end) per search
    searches: List[Tuple[int, str, float, float]] = []  # dim, side, a=feasible, b=infeasible
    for d in dims:
        if d in failed:
            continue
        if lo_ok[d] and hi_ok[d]:
            results[d] = (float(lower[d]), float(upper[d]))
            continue
        if lo_ok[d]:
            searches.append((d, "hi", float(lower[d]), float(upper[d])))
        elif hi_ok[d]:
            searches.append((d, "lo", float(upper[d]), float(lower[d])))
        else:
            mid = 0.5 * (float(lower[d]) + float(upper[d]))
            searches.append((d, "lo", mid, float(lower[d])))
            searches.append((d, "hi", mid, float(upper[d])))

    if searches:
        rows = np.arange(len(searches))
        cols = np.array([s[0] for s in searches], dtype=int)
        a = np.array([s[2] for s in searches])
        b = np.array([s[3] for s in searches])
        base = np.tile(anchor, (len(searches), 1))
        for _ in range(BOUND_SEARCH_ITERATIONS):
            mid = 0.5 * (a + b)
            base[rows, cols] = mid
            ok = _step_feasible(problem, t, x, dt, base)
            a = np.where(ok, mid, a)
            b = np.where(ok, b, mid)
        bounds_by_dim: dict[int, dict] = {}
        for row, (d, side, _, _) in enumerate(searches):
            bounds_by_dim.setdefault(d, {})[side] = float(a[row])
        for d, sides in bounds_by_dim.items():
            c_lo = sides.get("lo", float(lower[d]))
            c_hi = sides.get("hi", float(upper[d]))
            results[d] = (c_lo, c_hi)
    return failed


def level_bound_search(
    problem: ControlProblem, t: float, x_i: Array, dt: float, dim: int
) -> Tuple[float, float]:
    """Largest subinterval of [control_lower[dim], control_upper[dim]] whose
    endpoints keep one explicit Euler step inside the state box, with the
    other control dimensions held at the midpoint of their bounds.

    Without state bounds the constraint is vacuous and the full control
    interval comes back unchanged.
    """
    if not 0 <= dim < problem.control_dim:
        raise ValueError(f"control dimension {dim} out of range")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x_i = np.asarray(x_i, dtype=float)
    return _search_dims(problem, t, x_i, dt, [dim])[0]


def _uniform_grid(lo: float, hi: float, count: int) -> Array:
    # np.linspace semantics with exact endpoints, without its overhead (this
    # runs per dimension per interval)
    if count == 1 or lo == hi:
        return np.array([lo])
    if count == 2:
        return np.array([lo, hi])
    vals = lo + (hi - lo) / (count - 1) * np.arange(count)
    vals[-1] = hi
    return vals


def _dedupe_sorted(vals: Array) -> Array:
    if vals.size <= 1:
        return vals
    keep = np.empty(vals.size, dtype=bool)
    keep[0] = True
    np.greater(vals[1:], vals[:-1], out=keep[1:])
    return vals if keep.all() else vals[keep]


def _scalar_grid(
    problem: ControlProblem, dim: int, c_lo: float, c_hi: float, count: int
) -> Array:
    """Distinct ascending level values for one control dimension."""
    gated = problem.gated_dims.get(dim) if problem.gated_dims else None
    if gated is None:
        return _dedupe_sorted(_uniform_grid(c_lo, c_hi, count))
    active_lo = max(gated[0], c_lo)
    active_hi = min(gated[1], c_hi)
    values: List[float] = []
    if c_lo <= 0.0 <= c_hi:
        values.append(0.0)
    slots = count - len(values)
    if active_lo <= active_hi and (slots > 0 or not values):
        values.extend(_uniform_grid(active_lo, active_hi, max(slots, 1)))
    if not values:
        raise InfeasibleLevels(
            f"gated control dimension {dim} admits neither zero nor its active range"
        )
    return np.unique(np.asarray(values, dtype=float))


_PRODUCT_INDEX_CACHE: dict = {}


def _product_indices(sizes: Tuple[int, ...]) -> Array:
    """Index matrix enumerating the Cartesian product of per-dimension grids
    in lexicographic order; cached because interval after interval reuses the
    same per-dimension counts."""
    cached = _PRODUCT_INDEX_CACHE.get(sizes)
    if cached is None:
        total = int(np.prod(sizes))
        cached = np.empty((total, len(sizes)), dtype=np.intp)
        stride = total
        rows = np.arange(total)
        for j, size in enumerate(sizes):
            stride //= size
            cached[:, j] = rows // stride % size
        if len(_PRODUCT_INDEX_CACHE) > 64:
            _PRODUCT_INDEX_CACHE.clear()
        _PRODUCT_INDEX_CACHE[sizes] = cached
    return cached


def generate_levels_with_dynamics(
    problem: ControlProblem,
    t: float,
    x_i: Array,
    dt: float,
    k_per_dim: int,
    cap: int,
    interval_index: int = 0,
) -> Tuple[LevelGrid, Optional[Array]]:
    """:func:`generate_levels`, also returning the dynamics evaluated at the
    surviving levels when the admissibility filter already computed them
    (None otherwise).  Lets the propagation loop skip a second sweep."""
    if k_per_dim < 2:
        raise ValueError("k_per_dim must be >= 2")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    x_i = np.asarray(x_i, dtype=float)
    m = problem.control_dim
    ranges = _search_dims(problem, t, x_i, dt, list(range(m)))
    counts = _coarsen_counts(problem, k_per_dim, cap)
    grids = [
        _scalar_grid(problem, j, ranges[j][0], ranges[j][1], int(counts[j]))
        for j in range(m)
    ]
    sizes = tuple(int(g.size) for g in grids)
    # lexicographic Cartesian product via index arithmetic (dimension count
    # is not limited the way np.meshgrid is); one flat gather fills the grid
    idx = _product_indices(sizes)
    flat = np.concatenate(grids)
    offsets = np.concatenate(([0], np.cumsum(sizes[:-1]))).astype(np.intp)
    levels = flat[idx + offsets]
    f_kept: Optional[Array] = None
    if problem.has_state_bounds:
        f = eval_dynamics_batch(problem, t, x_i, levels)
        keep = _feasible_from_dynamics(problem, x_i, dt, f)
        if not np.any(keep):
            raise InfeasibleLevels(
                f"no product level satisfies the one-step state bounds at t={t}"
            )
        if not np.all(keep):
            levels = levels[keep]
            f_kept = f[keep]
        else:
            f_kept = f
    return LevelGrid(levels, interval_index), f_kept


def generate_levels(
    problem: ControlProblem,
    t: float,
    x_i: Array,
    dt: float,
    k_per_dim: int,
    cap: int,
    interval_index: int = 0,
) -> LevelGrid:
    """Build the level grid for one interval at state ``x_i``.

    Per control dimension a uniform grid covers the admissible range (the
    control bounds, shrunk where a one-step state prediction would leave the
    state box).  The multidimensional grid is the Cartesian product with
    per-dimension counts coarsened uniformly so the total stays within
    ``cap``; when state bounds are present, product vectors whose joint
    one-step prediction leaves the box are dropped.  Rows come back sorted
    lexicographically.
    """
    grid, _ = generate_levels_with_dynamics(
        problem, t, x_i, dt, k_per_dim, cap, interval_index
    )
    return grid
