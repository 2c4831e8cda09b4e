import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatterctl import (
    ChatteringMeasure,
    ControlProblem,
    DimensionMismatch,
    EmptyGrid,
    InfeasibleLevels,
    LevelGrid,
    control_from_measure,
    generate_levels,
    level_bound_search,
    realize_signal,
    signal_time_average,
    solve_measure_lp,
)
from chatterctl.chattering import _coarsen_counts


def box_problem(n=1, m=1, dynamics=None, state_lower=None, state_upper=None,
                control_lower=None, control_upper=None, gated_dims=None, x0=None):
    if dynamics is None:
        dynamics = lambda t, x, u: np.zeros(n)
    return ControlProblem(
        state_dim=n,
        control_dim=m,
        horizon=1.0,
        initial_state=np.zeros(n) if x0 is None else np.asarray(x0, float),
        running_cost=lambda t, x, u: 0.0,
        dynamics=dynamics,
        control_lower=np.full(m, -1.0) if control_lower is None else np.asarray(control_lower, float),
        control_upper=np.full(m, 1.0) if control_upper is None else np.asarray(control_upper, float),
        state_lower=state_lower,
        state_upper=state_upper,
        gated_dims=gated_dims,
    )


class TestMeasureLP:
    def test_unique_argmin(self):
        measure = solve_measure_lp(np.array([5.0, 2.0, 9.0]))
        assert np.array_equal(measure.weights, [0.0, 1.0, 0.0])

    def test_two_way_tie_splits_uniformly(self):
        measure = solve_measure_lp(np.array([3.0, 3.0, 7.0]))
        assert np.array_equal(measure.weights, [0.5, 0.5, 0.0])

    def test_single_level_is_forced(self):
        measure = solve_measure_lp(np.array([4.2]))
        assert np.array_equal(measure.weights, [1.0])

    def test_empty_grid_raises(self):
        with pytest.raises(EmptyGrid):
            solve_measure_lp(np.array([]))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            solve_measure_lp(np.array([1.0, np.nan]))

    @given(
        st.lists(
            st.floats(min_value=-100, max_value=100, allow_nan=False),
            min_size=1,
            max_size=8,
        )
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_vertex_enumeration(self, values):
        h = np.asarray(values)
        measure = solve_measure_lp(h)
        w = measure.weights
        assert abs(float(w.sum()) - 1.0) <= 1e-12
        assert np.all(w >= 0.0) and np.all(w <= 1.0)
        # the optimum of a linear objective over the simplex is a vertex
        vertex_best = min(float(v) for v in h)
        assert float(w @ h) <= vertex_best + 1e-9
        assert np.all(h[measure.support()] <= h.min() + 1e-9)

    def test_exact_tie_objective_equals_minimum(self):
        # powers of two split exactly
        h = np.array([0.75, 2.0, 0.75, 0.75, 0.75])
        measure = solve_measure_lp(h)
        assert float(measure.weights @ h) == 0.75


class TestMeasureInvariants:
    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError):
            ChatteringMeasure(np.array([0.5, 0.4]))

    def test_rejects_negative_weight(self):
        with pytest.raises(ValueError):
            ChatteringMeasure(np.array([1.5, -0.5]))


class TestControlFromMeasure:
    def test_point_mass(self):
        grid = LevelGrid(np.array([[-1.0], [0.0], [1.0]]))
        measure = ChatteringMeasure(np.array([0.0, 1.0, 0.0]))
        assert control_from_measure(grid, measure)[0] == 0.0

    def test_midpoint(self):
        grid = LevelGrid(np.array([[2.0], [4.0], [6.0]]))
        measure = ChatteringMeasure(np.array([0.5, 0.5, 0.0]))
        assert control_from_measure(grid, measure)[0] == 3.0

    def test_degenerate_grid(self):
        grid = LevelGrid(np.array([[7.5, -2.0]]))
        measure = ChatteringMeasure(np.array([1.0]))
        assert np.array_equal(control_from_measure(grid, measure), [7.5, -2.0])

    def test_dimension_mismatch(self):
        grid = LevelGrid(np.array([[0.0], [1.0]]))
        with pytest.raises(DimensionMismatch):
            control_from_measure(grid, ChatteringMeasure(np.array([1.0])))


class TestRealizeSignal:
    def test_point_mass_single_segment(self):
        grid = LevelGrid(np.array([[0.0], [1.0]]))
        measure = ChatteringMeasure(np.array([1.0, 0.0]))
        signal = realize_signal(grid, measure, 0.0, 1.0)
        assert signal.segments == ((0.0, 1.0, 0),)

    def test_duty_cycle_arithmetic(self):
        grid = LevelGrid(np.array([[0.0], [1.0]]))
        measure = ChatteringMeasure(np.array([0.25, 0.75]))
        signal = realize_signal(grid, measure, 0.0, 4.0)
        assert signal.segments == ((0.0, 1.0, 0), (1.0, 4.0, 1))

    def test_three_equal_segments(self):
        grid = LevelGrid(np.array([[0.0], [1.0], [2.0]]))
        measure = ChatteringMeasure(np.array([1.0, 1.0, 1.0]) / 3.0)
        signal = realize_signal(grid, measure, 0.0, 3.0)
        occupation = signal.occupation_times(3)
        assert np.allclose(occupation, 1.0, atol=1e-12)
        assert signal.end == 3.0

    @given(
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=1, max_value=3),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=200, deadline=None)
    def test_signal_fidelity(self, K, m, seed):
        rng = np.random.default_rng(seed)
        levels = rng.uniform(-10.0, 10.0, size=(K, m))
        raw = rng.uniform(0.0, 1.0, size=K) + 1e-3
        weights = raw / raw.sum()
        grid = LevelGrid(levels)
        measure = ChatteringMeasure(weights)
        t_start = float(rng.uniform(0.0, 5.0))
        dt = float(rng.uniform(0.01, 10.0))
        signal = realize_signal(grid, measure, t_start, dt)
        assert signal.start == t_start
        assert signal.end == t_start + dt
        occupation = signal.occupation_times(K)
        assert np.all(np.abs(occupation - weights * dt) <= 1e-12 * dt)
        mean = signal_time_average(signal, grid)
        expected = control_from_measure(grid, measure)
        assert np.all(np.abs(mean - expected) <= 1e-12 * max(1.0, np.abs(expected).max()))

    def test_hamiltonian_sum_equals_frozen_integral(self):
        # with x, p frozen on the interval, integrating H along the realized
        # signal is exactly the duty-cycle weighted sum of per-level values
        rng = np.random.default_rng(42)
        for _ in range(100):
            K = int(rng.integers(1, 7))
            h_values = rng.uniform(-5.0, 5.0, size=K)
            levels = np.sort(rng.uniform(-1.0, 1.0, size=K))[:, None]
            raw = rng.uniform(0.0, 1.0, size=K) + 1e-6
            weights = raw / raw.sum()
            grid = LevelGrid(levels)
            measure = ChatteringMeasure(weights)
            dt = float(rng.uniform(0.1, 2.0))
            signal = realize_signal(grid, measure, 0.0, dt)
            level_of_segment = {k: h_values[k] for k in range(K)}
            integral = sum((e - s) * level_of_segment[k] for s, e, k in signal.segments)
            duty_sum = float(np.sum(h_values * weights)) * dt
            assert integral == pytest.approx(duty_sum, abs=1e-12 * max(1.0, abs(duty_sum)))


class TestLevelBoundSearch:
    def test_no_state_bounds_returns_full_interval(self):
        problem = box_problem(control_lower=[-7.0], control_upper=[3.0])
        assert level_bound_search(problem, 0.0, np.zeros(1), 0.1, 0) == (-7.0, 3.0)

    def test_bisection_finds_analytic_bounds(self):
        problem = box_problem(
            dynamics=lambda t, x, u: np.array([u[0]]),
            state_lower=np.array([-1.0]),
            state_upper=np.array([1.0]),
            control_lower=[-10.0],
            control_upper=[10.0],
        )
        lo, hi = level_bound_search(problem, 0.0, np.zeros(1), 0.5, 0)
        assert abs(lo - (-2.0)) <= 1e-6
        assert abs(hi - 2.0) <= 1e-6

    def test_state_pinned_at_upper_bound(self):
        problem = box_problem(
            dynamics=lambda t, x, u: np.array([u[0]]),
            state_lower=np.array([-5.0]),
            state_upper=np.array([1.0]),
            control_lower=[0.0],
            control_upper=[10.0],
            x0=[1.0],
        )
        lo, hi = level_bound_search(problem, 0.0, np.array([1.0]), 1.0, 0)
        assert lo == 0.0
        assert hi == 0.0

    def test_infeasible_raises(self):
        # any control pushes the state below its floor
        problem = box_problem(
            dynamics=lambda t, x, u: np.array([-1.0]),
            state_lower=np.array([0.0]),
            control_lower=[-1.0],
            control_upper=[1.0],
        )
        with pytest.raises(InfeasibleLevels):
            level_bound_search(problem, 0.0, np.zeros(1), 1.0, 0)


class TestGenerateLevels:
    def test_uniform_grid_endpoints(self):
        problem = box_problem()
        grid = generate_levels(problem, 0.0, np.zeros(1), 0.1, 5, 4096)
        assert np.array_equal(grid.levels[:, 0], [-1.0, -0.5, 0.0, 0.5, 1.0])

    def test_degenerate_grid_at_bound(self):
        problem = box_problem(
            dynamics=lambda t, x, u: np.array([u[0]]),
            state_lower=np.array([-5.0]),
            state_upper=np.array([1.0]),
            control_lower=[0.0],
            control_upper=[10.0],
            x0=[1.0],
        )
        grid = generate_levels(problem, 0.0, np.array([1.0]), 1.0, 5, 4096)
        assert grid.K == 1
        assert grid.levels[0, 0] == 0.0

    def test_gated_dimension_layout(self):
        problem = box_problem(
            control_lower=[0.0], control_upper=[14.0], gated_dims={0: (7.0, 14.0)}
        )
        grid = generate_levels(problem, 0.0, np.zeros(1), 0.1, 5, 4096)
        vals = grid.levels[:, 0]
        assert vals[0] == 0.0
        assert np.all(vals[1:] >= 7.0) and np.all(vals[1:] <= 14.0)
        assert vals[1] == 7.0 and vals[-1] == 14.0
        assert grid.K == 5

    def test_cap_coarsens_uniformly(self):
        problem = box_problem(m=2, control_lower=[-1.0, -1.0], control_upper=[1.0, 1.0])
        grid = generate_levels(problem, 0.0, np.zeros(1), 0.1, 101, 4096)
        assert grid.K == 64 * 64
        for j in range(2):
            assert len(np.unique(grid.levels[:, j])) == 64

    def test_lexicographic_order(self):
        problem = box_problem(m=2, control_lower=[0.0, 0.0], control_upper=[1.0, 1.0])
        grid = generate_levels(problem, 0.0, np.zeros(1), 0.1, 3, 4096)
        rows = [tuple(r) for r in grid.levels]
        assert rows == sorted(rows)

    def test_every_level_respects_one_step_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n, m = 2, 2
            A = rng.uniform(-1, 1, (n, m))
            problem = box_problem(
                n=n,
                m=m,
                dynamics=lambda t, x, u, A=A: A @ u - 0.5 * x,
                state_lower=np.full(n, -0.4),
                state_upper=np.full(n, 0.4),
                control_lower=[-3.0, -3.0],
                control_upper=[3.0, 3.0],
                x0=rng.uniform(-0.3, 0.3, n),
            )
            dt = float(rng.uniform(0.05, 0.3))
            x = np.asarray(problem.initial_state)
            grid = generate_levels(problem, 0.0, x, dt, 7, 4096)
            for level in grid.levels:
                x_next = x + dt * problem.dynamics(0.0, x, level)
                assert np.all(x_next >= problem.state_lower - 1e-9)
                assert np.all(x_next <= problem.state_upper + 1e-9)

    def test_levels_stay_inside_control_bounds(self):
        problem = box_problem(
            m=3,
            control_lower=[-2.0, 0.0, 1.0],
            control_upper=[2.0, 5.0, 4.0],
        )
        grid = generate_levels(problem, 0.0, np.zeros(1), 0.1, 4, 4096)
        assert np.all(grid.levels >= problem.control_lower - 1e-12)
        assert np.all(grid.levels <= problem.control_upper + 1e-12)

    def test_coarsen_counts_under_pressure(self):
        # 29 equal-width dims, cap 4096 = 2^12: twelve get a second point
        problem = box_problem(
            m=29, control_lower=np.zeros(29), control_upper=np.ones(29)
        )
        counts = _coarsen_counts(problem, 101, 4096)
        assert int(np.prod(counts)) == 4096
        assert counts.max() - counts.min() <= 1
        assert list(counts[:12]) == [2] * 12  # equal widths: tie-break by index

    def test_coarsen_counts_prefer_wide_ranges(self):
        problem = box_problem(
            m=3,
            control_lower=np.zeros(3),
            control_upper=np.array([1.0, 10.0, 5.0]),
        )
        counts = _coarsen_counts(problem, 101, 8)
        # widest dimension first: 10 > 5 > 1
        assert counts[1] >= counts[2] >= counts[0]
        assert int(np.prod(counts)) <= 8

    def test_coarsen_counts_no_pressure(self):
        one = box_problem(m=1)
        assert list(_coarsen_counts(one, 101, 4096)) == [101]
        two = box_problem(m=2, control_lower=[-1.0, -1.0], control_upper=[1.0, 1.0])
        assert list(_coarsen_counts(two, 5, 4096)) == [5, 5]
