"""Problem definition and Hamiltonian evaluations.

A :class:`ControlProblem` bundles the running cost ``g(t, x, u)``, the
dynamics ``f(t, x, u)``, an optional terminal cost ``psi(x)`` with its
derivatives, and box bounds on controls and states.  The control Hamiltonian

    H(t, x, p, u) = g(t, x, u) + p . f(t, x, u)

is the single quantity every downstream stage (level generation, the
per-interval measure LP, state/costate stepping, shooting) evaluates, so all
of those evaluations live here.

Evaluators must be deterministic functions of their arguments; the solver is
free to call them in any order and any number of times.  All operations in
this module are pure, so a problem instance may be shared across concurrent
solver runs as long as its evaluators are reentrant.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Tuple

import numpy as np

Array = np.ndarray


class NonFiniteEvaluation(RuntimeError):
    """A problem evaluator produced NaN or Inf; the problem is ill-posed at
    this point."""


def _readonly(a: Array) -> Array:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ControlProblem:
    """A continuous-time optimal control problem on a fixed horizon.

    ``running_cost``, ``dynamics`` and the optional terminal evaluators take
    plain floats / 1-d float arrays.  ``dynamics_batch`` / ``running_cost_batch``
    are optional vectorized twins taking a ``(K, m)`` block of controls at one
    ``(t, x)`` and returning ``(K, n)`` / ``(K,)``; they exist purely so the
    per-interval level sweep does not pay a Python call per level.

    ``gated_dims`` marks control dimensions that are either exactly zero
    (off) or confined to an active range ``[low, high]``; level generation
    lays out ``{0} + grid(low, high)`` for them instead of a plain uniform
    grid.
    """

    state_dim: int
    control_dim: int
    horizon: float
    initial_state: Array
    running_cost: Callable[[float, Array, Array], float]
    dynamics: Callable[[float, Array, Array], Array]
    control_lower: Array
    control_upper: Array
    terminal_cost: Optional[Callable[[Array], float]] = None
    terminal_gradient: Optional[Callable[[Array], Array]] = None
    terminal_hessian: Optional[Callable[[Array], Array]] = None
    hamiltonian_x_gradient: Optional[Callable[[float, Array, Array, Array], Array]] = None
    state_lower: Optional[Array] = None
    state_upper: Optional[Array] = None
    dynamics_batch: Optional[Callable[[float, Array, Array], Array]] = None
    running_cost_batch: Optional[Callable[[float, Array, Array], Array]] = None
    gated_dims: Optional[Mapping[int, Tuple[float, float]]] = None
    name: str = ""

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be >= 1")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        n, m = self.state_dim, self.control_dim
        object.__setattr__(self, "initial_state", _readonly(self.initial_state))
        object.__setattr__(self, "control_lower", _readonly(self.control_lower))
        object.__setattr__(self, "control_upper", _readonly(self.control_upper))
        if self.initial_state.shape != (n,):
            raise ValueError(f"initial_state must have shape ({n},)")
        if self.control_lower.shape != (m,) or self.control_upper.shape != (m,):
            raise ValueError(f"control bounds must have shape ({m},)")
        if np.any(self.control_lower > self.control_upper):
            raise ValueError("control_lower must be <= control_upper componentwise")
        for attr in ("state_lower", "state_upper"):
            bound = getattr(self, attr)
            if bound is not None:
                bound = _readonly(bound)
                object.__setattr__(self, attr, bound)
                if bound.shape != (n,):
                    raise ValueError(f"{attr} must have shape ({n},)")
        if self.state_lower is not None and np.any(self.initial_state < self.state_lower):
            raise ValueError("initial_state violates state_lower")
        if self.state_upper is not None and np.any(self.initial_state > self.state_upper):
            raise ValueError("initial_state violates state_upper")
        if self.gated_dims:
            for dim, (lo, hi) in self.gated_dims.items():
                if not 0 <= dim < m:
                    raise ValueError(f"gated dim {dim} out of range")
                if not lo <= hi:
                    raise ValueError(f"gated dim {dim} has empty active range")

    @property
    def has_state_bounds(self) -> bool:
        return self.state_lower is not None or self.state_upper is not None


@dataclass(frozen=True)
class HamiltonianContext:
    """The (t, x, p) triple at which Hamiltonians are evaluated."""

    time: float
    state: Array
    costate: Array

    def __post_init__(self):
        object.__setattr__(self, "state", _readonly(self.state))
        object.__setattr__(self, "costate", _readonly(self.costate))
        if not np.isfinite(self.time):
            raise ValueError("time must be finite")
        if not (np.all(np.isfinite(self.state)) and np.all(np.isfinite(self.costate))):
            raise ValueError("state and costate must be finite")


def eval_dynamics(problem: ControlProblem, t: float, x: Array, u: Array) -> Array:
    f = np.asarray(problem.dynamics(t, x, u), dtype=float)
    if not np.all(np.isfinite(f)):
        raise NonFiniteEvaluation(f"dynamics returned a non-finite value at t={t}")
    return f


def eval_running_cost(problem: ControlProblem, t: float, x: Array, u: Array) -> float:
    g = float(problem.running_cost(t, x, u))
    if not np.isfinite(g):
        raise NonFiniteEvaluation(f"running cost returned a non-finite value at t={t}")
    return g


def eval_dynamics_batch(problem: ControlProblem, t: float, x: Array, controls: Array) -> Array:
    """Dynamics at one (t, x) for a (K, m) block of controls, shape (K, n)."""
    controls = np.asarray(controls, dtype=float)
    if problem.dynamics_batch is not None:
        f = np.asarray(problem.dynamics_batch(t, x, controls), dtype=float)
    else:
        f = np.stack([np.asarray(problem.dynamics(t, x, u), dtype=float) for u in controls])
    if not np.all(np.isfinite(f)):
        raise NonFiniteEvaluation(f"dynamics returned a non-finite value at t={t}")
    return f


def eval_running_cost_batch(problem: ControlProblem, t: float, x: Array, controls: Array) -> Array:
    controls = np.asarray(controls, dtype=float)
    if problem.running_cost_batch is not None:
        g = np.asarray(problem.running_cost_batch(t, x, controls), dtype=float)
    else:
        g = np.array([float(problem.running_cost(t, x, u)) for u in controls])
    if not np.all(np.isfinite(g)):
        raise NonFiniteEvaluation(f"running cost returned a non-finite value at t={t}")
    return g


def eval_hamiltonian(problem: ControlProblem, ctx: HamiltonianContext, u: Array) -> float:
    """H(t, x, p, u) = g(t, x, u) + p . f(t, x, u)."""
    u = np.asarray(u, dtype=float)
    g = eval_running_cost(problem, ctx.time, ctx.state, u)
    f = eval_dynamics(problem, ctx.time, ctx.state, u)
    h = g + float(ctx.costate @ f)
    if not np.isfinite(h):
        raise NonFiniteEvaluation(f"Hamiltonian is non-finite at t={ctx.time}")
    return h


def eval_hamiltonian_batch(problem: ControlProblem, ctx: HamiltonianContext, controls: Array) -> Array:
    """Hamiltonian at every row of ``controls``; shape (K,)."""
    g = eval_running_cost_batch(problem, ctx.time, ctx.state, controls)
    f = eval_dynamics_batch(problem, ctx.time, ctx.state, controls)
    h = g + f @ ctx.costate
    if not np.all(np.isfinite(h)):
        raise NonFiniteEvaluation(f"Hamiltonian is non-finite at t={ctx.time}")
    return h


def grad_h_costate(problem: ControlProblem, ctx: HamiltonianContext, u: Array) -> Array:
    """dH/dp.  H is affine in p, so this is exactly f(t, x, u), never an
    approximation."""
    return eval_dynamics(problem, ctx.time, ctx.state, np.asarray(u, dtype=float))


def _fd_state_step(x: Array, j: int, fd_step: Optional[float]) -> float:
    if fd_step is not None:
        return float(fd_step)
    return 1e-6 * max(1.0, abs(float(x[j])))


def grad_h_state(
    problem: ControlProblem,
    ctx: HamiltonianContext,
    u: Array,
    fd_step: Optional[float] = None,
) -> Array:
    """dH/dx, analytic when the problem supplies it, otherwise a central
    finite difference per state coordinate.

    With ``fd_step=None`` the step for coordinate j is 1e-6 * max(1, |x_j|).
    """
    u = np.asarray(u, dtype=float)
    if problem.hamiltonian_x_gradient is not None:
        grad = np.asarray(
            problem.hamiltonian_x_gradient(ctx.time, ctx.state, ctx.costate, u), dtype=float
        )
        if grad.shape != (problem.state_dim,):
            raise ValueError("hamiltonian_x_gradient returned the wrong shape")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteEvaluation(f"analytic dH/dx is non-finite at t={ctx.time}")
        return grad
    if fd_step is not None and not fd_step > 0:
        raise ValueError("fd_step must be positive")
    x = ctx.state
    grad = np.empty(problem.state_dim)
    for j in range(problem.state_dim):
        h = _fd_state_step(x, j, fd_step)
        xp = np.array(x)
        xm = np.array(x)
        xp[j] += h
        xm[j] -= h
        hp = eval_hamiltonian(problem, dataclasses.replace(ctx, state=xp), u)
        hm = eval_hamiltonian(problem, dataclasses.replace(ctx, state=xm), u)
        grad[j] = (hp - hm) / (2.0 * h)
    return grad


def eval_terminal_cost(problem: ControlProblem, x_final: Array) -> float:
    if problem.terminal_cost is None:
        return 0.0
    psi = float(problem.terminal_cost(np.asarray(x_final, dtype=float)))
    if not np.isfinite(psi):
        raise NonFiniteEvaluation("terminal cost is non-finite")
    return psi


def terminal_costate(
    problem: ControlProblem, x_final: Array, fd_step: Optional[float] = None
) -> Array:
    """Terminal costate p(T) = d(psi)/dx at x(T).

    Uses the analytic gradient when supplied; with no terminal cost at all
    the result is an exact zero array (no pointless differencing of a
    constant); otherwise a central difference of psi.
    """
    x_final = np.asarray(x_final, dtype=float)
    if not np.all(np.isfinite(x_final)):
        raise NonFiniteEvaluation("terminal state is non-finite")
    n = problem.state_dim
    if problem.terminal_gradient is not None:
        grad = np.asarray(problem.terminal_gradient(x_final), dtype=float)
        if grad.shape != (n,):
            raise ValueError("terminal_gradient returned the wrong shape")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteEvaluation("terminal gradient is non-finite")
        return grad
    if problem.terminal_cost is None:
        return np.zeros(n)
    grad = np.empty(n)
    for j in range(n):
        h = _fd_state_step(x_final, j, fd_step)
        xp = np.array(x_final)
        xm = np.array(x_final)
        xp[j] += h
        xm[j] -= h
        grad[j] = (eval_terminal_cost(problem, xp) - eval_terminal_cost(problem, xm)) / (2.0 * h)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteEvaluation("finite-difference terminal gradient is non-finite")
    return grad


def terminal_hessian(
    problem: ControlProblem, x_final: Array, fd_step: Optional[float] = None
) -> Array:
    """d2(psi)/dx2 at x(T); exact zeros when there is no terminal cost."""
    x_final = np.asarray(x_final, dtype=float)
    n = problem.state_dim
    if problem.terminal_hessian is not None:
        hess = np.asarray(problem.terminal_hessian(x_final), dtype=float)
        if hess.shape != (n, n):
            raise ValueError("terminal_hessian returned the wrong shape")
        if not np.all(np.isfinite(hess)):
            raise NonFiniteEvaluation("terminal Hessian is non-finite")
        return hess
    if problem.terminal_cost is None:
        return np.zeros((n, n))
    # central differences of the terminal gradient, symmetrized
    hess = np.empty((n, n))
    for j in range(n):
        h = _fd_state_step(x_final, j, fd_step)
        xp = np.array(x_final)
        xm = np.array(x_final)
        xp[j] += h
        xm[j] -= h
        gp = terminal_costate(problem, xp, fd_step=fd_step)
        gm = terminal_costate(problem, xm, fd_step=fd_step)
        hess[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)
