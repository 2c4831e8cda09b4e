"""Variation-of-extremals shooting on the initial costate.

The two-point boundary value problem (x(0) fixed, p(T) pinned to the terminal
cost gradient) is solved as an initial value problem: guess p(0), propagate,
measure the terminal mismatch, estimate the sensitivity of the terminal pair
to the guess by finite differences over perturbed propagations, and apply a
damped Newton-style correction.  The per-interval measure LP makes the
control piecewise constant in the guess, so the sensitivities are exact
between level-switch boundaries and noisy across them; the damping factor and
best-iterate tracking absorb that noise.

The n perturbed propagations of one iteration are mutually independent and
could run concurrently; the outer loop is sequential.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .chattering import GridParams, InfeasibleLevels
from .model import (
    Array,
    ControlProblem,
    NonFiniteEvaluation,
    terminal_costate,
    terminal_hessian,
)
from .propagation import TimePartition, Trajectory, propagate_forward

#: refuse the linear correction when the regularized matrix is worse
#: conditioned than this
CONDITION_LIMIT = 1e14

#: per-iteration progress callback: (iteration, residual, cost)
ProgressSink = Callable[[int, float, float], None]


class SingularCorrection(RuntimeError):
    """The sensitivity correction matrix is numerically singular even after
    regularization; callers fall back to a plain residual gradient step."""


@dataclass(frozen=True)
class ShootingConfig:
    """Outer-loop parameters.

    ``delta_p=None`` scales the perturbation with the current guess as
    1e-3 * max(1, ||p0||).  The defaults aim for stable damped-Newton
    behavior; nothing here is problem specific.
    """

    p0_initial: Array
    gamma: float = 0.5
    delta_p: Optional[float] = None
    epsilon: float = 1e-3
    max_iterations: int = 500
    ridge: float = 1e-8

    def __post_init__(self):
        p0 = np.array(self.p0_initial, dtype=float)
        if p0.ndim != 1:
            raise ValueError("p0_initial must be a 1-d array")
        if not np.all(np.isfinite(p0)):
            raise ValueError("p0_initial must be finite")
        p0.setflags(write=False)
        object.__setattr__(self, "p0_initial", p0)
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta_p is not None and not self.delta_p > 0:
            raise ValueError("delta_p must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")


@dataclass(frozen=True)
class SensitivityEstimate:
    """Finite-difference Jacobians of the terminal state and costate with
    respect to the initial costate guess."""

    P_x: Array
    P_p: Array

    def __post_init__(self):
        for name in ("P_x", "P_p"):
            mat = np.array(getattr(self, name), dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} must be finite")
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)


@dataclass(frozen=True)
class ShootingResult:
    converged: bool
    iterations: int
    residual_history: Array
    trajectory: Optional[Trajectory]
    p0_final: Array
    message: str = ""

    def __post_init__(self):
        hist = np.array(self.residual_history, dtype=float)
        hist.setflags(write=False)
        object.__setattr__(self, "residual_history", hist)
        object.__setattr__(self, "p0_final", np.array(self.p0_final, dtype=float))
        if hist.size != self.iterations:
            raise ValueError("residual_history length must equal iterations")

    @property
    def residual(self) -> float:
        return float(np.min(self.residual_history)) if self.residual_history.size else np.inf


def _auto_delta(p0: Array, delta_p: Optional[float]) -> float:
    if delta_p is not None:
        return float(delta_p)
    return 1e-3 * max(1.0, float(np.linalg.norm(p0)))


def finite_diff_sensitivities(
    problem: ControlProblem,
    partition: TimePartition,
    p0: Array,
    delta_p: float,
    grid_params: GridParams = GridParams(),
    fd_step: Optional[float] = None,
    nominal: Optional[Trajectory] = None,
) -> SensitivityEstimate:
    """One-sided difference Jacobians from n perturbed propagations, one per
    costate coordinate, plus the nominal run (reused when supplied)."""
    if not delta_p > 0:
        raise ValueError("delta_p must be positive")
    p0 = np.asarray(p0, dtype=float)
    n = problem.state_dim
    if nominal is None:
        nominal = propagate_forward(problem, partition, p0, grid_params, fd_step=fd_step)
    x_T = nominal.terminal.x
    p_T = nominal.terminal.p
    P_x = np.empty((n, n))
    P_p = np.empty((n, n))
    for j in range(n):
        p0_j = np.array(p0)
        p0_j[j] += delta_p
        try:
            perturbed = propagate_forward(problem, partition, p0_j, grid_params, fd_step=fd_step)
        except (NonFiniteEvaluation, InfeasibleLevels) as err:
            tagged = type(err)(f"{err} [perturbation {j}]")
            tagged.perturbation_index = j
            raise tagged from err
        P_x[:, j] = (perturbed.terminal.x - x_T) / delta_p
        P_p[:, j] = (perturbed.terminal.p - p_T) / delta_p
    return SensitivityEstimate(P_x, P_p)


def update_initial_costate(
    p0: Array,
    sens: SensitivityEstimate,
    p_T: Array,
    x_T: Array,
    problem: ControlProblem,
    gamma: float,
    ridge: float,
) -> Array:
    """One correction of the initial costate guess:

        p0 <- p0 + gamma * (Hess(psi)(x_T) P_x - P_p)^-1 (p_T - dpsi/dx(x_T))

    solved densely with a ridge on the diagonal.
    """
    p0 = np.asarray(p0, dtype=float)
    residual = p_T - terminal_costate(problem, x_T)
    M = terminal_hessian(problem, x_T) @ sens.P_x - sens.P_p
    M_reg = M + ridge * np.eye(M.shape[0])
    try:
        cond = np.linalg.cond(M_reg)
    except np.linalg.LinAlgError as err:  # pragma: no cover - cond rarely fails
        raise SingularCorrection("condition estimate failed") from err
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularCorrection(
            f"correction matrix condition {cond:.3e} exceeds {CONDITION_LIMIT:.0e}"
        )
    step = np.linalg.solve(M_reg, residual)
    return p0 + gamma * step


def solve(
    problem: ControlProblem,
    partition: TimePartition,
    config: ShootingConfig,
    grid_params: GridParams = GridParams(),
    fd_step: Optional[float] = None,
    progress: Optional[ProgressSink] = None,
) -> ShootingResult:
    """Iterate propagate / sensitivities / correct until the terminal costate
    matches the terminal cost gradient within ``config.epsilon`` or the
    iteration budget runs out.  Returns the best-residual iterate either way.

    Infeasible level generation ends the run with ``converged=False`` and a
    diagnostic message instead of raising; non-finite evaluations propagate.
    """
    p0 = np.array(config.p0_initial, dtype=float)
    if p0.shape != (problem.state_dim,):
        raise ValueError(f"p0_initial must have shape ({problem.state_dim},)")
    history: List[float] = []
    best_residual = np.inf
    best_trajectory: Optional[Trajectory] = None
    best_p0 = np.array(p0)
    converged = False
    message = ""
    for _ in range(config.max_iterations):
        try:
            trajectory = propagate_forward(problem, partition, p0, grid_params, fd_step=fd_step)
        except InfeasibleLevels as err:
            message = f"level generation became infeasible: {err}"
            break
        x_T = trajectory.terminal.x
        p_T = trajectory.terminal.p
        residual = float(np.linalg.norm(p_T - terminal_costate(problem, x_T)))
        history.append(residual)
        if residual < best_residual:
            best_residual = residual
            best_trajectory = trajectory
            best_p0 = np.array(p0)
        if progress is not None:
            progress(len(history), residual, trajectory.accumulated_cost)
        if residual < config.epsilon:
            converged = True
            break
        if len(history) >= config.max_iterations:
            break
        delta = _auto_delta(p0, config.delta_p)
        try:
            sens = finite_diff_sensitivities(
                problem, partition, p0, delta, grid_params, fd_step=fd_step, nominal=trajectory
            )
            p0 = update_initial_costate(
                p0, sens, p_T, x_T, problem, config.gamma, config.ridge
            )
        except SingularCorrection:
            # plain residual gradient step keeps the loop alive
            p0 = p0 - config.gamma * (p_T - terminal_costate(problem, x_T))
        except InfeasibleLevels as err:
            message = f"perturbed propagation became infeasible: {err}"
            break
    if not converged and not message:
        message = "iteration budget exhausted before the residual dropped below epsilon"
    return ShootingResult(
        converged=converged,
        iterations=len(history),
        residual_history=np.asarray(history),
        trajectory=best_trajectory,
        p0_final=best_p0,
        message="" if converged else message,
    )
