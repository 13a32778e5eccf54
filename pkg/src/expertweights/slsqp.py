"""Sequential least-squares quadratic programming.

Minimizes ``f(x)`` subject to ``g_j(x) = 0`` for the leading equality
constraints and ``g_j(x) >= 0`` for the rest.  Each iteration factors the
quasi-Newton matrix as ``B = L D L^T``, solves the quadratic subproblem in
least-squares form with :func:`expertweights.lsei.solve_lsei`, backtracks on
an L1 exact-penalty merit function and applies a damped BFGS update.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .lsei import InfeasibleConstraintsError, LseiInstance, LseiSolution, solve_lsei

logger = logging.getLogger(__name__)

BACKTRACK_FACTOR = 0.5
DAMPING_THRESHOLD = 0.2
RELAXATION_WEIGHT = 1e3
SHORT_STEP = BACKTRACK_FACTOR ** 10
_PIVOT_FLOOR = 1e-14


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class LineSearchError(RuntimeError):
    pass


class EvaluationError(ValueError):
    """An objective or constraint evaluation returned a non-finite value."""


@dataclass(frozen=True)
class Constraint:
    """``kind`` is ``"eq"`` for ``fun(x) == 0`` or ``"ineq"`` for ``fun(x) >= 0``."""

    kind: str
    fun: Callable[[NDArray], float]
    jac: Callable[[NDArray], NDArray]

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint kind must be 'eq' or 'ineq', got {self.kind!r}")


@dataclass(frozen=True)
class NlpProblem:
    dimension: int
    objective: Callable[[NDArray], float]
    gradient: Callable[[NDArray], NDArray]
    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        kinds = [c.kind for c in self.constraints]
        if "eq" in kinds[self.num_equalities:]:
            raise ValueError("equality constraints must precede inequality constraints")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    @property
    def num_equalities(self) -> int:
        count = 0
        for c in self.constraints:
            if c.kind != "eq":
                break
            count += 1
        return count

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def f(self, x: NDArray) -> float:
        value = float(self.objective(x))
        if not np.isfinite(value):
            raise EvaluationError(f"objective is not finite at {x}")
        return value

    def grad(self, x: NDArray) -> NDArray:
        g = np.asarray(self.gradient(x), dtype=float).reshape(-1)
        if g.shape != (self.dimension,) or not np.all(np.isfinite(g)):
            raise EvaluationError(f"bad objective gradient at {x}")
        return g

    def g(self, x: NDArray) -> NDArray:
        values = np.array([c.fun(x) for c in self.constraints], dtype=float)
        if not np.all(np.isfinite(values)):
            raise EvaluationError(f"constraint values are not finite at {x}")
        return values

    def jac(self, x: NDArray) -> NDArray:
        if not self.constraints:
            return np.zeros((0, self.dimension))
        J = np.array([np.asarray(c.jac(x), dtype=float).reshape(-1) for c in self.constraints])
        if J.shape != (self.num_constraints, self.dimension) or not np.all(np.isfinite(J)):
            raise EvaluationError(f"bad constraint jacobian at {x}")
        return J


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-12
    max_iterations: int = 200
    line_search_max_steps: int = 40
    armijo_coefficient: float = 1e-4
    feasibility_tolerance: float = 1e-8

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.line_search_max_steps < 1:
            raise ValueError("line_search_max_steps must be at least 1")


@dataclass
class IterationState:
    x: NDArray
    B: NDArray
    rho: NDArray
    iteration: int = 0
    f_value: float = float("nan")
    multipliers: NDArray | None = None


class TerminationReason(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    SUBPROBLEM_INFEASIBLE = "subproblem_infeasible"
    LINE_SEARCH_FAILED = "line_search_failed"


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    x: NDArray
    f_value: float
    step_norm: float
    alpha: float
    merit: float
    rho: NDArray


@dataclass
class SolveTrace:
    records: list[IterationRecord] = field(default_factory=list)
    termination_reason: TerminationReason | None = None

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def converged(self) -> bool:
        return self.termination_reason is TerminationReason.CONVERGED

    def objective_values(self) -> NDArray:
        return np.array([r.f_value for r in self.records])


class SolveResult(NamedTuple):
    x: NDArray
    multipliers: NDArray
    trace: SolveTrace


def ldl_factorize(B: ArrayLike) -> tuple[NDArray, NDArray]:
    """Factor a symmetric positive-definite matrix as ``L @ diag(D) @ L.T``.

    Returns the unit lower-triangular ``L`` and the pivots ``D`` as a vector.
    Raises :class:`NotPositiveDefiniteError` on a non-positive pivot.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    if B.shape != (n, n):
        raise ValueError("matrix must be square")
    scale = max(np.abs(np.diag(B)).max(initial=0.0), 1.0)
    L = np.eye(n)
    D = np.zeros(n)
    for j in range(n):
        D[j] = B[j, j] - (L[j, :j] ** 2) @ D[:j]
        if not np.isfinite(D[j]) or D[j] <= _PIVOT_FLOOR * scale:
            raise NotPositiveDefiniteError(f"pivot {j} is {D[j]!r}")
        L[j + 1:, j] = (B[j + 1:, j] - L[j + 1:, :j] @ (L[j, :j] * D[:j])) / D[j]
    return L, D


def merit_value(problem: NlpProblem, x: ArrayLike, rho: ArrayLike) -> float:
    """L1 exact penalty: ``f + sum rho|g_eq| + sum rho|min(0, g_in)|``."""
    x = np.asarray(x, dtype=float)
    return problem.f(x) + _penalty(problem, problem.g(x), np.asarray(rho, dtype=float))


def _penalty(problem: NlpProblem, g: NDArray, rho: NDArray) -> float:
    me = problem.num_equalities
    violation = np.concatenate([np.abs(g[:me]), np.abs(np.minimum(0.0, g[me:]))])
    return float(rho @ violation)


def update_penalty(rho_prev: ArrayLike, mu: ArrayLike) -> NDArray:
    rho_prev = np.asarray(rho_prev, dtype=float)
    mu = np.abs(np.asarray(mu, dtype=float))
    if rho_prev.shape != mu.shape:
        raise ValueError("penalty and multiplier lengths differ")
    return np.maximum(0.5 * (rho_prev + mu), mu)


def damping_factor(B: NDArray, s: NDArray, eta: NDArray) -> float:
    """Powell's ``theta``: 1 when ``s'eta >= 0.2 s'Bs``, otherwise the blend keeping ``s'q = 0.2 s'Bs``."""
    sBs = s @ B @ s
    s_eta = s @ eta
    if s_eta >= DAMPING_THRESHOLD * sBs:
        return 1.0
    denominator = sBs - s_eta
    if denominator == 0:
        return 1.0
    return (1.0 - DAMPING_THRESHOLD) * sBs / denominator


def damped_bfgs_update(B: ArrayLike, s: ArrayLike, eta: ArrayLike) -> NDArray:
    """Damped BFGS update of ``B`` along step ``s`` with gradient change ``eta``.

    Uses ``q = theta*eta + (1 - theta)*B s`` in place of ``eta`` so that
    ``s'q >= 0.2 s'Bs`` and the update stays positive definite.  A matrix
    that has lost positive curvature along ``s``, or an update that is not
    finite, is replaced by the identity.
    """
    B = np.asarray(B, dtype=float)
    s = np.asarray(s, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not np.any(s):
        raise ValueError("step must be nonzero")
    Bs = B @ s
    sBs = s @ Bs
    if not sBs > 0:
        logger.debug("s'Bs = %r, resetting B", sBs)
        return np.eye(B.shape[0])
    theta = damping_factor(B, s, eta)
    q = theta * eta + (1.0 - theta) * Bs
    new = B + np.outer(q, q) / (q @ s) - np.outer(Bs, Bs) / sBs
    new = 0.5 * (new + new.T)
    if not np.all(np.isfinite(new)):
        return np.eye(B.shape[0])
    return new


def build_qp_subproblem(state: IterationState, problem: NlpProblem) -> LseiInstance:
    """Least-squares form of the quadratic subproblem at ``state.x``.

    ``0.5 d'Bd + grad'd`` equals ``0.5 ||E d - t||^2`` up to a constant, with
    ``E = D^(1/2) L'`` and ``t = -D^(-1/2) L^(-1) grad``.  The linearized
    constraints become ``A_eq d = -g_eq`` and ``A_in d >= -g_in``.  If ``B``
    is not positive definite, ``state.B`` is reset to the identity first.
    """
    try:
        L, D = ldl_factorize(state.B)
    except NotPositiveDefiniteError:
        logger.debug("B lost positive definiteness at iteration %d, resetting", state.iteration)
        state.B = np.eye(problem.dimension)
        L, D = ldl_factorize(state.B)
    x = state.x
    grad = problem.grad(x)
    g = problem.g(x)
    A = problem.jac(x)
    me = problem.num_equalities
    root = np.sqrt(D)
    E = root[:, None] * L.T
    target = -np.linalg.solve(L, grad) / root
    return LseiInstance(E, target, A[:me], -g[:me], A[me:], -g[me:])


def _relaxed_subproblem(qp: LseiInstance, problem: NlpProblem, g: NDArray):
    """Add a variable ``xi`` in [0, 1] that scales back violated constraint values.

    ``grad_g' d + (1 - xi) g = 0`` (or ``>= 0`` for violated inequalities) is
    always consistent at ``d = 0, xi = 1``; ``xi`` is penalized so the
    subproblem drives violation down as far as the linearization allows.
    """
    n = problem.dimension
    me = problem.num_equalities
    E = np.zeros((qp.design.shape[0] + 1, n + 1))
    E[:-1, :n] = qp.design
    E[-1, n] = np.sqrt(RELAXATION_WEIGHT) * max(1.0, np.abs(qp.design).max())
    target = np.append(qp.target, 0.0)
    A_eq = np.hstack([qp.eq_matrix, -g[:me, None]])
    g_in = g[me:]
    A_in = np.hstack([qp.ineq_matrix, np.where(g_in < 0, -g_in, 0.0)[:, None]])
    bounds = np.zeros((2, n + 1))
    bounds[0, n] = 1.0
    bounds[1, n] = -1.0
    A_in = np.vstack([A_in, bounds])
    b_in = np.concatenate([qp.ineq_rhs, [0.0, -1.0]])
    return LseiInstance(E, target, A_eq, qp.eq_rhs, A_in, b_in)


def line_search(
    problem: NlpProblem,
    state: IterationState,
    d: ArrayLike,
    config: SolverConfig | None = None,
    relaxation: float = 0.0,
) -> float:
    """Backtracking Armijo search on the merit function along ``d``.

    The sufficient-decrease test uses the directional derivative estimate
    ``grad'd - (1 - relaxation) * penalty(x)``, which is exact when the
    linearized constraints hold along ``d``.  Every accepted step also
    strictly decreases the merit value.
    """
    config = config or SolverConfig()
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        raise ValueError("search direction is zero")
    x = state.x
    phi0 = merit_value(problem, x, state.rho)
    slope = problem.grad(x) @ d - (1.0 - relaxation) * _penalty(problem, problem.g(x), state.rho)
    slope = min(slope, 0.0)
    alpha = 1.0
    for _ in range(config.line_search_max_steps):
        phi = merit_value(problem, x + alpha * d, state.rho)
        if phi < phi0 and phi <= phi0 + config.armijo_coefficient * alpha * slope:
            return alpha
        alpha *= BACKTRACK_FACTOR
    raise LineSearchError(f"no merit decrease after {config.line_search_max_steps} backtracks")


def _feasible(problem: NlpProblem, g: NDArray, tol: float) -> bool:
    me = problem.num_equalities
    return bool(np.all(np.abs(g[:me]) <= tol) and np.all(g[me:] >= -tol))


def _lagrangian_gradient(grad: NDArray, A: NDArray, mu: NDArray) -> NDArray:
    return grad - A.T @ mu


def solve(problem: NlpProblem, x0: ArrayLike, config: SolverConfig | None = None) -> SolveResult:
    """Run SLSQP from ``x0``.

    Stops when the objective change satisfies
    ``|f_{k+1} - f_k| <= tol * (1 + |f_k|)``, the last direction has
    ``max|d_k| <= sqrt(tol)`` and the iterate is feasible.  Non-convergence
    is reported through ``trace.termination_reason`` rather than raised.

    Returns
    -------
    SolveResult
        ``(x, multipliers, trace)``; multipliers are those of the last
        subproblem, equalities first.
    """
    config = config or SolverConfig()
    x = np.array(x0, dtype=float).reshape(-1)
    if x.shape != (problem.dimension,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({problem.dimension},)")
    n, m = problem.dimension, problem.num_constraints
    me = problem.num_equalities
    step_tol = np.sqrt(config.tolerance)

    state = IterationState(x=x, B=np.eye(n), rho=np.zeros(m), f_value=problem.f(x),
                          multipliers=np.zeros(m))
    trace = SolveTrace()
    trace.records.append(IterationRecord(0, x.copy(), state.f_value, float("nan"),
                                         float("nan"), state.f_value, state.rho.copy()))

    for k in range(config.max_iterations):
        state.iteration = k
        g = problem.g(state.x)
        qp = build_qp_subproblem(state, problem)
        relaxation = 0.0
        try:
            sol = solve_lsei(qp)
            d, mu = sol.d, sol.multipliers
        except InfeasibleConstraintsError:
            logger.debug("linearized constraints inconsistent at iteration %d, relaxing", k)
            try:
                sol = solve_lsei(_relaxed_subproblem(qp, problem, g))
            except InfeasibleConstraintsError:
                trace.termination_reason = TerminationReason.SUBPROBLEM_INFEASIBLE
                break
            d, relaxation = sol.d[:n], float(sol.d[n])
            mu = np.concatenate([sol.eq_multipliers, sol.ineq_multipliers[:m - me]])
            if np.abs(d).max() <= step_tol:
                trace.termination_reason = TerminationReason.SUBPROBLEM_INFEASIBLE
                break

        state.multipliers = mu
        state.rho = update_penalty(state.rho, mu)

        d_max = np.abs(d).max()
        if d_max <= np.finfo(float).eps * (1.0 + np.abs(state.x).max()):
            if _feasible(problem, g, config.feasibility_tolerance):
                trace.termination_reason = TerminationReason.CONVERGED
            else:
                trace.termination_reason = TerminationReason.SUBPROBLEM_INFEASIBLE
            break
        try:
            alpha = line_search(problem, state, d, config, relaxation)
        except LineSearchError:
            # below sqrt(tol) the merit differences are rounding noise, provided
            # the model also predicts a negligible decrease (not so at a kink)
            predicted = abs(problem.grad(state.x) @ d)
            if (d_max <= step_tol
                    and predicted <= config.tolerance * (1.0 + abs(state.f_value))
                    and _feasible(problem, g, config.feasibility_tolerance)):
                trace.termination_reason = TerminationReason.CONVERGED
            else:
                trace.termination_reason = TerminationReason.LINE_SEARCH_FAILED
            break

        s = alpha * d
        x_new = state.x + s
        f_new = problem.f(x_new)
        A = problem.jac(state.x)
        eta = (_lagrangian_gradient(problem.grad(x_new), problem.jac(x_new), mu)
               - _lagrangian_gradient(problem.grad(state.x), A, mu))
        if alpha < SHORT_STEP:
            # the model was badly wrong along d (typically a kink of f);
            # a curvature pair from such a short step is not trustworthy
            logger.debug("step %.3g at iteration %d, resetting B", alpha, k)
            state.B = np.eye(n)
        elif np.any(s):
            state.B = damped_bfgs_update(state.B, s, eta)

        f_old = state.f_value
        state.x, state.f_value = x_new, f_new
        trace.records.append(IterationRecord(
            k + 1, x_new.copy(), f_new, float(np.linalg.norm(d)), alpha,
            merit_value(problem, x_new, state.rho), state.rho.copy(),
        ))
        g_new = problem.g(x_new)
        if (abs(f_new - f_old) <= config.tolerance * (1.0 + abs(f_old))
                and d_max <= step_tol
                and _feasible(problem, g_new, config.feasibility_tolerance)):
            trace.termination_reason = TerminationReason.CONVERGED
            break
    else:
        trace.termination_reason = TerminationReason.MAX_ITERATIONS

    logger.info("SLSQP stopped after %d iterations: %s", trace.iterations,
                trace.termination_reason.value)
    return SolveResult(state.x, state.multipliers, trace)
