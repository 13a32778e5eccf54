"""Expert-weight determination: the simplex-constrained problem and its solve."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import model
from .lsei import LseiInstance, solve_lsei
from .model import DistanceReport, RankDiagnostics, ScoreMatrix
from .slsqp import Constraint, NlpProblem, SolveResult, SolverConfig, solve


@dataclass(frozen=True)
class LinearConstraint:
    """The relation ``coefficients @ w >= rhs``."""

    coefficients: NDArray
    rhs: float
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, "rhs", float(self.rhs))

    def residual(self, w: ArrayLike) -> float:
        return float(self.coefficients @ np.asarray(w, dtype=float) - self.rhs)


def _affine(coefficients: NDArray, offset: float) -> Constraint:
    coefficients = np.asarray(coefficients, dtype=float)
    coefficients.setflags(write=False)
    return Constraint(
        "ineq",
        lambda w: float(coefficients @ w + offset),
        lambda w: coefficients,
    )


def weight_problem(S: ScoreMatrix, extra_constraints: Sequence[LinearConstraint] = ()) -> NlpProblem:
    """Minimize the objective over the simplex plus any extra linear relations.

    Constraint order: ``sum(w) - 1 = 0``, then ``w_j >= 0``, then
    ``1 - w_j >= 0`` (redundant, kept so the encoding matches the model
    literally), then the extra relations.
    """
    m = S.num_experts
    ones = np.ones(m)
    ones.setflags(write=False)
    constraints = [Constraint("eq", lambda w: float(w.sum() - 1.0), lambda w: ones)]
    eye = np.eye(m)
    constraints += [_affine(eye[j], 0.0) for j in range(m)]
    constraints += [_affine(-eye[j], 1.0) for j in range(m)]
    for rel in extra_constraints:
        if rel.coefficients.shape != (m,):
            raise ValueError(f"constraint {rel.text!r} has {rel.coefficients.size} coefficients, expected {m}")
        constraints.append(_affine(rel.coefficients, -rel.rhs))
    return NlpProblem(
        dimension=m,
        objective=lambda w: model.objective(S, w),
        gradient=lambda w: model.objective_gradient(S, w),
        constraints=tuple(constraints),
    )


def check_feasible(m: int, extra_constraints: Sequence[LinearConstraint] = ()) -> None:
    """Raise :class:`~expertweights.lsei.InfeasibleConstraintsError` if no weight vector satisfies every relation."""
    rows = [np.eye(m), -np.eye(m)] + [rel.coefficients[None, :] for rel in extra_constraints]
    rhs = [np.zeros(m), -np.ones(m)] + [np.array([rel.rhs]) for rel in extra_constraints]
    solve_lsei(LseiInstance(
        np.eye(m), np.zeros(m), np.ones((1, m)), np.ones(1), np.vstack(rows), np.concatenate(rhs),
    ))


@dataclass(frozen=True)
class WeightSolution:
    weights: NDArray
    report: DistanceReport
    diagnostics: RankDiagnostics
    result: SolveResult

    @property
    def objective(self) -> float:
        return self.report.objective

    @property
    def converged(self) -> bool:
        return self.result.trace.converged


def solve_expert_weights(
    S: ScoreMatrix,
    initial: ArrayLike | None = None,
    config: SolverConfig | None = None,
    extra_constraints: Sequence[LinearConstraint] = (),
) -> WeightSolution:
    """Solve for expert weights, starting from uniform weights by default.

    Raises
    ------
    InfeasibleConstraintsError
        The extra relations leave no feasible weight vector.
    """
    m = S.num_experts
    if extra_constraints:
        check_feasible(m, extra_constraints)
    x0 = np.full(m, 1.0 / m) if initial is None else np.asarray(initial, dtype=float)
    result = solve(weight_problem(S, extra_constraints), x0, config)
    return WeightSolution(
        weights=result.x,
        report=model.distance_report(S, result.x),
        diagnostics=model.rank_diagnostics(S),
        result=result,
    )
