"""Command-line interface: ``solve``, ``verify`` and ``report``.

Exit codes: 0 success, 1 verification check failed, 2 input error,
3 infeasible constraints, 4 no convergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model, oracle
from .lsei import InfeasibleConstraintsError
from .model import ScorePanel, WeightVector
from .panel_io import ConstraintSyntaxError, PanelFormatError, load_table1, parse_constraints, read_panel
from .slsqp import SolverConfig, TerminationReason
from .weighting import solve_expert_weights

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4

BUILTIN_PANEL = "table1"
VERIFY_GRID_BUDGET = 10**6


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input_path: str
    tolerance: float = 1e-12
    max_iterations: int = 200
    initial_weights: str | tuple[float, ...] = "uniform"
    constraints: tuple[str, ...] = ()
    strict_margin: float = 0.0
    output_format: str = "json"
    seed: int = 0
    grid: int | None = None
    subgradient_steps: int = 20_000
    starts: int = 10


def load_panel(path: str) -> ScorePanel:
    if path == BUILTIN_PANEL and not os.path.exists(path):
        return load_table1()
    try:
        return read_panel(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


@dataclass
class ResultDocument:
    experts: tuple[str, ...]
    alternatives: tuple[str, ...]
    weights: list[float]
    distances: list[float]
    per_alternative_distances: list[list[float]]
    per_alternative_totals: list[float]
    objective: float
    diagnostics: dict
    trace: list[dict] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.diagnostics["iterations"]

    @property
    def termination_reason(self) -> str:
        return self.diagnostics["termination_reason"]

    def to_dict(self) -> dict:
        return {
            "weights": dict(zip(self.experts, self.weights)),
            "distances": dict(zip(self.experts, self.distances)),
            "per_alternative": {
                alt: {"distances": dict(zip(self.experts, row)), "total": total}
                for alt, row, total in zip(self.alternatives, self.per_alternative_distances,
                                           self.per_alternative_totals)
            },
            "objective": self.objective,
            "diagnostics": self.diagnostics,
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultDocument":
        experts = tuple(doc["weights"])
        per_alt = doc["per_alternative"]
        return cls(
            experts=experts,
            alternatives=tuple(per_alt),
            weights=[doc["weights"][e] for e in experts],
            distances=[doc["distances"][e] for e in experts],
            per_alternative_distances=[[per_alt[a]["distances"][e] for e in experts] for a in per_alt],
            per_alternative_totals=[per_alt[a]["total"] for a in per_alt],
            objective=doc["objective"],
            diagnostics=doc["diagnostics"],
            trace=doc["trace"],
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["expert", "weight", "distance"])
        for row in zip(self.experts, self.weights, self.distances):
            writer.writerow([row[0], repr(row[1]), repr(row[2])])
        return out.getvalue()

    def trace_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["k", "Q", "ln_Q", "alpha", "merit"])
        for row in self.trace:
            writer.writerow(["" if row[key] is None else repr(row[key])
                             for key in ("k", "Q", "ln_Q", "alpha", "merit")])
        return out.getvalue()


def _finite_or_none(value: float):
    return float(value) if math.isfinite(value) else None


def _initial_weights(config: RunConfig, m: int):
    if config.initial_weights == "uniform":
        return None
    w = np.asarray(config.initial_weights, dtype=float)
    if w.shape != (m,):
        raise InputError(f"initial weights need {m} entries, got {w.size}")
    try:
        WeightVector(w)
    except ValueError as exc:
        raise InputError(f"initial weights: {exc}") from None
    return w


def run_solve(config: RunConfig, panel: ScorePanel | None = None) -> ResultDocument:
    """Solve for expert weights and assemble the result document.

    Raises
    ------
    InputError, PanelFormatError, ConstraintSyntaxError
        Bad input files or options.
    InfeasibleConstraintsError
        Extra constraints leave no feasible weights.
    """
    panel = panel if panel is not None else load_panel(config.input_path)
    S = model.build_score_matrix(panel)
    extra = parse_constraints(config.constraints, panel.experts, config.strict_margin)
    x0 = _initial_weights(config, S.num_experts)
    solver_config = SolverConfig(tolerance=config.tolerance, max_iterations=config.max_iterations)
    sol = solve_expert_weights(S, x0, solver_config, extra)

    trace = sol.result.trace
    warnings = []
    if not sol.diagnostics.full_column_rank:
        warnings.append("score matrix lacks full column rank; optimal weights may not be unique")
    if S.num_experts == 2:
        warnings.append("with two experts the objective is constant on the simplex; every weighting is optimal")
    diagnostics = {
        "numerical_rank": sol.diagnostics.numerical_rank,
        "full_column_rank": sol.diagnostics.full_column_rank,
        "singular_values": [float(v) for v in sol.diagnostics.singular_values],
        "rank_tolerance": sol.diagnostics.rank_tolerance,
        "iterations": trace.iterations,
        "termination_reason": trace.termination_reason.value,
        "converged": trace.converged,
        "multipliers": [float(v) for v in sol.result.multipliers],
        "constraints": [rel.text for rel in extra],
        "warnings": warnings,
    }
    rows = [{
        "k": r.iteration,
        "Q": r.f_value,
        "ln_Q": _finite_or_none(math.log(r.f_value)) if r.f_value > 0 else None,
        "alpha": _finite_or_none(r.alpha),
        "merit": r.merit,
    } for r in trace.records]
    return ResultDocument(
        experts=panel.experts,
        alternatives=panel.alternatives,
        weights=[float(v) for v in sol.weights],
        distances=[float(v) for v in sol.report.expert_distances],
        per_alternative_distances=sol.report.per_alt_distances.tolist(),
        per_alternative_totals=sol.report.per_alt_totals.tolist(),
        objective=sol.objective,
        diagnostics=diagnostics,
        trace=rows,
    )


def solve_exit_code(doc: ResultDocument) -> int:
    reason = TerminationReason(doc.termination_reason)
    if reason is TerminationReason.CONVERGED:
        return EXIT_OK
    if reason is TerminationReason.SUBPROBLEM_INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_NO_CONVERGENCE


def _default_grid(m: int, budget: int = VERIFY_GRID_BUDGET) -> int:
    g = 200
    while g > 1 and oracle.SimplexGrid(g, m).size > budget:
        g -= 1
    return g


def run_verify(config: RunConfig, panel: ScorePanel | None = None) -> dict:
    """Cross-check the solver on one panel against the independent oracles."""
    panel = panel if panel is not None else load_panel(config.input_path)
    S = model.build_score_matrix(panel)
    m = S.num_experts
    rng = np.random.default_rng(config.seed)
    solver_config = SolverConfig(tolerance=config.tolerance, max_iterations=config.max_iterations)
    sol = solve_expert_weights(S, config=solver_config)
    q_star = sol.objective

    g = config.grid if config.grid is not None else _default_grid(m)
    grid_w, grid_q = oracle.brute_force_minimize(S, oracle.SimplexGrid(g, m))
    sub_w, sub_q = oracle.projected_subgradient_minimize(S, config.subgradient_steps)
    grad_err = oracle.gradient_check(S, 20, rng)
    min_gap, min_separated_gap = oracle.convexity_probe(S, 1000, rng)
    probe = oracle.multi_start_probe(S, config.starts, rng, solver_config)
    consistent, by_weight, by_distance = oracle.order_consistency_check(
        sol.weights, sol.report.expert_distances)

    rank = sol.diagnostics
    degenerate = not rank.full_column_rank or m == 2
    if degenerate:
        uniqueness = "expected degeneracy" if probe.weight_spread > 1e-6 else "unique"
        uniqueness_ok = probe.objective_spread < 1e-8
    else:
        uniqueness = "unique" if probe.weight_spread <= 1e-6 else "not unique"
        uniqueness_ok = uniqueness == "unique"

    checks = {
        "solver_converged": sol.converged,
        "oracle_sandwich": grid_q >= q_star - 1e-9,
        "subgradient_agreement": abs(sub_q - q_star) <= 1e-2 * max(abs(q_star), 1.0),
        "gradient_check": grad_err <= 1e-5,
        "convexity": min_gap >= -1e-9,
        "uniqueness": uniqueness_ok,
    }
    experts = panel.experts
    return {
        "objective": q_star,
        "weights": dict(zip(experts, sol.weights.tolist())),
        "grid": {"resolution": g, "objective": grid_q, "weights": grid_w.tolist(),
                 "gap": float(grid_q - q_star)},
        "subgradient": {"steps": config.subgradient_steps, "objective": float(sub_q),
                        "relative_gap": float((sub_q - q_star) / max(abs(q_star), 1e-300))},
        "gradient_max_relative_error": float(grad_err),
        "convexity_min_gap": float(min_gap),
        "convexity_min_separated_gap": float(min_separated_gap),
        "multi_start": {"starts": config.starts, "weight_spread": probe.weight_spread,
                        "objective_spread": probe.objective_spread, "status": uniqueness},
        "full_column_rank": bool(rank.full_column_rank),
        "order_consistency": {"consistent": consistent,
                              "by_weight": [experts[i] for i in by_weight],
                              "by_distance": [experts[i] for i in by_distance]},
        "checks": {name: bool(ok) for name, ok in checks.items()},
        "passed": bool(all(checks.values())),
        "seed": config.seed,
    }


def _ranks(values: Sequence[float], descending: bool) -> list[int]:
    v = np.asarray(values, dtype=float)
    order = np.argsort(-v if descending else v, kind="stable")
    ranks = np.empty(v.size, dtype=int)
    ranks[order] = np.arange(1, v.size + 1)
    return ranks.tolist()


def format_report(doc: ResultDocument) -> str:
    """Human-readable summary, values rounded to three decimals."""
    label_width = max(len("Ascending order of distances"), 1)
    width = max(8, *(len(e) + 1 for e in doc.experts))

    def line(label, cells):
        return f"{label:<{label_width}} " + "".join(f"{c:>{width}}" for c in cells)

    lines = [
        line("", doc.experts),
        line("Expert weight", [f"{w:.3f}" for w in doc.weights]),
        line("Descending order of weights", _ranks(doc.weights, True)),
        line("Distances", [f"{d:.3f}" for d in doc.distances]),
        line("Ascending order of distances", _ranks(doc.distances, False)),
        "",
        f"Objective Q* = {doc.objective:.3f}",
        f"Iterations: {doc.iterations} ({doc.termination_reason})",
    ]
    for warning in doc.diagnostics.get("warnings", []):
        lines.append(f"warning: {warning}")
    return "\n".join(lines)


def _parse_init(text: str):
    if text == "uniform":
        return text
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--init expects 'uniform' or comma-separated weights, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="expertweights", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="determine expert weights for a score panel")
    p.add_argument("input", help=f"panel CSV, or '{BUILTIN_PANEL}' for the bundled example")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--init", type=_parse_init, default="uniform")
    p.add_argument("--constraints", help="file of weight relations, one per line")
    p.add_argument("--margin", type=float, default=0.0, help="separation applied to strict relations")
    p.add_argument("--out", help="write results here (.json or .csv); default stdout JSON")
    p.add_argument("--trace", help="write the per-iteration trace CSV here")

    p = sub.add_parser("verify", help="cross-check the solver against independent oracles")
    p.add_argument("input")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--subgrad-steps", type=int, default=20_000)
    p.add_argument("--starts", type=int, default=10)

    p = sub.add_parser("report", help="summarize a results JSON file")
    p.add_argument("results")
    return parser


def _cmd_solve(args) -> int:
    constraints: tuple[str, ...] = ()
    if args.constraints:
        try:
            with open(args.constraints) as fh:
                constraints = tuple(fh.read().splitlines())
        except OSError as exc:
            raise InputError(f"cannot read {args.constraints}: {exc.strerror}") from None
    fmt = "csv" if args.out and args.out.lower().endswith(".csv") else "json"
    config = RunConfig(args.input, args.tol, args.max_iter, args.init, constraints,
                       args.margin, fmt)
    doc = run_solve(config)
    text = doc.to_csv() if fmt == "csv" else json.dumps(doc.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write(doc.trace_csv())
    for warning in doc.diagnostics["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    code = solve_exit_code(doc)
    if code:
        print(f"solver stopped: {doc.termination_reason}", file=sys.stderr)
    return code


def _cmd_verify(args) -> int:
    config = RunConfig(args.input, seed=args.seed, grid=args.grid,
                       subgradient_steps=args.subgrad_steps, starts=args.starts)
    try:
        report = run_verify(config)
    except oracle.GridTooLargeError as exc:
        raise InputError(str(exc)) from None
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def _cmd_report(args) -> int:
    try:
        with open(args.results) as fh:
            doc = ResultDocument.from_dict(json.load(fh))
    except OSError as exc:
        raise InputError(f"cannot read {args.results}: {exc.strerror}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{args.results} is not a results document: {exc}") from None
    print(format_report(doc))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": _cmd_solve, "verify": _cmd_verify, "report": _cmd_report}[args.command]
    try:
        return handler(args)
    except (InputError, PanelFormatError, ConstraintSyntaxError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except InfeasibleConstraintsError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
