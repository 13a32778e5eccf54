"""Independent checks for the expert-weight solver.

Nothing here calls the SLSQP path except the probes that compare against it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import model
from .model import ScoreMatrix

MAX_GRID_POINTS = 10**7
SCORE_RANGE = (40.0, 99.0)


class GridTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class SimplexGrid:
    """All weight vectors whose entries are multiples of ``1 / resolution``."""

    resolution: int
    dimension: int

    def __post_init__(self):
        if self.resolution < 1 or self.dimension < 1:
            raise ValueError("resolution and dimension must be positive")

    @property
    def size(self) -> int:
        return math.comb(self.resolution + self.dimension - 1, self.dimension - 1)

    def prefixes(self) -> Iterator[tuple[int, ...]]:
        """Integer prefixes of length ``dimension - 2``, first coordinate largest first."""
        def rec(remaining, parts):
            if parts == 0:
                yield ()
                return
            for head in range(remaining, -1, -1):
                for tail in rec(remaining - head, parts - 1):
                    yield (head,) + tail
        return rec(self.resolution, max(self.dimension - 2, 0))

    def points(self, chunk: int = 65536) -> Iterator[NDArray]:
        """All grid points as ``(k, dimension)`` batches.

        Order is lexicographically descending, so the first point puts all
        weight on the first expert.
        """
        g, m = self.resolution, self.dimension
        if m == 1:
            yield np.ones((1, 1))
            return
        buf, size = [], 0
        for prefix in self.prefixes():
            rest = g - sum(prefix)
            heads = np.arange(rest, -1, -1)
            block = np.empty((heads.size, m))
            block[:, :m - 2] = prefix
            block[:, m - 2] = heads
            block[:, m - 1] = rest - heads
            buf.append(block)
            size += heads.size
            if size >= chunk:
                yield np.vstack(buf) / g
                buf, size = [], 0
        if buf:
            yield np.vstack(buf) / g


def _batch_objective(data: NDArray, W: NDArray) -> NDArray:
    consensus = W @ data.T                              # (k, rows)
    diff = data[None, :, :] - consensus[:, :, None]     # (k, rows, m)
    return np.sqrt((diff ** 2).sum(axis=1)).sum(axis=1)


def brute_force_minimize(S: ScoreMatrix, grid: SimplexGrid) -> tuple[NDArray, float]:
    """Exhaustive grid search for the minimizing weights.

    Ties (objective values within ``1e-12`` relative of the best) go to the
    first point in enumeration order, which puts the most weight on the
    lowest-index experts.
    """
    if grid.dimension != S.num_experts:
        raise ValueError("grid dimension does not match expert count")
    if grid.size > MAX_GRID_POINTS:
        raise GridTooLargeError(f"grid has {grid.size} points, limit is {MAX_GRID_POINTS}")
    data = S.data
    best_w, best_q = None, np.inf
    for W in grid.points():
        q = _batch_objective(data, W)
        i = int(np.argmin(q))
        if best_w is None or q[i] < best_q - 1e-12 * (1.0 + abs(best_q)):
            ties = np.flatnonzero(q <= q[i] + 1e-12 * (1.0 + abs(q[i])))
            best_w, best_q = W[ties[0]].copy(), float(q[i])
    return best_w, best_q


def project_to_simplex(v: ArrayLike) -> NDArray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` by sorting."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    r = np.flatnonzero(u - css / k > 0)[-1]
    return np.maximum(v - css[r] / (r + 1), 0.0)


def diminishing(scale: float = math.sqrt(2.0)) -> Callable[[int], float]:
    """Step rule ``scale / sqrt(k)`` for normalized subgradient steps."""
    return lambda k: scale / math.sqrt(k)


def projected_subgradient_minimize(
    S: ScoreMatrix,
    steps: int = 100_000,
    step_rule: Callable[[int], float] | None = None,
    initial: ArrayLike | None = None,
) -> tuple[NDArray, float]:
    """Projected subgradient descent with normalized steps; returns the best iterate and its objective."""
    m = S.num_experts
    step_rule = step_rule or diminishing()
    w = np.full(m, 1.0 / m) if initial is None else project_to_simplex(initial)
    best_w, best_q = w.copy(), model.objective(S, w)
    if m == 1:
        return best_w, best_q
    data = S.data
    for k in range(1, steps + 1):
        r = data - (data @ w)[:, None]
        norms = np.sqrt((r * r).sum(axis=0))
        q = norms.sum()
        if q < best_q:
            best_w, best_q = w.copy(), float(q)
        keep = norms > model.GRADIENT_GUARD
        g = -data.T @ (r[:, keep] / norms[keep]).sum(axis=1)
        # only the component within the simplex plane moves the iterate
        g -= g.mean()
        gnorm = np.linalg.norm(g)
        if gnorm == 0:
            break
        w = project_to_simplex(w - step_rule(k) * g / gnorm)
    q = model.objective(S, w)
    if q < best_q:
        best_w, best_q = w.copy(), q
    return best_w, best_q


def finite_difference_gradient(target, w: ArrayLike, h: float = 1e-6) -> NDArray:
    """Central differences of ``target`` (a :class:`ScoreMatrix` or a callable) at ``w``."""
    if h <= 0:
        raise ValueError("step must be positive")
    fun = (lambda x: model.objective(target, x)) if isinstance(target, ScoreMatrix) else target
    w = np.asarray(w, dtype=float)
    grad = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        grad[j] = (fun(w + e) - fun(w - e)) / (2 * h)
    return grad


def order_consistency_check(weights: ArrayLike, distances: ArrayLike) -> tuple[bool, tuple[int, ...], tuple[int, ...]]:
    """Compare descending weight order with ascending distance order, ties by index."""
    w = np.asarray(weights, dtype=float)
    d = np.asarray(distances, dtype=float)
    if w.shape != d.shape:
        raise ValueError("weights and distances differ in length")
    by_weight = tuple(int(i) for i in np.argsort(-w, kind="stable"))
    by_distance = tuple(int(i) for i in np.argsort(d, kind="stable"))
    return by_weight == by_distance, by_weight, by_distance


def random_simplex_point(rng: np.random.Generator, m: int) -> NDArray:
    return rng.dirichlet(np.ones(m))


def random_instance(
    rng: np.random.Generator,
    num_experts: int,
    num_alternatives: int = 3,
    num_indicators: int = 4,
    full_rank: bool = True,
) -> ScoreMatrix:
    """Scores drawn uniformly from ``SCORE_RANGE``, redrawn until full column rank if requested."""
    lo, hi = SCORE_RANGE
    while True:
        data = rng.uniform(lo, hi, size=(num_alternatives * num_indicators, num_experts))
        S = ScoreMatrix(data, num_indicators, num_alternatives)
        if not full_rank or model.rank_diagnostics(S).full_column_rank:
            return S


@dataclass(frozen=True)
class MultiStartReport:
    weights: NDArray
    objectives: NDArray
    converged: tuple[bool, ...]

    @property
    def weight_spread(self) -> float:
        """Largest coordinatewise range across the runs."""
        return float(np.ptp(self.weights, axis=0).max())

    @property
    def objective_spread(self) -> float:
        return float(np.ptp(self.objectives))


def multi_start_probe(S: ScoreMatrix, starts: int, rng: np.random.Generator, config=None) -> MultiStartReport:
    """Solve from ``starts`` random interior starting points."""
    from .weighting import solve_expert_weights

    runs = [solve_expert_weights(S, random_simplex_point(rng, S.num_experts), config) for _ in range(starts)]
    return MultiStartReport(
        weights=np.array([r.weights for r in runs]),
        objectives=np.array([r.objective for r in runs]),
        converged=tuple(r.converged for r in runs),
    )


def convexity_probe(S: ScoreMatrix, draws: int, rng: np.random.Generator, separation: float = 1e-6):
    """Sample convexity gaps at random simplex pairs.

    Returns the smallest gap overall and the smallest gap among pairs whose
    max-norm distance exceeds `separation`.
    """
    m = S.num_experts
    gaps, separated = [], []
    for _ in range(draws):
        w, w2 = random_simplex_point(rng, m), random_simplex_point(rng, m)
        gap = model.convexity_gap(S, w, w2, rng.uniform(0.01, 0.99))
        gaps.append(gap)
        if np.abs(w - w2).max() > separation:
            separated.append(gap)
    return min(gaps), min(separated, default=float("inf"))


def gradient_check(S: ScoreMatrix, points: int, rng: np.random.Generator, h: float = 1e-6) -> float:
    """Largest relative max-norm gap between analytic and central-difference gradients.

    The denominator is floored at 1 so a vanishing gradient (every two-expert
    panel) is judged by its absolute error instead of by rounding noise.

    Near a point where some residual ``p_j - S w`` vanishes the objective has
    a kink, and the central-difference truncation error grows like
    ``|p| (h |p| / |r|)**2``.  Sample points with a residual shorter than
    ``h**0.25 * max |p_j|`` are therefore redrawn (up to 1000 times), which
    keeps that error near ``|p| h**1.5``.
    """
    data = S.data
    clearance = h ** 0.25 * np.linalg.norm(data, axis=0).max()
    worst = 0.0
    for _ in range(points):
        for _ in range(1000):
            w = random_simplex_point(rng, S.num_experts)
            if np.linalg.norm(data - (data @ w)[:, None], axis=0).min() > clearance:
                break
        exact = model.objective_gradient(S, w)
        approx = finite_difference_gradient(S, w, h)
        worst = max(worst, np.abs(exact - approx).max() / max(np.abs(approx).max(), 1.0))
    return worst
