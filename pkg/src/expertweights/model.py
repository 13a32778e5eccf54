"""Score data model, consensus points, distances and the expert-weight objective.

The objective for a stacked score matrix ``S`` (one column per expert) is

    Q(w) = sum_j || p_j - S @ w ||_2

where ``p_j`` is column ``j`` of ``S`` and ``w`` lies on the probability
simplex.  ``S @ w`` is the weighted consensus of all experts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

GRADIENT_GUARD = 1e-12
RANK_TOLERANCE = 1e-10
SIMPLEX_TOLERANCE = 1e-10


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_labels(labels: Sequence[str], what: str) -> tuple[str, ...]:
    labels = tuple(str(x) for x in labels)
    if not labels:
        raise ValueError(f"at least one {what} is required")
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate {what} labels: {labels}")
    return labels


@dataclass(frozen=True)
class ScorePanel:
    """Raw scores ``scores[i, k, j]``: alternative ``i``, indicator ``k``, expert ``j``."""

    alternatives: tuple[str, ...]
    indicators: tuple[str, ...]
    experts: tuple[str, ...]
    scores: NDArray

    def __post_init__(self):
        object.__setattr__(self, "alternatives", _check_labels(self.alternatives, "alternative"))
        object.__setattr__(self, "indicators", _check_labels(self.indicators, "indicator"))
        object.__setattr__(self, "experts", _check_labels(self.experts, "expert"))
        scores = _frozen(self.scores)
        shape = (len(self.alternatives), len(self.indicators), len(self.experts))
        if scores.shape != shape:
            raise ValueError(f"scores have shape {scores.shape}, labels imply {shape}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("score panel contains non-finite entries")
        if np.any(scores < 0):
            warnings.warn("score panel contains negative scores", stacklevel=3)
        object.__setattr__(self, "scores", scores)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.scores.shape


@dataclass(frozen=True)
class ScoreMatrix:
    """Stacked ``(n*s, m)`` matrix; block ``i`` holds alternative ``i``'s ``n`` indicator rows."""

    data: NDArray
    block_size: int
    num_alternatives: int
    num_experts: int = field(init=False)

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2:
            raise ValueError("score matrix must be two-dimensional")
        if data.shape[0] != self.block_size * self.num_alternatives:
            raise ValueError(
                f"row count {data.shape[0]} != block_size {self.block_size}"
                f" * num_alternatives {self.num_alternatives}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("score matrix contains non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "num_experts", data.shape[1])

    @classmethod
    def from_array(cls, data: ArrayLike, block_size: int | None = None) -> "ScoreMatrix":
        """Wrap a plain matrix; by default each row is its own block."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2:
            raise ValueError("score matrix must be two-dimensional")
        if block_size is None:
            block_size = 1
        if data.shape[0] % block_size:
            raise ValueError("row count is not a multiple of block_size")
        return cls(data, block_size, data.shape[0] // block_size)

    def block(self, i: int) -> NDArray:
        """The ``(n, m)`` block of alternative ``i``."""
        n = self.block_size
        return self.data[i * n:(i + 1) * n]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class WeightVector:
    weights: NDArray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D sequence")
        if np.any(w < -SIMPLEX_TOLERANCE) or np.any(w > 1 + SIMPLEX_TOLERANCE):
            raise ValueError(f"weights must lie in [0, 1]: {w}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, m: int) -> "WeightVector":
        return cls(np.full(m, 1.0 / m))

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


@dataclass(frozen=True)
class ConsensusVector:
    values: NDArray
    block_size: int

    @property
    def per_alternative(self) -> NDArray:
        """View as ``(s, n)``: row ``i`` is the consensus point of alternative ``i``."""
        return self.values.reshape(-1, self.block_size)


@dataclass(frozen=True)
class DistanceReport:
    expert_distances: NDArray
    per_alt_distances: NDArray
    per_alt_totals: NDArray
    objective: float


@dataclass(frozen=True)
class RankDiagnostics:
    numerical_rank: int
    full_column_rank: bool
    singular_values: NDArray
    rank_tolerance: float


def build_score_matrix(panel: ScorePanel) -> ScoreMatrix:
    """Stack the panel into the alternative-major, indicator-minor matrix ``S``."""
    s, n, m = panel.scores.shape
    if not np.all(np.isfinite(panel.scores)):
        raise ValueError("score panel contains non-finite entries")
    return ScoreMatrix(panel.scores.reshape(s * n, m), n, s)


def _weights(S: ScoreMatrix, w) -> NDArray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size != S.num_experts:
        raise ValueError(f"expected {S.num_experts} weights, got shape {w.shape}")
    return w


def consensus_point(S: ScoreMatrix, w) -> ConsensusVector:
    """Weighted consensus ``b = S @ w``."""
    w = _weights(S, w)
    return ConsensusVector(_frozen(S.data @ w), S.block_size)


def _residuals(S: ScoreMatrix, w: NDArray) -> NDArray:
    # column j is p_j - S w
    return S.data - (S.data @ w)[:, None]


def distance_report(S: ScoreMatrix, w) -> DistanceReport:
    w = _weights(S, w)
    r = _residuals(S, w)
    s_j = np.linalg.norm(r, axis=0)
    blocks = r.reshape(S.num_alternatives, S.block_size, S.num_experts)
    d_ij = np.linalg.norm(blocks, axis=1)
    return DistanceReport(
        expert_distances=_frozen(s_j),
        per_alt_distances=_frozen(d_ij),
        per_alt_totals=_frozen(d_ij.sum(axis=1)),
        objective=float(s_j.sum()),
    )


def objective(S: ScoreMatrix, w) -> float:
    """Sum of Euclidean distances from every expert column to the consensus."""
    w = _weights(S, w)
    return float(np.linalg.norm(_residuals(S, w), axis=0).sum())


def objective_gradient(S: ScoreMatrix, w, guard: float = GRADIENT_GUARD) -> NDArray:
    """Gradient of :func:`objective`.

    Each expert contributes ``-S.T @ r_j / ||r_j||``.  Terms whose residual
    norm is at most `guard` are dropped, which picks the zero element of that
    term's subdifferential.
    """
    w = _weights(S, w)
    r = _residuals(S, w)
    norms = np.linalg.norm(r, axis=0)
    keep = norms > guard
    if not np.any(keep):
        return np.zeros(S.num_experts)
    unit_sum = (r[:, keep] / norms[keep]).sum(axis=1)
    return -S.data.T @ unit_sum


def convexity_gap(S: ScoreMatrix, w, w2, lam: float) -> float:
    """``lam*Q(w) + (1-lam)*Q(w2) - Q(lam*w + (1-lam)*w2)``; nonnegative since Q is convex."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    w = _weights(S, w)
    w2 = _weights(S, w2)
    mid = lam * w + (1.0 - lam) * w2
    return lam * objective(S, w) + (1.0 - lam) * objective(S, w2) - objective(S, mid)


def rank_diagnostics(S: ScoreMatrix, rank_tolerance: float = RANK_TOLERANCE) -> RankDiagnostics:
    """Numerical column rank of ``S`` from its singular values.

    A singular value counts towards the rank when it exceeds
    ``rank_tolerance`` times the largest one.  With full column rank the
    objective is strictly convex on the simplex and the optimal weights are
    unique.
    """
    if S.data.size == 0:
        raise ValueError("score matrix is empty")
    sv = np.linalg.svd(S.data, compute_uv=False)
    top = sv[0] if sv.size else 0.0
    rank = int(np.count_nonzero(sv > rank_tolerance * top)) if top > 0 else 0
    return RankDiagnostics(
        numerical_rank=rank,
        full_column_rank=rank == S.num_experts,
        singular_values=_frozen(sv),
        rank_tolerance=rank_tolerance,
    )
