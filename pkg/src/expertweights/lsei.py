"""Linear least squares with linear equality and inequality constraints.

Solves::

    min_d  || E d - f ||_2
    s.t.   A_eq d  = b_eq
           A_in d >= b_in

Equalities are eliminated with an orthogonal (SVD) reduction onto their null
space.  The remaining inequality-constrained problem is turned into a
least-distance problem and solved through its dual, a nonnegative least
squares problem, with the classical active-set method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

_EPS = np.finfo(float).eps


class LseiError(ValueError):
    pass


class InfeasibleConstraintsError(LseiError):
    """The linear constraints admit no point."""


class RankDeficientError(LseiError):
    """The design matrix is rank deficient on the equality null space."""


class ActiveSetLimitError(LseiError):
    """The active-set method hit its exchange cap."""


def _matrix(a, n: int) -> NDArray:
    if a is None:
        return np.zeros((0, n))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros((0, n))
    return a


def _vector(b, rows: int) -> NDArray:
    if b is None:
        return np.zeros(rows)
    return np.atleast_1d(np.asarray(b, dtype=float)).reshape(-1)


@dataclass(frozen=True)
class LseiInstance:
    design: NDArray
    target: NDArray
    eq_matrix: NDArray | None = None
    eq_rhs: NDArray | None = None
    ineq_matrix: NDArray | None = None
    ineq_rhs: NDArray | None = None

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.design, dtype=float))
        n = E.shape[1]
        f = _vector(self.target, E.shape[0])
        A_eq = _matrix(self.eq_matrix, n)
        A_in = _matrix(self.ineq_matrix, n)
        b_eq = _vector(self.eq_rhs, A_eq.shape[0])
        b_in = _vector(self.ineq_rhs, A_in.shape[0])
        if f.shape != (E.shape[0],):
            raise ValueError("target length must match design rows")
        for name, A, b in (("equality", A_eq, b_eq), ("inequality", A_in, b_in)):
            if A.shape[1] != n:
                raise ValueError(f"{name} matrix has {A.shape[1]} columns, expected {n}")
            if b.shape != (A.shape[0],):
                raise ValueError(f"{name} rhs length must match its matrix rows")
        for name, value in (("design", E), ("target", f), ("eq_matrix", A_eq),
                            ("eq_rhs", b_eq), ("ineq_matrix", A_in), ("ineq_rhs", b_in)):
            object.__setattr__(self, name, value)

    @property
    def dimension(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class LseiSolution:
    d: NDArray
    eq_multipliers: NDArray
    ineq_multipliers: NDArray
    active_set: tuple[int, ...] = field(default=())

    @property
    def multipliers(self) -> NDArray:
        """Equality multipliers followed by inequality multipliers."""
        return np.concatenate([self.eq_multipliers, self.ineq_multipliers])


def nnls(A: ArrayLike, b: ArrayLike, maxiter: int | None = None, tol: float | None = None):
    """Nonnegative least squares ``min ||A x - b||, x >= 0``.

    Active-set method of Lawson and Hanson, except that the entering and
    leaving variables are chosen by smallest index among the candidates so
    the exchange sequence cannot cycle.

    Returns
    -------
    x : numpy.ndarray
        Solution vector.
    rnorm : float
        Residual norm at the solution.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    if maxiter is None:
        maxiter = 10 * (n + 1)
    if tol is None:
        tol = 10 * _EPS * max(m, n) * max(np.abs(A).max(initial=0.0), 1.0) * max(np.abs(b).max(initial=0.0), 1.0)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    w = A.T @ (b - A @ x)
    exchanges = 0
    while True:
        candidates = np.flatnonzero(~passive & ~blocked & (w > tol))
        if candidates.size == 0:
            break
        exchanges += 1
        if exchanges > maxiter:
            raise ActiveSetLimitError(f"nnls exceeded {maxiter} active-set exchanges")
        j = candidates[0]
        passive[j] = True
        first = True
        while True:
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if first and z[j] <= 0:
                # positive w[j] was rounding noise; skip j until x changes
                passive[j] = False
                blocked[j] = True
                break
            first = False
            if np.all(z[idx] > 0):
                x = z
                blocked[:] = False
                break
            neg = idx[z[idx] <= 0]
            ratios = x[neg] / (x[neg] - z[neg])
            alpha = ratios.min()
            x = x + alpha * (z - x)
            x[neg[ratios <= alpha]] = 0.0
            passive &= x > 0
            x[~passive] = 0.0
        w = A.T @ (b - A @ x)
    return x, float(np.linalg.norm(A @ x - b))


def _equality_reduction(A_eq: NDArray, b_eq: NDArray, n: int):
    """Particular solution and null-space basis of ``A_eq d = b_eq``."""
    if A_eq.shape[0] == 0:
        return np.zeros(n), np.eye(n)
    U, sv, Vt = np.linalg.svd(A_eq)
    top = sv[0] if sv.size else 0.0
    rank = int(np.count_nonzero(sv > max(A_eq.shape) * _EPS * 1e3 * top)) if top > 0 else 0
    d0 = Vt[:rank].T @ ((U[:, :rank].T @ b_eq) / sv[:rank])
    residual = np.abs(A_eq @ d0 - b_eq).max()
    scale = 1.0 + np.abs(b_eq).max() + np.abs(A_eq).max() * np.abs(d0).max(initial=0.0)
    if residual > 1e-9 * scale:
        raise InfeasibleConstraintsError(f"inconsistent equality constraints (residual {residual:.3g})")
    return d0, Vt[rank:].T


def solve_lsei(instance: LseiInstance, maxiter: int | None = None) -> LseiSolution:
    """Minimize ``||E d - f||`` subject to the instance's linear constraints.

    The returned multipliers satisfy the stationarity condition
    ``E.T @ (E d - f) = A_eq.T @ mu_eq + A_in.T @ mu_in`` with
    ``mu_in >= 0`` and ``mu_in[i] == 0`` for inactive rows.

    Raises
    ------
    InfeasibleConstraintsError
        No point satisfies the constraints.
    RankDeficientError
        ``E`` restricted to the equality null space is rank deficient.
    ActiveSetLimitError
        The active-set exchange cap was reached.
    """
    E, f = instance.design, instance.target
    A_eq, b_eq = instance.eq_matrix, instance.eq_rhs
    A_in, b_in = instance.ineq_matrix, instance.ineq_rhs
    n = instance.dimension

    d0, Z = _equality_reduction(A_eq, b_eq, n)
    p = Z.shape[1]
    mu_in = np.zeros(A_in.shape[0])
    if p == 0:
        d = d0
        slack = A_in @ d - b_in
        if np.any(slack < -1e-9 * (1.0 + np.abs(b_in))):
            raise InfeasibleConstraintsError("equalities fix a point that violates the inequalities")
    else:
        E_red = E @ Z
        f_red = f - E @ d0
        if E_red.shape[0] < p:
            raise RankDeficientError("design has fewer rows than free variables")
        Q, R = np.linalg.qr(E_red)
        diag = np.abs(np.diag(R))
        if diag.max() == 0 or diag.min() <= 1e-12 * p * diag.max():
            raise RankDeficientError("design is rank deficient on the equality null space")
        c = Q.T @ f_red
        if A_in.shape[0] == 0:
            y = np.linalg.solve(R, c)
        else:
            G = A_in @ Z
            h = b_in - A_in @ d0
            # substitute u = R y - c: least-distance problem min ||u||, G' u >= h'
            Gp = np.linalg.solve(R.T, G.T).T
            hp = h - Gp @ c
            M = np.vstack([Gp.T, hp[None, :]])
            e = np.zeros(p + 1)
            e[-1] = 1.0
            z, _ = nnls(M, e, maxiter=maxiter)
            r = M @ z - e
            sigma = -r[-1]
            if sigma <= 1e-12 * max(1.0, np.abs(z).max(initial=0.0)):
                raise InfeasibleConstraintsError("inequality constraints are inconsistent")
            u = r[:-1] / sigma
            mu_in = z / sigma
            y = np.linalg.solve(R, u + c)
        d = d0 + Z @ y

    slack = A_in @ d - b_in
    row_scale = 1.0 + np.abs(A_in).sum(axis=1) * max(1.0, np.abs(d).max(initial=0.0)) + np.abs(b_in)
    tight = np.abs(slack) <= 1e-9 * row_scale
    mu_in = np.where(tight, np.maximum(mu_in, 0.0), 0.0)

    mu_eq = np.zeros(A_eq.shape[0])
    if A_eq.shape[0]:
        rhs = E.T @ (E @ d - f) - A_in.T @ mu_in
        mu_eq = np.linalg.lstsq(A_eq.T, rhs, rcond=None)[0]
    return LseiSolution(
        d=d,
        eq_multipliers=mu_eq,
        ineq_multipliers=mu_in,
        active_set=tuple(int(i) for i in np.flatnonzero(tight)),
    )
