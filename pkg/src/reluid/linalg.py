"""Numerical rank, nullspaces and a damped Gauss-Newton driver."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class RankPolicy:
    """How singular values are cut.

    ``relative_sv``: keep ``sigma > tol * sigma_max * max(shape)``.
    ``absolute_sv``: keep ``sigma > tol``.
    """

    mode: str = "relative_sv"
    tol: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("relative_sv", "absolute_sv"):
            raise ValueError(f"unknown rank mode {self.mode!r}")
        if not self.tol > 0:
            raise ValueError("rank tolerance must be positive")

    def threshold(self, svals: np.ndarray, shape: tuple[int, int]) -> float:
        if self.mode == "absolute_sv":
            return self.tol
        smax = float(svals[0]) if svals.size else 0.0
        return self.tol * smax * max(shape)

    def describe(self) -> dict:
        return {"mode": self.mode, "tol": self.tol}


DEFAULT_POLICY = RankPolicy()


class RankResult(NamedTuple):
    rank: int
    singular_values: np.ndarray
    threshold: float

    @property
    def gap(self) -> float:
        """``sigma_r / sigma_{r+1}`` at the cut (inf when nothing is cut or kept)."""
        s = self.singular_values
        r = self.rank
        if r == 0 or r >= s.size:
            return float("inf")
        if s[r] == 0:
            return float("inf")
        return float(s[r - 1] / s[r])

    def tails(self, k: int = 5) -> dict:
        s = self.singular_values
        return {"largest": [float(v) for v in s[:k]], "smallest": [float(v) for v in s[-k:]]}


def _compress(M) -> np.ndarray:
    """Dense copy of ``M`` without its all-zero columns (sparse inputs only)."""
    if sparse.issparse(M):
        M = sparse.csc_array(M)
        nz_cols = np.unique(M.nonzero()[1])
        return M[:, nz_cols].toarray() if nz_cols.size else np.zeros((M.shape[0], 0))
    return np.asarray(M, dtype=np.float64)


def numerical_rank(M, policy: RankPolicy = DEFAULT_POLICY) -> RankResult:
    """Rank as the number of singular values above the policy threshold."""
    shape = M.shape
    A = _compress(M)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if A.size == 0:
        return RankResult(0, np.zeros(0), 0.0)
    s = np.linalg.svd(A, compute_uv=False)
    thr = policy.threshold(s, shape)
    return RankResult(int(np.sum(s > thr)), s, thr)


def nullspace(M, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Orthonormal basis (as columns) of the numerical kernel of ``M``."""
    A = M.toarray() if sparse.issparse(M) else np.asarray(M, dtype=np.float64)
    ncols = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(ncols)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    thr = policy.threshold(s, A.shape)
    r = int(np.sum(s > thr))
    return vt[r:].T.copy()


def exact_rank(M) -> int:
    """Exact rank of a matrix of Fractions/ints."""
    from sympy import QQ
    from sympy.polys.matrices import DomainMatrix

    A = np.asarray(M, dtype=object)
    if A.size == 0:
        return 0
    rows = [[QQ(int(v.numerator), int(v.denominator)) if hasattr(v, "denominator") else QQ(int(v))
             for v in row] for row in A]
    return int(DomainMatrix(rows, A.shape, QQ).rank())


class SolveStatus(enum.Enum):
    CONVERGED = "Converged"
    STALLED = "Stalled"
    MAX_ITER = "MaxIter"


class SolveResult(NamedTuple):
    x: np.ndarray
    status: SolveStatus
    iterations: int
    residual_norm: float


def gauss_newton(residual_fn: Callable, jacobian_fn: Callable, x0, max_iter: int = 50,
                 step_tol: float = 1e-14, res_tol: float = 1e-12,
                 accept: Callable | None = None, project: Callable | None = None,
                 max_halvings: int = 40) -> SolveResult:
    """Damped Gauss-Newton with minimum-norm least-squares steps.

    ``accept(x)`` may veto a trial point (the step is then halved) and
    ``project(x)`` maps trial points back onto an admissible set before they
    are evaluated.  Convergence is declared on ``||r||_2 <= res_tol``.
    """
    x = np.array(x0, dtype=np.float64)
    r = np.asarray(residual_fn(x), dtype=np.float64).ravel()
    rn = float(np.linalg.norm(r))
    for it in range(max_iter + 1):
        if rn <= res_tol:
            return SolveResult(x, SolveStatus.CONVERGED, it, rn)
        if it == max_iter:
            break
        J = np.asarray(jacobian_fn(x), dtype=np.float64)
        if J.ndim != 2 or J.shape != (r.size, x.size):
            raise ValueError(f"jacobian has shape {J.shape}, expected {(r.size, x.size)}")
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        t = 1.0
        for _ in range(max_halvings):
            trial = x + t * step
            if project is not None:
                trial = project(trial)
            if accept is None or accept(trial):
                r_new = np.asarray(residual_fn(trial), dtype=np.float64).ravel()
                if r_new.shape != r.shape:
                    raise ValueError("residual changed shape between iterations")
                rn_new = float(np.linalg.norm(r_new))
                if rn_new < rn:
                    break
            t *= 0.5
        else:
            return SolveResult(x, SolveStatus.STALLED, it, rn)
        moved = float(np.linalg.norm(trial - x))
        x, r, rn = trial, r_new, rn_new
        if moved <= step_tol * (1 + float(np.linalg.norm(x))) and rn > res_tol:
            return SolveResult(x, SolveStatus.STALLED, it + 1, rn)
    return SolveResult(x, SolveStatus.MAX_ITER, max_iter, rn)
