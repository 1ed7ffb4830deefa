"""Kruskal ranks and the rank inequalities that make the loadings identifiable.

In the linear model the signal rank of the measurement operator coincides
with the Kruskal rank of its loading matrix, so no separate computation is
provided for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ArgumentError, DimensionError

DEFAULT_TOL = 1e-8


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ArgumentError("expected a nonempty 2-D matrix")
    if not np.all(np.isfinite(M)):
        raise ArgumentError("matrix has non-finite entries")
    return M


def numerical_rank(M, tol: float = DEFAULT_TOL) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    s = np.linalg.svd(_as_matrix(M), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def kruskal_rank(M, tol: float = DEFAULT_TOL) -> int:
    """Largest k such that every k columns of ``M`` are linearly independent.

    A column subset counts as independent when its smallest singular value
    exceeds ``tol`` times the largest singular value of the whole matrix.
    Subsets are enumerated exhaustively for increasing k, stopping at the
    first dependent one.
    """
    M = _as_matrix(M)
    if tol < 0:
        raise ArgumentError("tol must be nonnegative")
    smax = np.linalg.svd(M, compute_uv=False)[0]
    if smax == 0.0:
        return 0
    thresh = tol * smax
    K, L = M.shape
    if np.any(np.linalg.norm(M, axis=0) <= thresh):
        return 0
    kappa = 1
    for k in range(2, min(K, L) + 1):
        for cols in combinations(range(L), k):
            if np.linalg.svd(M[:, cols], compute_uv=False)[-1] <= thresh:
                return kappa
        kappa = k
    return kappa


@dataclass(frozen=True)
class RankReport:
    condition: str
    L: int
    kappas: tuple
    ranks: tuple
    margin: int
    verdict: bool
    kappas_loose: tuple = ()
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "L": self.L,
            "kappas": list(self.kappas),
            "kappas_at_10x_tol": list(self.kappas_loose),
            "ranks": list(self.ranks),
            "margin": self.margin,
            "verdict": self.verdict,
            "details": self.details,
        }


def _check_columns(mats, L):
    mats = [_as_matrix(m) for m in mats]
    for i, m in enumerate(mats, start=1):
        if m.shape[1] != L:
            raise DimensionError(f"M{i} has {m.shape[1]} columns, expected L={L}")
    return mats


def check_theorem1(M1, M2, M3, L: int, tol: float = DEFAULT_TOL) -> RankReport:
    """Kruskal's condition kappa1 + kappa2 + kappa3 >= 2L + 2.

    Also reports the pairwise inequalities kappa_i + kappa_j >= L + 2 that
    the scalar-pair construction needs for the ordered pair (i, j).
    """
    mats = _check_columns((M1, M2, M3), L)
    kap = tuple(kruskal_rank(m, tol) for m in mats)
    loose = tuple(kruskal_rank(m, 10 * tol) for m in mats)
    ranks = tuple(numerical_rank(m, tol) for m in mats)
    margin = sum(kap) - (2 * L + 2)
    pairwise = {
        f"{i + 1}{j + 1}": {"sum": kap[i] + kap[j], "margin": kap[i] + kap[j] - (L + 2)}
        for i, j in ((0, 1), (0, 2), (1, 2))
    }
    return RankReport("theorem1", L, kap, ranks, margin, margin >= 0, loose, {"pairwise": pairwise})


def check_proposition1(M1, M2, M3, L: int, tol: float = DEFAULT_TOL) -> RankReport:
    """Full column rank of M1 and of the stack (M2; M3), plus kappa2 + kappa3 >= L + 2."""
    mats = _check_columns((M1, M2, M3), L)
    kap = tuple(kruskal_rank(m, tol) for m in mats)
    loose = tuple(kruskal_rank(m, 10 * tol) for m in mats)
    ranks = tuple(numerical_rank(m, tol) for m in mats)
    stack_rank = numerical_rank(np.vstack(mats[1:]), tol)
    margin = kap[1] + kap[2] - (L + 2)
    verdict = ranks[0] == L and stack_rank == L and margin >= 0
    details = {"rank_M1": ranks[0], "rank_M2M3": stack_rank, "full_rank": ranks[0] == L and stack_rank == L}
    return RankReport("proposition1", L, kap, ranks, margin, verdict, loose, details)


def max_identifiable_factors(K1: int, K2: int, K3: int) -> int:
    """Largest L with L <= (K1 + K2 + K3) / 2 - 1 (full-rank loadings)."""
    if min(K1, K2, K3) < 1:
        raise ArgumentError("block dimensions must be positive")
    return (K1 + K2 + K3) // 2 - 1
