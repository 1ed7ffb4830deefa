"""Row reductions of the loadings that produce clean measurements of the factors.

For a single factor l, ``extract_scalar_pair`` builds two scalar
measurements

    W1 = q1 . X^1 = X*_l + e1,      W2 = q2 . X^2 = gamma X*_l + e2

whose noise terms involve disjoint sets of latent factors, so that X*_l,
e1 and e2 are mutually independent. For possibly dependent factors,
``build_multivariate_pair`` uses left inverses to produce two noisy copies
of the whole latent vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ContradictionError, DegeneracyError, IdentifiabilityError, RankError
from .kruskal import DEFAULT_TOL, kruskal_rank, numerical_rank


@dataclass(frozen=True)
class QLayout:
    """Bookkeeping of a row reduction.

    ``permutation[k]`` is the original latent index sitting in working
    column ``k``; ``identity_latent`` and ``block_latent`` list the original
    indices covered by the identity block and by the remainder block.
    """

    side: str
    kappa: int
    permutation: tuple
    pivot_rows: tuple
    identity_latent: tuple
    block_latent: tuple
    condition: float

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "kappa": self.kappa,
            "permutation": list(self.permutation),
            "pivot_rows": list(self.pivot_rows),
            "identity_latent": list(self.identity_latent),
            "block_latent": list(self.block_latent),
            "condition": self.condition,
        }


def _swap_perm(L, target):
    perm = list(range(L))
    perm[0], perm[target] = perm[target], perm[0]
    return perm


def _gauss_jordan(A, kappa, tol):
    """Row-reduce the first ``kappa`` columns of A to an identity, with partial pivoting."""
    K = A.shape[0]
    A = np.array(A, dtype=float)
    Q = np.eye(K)
    smax = np.linalg.svd(A, compute_uv=False)[0] if A.size else 0.0
    thresh = tol * smax
    order = list(range(K))
    for j in range(kappa):
        p = j + int(np.argmax(np.abs(A[j:, j])))
        if abs(A[p, j]) <= thresh:
            raise DegeneracyError(f"no pivot above tolerance for column {j}")
        if p != j:
            A[[j, p]] = A[[p, j]]
            Q[[j, p]] = Q[[p, j]]
            order[j], order[p] = order[p], order[j]
        piv = A[j, j]
        A[j] /= piv
        Q[j] /= piv
        for r in range(K):
            if r != j and A[r, j] != 0.0:
                f = A[r, j]
                A[r] -= f * A[j]
                Q[r] -= f * Q[j]
    return Q, tuple(order[:kappa])


def _resolve_kappa(M, kappa, tol):
    K, L = M.shape
    kap = kruskal_rank(M, tol)
    if kappa is None:
        return kap
    if kappa > kap or kappa > min(K, L):
        raise RankError(f"kappa={kappa} exceeds the Kruskal rank {kap} of the matrix")
    if kappa < 0:
        raise ArgumentError("kappa must be nonnegative")
    return kappa


def build_q_left(M, target: int = 0, kappa: int | None = None, tol: float = DEFAULT_TOL):
    """Invertible Q with ``Q @ M[:, perm] = [[I_kappa, R], [0, R]]``.

    ``perm`` swaps column ``target`` into the first position. With
    ``kappa=None`` the Kruskal rank of M is used.
    """
    M = np.asarray(M, dtype=float)
    K, L = M.shape
    if not 0 <= target < L:
        raise ArgumentError(f"target {target} out of range for {L} factors")
    kappa = _resolve_kappa(M, kappa, tol)
    perm = _swap_perm(L, target)
    Q, pivots = _gauss_jordan(M[:, perm], kappa, tol)
    layout = QLayout("left", kappa, tuple(perm), pivots, tuple(perm[:kappa]), tuple(perm[kappa:]),
                     float(np.linalg.cond(Q)))
    return Q, layout


def build_q_right(M, kappa: int | None = None, tol: float = DEFAULT_TOL, permutation=None):
    """Invertible Q with ``Q @ M[:, perm] = [[R, 0], [R, I_kappa]]``.

    The identity occupies the last ``kappa`` working columns and the last
    ``kappa`` rows. Implemented as the left reduction of the row- and
    column-reversed matrix, reversed back.
    """
    M = np.asarray(M, dtype=float)
    K, L = M.shape
    kappa = _resolve_kappa(M, kappa, tol)
    perm = list(range(L)) if permutation is None else list(permutation)
    if sorted(perm) != list(range(L)):
        raise ArgumentError("permutation must be a bijection on the factor indices")
    W = M[:, perm]
    Qr, pivots = _gauss_jordan(W[::-1, ::-1], kappa, tol)
    Q = Qr[::-1, ::-1].copy()
    pivots = tuple(K - 1 - p for p in pivots)
    layout = QLayout("right", kappa, tuple(perm), pivots, tuple(perm[L - kappa:]), tuple(perm[: L - kappa]),
                     float(np.linalg.cond(Q)))
    return Q, layout


@dataclass(frozen=True)
class ScalarPair:
    """Two scalar measurements of factor ``factor`` with independent noises."""

    factor: int
    q1: np.ndarray
    q2: np.ndarray
    gamma: float
    kappa1: int
    kappa2: int
    q2_row: int
    permutation: tuple
    e1_latent: tuple
    e2_latent: tuple
    certified: bool
    leakage: float

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "q1": self.q1.tolist(),
            "q2": self.q2.tolist(),
            "gamma": self.gamma,
            "kappa1": self.kappa1,
            "kappa2": self.kappa2,
            "q2_row": self.q2_row,
            "permutation": list(self.permutation),
            "e1_latent": list(self.e1_latent),
            "e2_latent": list(self.e2_latent),
            "certified": self.certified,
            "leakage": self.leakage,
        }


def extract_scalar_pair(M1, M2, l: int, tol: float = DEFAULT_TOL, kappas=None) -> ScalarPair:
    """Scalar measurement pair for factor ``l``.

    ``q1`` is the first row of the left reduction of M1 with column ``l``
    swapped to the front. The right reduction of M2 (same working order)
    leaves its top ``K2 - kappa2 + 1`` rows free of the last
    ``kappa2 - 1`` working factors; among those rows the one with the
    largest coefficient on factor ``l`` becomes ``q2`` (ties to the lowest
    row). When kappa1 + kappa2 >= L + 1 the latent factors leaking into the
    two noises are disjoint, which the returned certificate verifies
    numerically.

    Raises
    ------
    IdentifiabilityError
        If kappa1 + kappa2 < L + 2.
    ContradictionError
        If no candidate row loads on factor ``l`` (kappa2 overestimated).
    """
    M1 = np.asarray(M1, dtype=float)
    M2 = np.asarray(M2, dtype=float)
    L = M1.shape[1]
    if M2.shape[1] != L:
        raise ArgumentError("M1 and M2 must have the same number of columns")
    if not 0 <= l < L:
        raise ArgumentError(f"factor index {l} out of range")
    k1, k2 = kappas if kappas is not None else (kruskal_rank(M1, tol), kruskal_rank(M2, tol))
    if k1 + k2 < L + 2:
        raise IdentifiabilityError(
            f"kappa1 + kappa2 = {k1 + k2} < L + 2 = {L + 2}", margin=k1 + k2 - (L + 2)
        )
    Q1, lay1 = build_q_left(M1, target=l, kappa=k1, tol=tol)
    perm = list(lay1.permutation)
    Q2, _ = build_q_right(M2, kappa=k2, tol=tol, permutation=perm)
    R2 = Q2 @ M2[:, perm]
    K2 = M2.shape[0]
    cand = np.abs(R2[: K2 - k2 + 1, 0])
    row = int(np.argmax(cand))
    scale2 = np.linalg.svd(M2, compute_uv=False)[0]
    if cand[row] <= tol * scale2:
        raise ContradictionError(f"no row of the M2 reduction loads on factor {l}; kappa2 overestimated?")
    q1 = Q1[0].copy()
    q2 = Q2[row].copy()
    gamma = float(q2 @ M2[:, l])

    e1 = tuple(sorted(perm[k1:]))
    e2 = tuple(sorted(perm[1 : L - k2 + 1]))
    c1 = q1 @ M1[:, perm]
    c2 = q2 @ M2[:, perm]
    # coefficients that must vanish by construction
    leak = max(
        float(np.max(np.abs(c1[1:k1]), initial=0.0)),
        float(np.max(np.abs(c2[L - k2 + 1 :]), initial=0.0)),
        abs(c1[0] - 1.0),
    )
    certified = not (set(e1) & set(e2)) and l not in e1 and l not in e2 and leak <= 1e3 * tol * max(1.0, scale2)
    return ScalarPair(l, q1, q2, gamma, k1, k2, row, tuple(perm), e1, e2, bool(certified), leak)


@dataclass(frozen=True)
class MultivariatePair:
    """Left inverses giving W1 = Q1 X^1 and W23 = Q23 (X^2; X^3), both X* plus noise."""

    Q1: np.ndarray
    Q23: np.ndarray

    def to_dict(self) -> dict:
        return {"Q1": self.Q1.tolist(), "Q23": self.Q23.tolist()}


def build_multivariate_pair(M1, M2, M3, tol: float = DEFAULT_TOL) -> MultivariatePair:
    """Minimum-norm left inverses of M1 and of the stacked (M2; M3)."""
    M1 = np.asarray(M1, dtype=float)
    S = np.vstack([np.asarray(M2, dtype=float), np.asarray(M3, dtype=float)])
    L = M1.shape[1]
    if numerical_rank(M1, tol) != L:
        raise RankError("M1 does not have full column rank")
    if numerical_rank(S, tol) != L:
        raise RankError("stacked (M2; M3) does not have full column rank")
    Q1 = np.linalg.pinv(M1)
    Q23 = np.linalg.pinv(S)
    eye = np.eye(L)
    if max(np.max(np.abs(Q1 @ M1 - eye)), np.max(np.abs(Q23 @ S - eye))) > 1e-10:
        raise DegeneracyError("left inverse is too ill-conditioned to meet 1e-10")
    return MultivariatePair(Q1, Q23)


@dataclass(frozen=True)
class OrthogonalityReport:
    cov_e1_e2: float
    cov_e1_factor: float
    cov_e2_factor: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(abs(self.cov_e1_e2), abs(self.cov_e1_factor), abs(self.cov_e2_factor)) <= self.tol

    def to_dict(self) -> dict:
        return {
            "cov_e1_e2": self.cov_e1_e2,
            "cov_e1_factor": self.cov_e1_factor,
            "cov_e2_factor": self.cov_e2_factor,
            "passed": self.passed,
        }


def population_orthogonality_check(spec, pair: ScalarPair, tol: float = 1e-10) -> OrthogonalityReport:
    """Exact covariances among X*_l and the two noise terms of a pair under ``spec``."""
    maps = spec.linear_maps()
    var = spec.primitive_variances()
    x_l = maps["latent"][pair.factor]
    e1 = pair.q1 @ maps["x1"] - x_l
    e2 = pair.q2 @ maps["x2"] - pair.gamma * x_l
    cov = lambda a, b: float(np.sum(a * var * b))
    return OrthogonalityReport(cov(e1, e2), cov(e1, x_l), cov(e2, x_l), tol)
