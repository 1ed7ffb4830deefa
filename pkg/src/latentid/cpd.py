"""CP decomposition of the third-moment tensor into loadings and factor skewness.

Two solvers are provided. ``jennrich_decompose`` is exact on noiseless
tensors but needs M1 and M2 to have full column rank. ``als_decompose``
(alternating least squares with seeded restarts) also covers the regime
where no loading matrix has full column rank and only Kruskal's condition
holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ArgumentError, DegeneracyError, DimensionError, RankError
from .moments import MomentTensor3


@dataclass(frozen=True, eq=False)
class LoadingSet:
    """Loadings (M1, M2, M3) and per-factor weights ``lam``.

    The represented tensor is ``sum_l lam[l] * M1[:, l] (x) M2[:, l] (x) M3[:, l]``.
    In canonical form ``M1[anchors[l], l] == 1`` for each factor.
    """

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray
    lam: np.ndarray
    anchors: tuple | None = None
    provenance: str = "truth"
    residual: float | None = None
    unidentified: tuple = ()
    scale_pinned: bool = False
    trace: tuple = field(default=(), repr=False)

    def __post_init__(self):
        mats = [np.array(m, dtype=float, ndmin=2) for m in (self.M1, self.M2, self.M3)]
        lam = np.array(self.lam, dtype=float).reshape(-1)
        L = lam.size
        for i, m in enumerate(mats, start=1):
            if m.shape[1] != L:
                raise DimensionError(f"M{i} has {m.shape[1]} columns but lam has {L} entries")
        for name, m in zip(("M1", "M2", "M3"), mats):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def L(self) -> int:
        return self.lam.size

    @property
    def mats(self) -> tuple:
        return (self.M1, self.M2, self.M3)

    def reconstruct(self) -> np.ndarray:
        return np.einsum("il,ul,vl,l->iuv", self.M1, self.M2, self.M3, self.lam)

    def relative_residual(self, T) -> float:
        t = T.values if isinstance(T, MomentTensor3) else np.asarray(T)
        nrm = np.linalg.norm(t)
        return float(np.linalg.norm(t - self.reconstruct()) / (nrm if nrm > 0 else 1.0))

    def permuted(self, perm) -> "LoadingSet":
        perm = list(perm)
        anchors = None if self.anchors is None else tuple(self.anchors[p] for p in perm)
        return replace(self, M1=self.M1[:, perm], M2=self.M2[:, perm], M3=self.M3[:, perm],
                       lam=self.lam[perm], anchors=anchors, unidentified=())

    def to_dict(self) -> dict:
        return {
            "M1": self.M1.tolist(),
            "M2": self.M2.tolist(),
            "M3": self.M3.tolist(),
            "lambda": self.lam.tolist(),
            "anchors": None if self.anchors is None else list(self.anchors),
            "provenance": self.provenance,
            "residual": self.residual,
            "unidentified": list(self.unidentified),
            "scale_pinned": self.scale_pinned,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoadingSet":
        anchors = d.get("anchors")
        return cls(d["M1"], d["M2"], d["M3"], d["lambda"],
                   anchors=None if anchors is None else tuple(anchors),
                   provenance=d.get("provenance", "truth"), residual=d.get("residual"),
                   unidentified=tuple(d.get("unidentified", ())),
                   scale_pinned=d.get("scale_pinned", False))


@dataclass(frozen=True)
class AlignmentResult:
    """Matching of estimated factors to reference factors.

    ``permutation[l]`` is the estimated column matched to reference column
    ``l``; ``scales[l]`` multiplies the (M1, M2, M3) columns of that
    estimate to bring it onto the reference.
    """

    permutation: tuple
    scales: np.ndarray
    error: float
    per_factor: tuple
    aligned: LoadingSet

    def to_dict(self) -> dict:
        return {
            "permutation": list(self.permutation),
            "scales": self.scales.tolist(),
            "error": self.error,
            "per_factor": list(self.per_factor),
        }


# -- canonical form ---------------------------------------------------------------


def canonicalize(ls: LoadingSet) -> LoadingSet:
    """Scale each M1 column so its largest-magnitude entry equals 1.

    The scale is absorbed into ``lam``; M2 and M3 are untouched, so the
    represented tensor does not change.
    """
    M1 = np.array(ls.M1)
    lam = np.array(ls.lam)
    anchors = []
    for l in range(ls.L):
        a = int(np.argmax(np.abs(M1[:, l])))
        s = M1[a, l]
        if s == 0.0:
            raise DegeneracyError(f"factor {l} has an all-zero M1 column")
        M1[:, l] = M1[:, l] / s
        M1[a, l] = 1.0
        lam[l] = lam[l] * s
        anchors.append(a)
    return replace(ls, M1=M1, lam=lam, anchors=tuple(anchors))


def to_anchor_units(ls: LoadingSet) -> LoadingSet:
    """Rescale each latent factor so that its M1 anchor loading is 1.

    Unlike :func:`canonicalize` this rescales all three loadings by the same
    factor ``1/s`` and ``lam`` by ``s**3``, i.e. it changes the units of
    the latent variable rather than just the CP bookkeeping.
    """
    c = canonicalize(ls)
    s = np.array([ls.M1[a, l] for l, a in enumerate(c.anchors)])
    return replace(c, M2=ls.M2 / s, M3=ls.M3 / s, lam=ls.lam * s**3, scale_pinned=True)


def _finalize(A, B, C, T, provenance, trace=(), zero_tol=1e-10):
    """Normalise raw CP factors into a canonical LoadingSet."""
    nb = np.linalg.norm(B, axis=0)
    nc = np.linalg.norm(C, axis=0)
    na = np.linalg.norm(A, axis=0)
    lam = na * nb * nc
    tnorm = np.linalg.norm(T)
    unident = tuple(int(l) for l in np.flatnonzero(lam <= zero_tol * max(tnorm, 1e-300)))
    safe = lambda v: np.where(v > 0, v, 1.0)
    ls = LoadingSet(A / safe(na), B / safe(nb), C / safe(nc), lam, provenance=provenance, trace=tuple(trace))
    if unident:
        # a vanishing component has no usable direction; keep placeholders
        M1 = np.array(ls.M1)
        for l in unident:
            if not np.any(M1[:, l]):
                M1[:, l] = 1.0
        ls = replace(ls, M1=M1)
    ls = canonicalize(ls)
    return replace(ls, residual=ls.relative_residual(T), unidentified=unident)


# -- Jennrich ---------------------------------------------------------------------


def _unfold(t, mode):
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def _khatri_rao(A, B):
    """Column-wise Kronecker product; row index runs i * rows(B) + u."""
    return (A[:, None, :] * B[None, :, :]).reshape(-1, A.shape[1])


def jennrich_decompose(T: MomentTensor3, L: int, tol: float = 1e-8, seed: int = 0) -> LoadingSet:
    """Simultaneous-diagonalisation CP solver.

    The tensor is compressed onto the leading L-dimensional mode-1 and
    mode-2 subspaces, contracted along mode 3 with two random unit vectors
    ``a`` and ``b``, and ``S_a S_b^{-1}`` (resp. its transpose counterpart)
    is eigendecomposed to read off M1 (resp. M2). M3 and the weights follow
    by least squares.

    Raises
    ------
    RankError
        If L exceeds K1 or K2.
    DegeneracyError
        If an unfolding is numerically rank deficient, eigenvalues are
        complex, or two eigenvalues are closer than ``tol``.
    """
    t = T.values if isinstance(T, MomentTensor3) else np.asarray(T, dtype=float)
    K1, K2, K3 = t.shape
    if L < 1:
        raise ArgumentError("L must be positive")
    if L > K1 or L > K2:
        raise RankError(f"L={L} exceeds the slice rank bound min(K1, K2)={min(K1, K2)}; use ALS")
    bases = []
    for mode in (0, 1):
        u, s, _ = np.linalg.svd(_unfold(t, mode), full_matrices=False)
        if s[0] == 0.0 or s[L - 1] <= tol * s[0]:
            raise DegeneracyError(f"mode-{mode + 1} unfolding has numerical rank < {L}; use ALS")
        bases.append(u[:, :L])
    U1, U2 = bases
    G = np.einsum("iuv,il,um->lmv", t, U1, U2)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    a, b = rng.standard_normal((2, K3))
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    Ga, Gb = G @ a, G @ b
    if np.linalg.cond(Gb) > 1.0 / max(tol, 1e-16):
        raise DegeneracyError("mode-3 contraction is singular; eigenproblem ill-conditioned")
    factors = []
    evals = []
    for X in (Ga @ np.linalg.inv(Gb), Ga.T @ np.linalg.inv(Gb.T)):
        w, V = np.linalg.eig(X)
        scale = max(np.max(np.abs(w)), 1e-300)
        if np.max(np.abs(w.imag)) > 1e3 * tol * scale:
            raise DegeneracyError("complex eigenvalues in simultaneous diagonalisation; use ALS")
        order = np.lexsort((w.imag, w.real))
        w = w.real[order]
        gaps = np.diff(w)
        if gaps.size and np.min(gaps) <= tol * scale:
            raise DegeneracyError("eigenvalue collision in simultaneous diagonalisation; use ALS")
        factors.append(V.real[:, order])
        evals.append(w)
    A = U1 @ factors[0]
    B = U2 @ factors[1]
    kr = _khatri_rao(A, B)
    C = np.linalg.lstsq(kr, _unfold(t, 2).T, rcond=None)[0].T
    return _finalize(A, B, C, t, "jennrich")


# -- ALS --------------------------------------------------------------------------


def _als_sweep(t, A, B, C):
    for mode in range(3):
        if mode == 0:
            mttkrp = np.einsum("iuv,ul,vl->il", t, B, C)
            gram = (B.T @ B) * (C.T @ C)
        elif mode == 1:
            mttkrp = np.einsum("iuv,il,vl->ul", t, A, C)
            gram = (A.T @ A) * (C.T @ C)
        else:
            mttkrp = np.einsum("iuv,il,ul->vl", t, A, B)
            gram = (A.T @ A) * (B.T @ B)
        new = np.linalg.lstsq(gram, mttkrp.T, rcond=None)[0].T
        if mode == 0:
            A = new
        elif mode == 1:
            B = new
        else:
            C = new
    return A, B, C


def _rel_res(t, A, B, C, tnorm):
    return float(np.linalg.norm(t - np.einsum("il,ul,vl->iuv", A, B, C)) / tnorm)


def _als_run(t, A, B, C, max_iters, tol):
    tnorm = np.linalg.norm(t)
    tnorm = tnorm if tnorm > 0 else 1.0
    trace = [_rel_res(t, A, B, C, tnorm)]
    for _ in range(max_iters):
        A, B, C = _als_sweep(t, A, B, C)
        # rebalance column norms; leaves the product and the residual unchanged
        na, nb, nc = (np.linalg.norm(X, axis=0) for X in (A, B, C))
        g = np.cbrt(na * nb * nc)
        ok = g > 0
        A[:, ok] *= g[ok] / na[ok]
        B[:, ok] *= g[ok] / nb[ok]
        C[:, ok] *= g[ok] / nc[ok]
        res = _rel_res(t, A, B, C, tnorm)
        trace.append(res)
        if res <= tol or trace[-2] - res <= tol * trace[-2]:
            break
    return A, B, C, trace


def als_decompose(T: MomentTensor3, L: int, init: LoadingSet | None = None, seed: int = 0,
                  max_iters: int = 2000, restarts: int = 1, tol: float = 1e-14):
    """Alternating least squares with seeded random restarts.

    Each restart draws Gaussian initial factors from its own Philox stream
    spawned from ``seed`` (an explicit ``init`` is used as restart 0). The
    result with the smallest relative residual wins, ties going to the
    lowest restart index.

    Returns
    -------
    (LoadingSet, list of float)
        Canonical loadings (``provenance='als'``) and the residual trace of
        the winning restart, one entry per sweep plus the initial value.
    """
    t = T.values if isinstance(T, MomentTensor3) else np.asarray(T, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ArgumentError("tensor has non-finite entries")
    if L < 1 or restarts < 1:
        raise ArgumentError("L and restarts must be positive")
    K1, K2, K3 = t.shape
    children = np.random.SeedSequence(seed).spawn(restarts)
    best = None
    for r in range(restarts):
        if r == 0 and init is not None:
            if init.L != L:
                raise DimensionError("init has the wrong number of factors")
            A = np.array(init.M1) * init.lam
            B, C = np.array(init.M2), np.array(init.M3)
        else:
            rng = np.random.Generator(np.random.Philox(children[r]))
            A, B, C = (rng.standard_normal((K, L)) for K in (K1, K2, K3))
        A, B, C, trace = _als_run(t, A, B, C, max_iters, tol)
        if best is None or trace[-1] < best[3][-1]:
            best = (A, B, C, trace)
    A, B, C, trace = best
    return _finalize(A, B, C, t, "als", trace), list(trace)


# -- alignment --------------------------------------------------------------------


def align_factors(est: LoadingSet, ref: LoadingSet) -> AlignmentResult:
    """Match estimated columns to reference columns up to permutation and scale.

    Columns are paired by a one-to-one assignment maximising the product of
    absolute cosine similarities across the three modes; each matched
    column is then rescaled by least squares onto the reference and the
    weights are compensated by the inverse product of the three scales.
    """
    if any(a.shape != b.shape for a, b in zip(est.mats, ref.mats)):
        raise DimensionError("loading sets have different dimensions")
    L = ref.L

    def unit(M):
        n = np.linalg.norm(M, axis=0)
        return M / np.where(n > 0, n, 1.0)

    score = np.ones((L, L))
    for E, R in zip(est.mats, ref.mats):
        score *= np.abs(unit(R).T @ unit(E))
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(L, dtype=int)
    perm[rows] = cols
    scales = np.ones((L, 3))
    aligned = []
    for k, (E, R) in enumerate(zip(est.mats, ref.mats)):
        Ep = E[:, perm]
        den = np.sum(Ep * Ep, axis=0)
        s = np.where(den > 0, np.sum(Ep * R, axis=0) / np.where(den > 0, den, 1.0), 1.0)
        scales[:, k] = s
        aligned.append(Ep * s)
    lam = est.lam[perm] / np.prod(scales, axis=1)
    per = tuple(
        float(max(np.max(np.abs(a[:, l] - r[:, l])) for a, r in zip(aligned, ref.mats))) for l in range(L)
    )
    out = LoadingSet(*aligned, lam, provenance=est.provenance, residual=est.residual)
    return AlignmentResult(tuple(int(p) for p in perm), scales, max(per), per, out)


# -- scale resolution ---------------------------------------------------------------


def pin_scales(ls: LoadingSet, t112, t122) -> LoadingSet:
    """Fix the M2/M3 column scales relative to the M1 anchor.

    The (1,2,3) tensor only determines each product ``lam * m2 * m3``.
    With M1 anchored, the repeated-block moments

        E[X^1_i X^1_j X^2_u] = sum_l (lam_l c_l)   m1_il m1_jl m2~_ul
        E[X^1_i X^2_u X^2_v] = sum_l (lam_l c_l^2) m1_il m2~_ul m2~_vl

    are linear in the unknown coefficients, where ``m2~`` is the current M2
    column and ``c_l`` its missing scale. Solving both by least squares
    gives ``c_l`` and the anchored third moment ``lam_l``; M3 absorbs what
    is left so the (1,2,3) reconstruction is unchanged.
    """
    t112 = np.asarray(getattr(t112, "values", t112), dtype=float)
    t122 = np.asarray(getattr(t122, "values", t122), dtype=float)
    if ls.anchors is None:
        ls = canonicalize(ls)
    M1, M2 = ls.M1, ls.M2
    D112 = np.einsum("il,jl,ul->ijul", M1, M1, M2).reshape(-1, ls.L)
    D122 = np.einsum("il,ul,vl->iuvl", M1, M2, M2).reshape(-1, ls.L)
    alpha = np.linalg.lstsq(D112, t112.reshape(-1), rcond=None)[0]
    beta = np.linalg.lstsq(D122, t122.reshape(-1), rcond=None)[0]
    bad = [l for l in range(ls.L) if alpha[l] == 0.0 or beta[l] == 0.0]
    if bad:
        raise DegeneracyError(f"cannot resolve the scale of factors {bad}: vanishing moments")
    c = beta / alpha
    lam = alpha**2 / beta
    d = ls.lam / (lam * c)
    return replace(ls, M2=M2 * c, M3=ls.M3 * d, lam=lam, scale_pinned=True)


def residual_by_rank(T, max_L: int, seed: int = 0, restarts: int = 5, max_iters: int = 500) -> list:
    """Best ALS relative residual for each L = 1..max_L.

    A diagnostic for choosing L: the residual should drop to the noise level
    at the true number of factors and flatten beyond it. It does not pick L.
    """
    if max_L < 1:
        raise ArgumentError("max_L must be positive")
    out = []
    for L in range(1, max_L + 1):
        _, trace = als_decompose(T, L, seed=seed, max_iters=max_iters, restarts=restarts)
        out.append(float(trace[-1]))
    return out
