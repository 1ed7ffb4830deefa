"""Characteristic-function deconvolution.

Empirical characteristic functions on symmetric grids, the scalar and
multivariate Kotlarski identities, error deconvolution by cf division, and
tapered Fourier inversion back to densities.

All sample moments are exact averages over the data (the derivative inside
Kotlarski's identity is the moment ``mean(i W2 exp(i s W1))``, never a
finite difference). Grids are symmetric about zero; values at ``-t`` are
filled in as conjugates of those at ``t``, which is exact for real samples.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator

from .errors import ArgumentError, RangeError, TruncationWarning

DEFAULT_FLOOR = 0.05
_CHUNK = 2**21


@dataclass(frozen=True)
class GridSpec:
    """Uniform symmetric axis ``step * (-m, ..., m)`` with ``m = round(T / step)``."""

    T: float
    step: float

    def __post_init__(self):
        if self.step <= 0 or self.T <= 0:
            raise ArgumentError("grid half-width and step must be positive")
        if round(self.T / self.step) < 1:
            raise ArgumentError("grid needs at least one point on each side of zero")

    @property
    def m(self) -> int:
        return int(round(self.T / self.step))

    def axis(self) -> np.ndarray:
        return self.step * np.arange(-self.m, self.m + 1, dtype=float)

    def to_dict(self) -> dict:
        return {"T": self.T, "step": self.step}


def _axes_from(grid, d: int) -> tuple:
    if isinstance(grid, GridSpec):
        return tuple(grid.axis() for _ in range(d))
    grid = list(grid)
    if len(grid) != d:
        raise ArgumentError(f"need {d} grid axes, got {len(grid)}")
    return tuple(g.axis() if isinstance(g, GridSpec) else np.asarray(g, dtype=float) for g in grid)


def _mesh(axes) -> np.ndarray:
    return np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def _is_symmetric(axis) -> bool:
    axis = np.asarray(axis)
    return axis.size % 2 == 1 and np.allclose(axis, -axis[::-1], rtol=0, atol=1e-12 * max(1.0, np.abs(axis).max()))


@dataclass(frozen=True, eq=False)
class CfGrid:
    """Complex cf values on a product grid of symmetric axes."""

    axes: tuple
    values: np.ndarray
    provenance: str = "empirical"
    trusted: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        shape = tuple(a.size for a in axes)
        vals = np.asarray(self.values, dtype=complex).reshape(shape)
        trusted = np.ones(shape, dtype=bool) if self.trusted is None else np.asarray(self.trusted, dtype=bool).reshape(shape)
        for arr in (vals, trusted):
            arr.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "trusted", trusted)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def half_widths(self) -> tuple:
        return tuple(float(a[-1]) for a in self.axes)

    def points(self) -> np.ndarray:
        return _mesh(self.axes)

    def origin_value(self) -> complex:
        return complex(self.values[tuple(a.size // 2 for a in self.axes)])

    def conjugate_asymmetry(self) -> float:
        """max |phi(-t) - conj(phi(t))| over finite entries."""
        flipped = self.values[tuple(slice(None, None, -1) for _ in self.axes)]
        diff = np.abs(flipped - np.conj(self.values))
        return float(np.max(diff[np.isfinite(diff)], initial=0.0))

    def covers(self, u) -> bool:
        u = np.atleast_2d(u)
        return bool(np.all(np.abs(u) <= np.array(self.half_widths) * (1 + 1e-12) + 1e-12))

    def at(self, u) -> np.ndarray:
        """Linear interpolation at points ``u`` of shape (m, dim) (or (m,) when 1-D)."""
        u = np.asarray(u, dtype=float)
        if self.dim == 1 and u.ndim == 1:
            u = u[:, None]
        if not self.covers(u):
            raise RangeError("evaluation points fall outside the cf grid")
        if self.dim == 1:
            ax = self.axes[0]
            x = np.clip(u[:, 0], ax[0], ax[-1])
            return np.interp(x, ax, self.values.real) + 1j * np.interp(x, ax, self.values.imag)
        ip = RegularGridInterpolator(self.axes, self.values, method="linear")
        return ip(np.clip(u, [a[0] for a in self.axes], [a[-1] for a in self.axes]))

    def trusted_at(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.dim == 1 and u.ndim == 1:
            u = u[:, None]
        lo = [a[0] for a in self.axes]
        hi = [a[-1] for a in self.axes]
        inside = np.all((u >= np.array(lo) - 1e-12) & (u <= np.array(hi) + 1e-12), axis=1)
        ip = RegularGridInterpolator(self.axes, self.trusted.astype(float), method="linear")
        out = np.zeros(u.shape[0], dtype=bool)
        out[inside] = ip(np.clip(u[inside], lo, hi)) >= 1.0 - 1e-12
        return out

    def trusted_window(self) -> "CfGrid":
        """Largest centred sub-grid (same index radius on each axis) that is fully trusted."""
        centre = [a.size // 2 for a in self.axes]
        rmax = min(centre)
        ok = self.trusted & np.isfinite(self.values)
        r = 0
        while r < rmax:
            sl = tuple(slice(c - r - 1, c + r + 2) for c in centre)
            if not ok[sl].all():
                break
            r += 1
        return self.window(r)

    def window(self, radius: int) -> "CfGrid":
        centre = [a.size // 2 for a in self.axes]
        sl = tuple(slice(c - radius, c + radius + 1) for c in centre)
        axes = tuple(a[s] for a, s in zip(self.axes, sl))
        return CfGrid(axes, self.values[sl], self.provenance, self.trusted[sl], dict(self.info))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"t{k + 1}" for k in range(self.dim)] + ["re", "im", "trusted"])
        for p, v, ok in zip(self.points(), self.values.reshape(-1), self.trusted.reshape(-1)):
            w.writerow([repr(float(x)) for x in p] + [repr(float(v.real)), repr(float(v.imag)), int(ok)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Nonnegative density values on a product grid."""

    axes: tuple
    values: np.ndarray
    mass: float
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(self.dim)] + ["density"])
        for p, v in zip(_mesh(self.axes), self.values.reshape(-1)):
            w.writerow([repr(float(x)) for x in p] + [repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


# -- sample moments -----------------------------------------------------------------


def _as_sample(x, d=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError("sample must be a nonempty (n,) or (n, d) array")
    if d is not None and x.shape[1] != d:
        raise ArgumentError(f"sample has dimension {x.shape[1]}, expected {d}")
    return x


def _exp_sums(x, pts, weights=None):
    """mean(w * exp(i t . x)) for w in (1, weights...) at every point t."""
    n = x.shape[0]
    W = np.ones((n, 1)) if weights is None else np.hstack([np.ones((n, 1)), weights])
    out = np.empty((pts.shape[0], W.shape[1]), dtype=complex)
    step = max(1, _CHUNK // n)
    for lo in range(0, pts.shape[0], step):
        ph = pts[lo : lo + step] @ x.T
        out[lo : lo + step] = (np.cos(ph) @ W + 1j * (np.sin(ph) @ W)) / n
    return out


def _grid_ecf(x, axes, chunk=4096):
    """mean(exp(i t . x)) over a product grid, flattened in C order.

    exp(i t . x) factorises over coordinates, so each chunk of rows costs
    one exponential table per axis and a single complex matrix product.
    Chunks are accumulated in row order; the result is then symmetrised so
    that value(-t) is exactly conj(value(t)).
    """
    n, d = x.shape
    sizes = [a.size for a in axes]
    acc = np.zeros(int(np.prod(sizes)), dtype=complex)
    for lo in range(0, n, chunk):
        xs = x[lo : lo + chunk]
        tabs = [np.exp(1j * np.outer(a, xs[:, k])) for k, a in enumerate(axes)]
        P = tabs[0]
        for E in tabs[1:-1]:
            P = (P[:, None, :] * E[None, :, :]).reshape(-1, xs.shape[0])
        acc += (P @ tabs[-1].T).reshape(-1) if d > 1 else P.sum(axis=1)
    acc /= n
    return 0.5 * (acc + np.conj(acc[::-1]))


def ecf(sample, grid) -> CfGrid:
    """Empirical characteristic function mean(exp(i t . x)) on a symmetric grid."""
    x = _as_sample(sample)
    axes = _axes_from(grid, x.shape[1])
    if not all(_is_symmetric(a) for a in axes):
        raise ArgumentError("cf grids must be symmetric about zero")
    vals = _grid_ecf(x, axes)
    return CfGrid(axes, vals, "empirical")


def cross_deriv(sample_w1, sample_w2, s) -> np.ndarray:
    """mean(i W2 exp(i s W1)): the t2-derivative at 0 of the joint cf of (W1, W2)."""
    w1 = np.asarray(sample_w1, dtype=float).reshape(-1)
    w2 = np.asarray(sample_w2, dtype=float).reshape(-1)
    if w1.size != w2.size:
        raise ArgumentError("W1 and W2 must have the same length")
    if w1.size == 0:
        raise ArgumentError("empty sample")
    s = s.axis() if isinstance(s, GridSpec) else np.asarray(s, dtype=float).reshape(-1)
    return 1j * _exp_sums(w1[:, None], s[:, None], w2[:, None])[:, 1]


# -- scalar Kotlarski ---------------------------------------------------------------------


def _trusted_prefix(modulus, floor):
    bad = np.flatnonzero(modulus < floor)
    return modulus.size if bad.size == 0 else int(bad[0])


def _scalar_from_values(axis, phi_pos, cross_pos, floor, provenance, name="W1"):
    """Integrate cross/phi outward from 0 on the nonnegative half axis and mirror."""
    c = axis.size // 2
    s_pos = axis[c:]
    g = cross_pos / phi_pos
    integral = cumulative_trapezoid(g, s_pos, initial=0.0)
    pos = np.exp(integral)
    pos[0] = 1.0
    values = np.concatenate([np.conj(pos[:0:-1]), pos])
    k = _trusted_prefix(np.abs(phi_pos), floor)
    trusted_pos = np.arange(s_pos.size) < k
    trusted = np.concatenate([trusted_pos[:0:-1], trusted_pos])
    trusted_T = float(s_pos[k - 1]) if k > 0 else 0.0
    info = {"trusted_T": trusted_T, "min_modulus": float(np.min(np.abs(phi_pos))), "floor": floor}
    if k < s_pos.size:
        warnings.warn(
            TruncationWarning(
                f"|cf of {name}| drops below {floor} beyond |t| = {trusted_T:.4g}; "
                f"values outside [-{trusted_T:.4g}, {trusted_T:.4g}] are not trusted"
            ),
            stacklevel=3,
        )
    return CfGrid((axis,), values, provenance, trusted, info)


def kotlarski_scalar(sample_w1, sample_w2, gamma: float, grid: GridSpec,
                     floor: float = DEFAULT_FLOOR) -> CfGrid:
    """Recover the cf of X from W1 = X + e1 and W2 = gamma X + e2.

    Requires X, e1, e2 mutually independent and E[e2] = 0. Computes

        phi_X(t) = exp( int_0^t mean(i W2/gamma e^{i s W1}) / mean(e^{i s W1}) ds )

    by cumulative trapezoid quadrature outward from 0. Points where
    ``|ecf_W1|`` has dropped below ``floor`` (and everything beyond) are
    flagged untrusted and a :class:`TruncationWarning` is emitted.
    """
    if gamma == 0 or not np.isfinite(gamma):
        raise ArgumentError("gamma must be a nonzero finite number")
    w1 = np.asarray(sample_w1, dtype=float).reshape(-1)
    w2 = np.asarray(sample_w2, dtype=float).reshape(-1)
    if w1.size != w2.size or w1.size == 0:
        raise ArgumentError("W1 and W2 must be nonempty and of equal length")
    axis = grid.axis()
    s_pos = axis[axis.size // 2 :]
    sums = _exp_sums(w1[:, None], s_pos[:, None], (w2 / gamma)[:, None])
    return _scalar_from_values(axis, sums[:, 0], 1j * sums[:, 1], floor, "recovered")


def kotlarski_scalar_from_cf(cf_w1: Callable, cross: Callable, gamma: float, grid: GridSpec,
                             floor: float = DEFAULT_FLOOR) -> CfGrid:
    """Same identity fed with population transforms.

    ``cf_w1(s)`` is the cf of W1 and ``cross(s)`` is E[i W2 exp(i s W1)]
    (not yet divided by gamma), both vectorised over a 1-D array.
    """
    if gamma == 0 or not np.isfinite(gamma):
        raise ArgumentError("gamma must be a nonzero finite number")
    axis = grid.axis()
    s_pos = axis[axis.size // 2 :]
    phi = np.asarray(cf_w1(s_pos), dtype=complex).reshape(-1)
    cr = np.asarray(cross(s_pos), dtype=complex).reshape(-1) / gamma
    return _scalar_from_values(axis, phi, cr, floor, "recovered")


# -- multivariate Kotlarski -----------------------------------------------------------------


MAX_JOINT_DIM = 3


def _trapezoid_weights(n):
    if n < 2:
        raise ArgumentError("need at least two quadrature nodes")
    w = np.full(n, 1.0 / (n - 1))
    w[0] = w[-1] = 0.5 / (n - 1)
    return w


def _multivariate_assemble(axes, pts_half, phi, grad, lam_w, floor, provenance):
    """phi, grad: (h, n_lambda) and (h, n_lambda, L) transforms along each ray."""
    integrand = np.einsum("hkl,hl->hk", grad, pts_half) / phi
    expo = integrand @ lam_w
    half_vals = np.exp(expo)
    ok_half = np.min(np.abs(phi), axis=1) >= floor
    m = int(np.prod([a.size for a in axes]))
    h = pts_half.shape[0]
    vals = np.empty(m, dtype=complex)
    ok = np.empty(m, dtype=bool)
    vals[:h] = half_vals
    ok[:h] = ok_half
    vals[h:] = np.conj(half_vals[: m - h][::-1])
    ok[h:] = ok_half[: m - h][::-1]
    vals[m // 2] = 1.0
    info = {"floor": floor, "n_lambda": lam_w.size, "untrusted_points": int(np.sum(~ok))}
    if not ok.all():
        warnings.warn(
            TruncationWarning(f"{int(np.sum(~ok))} joint-cf grid points cross the modulus floor {floor}"),
            stacklevel=3,
        )
    return CfGrid(axes, vals, provenance, ok, info)


def _joint_axes(grid, L):
    if L > MAX_JOINT_DIM:
        raise ArgumentError(f"joint cf grids are limited to L <= {MAX_JOINT_DIM}")
    axes = _axes_from(grid, L)
    if not all(_is_symmetric(a) for a in axes):
        raise ArgumentError("cf grids must be symmetric about zero")
    return axes


def _ray_sums(w1, W, axes, lam, chunk=4096):
    """mean(W_j exp(i lam_k t . w1)) for every lam_k and every t with t_1 <= 0.

    For fixed lam_k the points lam_k t again form a product grid, so the
    sums factorise over coordinates into one complex matrix product per
    chunk of rows. Returns shape (n_lambda, columns of W, points) with the
    points in C order.
    """
    n, d = w1.shape
    q = W.shape[1]
    c0 = axes[0].size // 2
    half_axes = (axes[0][: c0 + 1],) + tuple(axes[1:])
    size = int(np.prod([a.size for a in half_axes]))
    out = np.empty((lam.size, q, size), dtype=complex)
    for k, lk in enumerate(lam):
        acc = np.zeros((q, size), dtype=complex)
        for lo in range(0, n, chunk):
            xs, ws = w1[lo : lo + chunk], W[lo : lo + chunk]
            tabs = [np.exp(1j * lk * np.outer(a, xs[:, j])) for j, a in enumerate(half_axes)]
            P = tabs[0]
            for E in tabs[1:-1]:
                P = (P[:, None, :] * E[None, :, :]).reshape(-1, xs.shape[0])
            if d == 1:
                acc += (P @ ws).T
            else:
                A = (ws.T[:, None, :] * P[None, :, :]).reshape(-1, xs.shape[0])
                acc += (A @ tabs[-1].T).reshape(q, -1)
        out[k] = acc / n
    return out


def kotlarski_multivariate(sample_w1, sample_w23, grid, n_lambda: int = 64,
                           floor: float = DEFAULT_FLOOR) -> CfGrid:
    """Joint cf of X* from W1 = X* + u and W23 = X* + v (X*, u, v independent, E v = 0).

    For each grid point t,

        phi(t) = exp( int_0^1 [mean(i W23 e^{i lam t.W1})] . t / mean(e^{i lam t.W1}) dlam )

    with an ``n_lambda``-node trapezoid rule in lam. A point is untrusted
    when the W1 cf modulus falls below ``floor`` anywhere on its ray.
    """
    w1 = _as_sample(sample_w1)
    L = w1.shape[1]
    w23 = _as_sample(sample_w23, L)
    if w23.shape[0] != w1.shape[0]:
        raise ArgumentError("W1 and W23 samples must be aligned")
    axes = _joint_axes(grid, L)
    pts = _mesh(axes)
    h = (pts.shape[0] + 1) // 2
    lam = np.linspace(0.0, 1.0, n_lambda)
    W = np.hstack([np.ones((w1.shape[0], 1)), w23])
    sums = _ray_sums(w1, W, axes, lam)[:, :, :h]
    phi = sums[:, 0, :].T
    grad = 1j * np.transpose(sums[:, 1:, :], (2, 0, 1))
    return _multivariate_assemble(axes, pts[:h], phi, grad, _trapezoid_weights(n_lambda), floor, "recovered")


def kotlarski_multivariate_from_cf(cf_w1: Callable, grad_fn: Callable, grid, L: int,
                                   n_lambda: int = 64, floor: float = DEFAULT_FLOOR) -> CfGrid:
    """Multivariate identity with population transforms.

    ``cf_w1(u)`` gives the cf of W1 and ``grad_fn(u)`` gives
    E[i W23 exp(i u . W1)] at points ``u`` of shape (m, L).
    """
    axes = _joint_axes(grid, L)
    pts = _mesh(axes)
    h = (pts.shape[0] + 1) // 2
    pts_half = pts[:h]
    lam = np.linspace(0.0, 1.0, n_lambda)
    u = (pts_half[:, None, :] * lam[None, :, None]).reshape(-1, L)
    phi = np.asarray(cf_w1(u), dtype=complex).reshape(h, n_lambda)
    grad = np.asarray(grad_fn(u), dtype=complex).reshape(h, n_lambda, L)
    return _multivariate_assemble(axes, pts_half, phi, grad, _trapezoid_weights(n_lambda), floor, "recovered")


# -- error deconvolution -------------------------------------------------------------------------


def composed_latent_cf(latent, M):
    """Callable t -> (phi_{M X*}(t), trusted) built from per-factor grids, a joint grid or a function.

    Per-factor grids assume independent factors:
    ``phi_{M X*}(t) = prod_l phi_l((M^T t)_l)``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    L = M.shape[1]
    if callable(latent) and not isinstance(latent, CfGrid):
        def f(pts):
            u = pts @ M
            return np.asarray(latent(u), dtype=complex).reshape(-1), np.ones(u.shape[0], dtype=bool)
        return f, None
    if isinstance(latent, CfGrid):
        if latent.dim != L:
            raise ArgumentError(f"joint latent cf has dim {latent.dim}, loadings have {L} columns")
        reach = np.array(latent.half_widths)

        def f(pts):
            u = pts @ M
            return latent.at(u), latent.trusted_at(u)
        return f, reach
    grids = list(latent)
    if len(grids) != L or any(g.dim != 1 for g in grids):
        raise ArgumentError("need one 1-D cf grid per factor")
    reach = np.array([g.half_widths[0] for g in grids])

    def f(pts):
        u = pts @ M
        val = np.ones(u.shape[0], dtype=complex)
        ok = np.ones(u.shape[0], dtype=bool)
        for l, g in enumerate(grids):
            val *= g.at(u[:, l])
            ok &= g.trusted_at(u[:, l])
        return val, ok
    return f, reach


def deconvolve_errors(observed, M, latent, grid=None, floor: float = DEFAULT_FLOOR) -> CfGrid:
    """cf of the block error: phi_eps(t) = phi_X(t) / phi_{M X*}(t).

    Parameters
    ----------
    observed : (n, K) sample, CfGrid, or callable of (m, K) points
        The block's observations or its cf.
    M : (K, L) loading matrix
    latent : list of 1-D CfGrid, joint CfGrid, or callable of (m, L) points
        The latent cf; per-factor grids imply independent factors.
    grid : GridSpec or sequence of GridSpec
        Evaluation grid over R^K; taken from ``observed`` when it is a CfGrid.

    Points where the denominator modulus is below ``floor`` or the latent
    cf is itself untrusted are masked (NaN) and flagged untrusted.

    Raises
    ------
    RangeError
        If ``M^T t`` leaves the latent grid for some requested ``t``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    K = M.shape[0]
    if isinstance(observed, CfGrid):
        axes = observed.axes
        if observed.dim != K:
            raise ArgumentError("observed cf grid dimension does not match M")
    else:
        if grid is None:
            raise ArgumentError("an evaluation grid is required")
        axes = _axes_from(grid, K)
    if not all(_is_symmetric(a) for a in axes):
        raise ArgumentError("cf grids must be symmetric about zero")
    denom_fn, reach = composed_latent_cf(latent, M)
    if reach is not None:
        need = np.abs(M).T @ np.array([a[-1] for a in axes])
        if np.any(need > reach * (1 + 1e-9) + 1e-12):
            raise RangeError(
                f"latent cf grid half-widths {reach.tolist()} do not cover M^T t up to {need.tolist()}"
            )
    pts = _mesh(axes)
    if isinstance(observed, CfGrid):
        num = observed.values.reshape(-1)
    elif callable(observed):
        num = np.asarray(observed(pts), dtype=complex).reshape(-1)
    else:
        x = _as_sample(observed, K)
        num = _grid_ecf(x, axes)
    den, ok = denom_fn(pts)
    ok = ok & (np.abs(den) >= floor)
    vals = np.full(num.shape, np.nan + 0j)
    vals[ok] = num[ok] / den[ok]
    recon = float(np.max(np.abs(num[ok] - vals[ok] * den[ok]), initial=0.0))
    info = {"floor": floor, "untrusted_points": int(np.sum(~ok)), "reconstruction_error": recon}
    return CfGrid(axes, vals, "recovered", ok, info)


# -- inversion ---------------------------------------------------------------------------------


def flat_cosine_taper(v) -> np.ndarray:
    """1 on |v| <= 1/2, squared-cosine roll-off to 0 at |v| = 1, 0 beyond."""
    a = np.abs(np.asarray(v, dtype=float))
    out = np.where(a <= 0.5, 1.0, np.cos(np.pi * (a - 0.5)) ** 2)
    return np.where(a >= 1.0, 0.0, out)


def _trapz_axis_weights(axis):
    if axis.size == 1:
        return np.ones(1)
    d = np.diff(axis)
    w = np.empty_like(axis)
    w[1:-1] = 0.5 * (d[:-1] + d[1:])
    w[0] = 0.5 * d[0]
    w[-1] = 0.5 * d[-1]
    return w


def _trapz_nd(values, axes):
    out = values
    for ax in reversed(axes):
        out = np.trapezoid(out, ax, axis=-1)
    return float(out)


def invert_cf_to_density(cf: CfGrid, h=None, x=None, x_max: float = 8.0, n_x: int | None = None,
                         taper: Callable = flat_cosine_taper) -> DensityGrid:
    """Tapered inverse Fourier transform of a cf grid.

    ``f(x) = (2 pi)^-d  int exp(-i t.x) phi(t) prod_k taper(h_k t_k) dt`` by
    the trapezoid rule. The default bandwidth ``h_k = 1 / T_k`` makes the
    taper vanish at the grid edge. The imaginary part is dropped (its max
    magnitude is kept in ``info``), negative values are clipped to zero and
    the result is renormalised to unit mass on the output grid.
    """
    d = cf.dim
    if not all(_is_symmetric(a) for a in cf.axes):
        raise ArgumentError("inversion needs a grid symmetric about zero")
    if not np.all(np.isfinite(cf.values)):
        raise ArgumentError("cf grid has masked values; invert a trusted window instead")
    hs = [1.0 / a[-1] for a in cf.axes] if h is None else list(np.broadcast_to(h, (d,)))
    if x is None:
        n = n_x if n_x is not None else (401 if d == 1 else 121)
        xs = tuple(np.linspace(-x_max, x_max, n) for _ in range(d))
    else:
        xs = tuple(np.asarray(xx, dtype=float) for xx in (x if d > 1 else [x]))
    F = np.array(cf.values, dtype=complex)
    for k, (ax, hk) in enumerate(zip(cf.axes, hs)):
        shape = [1] * d
        shape[k] = ax.size
        F = F * (taper(hk * ax) * _trapz_axis_weights(ax)).reshape(shape)
    for k, (ax, xk) in enumerate(zip(cf.axes, xs)):
        E = np.exp(-1j * np.outer(xk, ax))
        F = np.moveaxis(np.tensordot(E, F, axes=([1], [k])), 0, k)
    F = F / (2 * np.pi) ** d
    dens = F.real
    raw_mass = _trapz_nd(dens, xs)
    dens = np.clip(dens, 0.0, None)
    clipped_mass = _trapz_nd(dens, xs)
    if clipped_mass <= 0:
        raise ArgumentError("inverted density has no positive mass on the output grid")
    dens = dens / clipped_mass
    info = {
        "imag_max": float(np.max(np.abs(F.imag))),
        "raw_mass": raw_mass,
        "clipped_mass": clipped_mass,
        "bandwidth": [float(v) for v in hs],
    }
    return DensityGrid(xs, dens, _trapz_nd(dens, xs), info)
