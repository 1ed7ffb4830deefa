"""Generative linear measurement model, closed-form law families and simulation.

Three blocks of measurements share an L-dimensional latent vector::

    X^i = M^i X* + eps^i,   i = 1, 2, 3

Every random quantity is a linear image of a vector ``Z`` of independent
*primitive* scalar laws drawn from a closed set of families with analytic
moments and characteristic functions, so all population quantities used as
test oracles are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import (
    ArgumentError,
    AssumptionError,
    DimensionError,
    SpecError,
    UnsupportedSpecError,
)

FAMILIES = ("centered_gamma", "centered_exponential", "gaussian", "two_point", "mixture")

_PARAMS = {
    "centered_gamma": ("shape", "scale"),
    "centered_exponential": ("rate",),
    "gaussian": ("sigma",),
    "two_point": ("p", "a", "b"),
    "mixture": ("weights",),
}


@dataclass(frozen=True)
class FactorSpec:
    """A scalar law from the closed family set.

    Use the classmethod constructors rather than building instances by hand.
    """

    family: str
    params: tuple = ()
    components: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown distribution family {self.family!r}")
        if len(self.params) != len(_PARAMS[self.family]) and self.family != "mixture":
            raise SpecError(f"{self.family} expects parameters {_PARAMS[self.family]}")
        if self.family == "centered_gamma":
            shape, scale = self.params
            if shape <= 0 or scale <= 0:
                raise SpecError("centered_gamma needs positive shape and scale")
        elif self.family == "centered_exponential":
            if self.params[0] <= 0:
                raise SpecError("centered_exponential needs a positive rate")
        elif self.family == "gaussian":
            if self.params[0] < 0:
                raise SpecError("gaussian sigma must be nonnegative")
        elif self.family == "two_point":
            if not 0.0 < self.params[0] < 1.0:
                raise SpecError("two_point probability must lie in (0, 1)")
        elif self.family == "mixture":
            w = np.asarray(self.params, dtype=float)
            if len(w) != len(self.components) or len(w) == 0:
                raise SpecError("mixture needs one weight per component")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise SpecError("mixture weights must be nonnegative and sum to 1")

    # -- constructors -------------------------------------------------------

    @classmethod
    def centered_gamma(cls, shape, scale):
        return cls("centered_gamma", (float(shape), float(scale)))

    @classmethod
    def centered_exponential(cls, rate=1.0):
        return cls("centered_exponential", (float(rate),))

    @classmethod
    def gaussian(cls, sigma=1.0):
        return cls("gaussian", (float(sigma),))

    @classmethod
    def two_point(cls, p, a, b):
        """Value ``a`` with probability ``p``, ``b`` otherwise (not recentred)."""
        return cls("two_point", (float(p), float(a), float(b)))

    @classmethod
    def centered_two_point(cls, p, gap=1.0):
        """Two-point law with zero mean: support {-(1-p) gap, p gap}."""
        return cls.two_point(p, (1.0 - p) * gap, -p * gap)

    @classmethod
    def mixture(cls, weights, components):
        return cls("mixture", tuple(float(w) for w in weights), tuple(components))

    # -- moments ------------------------------------------------------------

    def raw_moment(self, k: int) -> float:
        """E[X^k] for k in {1, 2, 3}."""
        if k not in (1, 2, 3):
            raise ArgumentError("only raw moments of order 1..3 are available")
        f = self.family
        if f in ("centered_gamma", "centered_exponential"):
            shape, scale = self._gamma_params()
            return (0.0, shape * scale**2, 2.0 * shape * scale**3)[k - 1]
        if f == "gaussian":
            return (0.0, self.params[0] ** 2, 0.0)[k - 1]
        if f == "two_point":
            p, a, b = self.params
            return p * a**k + (1.0 - p) * b**k
        return float(sum(w * c.raw_moment(k) for w, c in zip(self.params, self.components)))

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        return self.raw_moment(2) - self.raw_moment(1) ** 2

    @property
    def third_moment(self) -> float:
        """Raw third moment E[X^3]; equals the central one when the mean is zero."""
        return self.raw_moment(3)

    @property
    def is_degenerate(self) -> bool:
        return self.family == "gaussian" and self.params[0] == 0.0

    def _gamma_params(self):
        if self.family == "centered_exponential":
            return 1.0, 1.0 / self.params[0]
        return self.params

    # -- transforms ---------------------------------------------------------

    def cf(self, t):
        """Characteristic function E[exp(i t X)], vectorised over ``t``."""
        t = np.asarray(t, dtype=float)
        f = self.family
        if f in ("centered_gamma", "centered_exponential"):
            shape, scale = self._gamma_params()
            return np.exp(-1j * t * shape * scale - shape * np.log(1.0 - 1j * scale * t))
        if f == "gaussian":
            return np.exp(-0.5 * (self.params[0] * t) ** 2) + 0j
        if f == "two_point":
            p, a, b = self.params
            return p * np.exp(1j * t * a) + (1.0 - p) * np.exp(1j * t * b)
        return sum(w * c.cf(t) for w, c in zip(self.params, self.components))

    def cf_deriv(self, t):
        """d/dt of the characteristic function, i.e. E[i X exp(i t X)]."""
        t = np.asarray(t, dtype=float)
        f = self.family
        if f in ("centered_gamma", "centered_exponential"):
            shape, scale = self._gamma_params()
            return self.cf(t) * (-1j * shape * scale + 1j * shape * scale / (1.0 - 1j * scale * t))
        if f == "gaussian":
            return -(self.params[0] ** 2) * t * self.cf(t)
        if f == "two_point":
            p, a, b = self.params
            return 1j * (p * a * np.exp(1j * t * a) + (1.0 - p) * b * np.exp(1j * t * b))
        return sum(w * c.cf_deriv(t) for w, c in zip(self.params, self.components))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        f = self.family
        if f in ("centered_gamma", "centered_exponential"):
            shape, scale = self._gamma_params()
            return stats.gamma.pdf(x + shape * scale, shape, scale=scale)
        if f == "gaussian" and self.params[0] > 0:
            return stats.norm.pdf(x, scale=self.params[0])
        if f == "mixture":
            return sum(w * c.pdf(x) for w, c in zip(self.params, self.components))
        raise UnsupportedSpecError(f"{f} law has no density")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        f = self.family
        if f == "centered_exponential":
            rate = self.params[0]
            return rng.exponential(1.0 / rate, n) - 1.0 / rate
        if f == "centered_gamma":
            shape, scale = self.params
            return rng.gamma(shape, scale, n) - shape * scale
        if f == "gaussian":
            return rng.normal(0.0, 1.0, n) * self.params[0]
        if f == "two_point":
            p, a, b = self.params
            return np.where(rng.random(n) < p, a, b)
        idx = rng.choice(len(self.components), size=n, p=np.asarray(self.params))
        draws = np.stack([c.sample(rng, n) for c in self.components])
        return draws[idx, np.arange(n)]

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        if self.family == "mixture":
            return {
                "family": "mixture",
                "weights": list(self.params),
                "components": [c.to_dict() for c in self.components],
            }
        return {"family": self.family, **dict(zip(_PARAMS[self.family], self.params))}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorSpec":
        try:
            family = d["family"]
        except (KeyError, TypeError):
            raise SpecError(f"law description needs a 'family' tag: {d!r}") from None
        if family not in FAMILIES:
            raise SpecError(f"unknown distribution family {family!r}")
        if family == "mixture":
            comps = tuple(cls.from_dict(c) for c in d.get("components", ()))
            return cls.mixture(d.get("weights", ()), comps)
        try:
            params = tuple(float(d[k]) for k in _PARAMS[family])
        except KeyError as exc:
            raise SpecError(f"{family} is missing parameter {exc.args[0]!r}") from None
        return cls(family, params)


@dataclass(frozen=True, eq=False)
class ErrorSpec:
    """Error law of one block: ``eps = mixing @ u`` with independent coordinates ``u``."""

    base: tuple
    mixing: np.ndarray

    def __post_init__(self):
        mixing = np.array(self.mixing, dtype=float, ndmin=2)
        if mixing.shape != (len(self.base), len(self.base)):
            raise DimensionError(
                f"error mixing matrix must be {len(self.base)}x{len(self.base)}, got {mixing.shape}"
            )
        mixing.setflags(write=False)
        object.__setattr__(self, "base", tuple(self.base))
        object.__setattr__(self, "mixing", mixing)

    @classmethod
    def gaussian(cls, cov) -> "ErrorSpec":
        """Correlated Gaussian errors with covariance ``cov`` (PSD, may be singular)."""
        cov = np.array(cov, dtype=float, ndmin=2)
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        return cls(tuple(FactorSpec.gaussian(1.0) for _ in range(cov.shape[0])), root)

    @classmethod
    def zero(cls, dim: int) -> "ErrorSpec":
        return cls(tuple(FactorSpec.gaussian(1.0) for _ in range(dim)), np.zeros((dim, dim)))

    @property
    def dim(self) -> int:
        return len(self.base)

    @property
    def mean(self) -> np.ndarray:
        return self.mixing @ np.array([b.mean for b in self.base])

    @property
    def covariance(self) -> np.ndarray:
        var = np.array([b.variance for b in self.base])
        return (self.mixing * var) @ self.mixing.T

    def to_dict(self) -> dict:
        return {"base": [b.to_dict() for b in self.base], "mixing": self.mixing.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSpec":
        if "cov" in d:
            return cls.gaussian(d["cov"])
        try:
            return cls(tuple(FactorSpec.from_dict(b) for b in d["base"]), d["mixing"])
        except KeyError as exc:
            raise SpecError(f"error block is missing {exc.args[0]!r}") from None


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Ground-truth generative model.

    ``factors`` are independent primitive laws. With ``factor_mixing`` unset
    they *are* the latent factors; otherwise ``X* = factor_mixing @ c`` with
    ``c`` the primitive vector (shared-component dependence, e.g.
    ``[[1, 1, 0], [0, 1, 1]]`` gives X*_1 = A + B, X*_2 = B + C).
    """

    loadings: tuple
    factors: tuple
    errors: tuple
    factor_mixing: np.ndarray | None = None

    def __post_init__(self):
        mats = []
        for m in self.loadings:
            m = np.array(m, dtype=float, ndmin=2)
            m.setflags(write=False)
            mats.append(m)
        object.__setattr__(self, "loadings", tuple(mats))
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "errors", tuple(self.errors))
        if self.factor_mixing is not None:
            s = np.array(self.factor_mixing, dtype=float, ndmin=2)
            s.setflags(write=False)
            object.__setattr__(self, "factor_mixing", s)

    @property
    def L(self) -> int:
        return self.loadings[0].shape[1]

    @property
    def K(self) -> tuple:
        return tuple(m.shape[0] for m in self.loadings)

    @property
    def independent(self) -> bool:
        return self.factor_mixing is None

    @property
    def latent_map(self) -> np.ndarray:
        """Matrix S with X* = S c over the primitive factor components c."""
        if self.factor_mixing is None:
            return np.eye(len(self.factors))
        return np.asarray(self.factor_mixing)

    def check_dimensions(self):
        if len(self.loadings) != 3 or len(self.errors) != 3:
            raise DimensionError("a model has exactly three measurement blocks")
        L = self.L
        for i, m in enumerate(self.loadings):
            if m.ndim != 2 or m.shape[1] != L:
                raise DimensionError(f"M{i + 1} has shape {m.shape}; expected (K, {L})")
            if not np.all(np.isfinite(m)):
                raise DimensionError(f"M{i + 1} has non-finite entries")
        for i, (m, e) in enumerate(zip(self.loadings, self.errors)):
            if e.dim != m.shape[0]:
                raise DimensionError(f"error block {i + 1} has dim {e.dim}, M{i + 1} has {m.shape[0]} rows")
        s = self.latent_map
        if s.shape != (L, len(self.factors)):
            raise DimensionError(f"factor map has shape {s.shape}; expected ({L}, {len(self.factors)})")

    # -- primitive representation --------------------------------------------

    @property
    def primitives(self) -> tuple:
        """Independent primitive laws Z = (c, u1, u2, u3)."""
        return self.factors + tuple(b for e in self.errors for b in e.base)

    def linear_maps(self) -> dict:
        """Matrices expressing model quantities as linear maps of Z."""
        s = self.latent_map
        jf = s.shape[1]
        ks = self.K
        J = jf + sum(ks)
        out = {"latent": np.hstack([s, np.zeros((s.shape[0], J - jf))])}
        off = jf
        for i, (m, e) in enumerate(zip(self.loadings, self.errors), start=1):
            eps = np.zeros((ks[i - 1], J))
            eps[:, off : off + ks[i - 1]] = e.mixing
            out[f"eps{i}"] = eps
            out[f"x{i}"] = m @ out["latent"] + eps
            off += ks[i - 1]
        return out

    def primitive_variances(self) -> np.ndarray:
        return np.array([z.variance for z in self.primitives])

    def latent_covariance(self) -> np.ndarray:
        s = self.latent_map
        return (s * np.array([f.variance for f in self.factors])) @ s.T

    def latent_third_moments(self) -> np.ndarray:
        """Full L x L x L tensor E[X*_j X*_k X*_l]."""
        s = self.latent_map
        k3 = np.array([f.third_moment for f in self.factors])
        return np.einsum("jm,km,lm,m->jkl", s, s, s, k3)

    def factor_third_moments(self) -> np.ndarray:
        return np.einsum("lll->l", self.latent_third_moments()).copy()

    def latent_cf(self, u):
        """Joint cf of X* at points ``u`` of shape (m, L)."""
        return linear_cf(self, self.linear_maps()["latent"])(u)

    def factor_cf(self, l: int):
        """Marginal cf of X*_l as a callable of a real array."""
        row = self.linear_maps()["latent"][l : l + 1]
        f = linear_cf(self, row)
        return lambda t: f(np.asarray(t, dtype=float).reshape(-1, 1)).reshape(np.shape(t))

    def factor_pdf(self, l: int):
        if not self.independent:
            raise UnsupportedSpecError("marginal densities are closed-form only for independent factors")
        return self.factors[l].pdf

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "loadings": [m.tolist() for m in self.loadings],
            "factors": [f.to_dict() for f in self.factors],
            "errors": [e.to_dict() for e in self.errors],
        }
        if self.factor_mixing is not None:
            d["factor_mixing"] = self.factor_mixing.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            loadings = [np.array(m, dtype=float, ndmin=2) for m in d["loadings"]]
            factors = tuple(FactorSpec.from_dict(f) for f in d["factors"])
            errors = d.get("errors")
            if errors is None:
                errors = [ErrorSpec.zero(m.shape[0]) for m in loadings]
            else:
                errors = [ErrorSpec.from_dict(e) for e in errors]
        except KeyError as exc:
            raise SpecError(f"model is missing {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"malformed model description: {exc}") from None
        spec = cls(tuple(loadings), factors, tuple(errors), d.get("factor_mixing"))
        spec.check_dimensions()
        return spec


# -- closed-form transforms of linear forms -----------------------------------


def _primitive_cf_table(spec: ModelSpec, args: np.ndarray):
    """cf and cf' of every primitive evaluated at ``args`` (m, J)."""
    prims = spec.primitives
    phi = np.empty(args.shape, dtype=complex)
    dphi = np.empty(args.shape, dtype=complex)
    for j, z in enumerate(prims):
        phi[:, j] = z.cf(args[:, j])
        dphi[:, j] = z.cf_deriv(args[:, j])
    return phi, dphi


def linear_cf(spec: ModelSpec, A) -> Callable:
    """Exact cf of ``A @ Z`` as a function of points ``u`` with shape (m, rows(A))."""
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def cf(u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        phi, _ = _primitive_cf_table(spec, u @ A)
        return np.prod(phi, axis=1)

    return cf


def linear_cross(spec: ModelSpec, A, B) -> Callable:
    """Exact E[i (B Z) exp(i u . A Z)], returned with shape (m, rows(B)).

    This is the gradient at s = 0 of the joint cf of (A Z, B Z) in its
    second argument.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))

    def cross(u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        phi, dphi = _primitive_cf_table(spec, u @ A)
        m, J = phi.shape
        # leave-one-out products via prefix/suffix cumulative products
        prefix = np.ones((m, J + 1), dtype=complex)
        suffix = np.ones((m, J + 1), dtype=complex)
        prefix[:, 1:] = np.cumprod(phi, axis=1)
        suffix[:, :-1] = np.cumprod(phi[:, ::-1], axis=1)[:, ::-1]
        loo = prefix[:, :J] * suffix[:, 1:]
        return (dphi * loo) @ B.T

    return cross


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    status: str  # pass | fail | unverified
    value: float | None = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "value": self.value, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        """True when no check failed; unverified checks do not block."""
        return all(c.status != "fail" for c in self.checks)

    @property
    def failures(self) -> tuple:
        return tuple(c for c in self.checks if c.status == "fail")

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def validate_model(spec: ModelSpec, tol: float = 1e-12) -> ValidationReport:
    """Check the moment and structure assumptions the identification relies on.

    Raises
    ------
    DimensionError
        If loadings, errors and factor map disagree in shape.
    """
    spec.check_dimensions()
    checks = []
    L, K = spec.L, spec.K
    checks.append(Check("dimensions", "pass", None, f"L={L}, K={K}"))

    for j, f in enumerate(spec.factors):
        m = f.mean
        checks.append(Check(f"factor_mean[{j}]", "pass" if abs(m) <= tol else "fail", m))

    third = spec.latent_third_moments()
    for l in range(L):
        v = float(third[l, l, l])
        scale = max(spec.latent_covariance()[l, l], tol) ** 1.5
        ok = abs(v) > tol * max(scale, 1.0)
        checks.append(
            Check(f"factor_third_moment[{l}]", "pass" if ok else "fail", v,
                  "" if ok else "vanishing third moment: loadings are not identified")
        )

    off = third.copy()
    for l in range(L):
        off[l, l, l] = 0.0
    worst = float(np.max(np.abs(off))) if L > 1 else 0.0
    if spec.independent:
        checks.append(Check("cross_third_moments", "pass", 0.0, "zero under independent factors"))
    else:
        checks.append(
            Check("cross_third_moments", "pass" if worst <= tol else "fail", worst,
                  "closed form from the shared-component construction")
        )

    if spec.independent:
        checks.append(Check("conditional_covariance", "pass", None, "implied by independence"))
    else:
        checks.append(Check("conditional_covariance", "unverified", None,
                            "constant conditional second moments not verified for dependent factors"))

    for i, e in enumerate(spec.errors, start=1):
        m = float(np.max(np.abs(e.mean))) if e.dim else 0.0
        checks.append(Check(f"error_mean[{i}]", "pass" if m <= tol else "fail", m))
    checks.append(Check("block_independence", "pass", None, "independent error blocks by construction"))
    return ValidationReport(tuple(checks))


# -- simulation -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned samples of the three measurement blocks (rows are observations)."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    latent: np.ndarray | None = None
    seed: int | None = None
    centered: bool = False

    def __post_init__(self):
        arrays = []
        for x in (self.x1, self.x2, self.x3):
            x = np.array(x, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.ndim != 2:
                raise DimensionError("each block must be an (n, K) array")
            x.setflags(write=False)
            arrays.append(x)
        if len({a.shape[0] for a in arrays}) != 1:
            raise DimensionError("blocks must have equal row counts")
        for name, a in zip(("x1", "x2", "x3"), arrays):
            object.__setattr__(self, name, a)
        if self.latent is not None:
            lat = np.array(self.latent, dtype=float, ndmin=2)
            if lat.shape[0] != arrays[0].shape[0]:
                raise DimensionError("latent rows must align with the blocks")
            lat.setflags(write=False)
            object.__setattr__(self, "latent", lat)

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def blocks(self) -> tuple:
        return (self.x1, self.x2, self.x3)


def _streams(seed: int, count: int):
    ss = np.random.SeedSequence(int(seed) % 2**64)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(count)]


def simulate(spec: ModelSpec, n: int, seed: int, force: bool = False) -> Dataset:
    """Draw ``n`` i.i.d. rows from the model.

    Randomness comes from a counter-based Philox generator; the latent block
    and each error block get their own stream spawned from ``seed``, so the
    output is a pure function of ``(spec, n, seed)``.
    """
    if int(n) < 1:
        raise ArgumentError("n must be a positive integer")
    n = int(n)
    if not force:
        report = validate_model(spec)
        if not report.passed:
            names = ", ".join(c.name for c in report.failures)
            raise AssumptionError(f"model violates identification assumptions: {names}", report=report)
    else:
        spec.check_dimensions()
    rngs = _streams(seed, 4)
    comps = np.column_stack([f.sample(rngs[0], n) for f in spec.factors])
    latent = comps @ spec.latent_map.T if not spec.independent else comps
    blocks = []
    for m, e, rng in zip(spec.loadings, spec.errors, rngs[1:]):
        u = np.column_stack([b.sample(rng, n) for b in e.base])
        blocks.append(latent @ m.T + u @ e.mixing.T)
    return Dataset(*blocks, latent=latent, seed=int(seed))


# -- population moments ---------------------------------------------------------


def population_moment_tensor(spec: ModelSpec, blocks: Sequence[int] = (0, 1, 2)) -> np.ndarray:
    """Exact E[X^a (x) X^b (x) X^c] for a triple of block indices.

    Error terms drop out as long as not all three indices coincide: some
    block then appears alone, and its error is mean zero and independent of
    everything else.
    """
    a, b, c = blocks
    if a == b == c:
        raise UnsupportedSpecError("pure single-block third moments involve error skewness")
    M = spec.loadings
    return np.einsum("ij,uk,vl,jkl->iuv", M[a], M[b], M[c], spec.latent_third_moments())


def population_third_tensor(spec: ModelSpec):
    """Exact third-order cross-moment tensor E[X^1_i X^2_u X^3_v]."""
    from .moments import MomentTensor3

    spec.check_dimensions()
    return MomentTensor3(population_moment_tensor(spec, (0, 1, 2)), provenance="population")


def random_loadings(rng: np.random.Generator, K: int, L: int) -> np.ndarray:
    return rng.standard_normal((K, L))


def matrix_with_kruskal_rank(rng: np.random.Generator, K: int, L: int, kappa: int) -> np.ndarray:
    """Random K x L matrix whose Kruskal rank is ``kappa`` while its rank is min(K, L).

    Column ``kappa`` is placed in the span of the first ``kappa`` columns,
    making that set of kappa + 1 columns dependent; the remaining columns
    are generic. Generic combinations keep every kappa-subset independent.
    """
    if kappa >= min(K, L):
        return rng.standard_normal((K, L))
    m = rng.standard_normal((K, L))
    m[:, kappa] = m[:, :kappa] @ rng.standard_normal(kappa)
    return m


def exponential_factor_spec(loadings, rates=None, error_cov=None) -> ModelSpec:
    """Convenience builder: independent centred-exponential factors, Gaussian errors."""
    loadings = [np.array(m, dtype=float, ndmin=2) for m in loadings]
    L = loadings[0].shape[1]
    rates = [1.0] * L if rates is None else list(rates)
    factors = tuple(FactorSpec.centered_exponential(r) for r in rates)
    if error_cov is None:
        errors = tuple(ErrorSpec.zero(m.shape[0]) for m in loadings)
    else:
        errors = tuple(ErrorSpec.gaussian(c) for c in error_cov)
    return ModelSpec(tuple(loadings), factors, errors)
