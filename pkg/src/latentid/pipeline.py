"""End-to-end identification runs and Monte Carlo studies.

``run_identify`` chains the stages

    validate -> data -> moments -> cpd -> scales -> rank -> latent -> errors
    -> densities -> truth

and writes ``report.json`` plus one CSV per grid. Any library error raised
inside a stage is re-raised with the stage name prefixed to its message
and stored on ``exc.stage``.

Two modes are supported. ``theorem1`` recovers the loadings by CP
decomposition and each factor's cf by the scalar identity applied to a
projected pair of measurements; factors are assumed independent.
``proposition1`` takes loadings with full column rank (usually supplied as
known), recovers the joint cf of possibly dependent factors by the
multivariate identity, and never assumes independence in that step.
"""

from __future__ import annotations

import contextlib
import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .cpd import (LoadingSet, align_factors, als_decompose, jennrich_decompose, pin_scales, residual_by_rank,
                  to_anchor_units)
from .errors import (AssumptionError, ConditioningWarning, ConfigError, DegeneracyError, IdentifiabilityError,
                     LatentIdError, RangeError, TruncationWarning)
from .kotlarski import (CfGrid, GridSpec, deconvolve_errors, invert_cf_to_density, kotlarski_multivariate,
                        kotlarski_multivariate_from_cf, kotlarski_scalar, kotlarski_scalar_from_cf)
from .kruskal import check_proposition1, check_theorem1, numerical_rank
from .model import (Dataset, ModelSpec, linear_cf, linear_cross, population_moment_tensor, simulate,
                    validate_model)
from .moments import MomentTensor3, center, estimate_moment_tensor, estimate_third_tensor
from .projection import build_multivariate_pair, extract_scalar_pair

MODES = ("theorem1", "proposition1")
CPD_METHODS = ("auto", "jennrich", "als", "known")
STOP_STAGES = ("cpd", "latent", None)
CF_METRIC_RANGE = 3.0
_CP_ONLY_CHECKS = ("cross_third_moments", "factor_third_moment")
GAMMA_COSINE_WARN = 0.05

_CPD_DEFAULTS = {"method": "auto", "restarts": 20, "max_iters": 3000, "tol": 1e-12,
                 "jennrich_tol": 1e-8, "refine": True, "loadings": None, "rank_sweep": None}
_GRID_DEFAULTS = {
    "factor": {"T": 4.0, "step": 0.02},
    "joint": {"T": 3.0, "step": 0.1},
    "error": {"T": None, "step": 0.05},
    "n_lambda": 64,
    "max_error_dim": 2,
    "density": {"x_max": 8.0, "n_x": 401, "n_x_2d": 121},
}


def _merge(defaults: dict, given) -> dict:
    out = {}
    given = given or {}
    if not isinstance(given, dict):
        raise ConfigError(f"expected an object, got {type(given).__name__}")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for k, v in defaults.items():
        out[k] = _merge(v, given.get(k)) if isinstance(v, dict) else given.get(k, v)
    return out


@dataclass
class PipelineConfig:
    """Parsed run configuration (see README for the JSON layout)."""

    mode: str = "theorem1"
    model: ModelSpec | None = None
    data: dict | None = None
    n: int | None = None
    seed: int = 0
    L: int | None = None
    cpd: dict = field(default_factory=lambda: dict(_CPD_DEFAULTS))
    grids: dict = field(default_factory=lambda: _merge(_GRID_DEFAULTS, {}))
    kruskal_tol: float = 1e-8
    floor: float = 0.05
    force: bool = False
    marginals_only: bool = False
    stop_after: str | None = None
    out: str | None = None
    _raw_model: dict | None = field(default=None, repr=False)

    _KEYS = ("mode", "model", "data", "n", "seed", "L", "cpd", "grids", "kruskal_tol", "floor", "force",
             "marginals_only", "stop_after", "out")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls._KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        model = None
        if d.get("model") is not None:
            try:
                model = ModelSpec.from_dict(d["model"])
            except LatentIdError as exc:
                raise ConfigError(f"invalid model: {exc}") from None
        cfg = cls(
            mode=d.get("mode", "theorem1"),
            model=model,
            data=d.get("data"),
            n=d.get("n"),
            seed=d.get("seed", 0),
            L=d.get("L"),
            cpd=_merge(_CPD_DEFAULTS, d.get("cpd")),
            grids=_merge(_GRID_DEFAULTS, d.get("grids")),
            kruskal_tol=d.get("kruskal_tol", 1e-8),
            floor=d.get("floor", 0.05),
            force=bool(d.get("force", False)),
            marginals_only=bool(d.get("marginals_only", False)),
            stop_after=d.get("stop_after"),
            out=d.get("out"),
            _raw_model=d.get("model"),
        )
        cfg.check()
        return cfg

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    @property
    def num_factors(self) -> int:
        return self.model.L if self.model is not None else self.L

    @property
    def population(self) -> bool:
        return self.data is None and self.n is None

    def check(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.cpd["method"] not in CPD_METHODS:
            raise ConfigError(f"cpd.method must be one of {CPD_METHODS}")
        if self.stop_after not in STOP_STAGES:
            raise ConfigError(f"stop_after must be one of {STOP_STAGES}")
        if (self.model is None) == (self.data is None):
            raise ConfigError("give exactly one of 'model' (simulate) or 'data' (CSV paths)")
        if self.data is not None:
            if not isinstance(self.data, dict) or sorted(self.data) != ["x1", "x2", "x3"]:
                raise ConfigError("data must map x1, x2, x3 to CSV paths")
            if self.L is None:
                raise ConfigError("L is required when loading data from files")
            if self.n is not None:
                raise ConfigError("n applies to simulation only")
        if self.n is not None and (not isinstance(self.n, int) or self.n < 1):
            raise ConfigError("n must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.L is not None and self.model is not None and self.L != self.model.L:
            raise ConfigError("L disagrees with the model")
        if self.num_factors is None or self.num_factors < 1:
            raise ConfigError("L must be a positive integer")
        if self.mode == "proposition1" and self.num_factors > 3 and not self.marginals_only:
            raise ConfigError("proposition1 with L > 3 needs marginals_only (joint grids are limited to L <= 3)")
        if self.cpd["method"] == "known" and self.model is None and self.cpd["loadings"] is None:
            raise ConfigError("cpd.method 'known' needs a model or cpd.loadings")
        if not 0 < self.floor < 1:
            raise ConfigError("floor must lie in (0, 1)")
        sweep = self.cpd["rank_sweep"]
        if sweep is not None and (not isinstance(sweep, int) or sweep < 1):
            raise ConfigError("cpd.rank_sweep must be a positive integer or null")
        for key in ("factor", "joint"):
            g = self.grids[key]
            try:
                GridSpec(float(g["T"]), float(g["step"]))
            except (LatentIdError, TypeError, ValueError) as exc:
                raise ConfigError(f"grids.{key}: {exc}") from None

    def to_dict(self, include_out: bool = True) -> dict:
        d = {
            "mode": self.mode,
            "model": self._raw_model if self._raw_model is not None else (
                self.model.to_dict() if self.model is not None else None),
            "data": self.data,
            "n": self.n,
            "seed": self.seed,
            "L": self.L,
            "cpd": self.cpd,
            "grids": self.grids,
            "kruskal_tol": self.kruskal_tol,
            "floor": self.floor,
            "force": self.force,
            "marginals_only": self.marginals_only,
            "stop_after": self.stop_after,
        }
        if include_out:
            d["out"] = self.out
        return d


@dataclass
class RecoveredModel:
    """Everything a run produced; truth metrics are present iff a model was given."""

    loadings: LoadingSet
    rank_report: object
    pairs: list = field(default_factory=list)
    multivariate_pair: object = None
    factor_cfs: list = field(default_factory=list)
    joint_cf: CfGrid | None = None
    factor_densities: list = field(default_factory=list)
    joint_density: object = None
    error_cfs: dict = field(default_factory=dict)
    error_densities: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    metrics: dict | None = None
    moments: MomentTensor3 | None = None
    files: dict = field(default_factory=dict)


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except LatentIdError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            msg = exc.args[0] if exc.args else ""
            exc.args = (f"[{name}] {msg}",) + exc.args[1:]
        raise


# -- data ---------------------------------------------------------------------------------


def load_block_csv(path, K=None) -> np.ndarray:
    """Read one block: header ``x1..xK`` then numeric rows."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ConfigError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if header != [f"x{k + 1}" for k in range(len(header))]:
        raise ConfigError(f"{path}: header must be x1..xK, got {rows[0]}")
    try:
        x = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from None
    if x.size == 0 or x.shape[1] != len(header):
        raise ConfigError(f"{path}: no data rows or ragged rows")
    if K is not None and x.shape[1] != K:
        raise ConfigError(f"{path}: expected {K} columns")
    return x


def write_block_csv(path, x):
    x = np.atleast_2d(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(x.shape[1])])
        for row in x:
            w.writerow([repr(float(v)) for v in row])


def _dataset(cfg: PipelineConfig, seed: int):
    if cfg.data is not None:
        blocks = [load_block_csv(cfg.data[f"x{i}"]) for i in (1, 2, 3)]
        if len({b.shape[0] for b in blocks}) != 1:
            raise ConfigError("data files have different row counts")
        return Dataset(*blocks)
    # assumptions were already checked (or waived) by the validate stage
    return simulate(cfg.model, cfg.n, seed, force=True)


# -- truth helpers ---------------------------------------------------------------------------


def _truth_loadings(spec: ModelSpec) -> LoadingSet:
    k3 = np.einsum("lll->l", spec.latent_third_moments()).copy()
    return LoadingSet(*spec.loadings, k3, provenance="truth")


def _known_loadings(cfg: PipelineConfig) -> LoadingSet:
    if cfg.cpd["loadings"] is not None:
        mats = [np.array(m, dtype=float, ndmin=2) for m in cfg.cpd["loadings"]]
        if len(mats) != 3:
            raise ConfigError("cpd.loadings must hold three matrices")
        return LoadingSet(*mats, np.ones(mats[0].shape[1]), provenance="known", scale_pinned=True)
    return replace(_truth_loadings(cfg.model), provenance="known", scale_pinned=True)


# -- stages -----------------------------------------------------------------------------------


def _cpd(cfg, T, L, seed, diag):
    opts = cfg.cpd
    method = opts["method"]
    K1, K2, _ = T.shape
    if method == "known":
        diag["cpd_method"] = "known"
        return _known_loadings(cfg)
    if opts["rank_sweep"]:
        diag["residual_by_L"] = residual_by_rank(T, int(opts["rank_sweep"]), seed)
    if method == "auto":
        unf_ok = L <= min(K1, K2) and all(
            numerical_rank(np.moveaxis(T.values, m, 0).reshape(T.shape[m], -1), 1e-6) >= L for m in (0, 1))
        method = "jennrich" if unf_ok else "als"
        if method == "jennrich":
            try:
                ls = jennrich_decompose(T, L, opts["jennrich_tol"], seed)
            except DegeneracyError as exc:
                diag["cpd_fallback"] = str(exc)
                method = "als"
    elif method == "jennrich":
        ls = jennrich_decompose(T, L, opts["jennrich_tol"], seed)
    if method == "als":
        ls, trace = als_decompose(T, L, seed=seed, max_iters=opts["max_iters"], restarts=opts["restarts"],
                                  tol=opts["tol"])
        diag["als_sweeps"] = len(trace) - 1
    elif opts["refine"] and T.provenance != "population":
        ls, trace = als_decompose(T, L, init=ls, seed=seed, max_iters=opts["max_iters"], tol=opts["tol"])
        diag["als_sweeps"] = len(trace) - 1
        method = "jennrich+als"
    diag["cpd_method"] = method
    diag["cpd_residual"] = ls.residual
    if ls.unidentified:
        raise DegeneracyError(f"factors {list(ls.unidentified)} have vanishing third moments")
    return ls


def _factor_grid(cfg):
    g = cfg.grids["factor"]
    return GridSpec(float(g["T"]), float(g["step"]))


def _joint_grid(cfg):
    g = cfg.grids["joint"]
    return GridSpec(float(g["T"]), float(g["step"]))


def _scalar_cf(cfg, pair, centred, maps):
    grid = _factor_grid(cfg)
    if centred is None:
        a = pair.q1 @ maps["x1"]
        b = pair.q2 @ maps["x2"]
        cf_w1 = linear_cf(cfg.model, a)
        cross = linear_cross(cfg.model, a, b)
        return kotlarski_scalar_from_cf(lambda s: cf_w1(s[:, None]), lambda s: cross(s[:, None])[:, 0],
                                        pair.gamma, grid, cfg.floor)
    return kotlarski_scalar(centred.x1 @ pair.q1, centred.x2 @ pair.q2, pair.gamma, grid, cfg.floor)


def _latent_theorem1(cfg, ls, centred, maps, rec):
    k = rec.rank_report.kappas
    for l in range(ls.L):
        pair = extract_scalar_pair(ls.M1, ls.M2, l, cfg.kruskal_tol, kappas=(k[0], k[1]))
        if not pair.certified:
            raise DegeneracyError(f"projection for factor {l} failed its disjointness certificate "
                                  f"(leakage {pair.leakage:.3g})")
        # |gamma| / (|q2| |m2_l|) is a cosine; near zero the rescaled W2 noise explodes
        cosine = abs(pair.gamma) / (np.linalg.norm(pair.q2) * np.linalg.norm(ls.M2[:, l]))
        rec.diagnostics.setdefault("pair_gamma_cosine", []).append(float(cosine))
        if cosine < GAMMA_COSINE_WARN:
            warnings.warn(ConditioningWarning(f"factor {l}: W2 is nearly orthogonal to the factor "
                                              f"(cosine {cosine:.3g}); its noise is amplified"), stacklevel=2)
        rec.pairs.append(pair)
        rec.factor_cfs.append(_scalar_cf(cfg, pair, centred, maps))


def _latent_proposition1(cfg, ls, centred, maps, rec):
    pair = build_multivariate_pair(ls.M1, ls.M2, ls.M3, cfg.kruskal_tol)
    rec.multivariate_pair = pair
    L = ls.L
    grid = _factor_grid(cfg)
    if centred is None:
        a = pair.Q1 @ maps["x1"]
        b = pair.Q23 @ np.vstack([maps["x2"], maps["x3"]])
        cf_w1, grad = linear_cf(cfg.model, a), linear_cross(cfg.model, a, b)
        if not cfg.marginals_only:
            rec.joint_cf = kotlarski_multivariate_from_cf(cf_w1, grad, _joint_grid(cfg), L,
                                                          cfg.grids["n_lambda"], cfg.floor)
        for l in range(L):
            f1 = linear_cf(cfg.model, a[l : l + 1])
            cr = linear_cross(cfg.model, a[l : l + 1], b[l : l + 1])
            rec.factor_cfs.append(kotlarski_scalar_from_cf(lambda s, f=f1: f(s[:, None]),
                                                           lambda s, c=cr: c(s[:, None])[:, 0], 1.0, grid, cfg.floor))
        return
    w1 = centred.x1 @ pair.Q1.T
    w23 = np.hstack([centred.x2, centred.x3]) @ pair.Q23.T
    if not cfg.marginals_only:
        rec.joint_cf = kotlarski_multivariate(w1, w23, _joint_grid(cfg), cfg.grids["n_lambda"], cfg.floor)
    for l in range(L):
        # each coordinate pair is X*_l plus two independent noises, whatever the factor dependence
        rec.factor_cfs.append(kotlarski_scalar(w1[:, l], w23[:, l], 1.0, grid, cfg.floor))


def _error_axis_T(cfg, M, reach):
    step = float(cfg.grids["error"]["step"])
    T = cfg.grids["error"]["T"]
    if T is None:
        need = np.abs(M).sum(axis=0)
        T = float(np.min(np.where(need > 0, reach / np.where(need > 0, need, 1.0), np.inf)))
        T = math.floor(T / step + 1e-9) * step
    if T < step:
        raise RangeError(f"latent cf is trusted on too small a range to deconvolve errors (T={T:.3g})")
    return GridSpec(float(T), step)


def _errors(cfg, ls, dataset_c, rec):
    """Deconvolve each block's error cf; falls back to per-coordinate marginals for wide blocks."""
    if cfg.mode == "theorem1" or (cfg.marginals_only and cfg.model is not None and cfg.model.independent):
        latent = rec.factor_cfs
        reach = np.array([g.info.get("trusted_T", g.half_widths[0]) for g in latent])
    elif rec.joint_cf is not None:
        latent = rec.joint_cf
        reach = np.array(rec.joint_cf.half_widths)
    else:
        rec.diagnostics["errors"] = "skipped: dependent factors without a joint cf grid"
        return
    maps = None if dataset_c is not None else cfg.model.linear_maps()
    max_dim = int(cfg.grids["max_error_dim"])
    for i, M in enumerate(ls.mats, start=1):
        K = M.shape[0]
        targets = [(f"{i}", slice(None))] if K <= max_dim else [(f"{i}_{k + 1}", slice(k, k + 1)) for k in range(K)]
        for key, rows in targets:
            Mi = M[rows]
            grid = _error_axis_T(cfg, Mi, reach)
            if dataset_c is not None:
                obs = dataset_c.blocks[i - 1][:, rows]
            else:
                obs = linear_cf(cfg.model, maps[f"x{i}"][rows])
            rec.error_cfs[key] = deconvolve_errors(obs, Mi, latent, grid, cfg.floor)


def _density(cf: CfGrid, cfg):
    win = cf.trusted_window()
    if min(a.size for a in win.axes) < 5:
        return None, win
    dg = cfg.grids["density"]
    n_x = dg["n_x"] if cf.dim == 1 else dg["n_x_2d"]
    return invert_cf_to_density(win, x_max=float(dg["x_max"]), n_x=int(n_x)), win


def _densities(cfg, rec):
    rec.factor_densities = [_density(cf, cfg)[0] for cf in rec.factor_cfs]
    if rec.joint_cf is not None and rec.joint_cf.dim <= 2:
        rec.joint_density = _density(rec.joint_cf, cfg)[0]
    for key, cf in rec.error_cfs.items():
        if cf.dim <= 2:
            rec.error_densities[key] = _density(cf, cfg)[0]


# -- truth metrics -------------------------------------------------------------------------------


def _sup_on(cf: CfGrid, truth_fn, radius=CF_METRIC_RANGE, trusted_only=False):
    pts = cf.points()
    sel = np.all(np.abs(pts) <= radius + 1e-12, axis=1)
    if trusted_only:
        sel &= cf.trusted.reshape(-1)
    vals = cf.values.reshape(-1)[sel]
    ok = np.isfinite(vals)
    if not ok.any():
        return None
    return float(np.max(np.abs(vals[ok] - truth_fn(pts[sel][ok]))))


def _l1(a, b, axes):
    out = np.abs(a - b)
    for ax in reversed(axes):
        out = np.trapezoid(out, ax, axis=-1)
    return float(out)


def _truth_metrics(cfg, ls, rec):
    spec = cfg.model
    m = {}
    truth = _truth_loadings(spec)
    if ls.provenance == "known":
        perm = list(range(ls.L))
        scale = np.ones(ls.L)
        m["loading_error"] = float(max(np.max(np.abs(a - b)) for a, b in zip(ls.mats, truth.mats)))
    else:
        al = align_factors(ls, to_anchor_units(truth))
        m["loading_error"] = al.error
        m["loading_error_per_factor"] = list(al.per_factor)
        m["alignment_permutation"] = list(al.permutation)
        # estimated factor l measures c * X*_r with c the true M1 entry at the estimated anchor
        perm = [int(np.flatnonzero(np.array(al.permutation) == l)[0]) for l in range(ls.L)]
        scale = np.array([spec.loadings[0][ls.anchors[l], perm[l]] for l in range(ls.L)])
    m["factor_scale"] = scale.tolist()
    m["factor_match"] = perm

    cf_err, cf_err_trusted, l1_band, l1_raw = [], [], [], []
    for l, cf in enumerate(rec.factor_cfs):
        r, c = perm[l], scale[l]
        true_cf = spec.factor_cf(r)
        fn = lambda p, f=true_cf, c=c: f(c * p[:, 0])
        cf_err.append(_sup_on(cf, fn))
        cf_err_trusted.append(_sup_on(cf, fn, trusted_only=True))
        dens = rec.factor_densities[l] if rec.factor_densities else None
        if dens is None:
            l1_band.append(None)
            l1_raw.append(None)
            continue
        win = cf.trusted_window()
        ref = CfGrid(win.axes, fn(win.points()), "analytic")
        dg = cfg.grids["density"]
        ref_d = invert_cf_to_density(ref, x_max=float(dg["x_max"]), n_x=int(dg["n_x"]))
        l1_band.append(_l1(dens.values, ref_d.values, dens.axes))
        if spec.independent:
            x = dens.axes[0]
            pdf = np.nan_to_num(spec.factors[r].pdf(x / c) / abs(c))
            l1_raw.append(_l1(dens.values, pdf, dens.axes))
        else:
            l1_raw.append(None)
    m["factor_cf_sup_error"] = cf_err
    m["factor_cf_sup_error_trusted"] = cf_err_trusted
    m["factor_density_l1_bandlimited"] = l1_band
    m["factor_density_l1_raw"] = l1_raw
    if rec.joint_cf is not None:
        P = np.eye(ls.L)[:, perm] * scale
        m["joint_cf_sup_error"] = _sup_on(rec.joint_cf, lambda p: spec.latent_cf(p @ P.T))
    maps = spec.linear_maps()
    err = {}
    for key, cf in rec.error_cfs.items():
        parts = key.split("_")
        i = int(parts[0])
        rows = slice(None) if len(parts) == 1 else slice(int(parts[1]) - 1, int(parts[1]))
        f = linear_cf(spec, maps[f"eps{i}"][rows])
        err[key] = _sup_on(cf, f, radius=np.inf, trusted_only=True)
    m["error_cf_sup_error"] = err
    return m


# -- the run ------------------------------------------------------------------------------------


def _derived_seed(seed: int, *path) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, np.uint32)[0])


def run_identify(config, write: bool = True) -> RecoveredModel:
    """Run the full pipeline for ``config`` (a PipelineConfig or a config dict)."""
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.from_dict(config)
    L = cfg.num_factors
    diag = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        warnings.simplefilter("always", ConditioningWarning)
        with _stage("validate"):
            if cfg.model is not None and not cfg.force:
                report = validate_model(cfg.model)
                diag["validation"] = report.to_dict()
                failures = report.failures
                if cfg.cpd["method"] == "known":
                    # third-moment conditions only serve the CP step, which known loadings skip
                    failures = [c for c in failures if not c.name.startswith(_CP_ONLY_CHECKS)]
                if failures:
                    names = ", ".join(c.name for c in failures)
                    raise AssumptionError(f"model violates identification assumptions: {names}", report=report)
        with _stage("data"):
            data = None if cfg.population else _dataset(cfg, _derived_seed(cfg.seed, 1))
            centred = None if data is None else center(data)
            diag["n"] = None if data is None else data.n
        with _stage("moments"):
            if centred is None:
                T = MomentTensor3(population_moment_tensor(cfg.model, (0, 1, 2)), provenance="population")
                t112 = population_moment_tensor(cfg.model, (0, 0, 1))
                t122 = population_moment_tensor(cfg.model, (0, 1, 1))
            else:
                T = estimate_third_tensor(centred, center_data=False)
                t112 = estimate_moment_tensor(centred, (0, 0, 1), center_data=False)
                t122 = estimate_moment_tensor(centred, (0, 1, 1), center_data=False)
        with _stage("cpd"):
            ls = _cpd(cfg, T, L, _derived_seed(cfg.seed, 2), diag)
        with _stage("scales"):
            if not ls.scale_pinned:
                ls = pin_scales(ls, t112, t122)
        with _stage("rank"):
            check = check_theorem1 if cfg.mode == "theorem1" else check_proposition1
            rank = check(*ls.mats, L, cfg.kruskal_tol)
            if not rank.verdict:
                raise IdentifiabilityError(
                    f"{rank.condition} rank condition fails for kappas {list(rank.kappas)} "
                    f"(margin {rank.margin})", margin=rank.margin, report=rank)
            if cfg.mode == "theorem1":
                k = rank.kappas
                if k[0] + k[1] < L + 2:
                    raise IdentifiabilityError(
                        f"kappa1 + kappa2 = {k[0] + k[1]} < L + 2 = {L + 2}; no scalar projection pair",
                        margin=k[0] + k[1] - (L + 2), report=rank)
        rec = RecoveredModel(ls, rank, moments=T, diagnostics=diag)
        if cfg.stop_after != "cpd":
            maps = cfg.model.linear_maps() if centred is None else None
            with _stage("latent"):
                if cfg.mode == "theorem1":
                    _latent_theorem1(cfg, ls, centred, maps, rec)
                else:
                    _latent_proposition1(cfg, ls, centred, maps, rec)
            if cfg.stop_after != "latent":
                with _stage("errors"):
                    _errors(cfg, ls, centred, rec)
                with _stage("densities"):
                    _densities(cfg, rec)
        if cfg.model is not None:
            with _stage("truth"):
                rec.metrics = _truth_metrics(cfg, ls, rec)
    diag["warnings"] = [str(w.message) for w in caught
                        if issubclass(w.category, (TruncationWarning, ConditioningWarning))]
    diag["trusted_T"] = [cf.info.get("trusted_T") for cf in rec.factor_cfs]
    diag["reconstruction_error"] = {k: cf.info.get("reconstruction_error") for k, cf in rec.error_cfs.items()}
    if write and cfg.out:
        write_artifacts(rec, cfg, cfg.out)
    return rec


# -- output -----------------------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def build_report(rec: RecoveredModel, cfg: PipelineConfig) -> dict:
    ls = rec.loadings
    return _clean({
        "tool": {"name": "latentid", "version": __version__},
        "config": cfg.to_dict(include_out=False),
        "loadings": {
            "M1": ls.M1, "M2": ls.M2, "M3": ls.M3, "lambda": ls.lam,
            "anchors": list(ls.anchors) if ls.anchors is not None else None,
            "provenance": ls.provenance, "residual": ls.residual, "scale_pinned": ls.scale_pinned,
        },
        "rank": rec.rank_report.to_dict(),
        "pairs": [p.to_dict() for p in rec.pairs],
        "multivariate_pair": rec.multivariate_pair.to_dict() if rec.multivariate_pair is not None else None,
        "grids": {
            "factor_cf": [dict(cf.info, provenance=cf.provenance, axes=[[a[0], a[-1], a.size] for a in cf.axes])
                          for cf in rec.factor_cfs],
            "error_cf": {k: dict(cf.info, axes=[[a[0], a[-1], a.size] for a in cf.axes])
                         for k, cf in rec.error_cfs.items()},
        },
        "diagnostics": rec.diagnostics,
        "metrics": rec.metrics,
        "files": rec.files,
    })


def write_artifacts(rec: RecoveredModel, cfg: PipelineConfig, out) -> dict:
    """Write report.json and CSVs into ``out``; returns the file map (also stored on ``rec``)."""
    try:
        os.makedirs(out, exist_ok=True)
        files = {}

        def put(kind, name, obj):
            obj.to_csv(os.path.join(out, name))
            files.setdefault(kind, []).append(name)

        if rec.moments is not None:
            put("moments", "moments.csv", rec.moments)
        for l, cf in enumerate(rec.factor_cfs):
            put("factor_cf", f"factor_cf_{l + 1}.csv", cf)
        for l, d in enumerate(rec.factor_densities):
            if d is not None:
                put("factor_density", f"factor_density_{l + 1}.csv", d)
        if rec.joint_cf is not None:
            put("joint_cf", "joint_cf.csv", rec.joint_cf)
        if rec.joint_density is not None:
            put("joint_density", "joint_density.csv", rec.joint_density)
        for k, cf in rec.error_cfs.items():
            put("error_cf", f"error_cf_{k}.csv", cf)
        for k, d in rec.error_densities.items():
            if d is not None:
                put("error_density", f"error_density_{k}.csv", d)
        rec.files = files
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(build_report(rec, cfg), fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {out}: {exc.strerror}") from None
    return files


# -- Monte Carlo ----------------------------------------------------------------------------------


def _replicate(args):
    cfg, n, seed = args
    run = replace(cfg, n=n, seed=seed, stop_after="latent", out=None)
    try:
        rec = run_identify(run, write=False)
    except LatentIdError as exc:
        return {"n": n, "seed": seed, "ok": False, "error": str(exc),
                "loading_error": None, "cf_sup_error": None}
    errs = [e for e in rec.metrics["factor_cf_sup_error"] if e is not None]
    return {"n": n, "seed": seed, "ok": True, "error": "",
            "loading_error": rec.metrics["loading_error"],
            "cf_sup_error": max(errs) if errs else None}


def _summary(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return {"median": None, "q25": None, "q75": None}
    q25, med, q75 = np.percentile(vals, [25, 50, 75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75)}


def run_montecarlo(config, replications: int, n_values=None, threads: int = 1, out=None) -> dict:
    """Repeat the pipeline on fresh simulated samples.

    Replication ``r`` at sample size index ``k`` uses the seed derived from
    ``(master seed, k, r)``. Each replication stops after the latent stage.
    Failures are counted, not raised.
    """
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.from_dict(config)
    if cfg.model is None:
        raise ConfigError("Monte Carlo needs a generative model")
    if int(replications) < 1:
        raise ConfigError("replications must be positive")
    n_values = [cfg.n] if n_values is None else [int(v) for v in n_values]
    if any(v is None or v < 1 for v in n_values):
        raise ConfigError("Monte Carlo needs positive sample sizes")
    jobs = [(cfg, n, _derived_seed(cfg.seed, 100 + k, r)) for k, n in enumerate(n_values) for r in range(replications)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_replicate, jobs))
    else:
        rows = [_replicate(j) for j in jobs]
    for r, row in zip(range(len(rows)), rows):
        row["replication"] = r % replications
    aggregate = []
    for n in n_values:
        sub = [r for r in rows if r["n"] == n]
        aggregate.append({
            "n": n,
            "replications": len(sub),
            "failures": sum(not r["ok"] for r in sub),
            "loading_error": _summary([r["loading_error"] for r in sub]),
            "cf_sup_error": _summary([r["cf_sup_error"] for r in sub]),
        })
    result = _clean({"tool": {"name": "latentid", "version": __version__},
                     "config": cfg.to_dict(include_out=False), "replications": int(replications),
                     "aggregate": aggregate, "runs": rows})
    out = out or cfg.out
    if out:
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "montecarlo.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                cols = ["n", "replication", "seed", "ok", "loading_error", "cf_sup_error", "error"]
                w.writerow(cols)
                for r in rows:
                    w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
            with open(os.path.join(out, "aggregate.json"), "w") as fh:
                json.dump({k: result[k] for k in ("tool", "config", "replications", "aggregate")}, fh,
                          indent=2, allow_nan=False)
                fh.write("\n")
        except OSError as exc:
            raise ConfigError(f"cannot write outputs to {out}: {exc.strerror}") from None
    return result
