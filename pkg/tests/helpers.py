"""Model builders shared by the test modules."""

import numpy as np

from latentid.model import ErrorSpec, FactorSpec, ModelSpec

EXP1 = {"family": "centered_exponential", "rate": 1.0}
WITHIN_COV = [[0.16, 0.06], [0.06, 0.16]]
THEOREM1_LOADINGS = [
    [[1.0, 0.5], [0.3, 1.0]],
    [[1.0, -0.4], [0.6, 1.0]],
    [[0.8, 0.5], [-0.5, 1.0]],
]


def theorem1_model_dict():
    """L=2, K=(2,2,2), centred Exp(1) factors, correlated Gaussian errors (sd 0.4)."""
    return {"loadings": THEOREM1_LOADINGS, "factors": [EXP1, EXP1], "errors": [{"cov": WITHIN_COV}] * 3}


def theorem1_config(n=100_000, seed=7, **extra):
    cfg = {"mode": "theorem1", "model": theorem1_model_dict(), "n": n, "seed": seed}
    cfg.update(extra)
    return cfg


def shared_component_spec(loadings=None, noise_var=0.09):
    """X*_1 = A + B, X*_2 = B + C with A, B, C centred Exp(1)."""
    if loadings is None:
        loadings = [[[1.0, 0.4], [-0.3, 1.0]], [[0.9, -0.5], [0.4, 1.1]], [[1.2, 0.3], [-0.6, 0.8]]]
    exp = FactorSpec.centered_exponential(1.0)
    errs = tuple(ErrorSpec.gaussian(noise_var * np.eye(len(m))) for m in loadings)
    return ModelSpec(tuple(np.array(m) for m in loadings), (exp, exp, exp), errs, [[1, 1, 0], [0, 1, 1]])


def shared_component_joint_cf(t):
    """Closed-form joint cf of (A + B, B + C): phi(t1) phi(t1 + t2) phi(t2)."""
    phi = lambda s: np.exp(-1j * s) / (1 - 1j * s)
    t = np.atleast_2d(t)
    return phi(t[:, 0]) * phi(t[:, 0] + t[:, 1]) * phi(t[:, 1])


def random_exp_spec(rng, K, L, noise=0.1, rates=None):
    Ms = [rng.standard_normal((k, L)) for k in K]
    rates = rng.uniform(0.7, 1.5, L) if rates is None else rates
    factors = tuple(FactorSpec.centered_exponential(float(r)) for r in rates)
    errs = tuple(ErrorSpec.gaussian(noise * np.eye(k)) for k in K)
    return ModelSpec(tuple(Ms), factors, errs)
