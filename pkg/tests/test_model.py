import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from latentid.errors import ArgumentError, AssumptionError, DimensionError, SpecError, UnsupportedSpecError
from latentid.model import (ErrorSpec, FactorSpec, ModelSpec, exponential_factor_spec, linear_cf, linear_cross,
                            matrix_with_kruskal_rank, population_third_tensor, simulate, validate_model)
from latentid.kruskal import kruskal_rank
from latentid.moments import estimate_third_tensor

from helpers import shared_component_spec


def _spec(loadings, factors, noise=0.0):
    loadings = [np.array(m, dtype=float, ndmin=2) for m in loadings]
    errs = tuple(ErrorSpec.gaussian(noise * np.eye(m.shape[0])) if noise else ErrorSpec.zero(m.shape[0])
                 for m in loadings)
    return ModelSpec(tuple(loadings), tuple(factors), errs)


# -- factor laws ------------------------------------------------------------------------


LAWS = [
    FactorSpec.centered_exponential(1.0),
    FactorSpec.centered_exponential(2.5),
    FactorSpec.centered_gamma(1.5, 0.7),
    FactorSpec.gaussian(1.3),
    FactorSpec.centered_two_point(0.3, 2.0),
    FactorSpec.mixture([0.4, 0.6], [FactorSpec.centered_exponential(1.0), FactorSpec.gaussian(0.5)]),
]


@pytest.mark.parametrize("law", LAWS, ids=lambda f: f.family)
def test_factor_mean_is_zero(law):
    assert abs(law.mean) < 1e-14


def _quad(f, law):
    """Integrate over the support pieces of ``law`` (gamma laws start at -shape * scale)."""
    edges = [-40.0, 40.0]
    for c in (law.components or (law,)):
        if c.family in ("centered_gamma", "centered_exponential"):
            shape, scale = c._gamma_params()
            edges.append(-shape * scale)
    edges = sorted(set(edges))
    return sum(integrate.quad(f, a, b, limit=400)[0] for a, b in zip(edges[:-1], edges[1:]))


@pytest.mark.parametrize("law", [l for l in LAWS if l.family != "two_point"], ids=lambda f: f.family)
def test_moments_match_numerical_integration_of_pdf(law):
    for k in (1, 2, 3):
        val = _quad(lambda x: x**k * law.pdf(x), law)
        assert val == pytest.approx(law.raw_moment(k), abs=1e-7)


@pytest.mark.parametrize("law", [l for l in LAWS if l.family != "two_point"], ids=lambda f: f.family)
def test_cf_matches_numerical_fourier_integral(law):
    for t in (-2.0, 0.4, 1.7):
        re = _quad(lambda x: np.cos(t * x) * law.pdf(x), law)
        im = _quad(lambda x: np.sin(t * x) * law.pdf(x), law)
        assert abs(law.cf(t) - (re + 1j * im)) < 1e-7


@pytest.mark.parametrize("law", LAWS, ids=lambda f: f.family)
def test_cf_derivative_matches_finite_difference(law):
    t = np.linspace(-3, 3, 13)
    h = 1e-6
    fd = (law.cf(t + h) - law.cf(t - h)) / (2 * h)
    assert np.max(np.abs(fd - law.cf_deriv(t))) < 1e-6


def test_exponential_third_moment_matches_scipy():
    assert FactorSpec.centered_exponential(1.0).third_moment == pytest.approx(2.0)
    m3 = stats.gamma(1.5, scale=0.7).stats(moments="s") * stats.gamma(1.5, scale=0.7).std() ** 3
    assert FactorSpec.centered_gamma(1.5, 0.7).third_moment == pytest.approx(float(m3))


def test_two_point_has_no_density():
    with pytest.raises(UnsupportedSpecError):
        FactorSpec.centered_two_point(0.5).pdf(0.0)


def test_unknown_family_is_spec_error():
    with pytest.raises(SpecError):
        FactorSpec("cauchy", (1.0,))
    with pytest.raises(SpecError):
        FactorSpec.from_dict({"family": "cauchy", "scale": 1.0})


@pytest.mark.parametrize("law", LAWS, ids=lambda f: f.family)
def test_factor_dict_roundtrip(law):
    back = FactorSpec.from_dict(law.to_dict())
    assert back == law


# -- validation -------------------------------------------------------------------------


def test_gaussian_factor_fails_third_moment_check():
    spec = _spec([[[1.0]]] * 3, [FactorSpec.gaussian(1.0)])
    report = validate_model(spec)
    check = report.get("factor_third_moment[0]")
    assert check.status == "fail"
    assert check.value == 0.0
    assert not report.passed


def test_exponential_factor_passes_with_third_moment_two():
    spec = _spec([[[1.0]]] * 3, [FactorSpec.centered_exponential(1.0)])
    report = validate_model(spec)
    assert report.passed
    assert report.get("factor_third_moment[0]").value == pytest.approx(2.0)


def test_four_by_five_blocks_pass_dimension_checks():
    rng = np.random.default_rng(0)
    spec = exponential_factor_spec([rng.standard_normal((4, 5)) for _ in range(3)])
    report = validate_model(spec)
    assert report.get("dimensions").status == "pass"
    assert report.passed


def test_inconsistent_dimensions_raise():
    with pytest.raises(DimensionError):
        validate_model(_spec([np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2))],
                             [FactorSpec.centered_exponential()] * 2))
    with pytest.raises(DimensionError):
        ModelSpec((np.ones((2, 1)),) * 3, (FactorSpec.centered_exponential(),),
                  (ErrorSpec.zero(3),) * 3).check_dimensions()


def test_dependent_factors_report_cross_moments_and_unverified_covariance():
    report = validate_model(shared_component_spec())
    assert report.get("cross_third_moments").status == "fail"
    # E[X1^2 X2] = E[B^3] = 2 for the shared component B
    assert report.get("cross_third_moments").value == pytest.approx(2.0)
    assert report.get("conditional_covariance").status == "unverified"


def test_error_block_mean_and_covariance():
    cov = np.array([[0.5, 0.2], [0.2, 0.3]])
    e = ErrorSpec.gaussian(cov)
    np.testing.assert_allclose(e.covariance, cov, atol=1e-14)
    assert np.all(e.mean == 0)


# -- simulation -------------------------------------------------------------------------


def test_simulation_is_bit_identical_for_same_seed():
    spec = exponential_factor_spec([np.eye(2)] * 3, error_cov=[0.1 * np.eye(2)] * 3)
    a = simulate(spec, 500, 42)
    b = simulate(spec, 500, 42)
    for x, y in zip(a.blocks + (a.latent,), b.blocks + (b.latent,)):
        assert x.tobytes() == y.tobytes()
    c = simulate(spec, 500, 43)
    assert a.x1.tobytes() != c.x1.tobytes()


def test_zero_noise_reproduces_loadings_times_latent():
    rng = np.random.default_rng(1)
    Ms = [rng.standard_normal((3, 2)) for _ in range(3)]
    data = simulate(exponential_factor_spec(Ms), 200, 5)
    for x, M in zip(data.blocks, Ms):
        np.testing.assert_array_equal(x, data.latent @ M.T)


def test_nonpositive_n_is_argument_error():
    spec = exponential_factor_spec([np.eye(1)] * 3)
    with pytest.raises(ArgumentError):
        simulate(spec, 0, 1)


def test_simulate_refuses_invalid_spec_unless_forced():
    spec = _spec([[[1.0]]] * 3, [FactorSpec.gaussian(1.0)])
    with pytest.raises(AssumptionError):
        simulate(spec, 10, 0)
    assert simulate(spec, 10, 0, force=True).n == 10


def test_triple_product_mean_within_five_standard_errors():
    spec = exponential_factor_spec([np.eye(1)] * 3)
    data = simulate(spec, 100_000, 11)
    prod = data.x1[:, 0] * data.x2[:, 0] * data.x3[:, 0]
    se = prod.std(ddof=1) / np.sqrt(prod.size)
    assert abs(prod.mean() - 2.0) < 5 * se


def test_dependent_simulation_matches_shared_component_construction():
    spec = shared_component_spec()
    data = simulate(spec, 50_000, 3, force=True)
    c = np.cov(data.latent.T)
    # Var(A+B) = 2, Cov(A+B, B+C) = Var(B) = 1
    np.testing.assert_allclose(c, [[2, 1], [1, 2]], atol=0.06)


# -- population moments and transforms --------------------------------------------------


def test_population_tensor_single_term():
    spec = exponential_factor_spec([np.eye(1)] * 3)
    assert population_third_tensor(spec).values[0, 0, 0] == pytest.approx(2.0)


def test_population_tensor_zero_for_symmetric_factors():
    spec = _spec([np.eye(2)] * 3, [FactorSpec.gaussian(1.0)] * 2)
    assert np.all(population_third_tensor(spec).values == 0)


def test_population_tensor_superdiagonal():
    # centred gamma(1.5, 1) has third moment 2 * 1.5 = 3
    spec = _spec([np.eye(2)] * 3, [FactorSpec.centered_exponential(1.0), FactorSpec.centered_gamma(1.5, 1.0)])
    T = population_third_tensor(spec).values
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0], expected[1, 1, 1] = 2.0, 3.0
    np.testing.assert_allclose(T, expected, atol=1e-15)


def test_population_tensor_equals_explicit_triple_sum():
    rng = np.random.default_rng(2)
    Ms = [rng.standard_normal((k, 3)) for k in (2, 3, 4)]
    spec = exponential_factor_spec(Ms, rates=[1.0, 2.0, 0.5])
    k3 = [2.0, 2.0 / 8, 2.0 * 8]
    T = np.zeros((2, 3, 4))
    for i in range(2):
        for u in range(3):
            for v in range(4):
                T[i, u, v] = sum(Ms[0][i, l] * Ms[1][u, l] * Ms[2][v, l] * k3[l] for l in range(3))
    np.testing.assert_allclose(population_third_tensor(spec).values, T, rtol=1e-13, atol=1e-13)


def test_empirical_tensor_converges_at_root_n():
    spec = exponential_factor_spec([np.array([[1.0, 0.5]]), np.array([[0.3, 1.0]]), np.array([[1.0, 1.0]])],
                                   error_cov=[[[0.1]]] * 3)
    pop = population_third_tensor(spec).values
    medians = []
    for n in (1_000, 10_000, 100_000):
        devs = [np.max(np.abs(estimate_third_tensor(simulate(spec, n, 1000 + s)).values - pop)) for s in range(20)]
        medians.append(np.median(devs))
    assert medians[0] > medians[1] > medians[2]
    # a tenfold n should shrink the deviation by roughly sqrt(10)
    assert 1.5 < medians[0] / medians[1] < 7 and 1.5 < medians[1] / medians[2] < 7


def test_linear_cf_of_gaussian_error_block():
    cov = np.array([[0.5, 0.2], [0.2, 0.3]])
    spec = ModelSpec((np.eye(2),) * 3, (FactorSpec.centered_exponential(),) * 2, (ErrorSpec.gaussian(cov),) * 3)
    f = linear_cf(spec, spec.linear_maps()["eps1"])
    t = np.random.default_rng(0).uniform(-2, 2, (20, 2))
    np.testing.assert_allclose(f(t), np.exp(-0.5 * np.einsum("mi,ij,mj->m", t, cov, t)), atol=1e-14)


def test_linear_cross_matches_finite_difference_of_joint_cf():
    spec = shared_component_spec()
    maps = spec.linear_maps()
    A, B = maps["x1"], maps["x2"]
    cross = linear_cross(spec, A, B)
    joint = linear_cf(spec, np.vstack([A, B]))
    u = np.array([[0.3, -0.7], [1.1, 0.2]])
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (joint(np.hstack([u, np.tile(e, (2, 1))])) - joint(np.hstack([u, np.tile(-e, (2, 1))]))) / (2 * h)
        np.testing.assert_allclose(cross(u)[:, k], fd, atol=1e-7)


def test_latent_cf_of_shared_components_closed_form():
    from helpers import shared_component_joint_cf

    spec = shared_component_spec()
    t = np.random.default_rng(4).uniform(-3, 3, (50, 2))
    np.testing.assert_allclose(spec.latent_cf(t), shared_component_joint_cf(t), atol=1e-14)


def test_model_dict_roundtrip():
    spec = shared_component_spec()
    back = ModelSpec.from_dict(spec.to_dict())
    for a, b in zip(spec.loadings, back.loadings):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(spec.factor_mixing, back.factor_mixing)
    assert back.factors == spec.factors


def test_model_from_dict_missing_key():
    with pytest.raises(SpecError):
        ModelSpec.from_dict({"factors": []})


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(2, 7), st.integers(1, 6), st.integers(0, 10_000))
def test_matrix_with_prescribed_kruskal_rank(K, L, kappa, seed):
    kappa = min(kappa, K, L)
    M = matrix_with_kruskal_rank(np.random.default_rng(seed), K, L, kappa)
    assert kruskal_rank(M) == kappa
