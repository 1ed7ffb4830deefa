import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentid.errors import ArgumentError
from latentid.kruskal import (check_proposition1, check_theorem1, kruskal_rank, max_identifiable_factors,
                              numerical_rank)
from latentid.model import matrix_with_kruskal_rank


def _kruskal_oracle(M):
    """Independent brute force: largest k with every k-subset of full rank by matrix_rank."""
    L = M.shape[1]
    best = 0
    for k in range(1, L + 1):
        if all(np.linalg.matrix_rank(M[:, list(c)]) == k for c in itertools.combinations(range(L), k)):
            best = k
        else:
            break
    return best


def test_identity():
    assert kruskal_rank(np.eye(3)) == 3


def test_duplicate_columns():
    M = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0], [0.0, 0.0, 3.0]])
    assert kruskal_rank(M) == 1


def test_zero_column_gives_zero():
    assert kruskal_rank(np.hstack([np.eye(2), np.zeros((2, 1))])) == 0


def test_empty_matrix_is_argument_error():
    with pytest.raises(ArgumentError):
        kruskal_rank(np.zeros((0, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_generic_four_by_five_against_brute_force(seed):
    M = np.random.default_rng(seed).standard_normal((4, 5))
    assert kruskal_rank(M) == 4 == _kruskal_oracle(M)


@pytest.mark.parametrize("seed", range(100))
def test_permutation_and_scaling_invariance(seed):
    rng = np.random.default_rng(seed)
    K, L = rng.integers(2, 6), rng.integers(2, 7)
    kappa = int(rng.integers(1, min(K, L) + 1))
    M = matrix_with_kruskal_rank(rng, K, L, kappa)
    perm = rng.permutation(L)
    scale = rng.uniform(0.5, 2.0, L) * rng.choice([-1, 1], L)
    k = kruskal_rank(M)
    assert k == _kruskal_oracle(M)
    assert kruskal_rank(M[:, perm] * scale) == k
    assert k <= numerical_rank(M)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_equals_rank_for_full_column_rank(K, L, seed):
    M = np.random.default_rng(seed).standard_normal((K, L))
    if numerical_rank(M) == L:
        assert kruskal_rank(M) == L
    assert kruskal_rank(M) <= numerical_rank(M)


def test_theorem1_four_by_five():
    rng = np.random.default_rng(0)
    r = check_theorem1(*(rng.standard_normal((4, 5)) for _ in range(3)), L=5)
    assert r.kappas == (4, 4, 4)
    assert r.margin == 0 and r.verdict
    assert r.details["pairwise"]["12"] == {"sum": 8, "margin": 1}


def test_theorem1_kappa_six_l_eight():
    rng = np.random.default_rng(1)
    mats = [matrix_with_kruskal_rank(rng, 7, 8, 6) for _ in range(3)]
    r = check_theorem1(*mats, L=8)
    assert r.kappas == (6, 6, 6)
    assert r.ranks == (7, 7, 7)
    assert r.margin == 0 and r.verdict


def test_theorem1_padded_identity_fails():
    M = np.hstack([np.eye(2), np.zeros((2, 1))])
    r = check_theorem1(M, M, M, L=3)
    assert r.kappas == (0, 0, 0)
    assert not r.verdict and r.margin == -8


def test_theorem1_column_mismatch():
    with pytest.raises(ArgumentError):
        check_theorem1(np.eye(2), np.eye(2), np.ones((2, 3)), L=2)


@pytest.mark.parametrize("seed", range(5))
def test_theorem1_verdict_invariant_under_common_permutation(seed):
    rng = np.random.default_rng(seed)
    mats = [matrix_with_kruskal_rank(rng, 3, 4, int(rng.integers(1, 4))) for _ in range(3)]
    perm = rng.permutation(4)
    a = check_theorem1(*mats, L=4)
    b = check_theorem1(*(m[:, perm] for m in mats), L=4)
    assert (a.verdict, a.margin, a.kappas) == (b.verdict, b.margin, b.kappas)


def test_report_includes_loose_tolerance_kappas():
    M = np.array([[1.0, 1.0], [0.0, 5e-8]])
    r = check_theorem1(M, np.eye(2), np.eye(2), L=2)
    assert r.kappas[0] == 2 and r.kappas_loose[0] == 1
    assert r.to_dict()["kappas_at_10x_tol"] == [1, 2, 2]


def test_proposition1_identities():
    r = check_proposition1(np.eye(2), np.eye(2), np.eye(2), L=2)
    assert r.verdict and r.margin == 0
    assert r.details["rank_M1"] == 2 and r.details["rank_M2M3"] == 2


def test_proposition1_rank_deficient_m1():
    M1 = np.array([[1.0, 2.0], [2.0, 4.0]])
    r = check_proposition1(M1, np.eye(2), np.eye(2), L=2)
    assert not r.verdict
    assert r.margin == 0


def test_proposition1_wide_blocks_fail():
    rng = np.random.default_rng(2)
    r = check_proposition1(rng.standard_normal((3, 3)), rng.standard_normal((2, 3)), rng.standard_normal((2, 3)), L=3)
    assert r.kappas[1:] == (2, 2)
    assert r.margin == -1 and not r.verdict


@pytest.mark.parametrize("K, expected", [((4, 4, 4), 5), ((7, 7, 7), 9), ((1, 1, 1), 0), ((2, 3, 4), 3)])
def test_max_identifiable_factors(K, expected):
    assert max_identifiable_factors(*K) == expected


def test_max_identifiable_factors_bad_input():
    with pytest.raises(ArgumentError):
        max_identifiable_factors(0, 1, 1)
