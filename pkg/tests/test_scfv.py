import math

import numpy as np
import pytest

import scalar_oracles as oracle
from cdvslite.bench import random_gmm
from cdvslite.scfv import (
    GMMModel,
    ModelMismatch,
    PCAModel,
    SCFVDescriptor,
    components_for_mode,
    fisher_gradients,
    fv_mean_matrix,
    fv_mean_naive,
    gradient_spread,
    mahalanobis_matrix,
    pca_reduce,
    posteriors_matrix,
    posteriors_naive,
    scfv_encode,
    scfv_from_bytes,
    scfv_nbytes,
    scfv_similarity,
    scfv_to_bytes,
    train_gmm,
    train_pca,
)


def instance(rng, n, N, d=32):
    gmm = random_gmm(N, d, rng)
    return rng.normal(0, 1.2, (n, d)), gmm


def rel_close(a, b, rtol=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    assert np.all(np.abs(a - b) / (np.abs(b) + 1e-12) < rtol)


def test_pca_centering_and_canonical_projection(rng):
    basis = np.eye(128)[:32]
    pca = PCAModel(np.zeros(128), basis)
    R = rng.uniform(0, 1, (5, 128))
    np.testing.assert_array_equal(pca_reduce(R, pca), R[:, :32])
    mean = rng.uniform(0, 1, 128)
    assert not pca_reduce([mean], PCAModel(mean, basis)).any()
    assert pca_reduce([], pca).shape == (0, 32)


def test_pca_is_optimal_rank_32(rng):
    A = rng.normal(size=(128, 128)) * np.exp(-np.arange(128) / 20.0)
    X = rng.normal(size=(3000, 128)) @ A.T + 0.3
    pca = train_pca(X)
    np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(32), atol=1e-6)
    rec = pca_reduce(X, pca) @ pca.basis + pca.mean
    err = np.sum((X - rec) ** 2)
    # Eckart-Young: the optimum equals the sum of discarded covariance eigenvalues
    evals = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False, bias=True)))[::-1]
    assert err / len(X) == pytest.approx(evals[32:].sum(), rel=1e-8)


def test_pca_preconditions():
    with pytest.raises(ValueError):
        train_pca(np.zeros((100, 128)))
    bad = np.zeros((2000, 128))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        train_pca(bad)


def test_single_component_posterior_is_one(rng):
    X, gmm = instance(rng, 7, 1)
    np.testing.assert_array_equal(posteriors_naive(X, gmm), 1.0)


def test_symmetric_pair_gives_half():
    gmm = GMMModel([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], np.ones((2, 2)))
    np.testing.assert_allclose(posteriors_naive([[0.0, 3.0]], gmm), [[0.5, 0.5]])


def test_posteriors_match_scalar_oracle(rng):
    X, gmm = instance(rng, 4, 3, 5)
    ref = oracle.posteriors(X.tolist(), gmm.weights.tolist(), gmm.means.tolist(), gmm.sigmas.tolist())
    np.testing.assert_allclose(posteriors_naive(X, gmm), ref, rtol=1e-10)
    np.testing.assert_allclose(posteriors_matrix(X, gmm)[1], ref, rtol=1e-9)


def test_rows_sum_to_one(rng):
    X, gmm = instance(rng, 40, 16)
    np.testing.assert_allclose(posteriors_naive(X, gmm).sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(posteriors_matrix(X, gmm)[1].sum(axis=1), 1.0, atol=1e-9)


def test_naive_gradients_match_triple_loop(rng):
    X, gmm = instance(rng, 50, 8)
    _, gm, gv = oracle.fisher(X.tolist(), gmm.weights.tolist(), gmm.means.tolist(), gmm.sigmas.tolist())
    GM, GV = fisher_gradients(X, gmm, "naive")
    np.testing.assert_allclose(GM, gm, atol=1e-10)
    np.testing.assert_allclose(GV, gv, atol=1e-10)


def test_centred_data_gives_zero_mean_gradient():
    mu = np.linspace(-1, 1, 32)
    gmm = GMMModel([1.0], [mu], np.ones((1, 32)))
    GM, _ = fisher_gradients(np.tile(mu, (6, 1)), gmm, "naive")
    assert not GM.any()


def test_single_term_sum():
    sig = np.full((1, 32), 0.5)
    gmm = GMMModel([1.0], np.zeros((1, 32)), sig)
    GM, GV = fisher_gradients(sig, gmm, "naive")
    np.testing.assert_allclose(GM, 1.0)
    np.testing.assert_allclose(GV, 0.0)


@pytest.mark.parametrize("n,N", [(1, 1), (10, 3), (100, 32), (200, 64)])
def test_matrix_equals_naive(rng, n, N):
    X, gmm = instance(rng, n, N)
    gn, gvn = fisher_gradients(X, gmm, "naive")
    gmx, gvx = fisher_gradients(X, gmm, "matrix")
    rel_close(gmx, gn)
    rel_close(gvx, gvn)


def test_mahalanobis_zero_when_data_equals_means(rng):
    mu = rng.normal(size=(1, 32))
    gmm = GMMModel([1.0], mu, rng.uniform(0.5, 2, (1, 32)))
    P = mahalanobis_matrix(np.tile(mu, (5, 1)), gmm)
    np.testing.assert_allclose(P, 0.0, atol=1e-10)


def test_shape_mismatch_rejected(rng):
    X, gmm = instance(rng, 5, 4)
    with pytest.raises(ValueError):
        fv_mean_matrix(X, np.ones((5, 3)), gmm)
    with pytest.raises(ValueError):
        fv_mean_naive(X[:, :16], np.ones((5, 4)), gmm)
    with pytest.raises(ValueError):
        fisher_gradients(X, gmm, "fast")


def test_spread_examples():
    GM = np.zeros((3, 32))
    GM[0] = 0.7
    GM[1] = np.tile([1.0, -1.0], 16)
    GM[2] = np.arange(32.0)
    d = gradient_spread(GM)
    assert d[0] == 0.0 and d[1] == 1.0
    assert d[2] == pytest.approx(oracle.spread(list(range(32))))


def test_mode_selection_counts():
    assert [components_for_mode(m, 512) for m in ("512B", "1K", "2K", "4K", "8K", "16K")] == [
        32,
        64,
        128,
        256,
        384,
        512,
    ]


def test_encode_mask_and_bits(rng):
    GM = rng.normal(size=(16, 32))
    GV = rng.normal(size=(16, 32))
    full = scfv_encode(GM, GV, 0, n_select=16, with_variance=True)
    assert full.mask.all()
    np.testing.assert_array_equal(full.mean_bits, GM >= 0)
    np.testing.assert_array_equal(full.var_bits, GV >= 0)
    d = scfv_encode(GM, GV, 0, mode="4K")
    assert d.n_selected == 8 and d.var_bits is None
    top = np.argsort(-gradient_spread(GM), kind="stable")[:8]
    assert set(np.nonzero(d.mask)[0]) == set(top)


def test_ties_break_by_index():
    GM = np.tile(np.tile([1.0, -1.0], 16), (6, 1))
    d = scfv_encode(GM, GM, 0, n_select=3)
    np.testing.assert_array_equal(np.nonzero(d.mask)[0], [0, 1, 2])


def test_mask_is_permutation_consistent(rng):
    GM = rng.normal(size=(20, 32)) * rng.uniform(0.1, 3, (20, 1))
    perm = rng.permutation(20)
    a = scfv_encode(GM, GM, 0, mode="2K")
    b = scfv_encode(GM[perm], GM[perm], 0, mode="2K")
    np.testing.assert_array_equal(b.mask, a.mask[perm])


def test_similarity_examples(rng):
    GM = rng.normal(size=(16, 32))
    a = scfv_encode(GM, GM, 0, n_select=16)
    assert scfv_similarity(a, a) == 1.0
    neg = scfv_encode(-GM - 1e-9, GM, 0, n_select=16)
    assert scfv_similarity(a, neg) == -1.0
    m1 = np.zeros(16, bool)
    m1[:4] = True
    x = SCFVDescriptor(m1, np.ones((4, 32), bool), None)
    y = SCFVDescriptor(~m1, np.ones((12, 32), bool), None)
    assert scfv_similarity(x, y) == -1.0


def test_similarity_symmetric_and_bounded(rng):
    for _ in range(20):
        a = scfv_encode(rng.normal(size=(32, 32)), rng.normal(size=(32, 32)), 0, mode="8K")
        b = scfv_encode(rng.normal(size=(32, 32)), rng.normal(size=(32, 32)), 0, mode="8K")
        s = scfv_similarity(a, b)
        assert s == scfv_similarity(b, a) and -1.0 <= s <= 1.0


def test_similarity_oracle_on_common_components():
    mask_a = np.array([1, 1, 0, 1], bool)
    mask_b = np.array([0, 1, 1, 1], bool)
    a = SCFVDescriptor(mask_a, np.array([[1, 1], [1, 0], [0, 0]], bool), None)
    b = SCFVDescriptor(mask_b, np.array([[0, 0], [1, 1], [1, 0]], bool), None)
    # common: component 1 (hamming 1), component 3 (hamming 1)
    assert scfv_similarity(a, b) == pytest.approx((2 - 2 + 2 - 2) / 4 + 0.0)
    assert scfv_similarity(a, b) == 0.0


def test_similarity_rejects_other_gmm(rng):
    GM = rng.normal(size=(8, 32))
    with pytest.raises(ModelMismatch):
        scfv_similarity(scfv_encode(GM, GM, 1), scfv_encode(GM, GM, 2))


@pytest.mark.parametrize("mode", ["512B", "4K", "8K", "16K"])
def test_bytes_round_trip(rng, mode):
    GM, GV = rng.normal(size=(2, 64, 32))
    d = scfv_encode(GM, GV, 7, mode=mode)
    data = scfv_to_bytes(d)
    assert len(data) == scfv_nbytes(64, 32, mode)
    assert scfv_from_bytes(data, 64, 32, mode, 7) == d
    with pytest.raises(ValueError):
        scfv_from_bytes(data[:-1], 64, 32, mode, 7)


def test_gmm_single_gaussian_mean():
    rng = np.random.default_rng(8)
    X = rng.normal(2.0, 0.5, (2000, 4))
    gmm = train_gmm(X, 1, iters=5)
    se = 0.5 / math.sqrt(2000)
    assert np.all(np.abs(gmm.means[0] - X.mean(axis=0)) < 3 * se)
    assert np.all(np.abs(gmm.means[0] - 2.0) < 3 * se * 2)


def test_gmm_two_clusters():
    rng = np.random.default_rng(9)
    X = np.vstack([rng.normal(-5, 1, (600, 3)), rng.normal(5, 1, (600, 3))])
    gmm = train_gmm(X, 2, iters=20)
    np.testing.assert_allclose(gmm.weights, 0.5, atol=0.05)
    assert sorted(np.round(gmm.means[:, 0]).tolist()) == [-5.0, 5.0]


def test_em_monotone_and_deterministic():
    rng = np.random.default_rng(10)
    X = np.vstack([rng.normal(c, 0.7, (200, 4)) for c in (-3, 0, 3)])
    gmm, hist = train_gmm(X, 4, iters=25, seed=3, return_history=True)
    assert all(b >= a - 1e-9 for a, b in zip(hist, hist[1:]))
    again = train_gmm(X, 4, iters=25, seed=3)
    assert gmm.fingerprint() == again.fingerprint()
    assert np.all(gmm.sigmas >= 1e-3)


def test_gmm_preconditions():
    with pytest.raises(ValueError):
        train_gmm(np.zeros((20, 4)), 2)
    with pytest.raises(ValueError):
        train_gmm(np.zeros((100, 4)), 0)
    with pytest.raises(ValueError):
        GMMModel([0.4, 0.4], np.zeros((2, 2)), np.ones((2, 2)))
