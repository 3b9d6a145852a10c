import math

import numpy as np
import pytest
import scipy.linalg

from featlearn.baselines import (OMP1, PCA, KernelPCA, dead_output_fraction, kpca_fit,
                                 mean_pairwise_distance, omp1_encode, omp1_fit, pca_fit,
                                 pca_transform)
from featlearn.errors import ConfigError, DataError, NumericError


def align_signs(A, B):
    """Flip columns of B to match A's sign."""
    s = np.sign(np.sum(A * B, axis=0))
    s[s == 0] = 1
    return B * s


# -- PCA ------------------------------------------------------------------------

def test_pca_line():
    X = np.array([[t, t] for t in np.linspace(-2, 3, 11)])
    m = pca_fit(X, 2)
    np.testing.assert_allclose(np.abs(m.components_[0]), [1 / math.sqrt(2)] * 2, atol=1e-12)
    assert abs(m.eigenvalues_[1]) < 1e-12


def test_pca_full_reconstruction(rng):
    X = rng.normal(size=(30, 6))
    m = PCA(6).fit(X)
    np.testing.assert_allclose(m.inverse_transform(m.transform(X)), X, atol=1e-8)
    np.testing.assert_allclose(m.components_ @ m.components_.T, np.eye(6), atol=1e-8)
    assert np.all(np.diff(m.eigenvalues_) <= 0) and np.all(m.eigenvalues_ >= 0)


def test_pca_matches_svd_oracle(rng):
    X = rng.normal(size=(50, 10)) @ rng.normal(size=(10, 10))
    m = PCA(10).fit(X)
    Xc = X - X.mean(axis=0)
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    oracle = Xc @ Vt.T
    np.testing.assert_allclose(align_signs(oracle, pca_transform(m, X)), oracle, atol=1e-8)


def test_pca_transform_properties(rng):
    X = rng.normal(size=(80, 5)) * [3, 2, 1, 0.5, 0.1]
    m = PCA(4).fit(X)
    assert np.allclose(m.transform(m.mean_[None]), 0)
    Z = m.transform(X)
    cov = np.cov(Z, rowvar=False)
    np.testing.assert_allclose(np.diag(cov), m.eigenvalues_, atol=1e-8)
    np.testing.assert_allclose(cov - np.diag(np.diag(cov)), 0, atol=1e-8)


def test_pca_sign_convention(rng):
    m = PCA(3).fit(rng.normal(size=(20, 4)))
    for c in m.components_:
        assert c[np.argmax(np.abs(c))] > 0


def test_pca_bad_n():
    with pytest.raises(ConfigError):
        PCA(5).fit(np.zeros((3, 4)) + np.arange(4))


# -- kernel PCA -------------------------------------------------------------------

def rbf(a, b, ell):
    return math.exp(-sum((x - y) ** 2 for x, y in zip(a, b)) / (2 * ell ** 2))


def kpca_oracle(X, ell, n, X_new):
    M = len(X)
    K = np.array([[rbf(X[i], X[j], ell) for j in range(M)] for i in range(M)])
    H = np.eye(M) - np.ones((M, M)) / M
    Kc = H @ K @ H
    w, V = scipy.linalg.eig(Kc)
    w, V = w.real, V.real
    order = np.argsort(-w)[:n]
    w, V = w[order], V[:, order] / np.linalg.norm(V[:, order], axis=0)
    alphas = V / np.sqrt(w)
    Kx = np.array([[rbf(x, X[j], ell) for j in range(M)] for x in X_new])
    Kxc = np.empty_like(Kx)
    for a in range(len(X_new)):
        for i in range(M):
            Kxc[a, i] = Kx[a, i] - Kx[a].mean() - K[:, i].mean() + K.mean()
    return Kc @ alphas, Kxc @ alphas


def test_auto_lengthscale_pair():
    m = KernelPCA(1).fit(np.array([[0.0], [2.0]]))
    assert m.lengthscale_ == 2.0


def test_auto_lengthscale_toy():
    X = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]])
    hand = (5.0 + 1.0 + math.sqrt(9 + 9)) / 3
    assert mean_pairwise_distance(X) == pytest.approx(hand, abs=1e-12)
    assert KernelPCA(2).fit(X).lengthscale_ == pytest.approx(hand, abs=1e-12)


def test_kpca_matches_dense_oracle(rng):
    X = rng.normal(size=(8, 3))
    Xn = rng.normal(size=(5, 3))
    m = kpca_fit(X, 4)
    train_o, new_o = kpca_oracle(X, m.lengthscale_, 4, Xn)
    train = align_signs(train_o, m.transform(X))
    np.testing.assert_allclose(train, train_o, atol=1e-8)
    s = np.sign(np.sum(train_o * m.transform(X), axis=0))
    np.testing.assert_allclose(m.transform(Xn) * s, new_o, atol=1e-8)


def test_kpca_duplicates(rng):
    X = rng.normal(size=(10, 2))
    X[3] = X[7]
    m = KernelPCA(5).fit(X)
    Z = m.transform(X)
    np.testing.assert_allclose(Z[3], Z[7], atol=1e-12)
    np.testing.assert_allclose(m.transform(X[[7]])[0], Z[7], atol=1e-12)


def test_kpca_linear_limit(rng):
    X = rng.normal(size=(30, 4)) * [3, 1, 0.5, 0.2]
    diam = np.max(scipy.spatial.distance.pdist(X))
    k = KernelPCA(1, lengthscale=1e6 * diam).fit(X).transform(X)[:, 0]
    p = PCA(1).fit(X).transform(X)[:, 0]
    assert abs(np.corrcoef(k, p)[0, 1]) > 0.999


def test_kpca_degenerate_lengthscale():
    with pytest.raises(NumericError):
        KernelPCA(1).fit(np.ones((4, 2)))


def test_kpca_subsample_cap(rng):
    m = KernelPCA(3, max_samples=50, random_state=1).fit(rng.normal(size=(200, 2)))
    assert m.X_fit_.shape == (50, 2)


# -- OMP-1 ------------------------------------------------------------------------

def test_omp1_two_directions():
    X = np.array([[1.0, 0.0], [0.0, 1.0]] * 10)
    m = omp1_fit(X, 2, epochs=2, seed=0)
    D = np.abs(m.components_)
    assert {tuple(np.round(r, 12)) for r in D} == {(1.0, 0.0), (0.0, 1.0)}


def test_omp1_rank_one(rng):
    d = np.array([3.0, -4.0]) / 5
    X = rng.normal(size=(30, 1)) * d
    X = X[np.abs(X[:, 0]) > 1e-3]
    m = OMP1(1, 3).fit(X)
    np.testing.assert_allclose(np.abs(m.components_[0]), np.abs(d), atol=1e-12)


def test_omp1_unit_atoms_and_monotone_error(rng):
    X = rng.normal(size=(300, 6)) @ rng.normal(size=(6, 6))
    m = OMP1(12, 15, random_state=2).fit(X)
    np.testing.assert_allclose(np.linalg.norm(m.components_, axis=1), 1.0, atol=1e-10)
    assert np.all(np.diff(m.errors_) <= 1e-9)


def test_omp1_encoding(rng):
    X = rng.normal(size=(40, 5))
    m = OMP1(4, 3).fit(X)
    codes = omp1_encode(m, X)
    assert np.all((codes != 0).sum(axis=1) <= 1)
    e = omp1_encode(m, m.components_[[2]])
    np.testing.assert_allclose(e, [[0, 0, 1, 0]], atol=1e-12)


def test_omp1_orthogonal_input():
    m = OMP1(2, 1).fit(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(omp1_encode(m, np.array([[0.0, 0.0, 1.0]])), [[0.0, 0.0]])


def test_omp1_dead_atoms_counted():
    # three identical samples and three atoms: after the first assignment two atoms are empty
    X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = OMP1(4, 2, random_state=0).fit(X)
    assert m.dead_counts_[0] >= 1
    assert 0.0 <= m.dead_fraction_ <= 1.0


def test_omp1_errors():
    with pytest.raises(ConfigError):
        OMP1(5).fit(np.eye(3))
    with pytest.raises(DataError):
        OMP1(1).fit(np.zeros((3, 2)))


def test_dead_output_fraction():
    codes = np.array([[0, 2.0, 0], [0, -3.0, 0], [1.0, 0, 0]])
    assert dead_output_fraction(codes) == pytest.approx(1 / 3)
