"""Reference unsupervised feature extractors: PCA, RBF kernel PCA and OMP-1."""

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .errors import ConfigError, DataError, NumericError


def _fix_signs(vectors):
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


class PCA(BaseEstimator, TransformerMixin):
    """Principal components from the eigendecomposition of the sample covariance.

    Fitted attributes: ``mean_`` (D,), ``components_`` (n_components, D) with
    orthonormal rows, ``eigenvalues_`` in descending order (unbiased covariance,
    so the variance of score i over the training data equals ``eigenvalues_[i]``).
    """

    def __init__(self, n_components=120):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_matrix(X, min_samples=2)
        M, D = X.shape
        if not 1 <= self.n_components <= min(M, D):
            raise ConfigError(f"n_components={self.n_components} outside [1, {min(M, D)}]")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = Xc.T @ Xc / (M - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][: self.n_components]
        self.eigenvalues_ = np.clip(evals[order], 0.0, None)
        self.components_ = _fix_signs(evecs[:, order]).T
        self.n_features_in_ = D
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_matrix(X, self.n_features_in_)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        return np.asarray(Z) @ self.components_ + self.mean_


def mean_pairwise_distance(X):
    """Average Euclidean distance over all unordered pairs of rows."""
    X = check_matrix(X, min_samples=2)
    return float(pdist(X).mean())


class KernelPCA(BaseEstimator, TransformerMixin):
    """RBF kernel PCA, ``k(x, z) = exp(-|x - z|^2 / (2 l^2))``.

    ``lengthscale="auto"`` sets ``l`` to the mean pairwise distance of the
    training samples.  At most ``max_samples`` rows (seeded subsample) enter
    the dense eigenproblem.  Eigenvectors are scaled by ``1/sqrt(lambda)``.
    """

    def __init__(self, n_components=120, lengthscale="auto", max_samples=2000, random_state=0):
        self.n_components = n_components
        self.lengthscale = lengthscale
        self.max_samples = max_samples
        self.random_state = random_state

    def _kernel(self, A, B):
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * self.lengthscale_ ** 2))

    def fit(self, X, y=None):
        X = check_matrix(X, min_samples=2)
        if self.max_samples is not None and X.shape[0] > self.max_samples:
            rng = np.random.default_rng(self.random_state)
            X = X[np.sort(rng.choice(X.shape[0], self.max_samples, replace=False))]
        M = X.shape[0]
        if not 1 <= self.n_components <= M - 1:
            raise ConfigError(f"n_components={self.n_components} outside [1, {M - 1}]")
        if self.lengthscale == "auto":
            ell = mean_pairwise_distance(X)
        else:
            ell = float(self.lengthscale)
        if not ell > 0:
            raise NumericError("degenerate RBF lengthscale (all training samples identical?)")
        self.lengthscale_ = ell
        self.X_fit_ = X
        K = self._kernel(X, X)
        self._col_means = K.mean(axis=0)
        self._grand_mean = K.mean()
        Kc = K - self._col_means[None, :] - self._col_means[:, None] + self._grand_mean
        evals, evecs = np.linalg.eigh(Kc)
        order = np.argsort(evals)[::-1][: self.n_components]
        evals, evecs = evals[order], evecs[:, order]
        keep = evals > max(evals.max(initial=0.0), 0.0) * 1e-12
        if not keep.any():
            raise NumericError("centred kernel has no positive eigenvalues")
        self.eigenvalues_ = evals[keep]
        self.alphas_ = _fix_signs(evecs[:, keep]) / np.sqrt(self.eigenvalues_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "alphas_")
        X = check_matrix(X, self.n_features_in_)
        Kx = self._kernel(X, self.X_fit_)
        Kc = Kx - self._col_means[None, :] - Kx.mean(axis=1, keepdims=True) + self._grand_mean
        return Kc @ self.alphas_


def dead_output_fraction(codes):
    """Fraction of code columns never holding a row's largest |value|."""
    codes = np.asarray(codes)
    winners = np.argmax(np.abs(codes), axis=1)
    return 1.0 - np.unique(winners).size / codes.shape[1]


class OMP1(BaseEstimator, TransformerMixin):
    """Gain-shape vector quantization (OMP with one non-zero per code).

    Each epoch assigns every sample to the atom with the largest ``|d . x|``
    and replaces every atom by the normalized sum ``sum s x`` of its samples.
    Atoms left without samples are counted in ``dead_counts_`` and then
    re-seeded from the samples with the largest residuals.
    """

    def __init__(self, n_atoms=64, n_epochs=10, random_state=0):
        self.n_atoms = n_atoms
        self.n_epochs = n_epochs
        self.random_state = random_state

    def _assign(self, X, D):
        proj = X @ D.T
        k = np.argmax(np.abs(proj), axis=1)
        return k, proj[np.arange(X.shape[0]), k]

    def fit(self, X, y=None):
        X = check_matrix(X)
        M = X.shape[0]
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise DataError("OMP-1 training rows must be non-zero")
        if not 1 <= self.n_atoms <= M:
            raise ConfigError(f"n_atoms={self.n_atoms} outside [1, {M}]")
        rng = np.random.default_rng(self.random_state)
        D = X[rng.choice(M, self.n_atoms, replace=False)]
        D = D / np.linalg.norm(D, axis=1, keepdims=True)

        self.errors_, self.dead_counts_ = [], []
        for _ in range(self.n_epochs):
            k, s = self._assign(X, D)
            residual = np.sum(X * X, axis=1) - s * s
            self.errors_.append(float(residual.sum()))
            acc = np.zeros_like(D)
            np.add.at(acc, k, s[:, None] * X)
            lengths = np.linalg.norm(acc, axis=1)
            dead = np.flatnonzero(lengths == 0)
            self.dead_counts_.append(int(dead.size))
            live = lengths > 0
            D[live] = acc[live] / lengths[live, None]
            if dead.size:
                donors = np.argsort(-residual, kind="stable")[: dead.size]
                D[dead] = X[donors] / norms[donors, None]
        self.components_ = D
        self.n_features_in_ = X.shape[1]
        last = self.dead_counts_[-1] if self.dead_counts_ else 0
        self.dead_fraction_ = last / self.n_atoms
        return self

    def transform(self, X):
        """One non-zero per row: ``d_k . x`` at ``k = argmax |d . x|`` (ties to lowest k)."""
        check_is_fitted(self, "components_")
        X = check_matrix(X, self.n_features_in_)
        k, s = self._assign(X, self.components_)
        codes = np.zeros((X.shape[0], self.n_atoms))
        codes[np.arange(X.shape[0]), k] = s
        return codes

    def training_error(self, X):
        k, s = self._assign(check_matrix(X, self.n_features_in_), self.components_)
        return float(np.sum(np.sum(X * X, axis=1) - s * s))


# functional aliases

def pca_fit(X, n_components):
    return PCA(n_components).fit(X)


def pca_transform(model, X):
    return model.transform(X)


def kpca_fit(X, n_components, lengthscale="auto", max_samples=2000, seed=0):
    return KernelPCA(n_components, lengthscale, max_samples, seed).fit(X)


def kpca_transform(model, X):
    return model.transform(X)


def omp1_fit(X, n_atoms, epochs=10, seed=0):
    return OMP1(n_atoms, epochs, seed).fit(X)


def omp1_encode(model, X):
    return model.transform(X)
