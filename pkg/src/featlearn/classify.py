"""Downstream classifiers: Euclidean 1-NN and a one-vs-rest linear SVM."""

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_matrix
from .errors import ConfigError, DataError

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


class NearestNeighbor(BaseEstimator, ClassifierMixin):
    """1-nearest-neighbour on raw features; ties go to the lowest training index."""

    def __init__(self, chunk_size=2048):
        self.chunk_size = chunk_size

    def fit(self, X, y):
        X = check_matrix(X)
        self.y_ = check_labels(y, X.shape[0])
        self.X_ = X
        self.classes_ = np.unique(self.y_)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "X_")
        X = check_matrix(X, self.n_features_in_)
        out = np.empty(X.shape[0], dtype=np.int64)
        for start in range(0, X.shape[0], self.chunk_size):
            d = cdist(X[start:start + self.chunk_size], self.X_, "sqeuclidean")
            out[start:start + self.chunk_size] = self.y_[np.argmin(d, axis=1)]
        return out


def knn1_predict(X_train, y_train, X_test):
    return NearestNeighbor().fit(X_train, y_train).predict(X_test)


def _dual_cd(X, y, C, order, max_passes, tol):
    """Dual coordinate descent for the hinge-loss SVM with an augmented bias.

    Solves min_w 0.5 |w|^2 + C sum_i max(0, 1 - y_i w.x_i) where x_i carries a
    trailing constant 1.  Returns the weights, the dual objective after every
    pass and the final duality gap.
    """
    M = X.shape[0]
    alpha = np.zeros(M)
    w = np.zeros(X.shape[1])
    qii = np.einsum("ij,ij->i", X, X)
    dual_trace = []
    gap = np.inf
    for _ in range(max_passes):
        for i in order:
            if qii[i] == 0:
                continue
            g = y[i] * (X[i] @ w) - 1.0
            new = min(max(alpha[i] - g / qii[i], 0.0), C)
            if new != alpha[i]:
                w += (new - alpha[i]) * y[i] * X[i]
                alpha[i] = new
        ww = w @ w
        dual = 0.5 * ww - alpha.sum()
        primal = 0.5 * ww + C * np.maximum(0.0, 1.0 - y * (X @ w)).sum()
        dual_trace.append(dual)
        gap = primal + dual  # primal - (-dual)
        if gap <= tol * max(1.0, abs(primal)):
            break
    return w, dual_trace, gap


class LinearSVM(BaseEstimator, ClassifierMixin):
    """One-vs-rest linear SVM trained by deterministic dual coordinate descent.

    Features are standardized with training statistics kept on the model.  The
    bias is learned as the weight of an appended constant feature, so it is
    regularized together with ``w``.  Prediction is the argmax of the class
    scores (ties to the lowest class id).
    """

    def __init__(self, C=1.0, max_passes=1000, tol=1e-4, random_state=0):
        self.C = C
        self.max_passes = max_passes
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_labels(y, X.shape[0])
        if self.C <= 0:
            raise ConfigError("C must be positive")
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise DataError("the SVM needs at least two classes")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        self.scale_ = scale
        Xa = np.hstack([(X - self.mean_) / self.scale_, np.ones((X.shape[0], 1))])
        order = np.random.default_rng(self.random_state).permutation(X.shape[0])
        coefs, self.dual_traces_, self.gaps_ = [], [], []
        for k in self.classes_:
            yk = np.where(y == k, 1.0, -1.0)
            w, trace, gap = _dual_cd(Xa, yk, self.C, order, self.max_passes, self.tol)
            coefs.append(w)
            self.dual_traces_.append(trace)
            self.gaps_.append(gap)
        coefs = np.array(coefs)
        self.coef_, self.intercept_ = coefs[:, :-1], coefs[:, -1]
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_matrix(X, self.n_features_in_)
        return ((X - self.mean_) / self.scale_) @ self.coef_.T + self.intercept_

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def objective(self, X, y, k_index=0):
        """Primal objective of the ``k_index``-th one-vs-rest problem."""
        X = (check_matrix(X, self.n_features_in_) - self.mean_) / self.scale_
        yk = np.where(np.asarray(y) == self.classes_[k_index], 1.0, -1.0)
        w, b = self.coef_[k_index], self.intercept_[k_index]
        margins = yk * (X @ w + b)
        return 0.5 * (w @ w + b * b) + self.C * np.maximum(0.0, 1.0 - margins).sum()


def svm_train(X, y, C=1.0, seed=0):
    return LinearSVM(C=C, random_state=seed).fit(X, y)


def svm_predict(model, X):
    return model.predict(X)


def stratified_folds(y, folds, seed):
    """Fold id per sample: each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(y.shape[0], dtype=np.int64)
    for k in np.unique(y):
        idx = np.flatnonzero(y == k)
        if idx.size < folds:
            raise DataError(f"class {k} has {idx.size} samples, fewer than {folds} folds")
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % folds
    return fold


def cv_select_C(X, y, grid=DEFAULT_C_GRID, folds=5, seed=0):
    """Pick C by stratified k-fold accuracy; ties go to the smallest C.

    Returns ``(best_C, {C: mean_accuracy})``.
    """
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    grid = list(grid)
    if not grid:
        raise ConfigError("empty C grid")
    X = check_matrix(X)
    y = check_labels(y, X.shape[0])
    fold = stratified_folds(y, folds, seed)
    scores = {}
    for C in sorted(set(grid)):
        acc = []
        for f in range(folds):
            train, test = fold != f, fold == f
            model = LinearSVM(C=C, random_state=seed).fit(X[train], y[train])
            acc.append(np.mean(model.predict(X[test]) == y[test]))
        scores[C] = float(np.mean(acc))
    best = max(sorted(scores), key=lambda c: scores[c])
    return best, scores
