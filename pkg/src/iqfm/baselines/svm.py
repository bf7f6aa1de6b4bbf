"""Kernel SVM on a precomputed Gram matrix, solved by SMO.

The dual is  max sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij  subject to
0 <= a_i <= C and sum a_i y_i = 0; the regularisation value from the grid
is used as C.  Working pairs follow the second-order selection rule.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .. import container, kernels
from ..errors import ArgumentError, NumericError

log = logging.getLogger(__name__)

C_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4)


@dataclass
class SvmModel:
    alpha: np.ndarray            # dual coefficients, 0 <= alpha <= C
    y: np.ndarray                # training labels in {-1, +1}
    bias: float
    C: float
    train_index: np.ndarray      # rows of the training Gram used
    cv_scores: dict = field(default_factory=dict)
    iterations: int = 0
    gap: float = 0.0

    @property
    def support(self):
        return np.flatnonzero(self.alpha > 0)

    def decision_function(self, K_rows):
        """``K_rows`` is (n_test, n_train) against the stored training rows."""
        return np.asarray(K_rows) @ (self.alpha * self.y) + self.bias

    def predict(self, K_rows):
        return np.where(self.decision_function(K_rows) >= 0, 1, -1)


def to_pm(labels):
    labels = np.asarray(labels)
    u = np.unique(labels)
    if set(u.tolist()) <= {-1, 1}:
        return labels.astype(float)
    if set(u.tolist()) <= {0, 1}:
        return np.where(labels == 1, 1.0, -1.0)
    raise ArgumentError(f"binary labels expected, got {u}")


def psd_clip(K):
    """Symmetrise and clip negative eigenvalues to zero."""
    K = 0.5 * (np.asarray(K, dtype=float) + np.asarray(K, dtype=float).T)
    if not np.all(np.isfinite(K)):
        raise NumericError("Gram matrix has non-finite entries")
    w, V = np.linalg.eigh(K)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        log.warning("Gram matrix not PSD (min eigenvalue %.3e); clipping", w.min())
        K = (V * np.clip(w, 0.0, None)) @ V.T
        K = 0.5 * (K + K.T)
        if np.linalg.eigvalsh(K).min() < -1e-8 * max(1.0, abs(w).max()):
            raise NumericError("Gram matrix still not PSD after clipping")
    return K


def _bias(alpha, y, grad, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        return float(-yg[free].mean())
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    ub = -yg[up].max() if np.any(up) else np.inf
    lb = -yg[low].min() if np.any(low) else -np.inf
    if np.isinf(ub):
        ub = lb
    if np.isinf(lb):
        lb = ub
    return float(0.5 * (ub + lb)) if np.isfinite(ub + lb) else 0.0


def svm_fit(K, labels, C, tol=1e-5, max_iter=1_000_000, index=None):
    y = to_pm(labels)
    K = np.asarray(K, dtype=float)
    Q = np.ascontiguousarray(K * np.outer(y, y))
    alpha = np.zeros(len(y))
    grad = -np.ones(len(y))
    it, gap = kernels.smo_solve(Q, y, float(C), float(tol), int(max_iter), alpha, grad)
    b = _bias(alpha, y, grad, C)
    idx = np.arange(len(y)) if index is None else np.asarray(index)
    return SvmModel(alpha, y, b, float(C), idx, iterations=int(it), gap=float(gap))


def dual_objective(alpha, y, K):
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def kkt_residual(model, K):
    """Largest violation of the KKT conditions at the solution."""
    f = model.decision_function(K)
    m = model.y * f
    a, C = model.alpha, model.C
    eps = 1e-12 * max(1.0, C)
    viol = np.zeros_like(m)
    lo = a <= eps
    hi = a >= C - eps
    mid = ~lo & ~hi
    viol[lo] = np.maximum(0.0, 1.0 - m[lo])
    viol[hi] = np.maximum(0.0, m[hi] - 1.0)
    viol[mid] = np.abs(m[mid] - 1.0)
    box = max(0.0, -a.min(), (a - C).max())
    return float(max(viol.max(initial=0.0), box, abs(a @ model.y)))


def fold_indices(n, folds=5):
    """Interleaved folds: sample i goes to fold i % folds."""
    return [np.arange(k, n, folds) for k in range(folds)]


def svm_train_cv(gram, labels, grid=C_GRID, folds=5, tol=1e-5):
    """Pick C by mean k-fold accuracy (ties go to the smaller C), then refit."""
    K = psd_clip(gram)
    y = to_pm(labels)
    n = len(y)
    scores = {}
    for C in sorted(grid):
        accs = []
        for test in fold_indices(n, folds):
            train = np.setdiff1d(np.arange(n), test)
            if len(np.unique(y[train])) < 2:
                accs.append(0.0)
                continue
            m = svm_fit(K[np.ix_(train, train)], y[train], C, tol)
            accs.append(float(np.mean(m.predict(K[np.ix_(test, train)]) == y[test])))
        scores[C] = float(np.mean(accs))
    best = max(scores.values())
    chosen = min(C for C, s in scores.items() if s == best)
    model = svm_fit(K, y, chosen, tol)
    model.cv_scores = scores
    return model


def save_svm(model, path):
    container.save(path, b"QSVM", {"alpha": model.alpha, "y": model.y,
                                   "bias": np.array([model.bias]), "C": np.array([model.C]),
                                   "train_index": model.train_index})


def load_svm(path):
    e = container.load(path, b"QSVM")
    return SvmModel(e["alpha"], e["y"], float(e["bias"][0]), float(e["C"][0]), e["train_index"])
