"""Evaluation measures: precision-matrix error, edge-recovery ROC/AUC along
a regularization path, and curve-reconstruction error."""

from __future__ import annotations

import numpy as np

from funggm.grids import Grid


def mse_theta(theta_true: np.ndarray, theta_est: np.ndarray) -> float:
    """Average over layers of the Frobenius norm of the estimation error."""
    theta_true = np.asarray(theta_true, dtype=float)
    theta_est = np.asarray(theta_est, dtype=float)
    if theta_true.shape != theta_est.shape:
        raise ValueError(f"shape mismatch {theta_true.shape} vs {theta_est.shape}")
    diff = theta_true - theta_est
    return float(np.sqrt((diff ** 2).sum(axis=(1, 2))).mean())


def _upper_pairs(adj: np.ndarray) -> np.ndarray:
    p = adj.shape[0]
    iu = np.triu_indices(p, 1)
    return np.asarray(adj, dtype=bool)[iu]


def sensitivity_specificity(adj_true: np.ndarray, adj_est: np.ndarray) -> tuple[float, float]:
    """Edge-selection sensitivity and specificity over unordered pairs."""
    t = _upper_pairs(adj_true)
    e = _upper_pairs(adj_est)
    n_pos = int(t.sum())
    n_neg = int((~t).sum())
    if n_pos == 0:
        raise ValueError("true edge set is empty; sensitivity undefined")
    sens = float((e & t).sum() / n_pos)
    spec = float((~e & ~t).sum() / n_neg) if n_neg else 1.0
    return sens, spec


def roc_auc(adj_true: np.ndarray, path: list[np.ndarray]) -> float:
    """Area under the ROC curve of edge selection along a path of estimated
    union adjacencies, with (0, 0) and (1, 1) appended and points ordered by
    false positive rate."""
    if len(path) < 2:
        raise ValueError("path needs at least 2 points")
    pts = [(0.0, 0.0), (1.0, 1.0)]
    for adj in path:
        sens, spec = sensitivity_specificity(adj_true, adj)
        pts.append((1.0 - spec, sens))
    pts.sort()
    fpr = np.asarray([q[0] for q in pts])
    tpr = np.asarray([q[1] for q in pts])
    return float(np.trapezoid(tpr, fpr))


def mse_x(curves_true: np.ndarray, curves_est: np.ndarray, grid: Grid) -> float:
    """Average over variables and samples of the squared L2 distance between
    true and reconstructed curves over the full domain.

    Observed points are copied through by the reconstruction, so the value
    equals the error accumulated on the missing windows.
    """
    curves_true = np.asarray(curves_true, dtype=float)
    curves_est = np.asarray(curves_est, dtype=float)
    if curves_true.shape != curves_est.shape:
        raise ValueError(f"shape mismatch {curves_true.shape} vs {curves_est.shape}")
    sq = (curves_true - curves_est) ** 2
    per_curve = sq @ grid.weights          # (n, p)
    return float(per_curve.mean(axis=0).sum() / curves_true.shape[1])
