"""Missing-aware moment estimation: mean and cross-covariance functions,
curve standardization, the averaged diagonal kernel and its
quadrature-discretized eigendecomposition."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from funggm.grids import DimensionError, FunctionalDataset, Grid, inner_product


class DegenerateVarianceError(ValueError):
    """A variable has zero pointwise variance where standardization needs it."""


class DegenerateSpectrumError(ValueError):
    """All eigenvalues vanish; no truncation level can be selected."""


class UndefinedMomentError(ValueError):
    """A required moment entry has no supporting observations."""


@dataclass
class CovarianceField:
    """Estimated p x p field of covariance kernels.

    kernels[h, k] holds the d x d surface C_hk(s, t); counts stores how many
    samples supported each entry (entries with count 0 were zero-filled).
    When the field has a known finite-rank structure, `rank_factor` holds an
    (r, p, d) array with kernels = sum_r factor[r] (x) factor[r], which the
    ridge solver exploits.
    """

    kernels: np.ndarray        # (p, p, d, d)
    mean: np.ndarray           # (p, d) per-variable pointwise mean
    mean_defined: np.ndarray   # (p, d) bool
    counts: np.ndarray         # (p, p, d, d) int
    grid: Grid
    n_undefined: int = 0
    rank_factor: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.kernels.shape[0]

    @property
    def d(self) -> int:
        return self.kernels.shape[2]

    def block(self, h: int, k: int) -> np.ndarray:
        return self.kernels[h, k]

    def diagonal_only(self) -> "CovarianceField":
        """Copy with every cross block (h != k) zeroed; used by the
        variable-by-variable (univariate) imputation baseline."""
        kernels = np.zeros_like(self.kernels)
        idx = np.arange(self.p)
        kernels[idx, idx] = self.kernels[idx, idx]
        return CovarianceField(
            kernels=kernels,
            mean=self.mean,
            mean_defined=self.mean_defined,
            counts=self.counts,
            grid=self.grid,
            n_undefined=self.n_undefined,
        )


def estimate_mean(data: FunctionalDataset) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean of each variable over the samples observing each point.

    Returns (mean, defined) where defined flags grid points observed by at
    least one sample; the mean is 0 at undefined points.
    """
    obs = data.observed
    counts = obs.sum(axis=0)                      # (p, d)
    defined = counts > 0
    sums = np.where(obs, data.values, 0.0).sum(axis=0)
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=defined)
    return mean, defined


def pointwise_variance(data: FunctionalDataset) -> tuple[np.ndarray, np.ndarray]:
    """Missing-aware pointwise variance per variable (divisor = count)."""
    mean, defined = estimate_mean(data)
    obs = data.observed
    centered = np.where(obs, data.values - mean[None, :, :], 0.0)
    counts = obs.sum(axis=0)
    var = np.divide((centered ** 2).sum(axis=0), counts,
                    out=np.zeros_like(mean), where=defined)
    return var, defined


def standardize(data: FunctionalDataset) -> FunctionalDataset:
    """Center and scale each variable by its pointwise mean and standard
    deviation on the observed points; masks are unchanged."""
    mean, defined = estimate_mean(data)
    var, _ = pointwise_variance(data)
    bad = defined & (var <= 0)
    if bad.any():
        j, t = np.argwhere(bad)[0]
        raise DegenerateVarianceError(
            f"variable {j} has zero pointwise variance at grid point {t}")
    sd = np.sqrt(np.where(defined, var, 1.0))
    values = (data.values - mean[None, :, :]) / sd[None, :, :]
    complete = None
    if data.complete is not None:
        complete = (data.complete - mean[None, :, :]) / sd[None, :, :]
    return FunctionalDataset(values=values, observed=data.observed,
                             grid=data.grid, complete=complete)


def estimate_covariance(data: FunctionalDataset) -> CovarianceField:
    """Pairwise-complete covariance field.

    For each pair (h, k), entries average over the samples observing both
    arguments, centering with pairwise means built from the same weights;
    the result is symmetrized blockwise.  Entries never co-observed are
    zero-filled with a warning and reported in `n_undefined`.
    """
    if data.n < 2:
        raise ValueError("covariance estimation needs n >= 2")
    n, p, d = data.n, data.p, data.d
    X = data.filled(0.0)
    O = data.observed.astype(float)

    kernels = np.empty((p, p, d, d))
    counts = np.empty((p, p, d, d), dtype=np.int64)
    for h in range(p):
        Xh, Oh = X[:, h, :], O[:, h, :]
        for k in range(h, p):
            Xk, Ok = X[:, k, :], O[:, k, :]
            cnt = Oh.T @ Ok                                   # sum_i U_i(s, t)
            ok = cnt > 0
            sum_xy = Xh.T @ Xk
            mu_h = np.divide(Xh.T @ Ok, cnt, out=np.zeros_like(cnt), where=ok)
            mu_k = np.divide(Oh.T @ Xk, cnt, out=np.zeros_like(cnt), where=ok)
            C = np.divide(sum_xy, cnt, out=np.zeros_like(cnt), where=ok) - mu_h * mu_k
            C[~ok] = 0.0
            kernels[h, k] = C
            kernels[k, h] = C.T
            counts[h, k] = cnt
            counts[k, h] = cnt.T

    # pairwise-complete blocks need not satisfy C_hk(s,t) = C_kh(t,s) exactly
    kernels = 0.5 * (kernels + kernels.transpose(1, 0, 3, 2))

    n_undefined = int((counts == 0).sum())
    if n_undefined:
        warnings.warn(
            f"{n_undefined} covariance entries had no co-observed samples; zero-filled",
            RuntimeWarning, stacklevel=2)

    mean, defined = estimate_mean(data)
    return CovarianceField(kernels=kernels, mean=mean, mean_defined=defined,
                           counts=counts, grid=data.grid, n_undefined=n_undefined)


def separable_field(score_cov: np.ndarray, eig: "EigenSystem",
                    template: CovarianceField) -> CovarianceField:
    """Covariance field induced by the fitted partially separable structure:
    C_hk(s, t) = sum_l S_l[h, k] phi_l(s) phi_l(t).

    This is the covariance of curves completed in the fitted basis; the EM
    refresh rebuilds the field this way from the current completed-score
    covariances.  The factorization of each (PSD-projected) S_l is kept so
    downstream solves can exploit the finite rank.
    """
    L = score_cov.shape[0]
    p, d = template.mean.shape
    phi = eig.functions[:L]
    factors = []
    for l in range(L):
        S = 0.5 * (score_cov[l] + score_cov[l].T)
        vals, vecs = np.linalg.eigh(S)
        keep = vals > 1e-12 * max(vals.max(), 1e-300)
        root = vecs[:, keep] * np.sqrt(vals[keep])[None, :]      # (p, r_l)
        factors.append(root.T[:, :, None] * phi[l][None, None, :])
    rank_factor = np.concatenate(factors, axis=0) if factors else np.zeros((0, p, d))
    kernels = np.einsum("rhs,rkt->hkst", rank_factor, rank_factor)
    return CovarianceField(kernels=kernels, mean=template.mean,
                           mean_defined=template.mean_defined,
                           counts=template.counts, grid=template.grid,
                           n_undefined=0, rank_factor=rank_factor)


def averaged_kernel(cov: CovarianceField) -> np.ndarray:
    """Average of the diagonal covariance kernels, (1/p) sum_h C_hh."""
    idx = np.arange(cov.p)
    if (cov.counts[idx, idx] == 0).any():
        raise UndefinedMomentError("a diagonal covariance block has undefined entries")
    H = cov.kernels[idx, idx].mean(axis=0)
    return 0.5 * (H + H.T)


@dataclass
class EigenSystem:
    """Eigenfunctions and eigenvalues of a covariance kernel under grid
    quadrature, plus the selected truncation level."""

    functions: np.ndarray     # (m, d), rows orthonormal under the quadrature
    values: np.ndarray        # (m,), non-increasing, >= 0
    L: int
    explained: np.ndarray     # cumulative explained-variance fractions

    def truncated(self, L: int) -> np.ndarray:
        return self.functions[:L]


def eigendecompose_kernel(H: np.ndarray, grid: Grid) -> EigenSystem:
    """Solve the quadrature-discretized eigenproblem of a symmetric kernel.

    With W = diag(w), the eigenpairs of W^(1/2) H W^(1/2) are mapped back by
    phi = W^(-1/2) v, which makes the rows of `functions` orthonormal under
    the trapezoid inner product.  Negative eigenvalues are clipped to zero,
    the order is non-increasing, and signs follow the
    first-nonzero-coordinate-positive convention.
    """
    H = np.asarray(H, dtype=float)
    if H.shape != (grid.d, grid.d):
        raise DimensionError("kernel must be d x d on the given grid")
    scale = max(np.abs(H).max(), 1.0)
    if np.abs(H - H.T).max() > 1e-8 * scale:
        raise ValueError("kernel is not symmetric")
    H = 0.5 * (H + H.T)

    sqrt_w = np.sqrt(grid.weights)
    K = sqrt_w[:, None] * H * sqrt_w[None, :]
    vals, vecs = np.linalg.eigh(K)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    phi = (vecs[:, order] / sqrt_w[:, None]).T          # rows are eigenfunctions

    for l in range(phi.shape[0]):
        row = phi[l]
        nz = np.flatnonzero(np.abs(row) > 1e-12 * max(np.abs(row).max(), 1e-300))
        if nz.size and row[nz[0]] < 0:
            phi[l] = -row

    total = vals.sum()
    explained = np.cumsum(vals) / total if total > 0 else np.zeros_like(vals)
    return EigenSystem(functions=phi, values=vals, L=phi.shape[0], explained=explained)


def select_truncation(eig: EigenSystem, threshold: float) -> int:
    """Smallest number of leading components whose cumulative eigenvalue
    share reaches the threshold."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if eig.values.sum() <= 0:
        raise DegenerateSpectrumError("spectrum is identically zero")
    if threshold == 1.0:
        return int(np.count_nonzero(eig.values > 0))
    return int(min(np.searchsorted(eig.explained, threshold) + 1, eig.values.size))


def eigen_residual(H: np.ndarray, eig: EigenSystem, grid: Grid) -> float:
    """Max-norm residual of the discretized eigen-identity over the positive
    spectrum, relative to the leading eigenvalue.  Modes whose eigenvalue was
    clipped from a negative estimate cannot satisfy the identity and are
    skipped."""
    top = eig.values[0] if eig.values.size else 0.0
    if top <= 0:
        return 0.0
    worst = 0.0
    for l in range(eig.values.size):
        if eig.values[l] <= 0:
            continue
        lhs = H @ (grid.weights * eig.functions[l])
        worst = max(worst, float(np.abs(lhs - eig.values[l] * eig.functions[l]).max()))
    return worst / top


def kernel_trace(H: np.ndarray, grid: Grid) -> float:
    """Quadrature of the kernel diagonal H(t, t)."""
    return inner_product(np.diag(H), np.ones(grid.d), grid)
