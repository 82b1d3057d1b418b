"""Multivariate completion of partially observed curves: ridge-regularized
solves of the observed-block operator system, score imputation, curve
reconstruction, effective degrees of freedom and GCV selection of the ridge
parameter, plus the variable-by-variable (univariate) baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from funggm.grids import EmptyDomainError, FunctionalDataset, Grid, mask_weights
from funggm.moments import CovarianceField, EigenSystem


class NoCompleteCurvesError(RuntimeError):
    """GCV needs at least one completely observed realization."""


class NumericalSolveError(RuntimeError):
    """A regularized solve failed or produced an unusable result."""


@dataclass
class ObservedPattern:
    """Observation pattern of one realization: per-variable observed and
    missing index sets, flattened variable-major with their restricted
    quadrature weights."""

    observed: np.ndarray                 # (p, d) bool

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if not obs.any(axis=1).all():
            raise EmptyDomainError("a variable has an empty observed domain")
        self.observed = obs
        self.key = obs.tobytes()

    def attach_grid(self, grid: Grid) -> None:
        """Precompute flattened index sets and restricted weights."""
        p, d = self.observed.shape
        obs_var, obs_pt, w_obs = [], [], []
        miss_var, miss_pt, w_miss = [], [], []
        for j in range(p):
            w_full = mask_weights(self.observed[j], grid)
            oj = np.flatnonzero(self.observed[j])
            obs_var.append(np.full(oj.size, j))
            obs_pt.append(oj)
            w_obs.append(w_full[oj])
            mj = np.flatnonzero(~self.observed[j])
            if mj.size:
                wm = mask_weights(~self.observed[j], grid)
                miss_var.append(np.full(mj.size, j))
                miss_pt.append(mj)
                w_miss.append(wm[mj])
        self.obs_var = np.concatenate(obs_var)
        self.obs_pt = np.concatenate(obs_pt)
        self.w_obs = np.concatenate(w_obs)
        if miss_var:
            self.miss_var = np.concatenate(miss_var)
            self.miss_pt = np.concatenate(miss_pt)
            self.w_miss = np.concatenate(w_miss)
        else:
            self.miss_var = np.empty(0, dtype=int)
            self.miss_pt = np.empty(0, dtype=int)
            self.w_miss = np.empty(0)

    @property
    def m_obs(self) -> int:
        return self.obs_var.size

    @property
    def m_miss(self) -> int:
        return self.miss_var.size

    @property
    def fully_observed(self) -> bool:
        return self.m_miss == 0

    def flatten_observed(self, curves: np.ndarray) -> np.ndarray:
        """Gather curve values (..., p, d) at the flattened observed points."""
        return curves[..., self.obs_var, self.obs_pt]

    def flatten_missing(self, curves: np.ndarray) -> np.ndarray:
        return curves[..., self.miss_var, self.miss_pt]


def pattern_of(data: FunctionalDataset, i: int) -> ObservedPattern:
    pat = ObservedPattern(observed=data.observed[i])
    pat.attach_grid(data.grid)
    return pat


def group_patterns(data: FunctionalDataset) -> list[tuple[ObservedPattern, np.ndarray]]:
    """Group realization indices by identical observation pattern."""
    groups: dict[bytes, list[int]] = {}
    order: list[bytes] = []
    for i in range(data.n):
        key = data.observed[i].tobytes()
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    out = []
    for key in order:
        rows = np.asarray(groups[key])
        pat = ObservedPattern(observed=data.observed[rows[0]])
        pat.attach_grid(data.grid)
        out.append((pat, rows))
    return out


def build_observed_block(cov: CovarianceField, pattern: ObservedPattern) -> np.ndarray:
    """Blocked observed-domain kernel matrix, columns scaled by the
    quadrature weight of their grid point so that matrix-vector products
    approximate the integral operator."""
    if pattern.m_obs == 0:
        raise EmptyDomainError("empty observed set")
    ov, op = pattern.obs_var, pattern.obs_pt
    C = cov.kernels[ov[:, None], ov[None, :], op[:, None], op[None, :]]
    return C * pattern.w_obs[None, :]


def build_cross_block(cov: CovarianceField, pattern: ObservedPattern) -> np.ndarray:
    """Missing-by-observed kernel matrix with the same column weighting;
    applying it to a ridge-solved fragment reconstructs the missing part."""
    if pattern.m_miss == 0:
        return np.zeros((0, pattern.m_obs))
    mv, mp = pattern.miss_var, pattern.miss_pt
    ov, op = pattern.obs_var, pattern.obs_pt
    C = cov.kernels[mv[:, None], ov[None, :], mp[:, None], op[None, :]]
    return C * pattern.w_obs[None, :]


def build_score_rhs(cov: CovarianceField, pattern: ObservedPattern,
                    eig: EigenSystem, L: int) -> np.ndarray:
    """Right-hand sides of the imputation system, one column per (variable,
    layer): the cross-covariance image of each eigenfunction restricted to
    that variable's missing domain.  Shape (m_obs, p, L)."""
    p = cov.p
    R = np.zeros((pattern.m_obs, p, L))
    ov, op = pattern.obs_var, pattern.obs_pt
    for j in range(p):
        sel = pattern.miss_var == j
        if not sel.any():
            continue
        mj = pattern.miss_pt[sel]
        wj = pattern.w_miss[sel]
        block = cov.kernels[ov[:, None], j, op[:, None], mj[None, :]]   # (m_obs, |M_j|)
        R[:, j, :] = block @ (wj[:, None] * eig.functions[:L, mj].T)
    return R


class _DenseBlock:
    """Full eigendecomposition of one diagonal block of W^(1/2) C W^(1/2)."""

    def __init__(self, idx: np.ndarray, sqrtw: np.ndarray, K: np.ndarray):
        self.idx = idx
        self.sqrtw = sqrtw
        self.e, self.V = np.linalg.eigh(0.5 * (K + K.T))

    def spectrum(self) -> np.ndarray:
        return np.clip(self.e, 0.0, None)

    def inv_apply(self, b: np.ndarray, alpha: float) -> np.ndarray:
        """(C W + alpha I)^-1 applied to the block slice of a raw rhs."""
        filt = self.e + alpha
        if np.any(np.abs(filt) < 1e-14 * max(abs(alpha), 1.0)):
            raise NumericalSolveError(
                f"near-singular ridge system at alpha={alpha:g}; "
                f"condition ~{np.abs(self.e).max() / np.abs(filt).min():.2e}")
        proj = self.V.T @ (self.sqrtw[:, None] * b)
        return (self.V @ (proj / filt[:, None])) / self.sqrtw[:, None]

    def alpha_applier(self, A_cols: np.ndarray, frag: np.ndarray):
        """Fast per-alpha evaluation of A_cols @ inv_apply(frag, alpha)."""
        T = A_cols @ (self.V / self.sqrtw[:, None])
        P = self.V.T @ (self.sqrtw[:, None] * frag)
        e = self.e
        return lambda alpha: T @ (P / (e + alpha)[:, None])


class _LowRankBlock:
    """Thin factorization K = G^T G of an exactly finite-rank block."""

    def __init__(self, idx: np.ndarray, sqrtw: np.ndarray, G: np.ndarray):
        self.idx = idx
        self.sqrtw = sqrtw
        # right singular vectors of G span the range of K
        _, s, Vt = np.linalg.svd(G, full_matrices=False)
        keep = s > 1e-14 * max(s[0] if s.size else 0.0, 1e-300)
        self.V = Vt[keep].T                       # (m_blk, r)
        self.e = s[keep] ** 2

    def spectrum(self) -> np.ndarray:
        return self.e

    def inv_apply(self, b: np.ndarray, alpha: float) -> np.ndarray:
        bw = self.sqrtw[:, None] * b
        proj = self.V.T @ bw
        inside = self.V @ (proj / (self.e + alpha)[:, None]) + (bw - self.V @ proj) / alpha
        return inside / self.sqrtw[:, None]

    def alpha_applier(self, A_cols: np.ndarray, frag: np.ndarray):
        T = A_cols @ (self.V / self.sqrtw[:, None])
        P = self.V.T @ (self.sqrtw[:, None] * frag)
        base = A_cols @ frag
        e = self.e
        return lambda alpha: base / alpha + T @ (P / (e + alpha)[:, None] - P / alpha)


@dataclass
class RidgeSolveCache:
    """Spectral factorization of the observed-block operator for one pattern.

    W^(1/2) C W^(1/2) is factored once; every ridge level alpha is then a
    diagonal filter.  Block-diagonal operators (the univariate baseline)
    factor variable by variable, and exactly finite-rank fields use a thin
    factorization instead of a dense eigendecomposition.
    """

    pattern: ObservedPattern
    eigvals: np.ndarray                   # clipped at 0, all blocks pooled
    alpha: float | None = None            # ridge level of the last solve
    _blocks: list = field(default_factory=list, repr=False)

    def solve(self, rhs: np.ndarray, alpha: float) -> np.ndarray:
        """Solution of (C^OO + alpha I) x = rhs on the flattened observed set."""
        if alpha <= 0:
            raise NumericalSolveError("ridge parameter must be positive")
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        b = rhs[:, None] if single else rhs
        x = np.zeros_like(b)
        for blk in self._blocks:
            x[blk.idx] = blk.inv_apply(b[blk.idx], alpha)
        self.alpha = float(alpha)
        return x[:, 0] if single else x

    def effective_df(self, alpha: float) -> float:
        """Trace of the ridge smoother, sum of e / (e + alpha)."""
        e = self.eigvals
        return float(np.sum(e / (e + alpha))) if e.size else 0.0


def build_ridge_cache(cov: CovarianceField, pattern: ObservedPattern,
                      block_diagonal: bool = False) -> RidgeSolveCache:
    """Factor the observed-block operator of a pattern.

    With block_diagonal=True the operator is assumed to have no cross-variable
    blocks (the covariance field must already be diagonal-only) and each
    variable is factored separately.
    """
    w = pattern.w_obs
    blocks: list = []
    if block_diagonal:
        for j in range(cov.p):
            idx = np.flatnonzero(pattern.obs_var == j)
            if idx.size == 0:
                continue
            pts = pattern.obs_pt[idx]
            sqrtw = np.sqrt(w[idx])
            K = sqrtw[:, None] * cov.kernels[j, j][np.ix_(pts, pts)] * sqrtw[None, :]
            blocks.append(_DenseBlock(idx, sqrtw, K))
    else:
        idx = np.arange(pattern.m_obs)
        ov, op = pattern.obs_var, pattern.obs_pt
        sqrtw = np.sqrt(w)
        if cov.rank_factor is not None:
            G = cov.rank_factor[:, ov, op] * sqrtw[None, :]    # (r, m_obs)
            blocks.append(_LowRankBlock(idx, sqrtw, G))
        else:
            K = cov.kernels[ov[:, None], ov[None, :], op[:, None], op[None, :]]
            K = sqrtw[:, None] * K * sqrtw[None, :]
            blocks.append(_DenseBlock(idx, sqrtw, K))

    spectra = [b.spectrum() for b in blocks]
    eigvals = np.concatenate(spectra) if spectra else np.empty(0)
    return RidgeSolveCache(pattern=pattern, eigvals=np.sort(eigvals)[::-1],
                           _blocks=blocks)


def effective_df(cache: RidgeSolveCache, alpha: float) -> float:
    """Effective degrees of freedom of the ridge smoother at a given alpha."""
    return cache.effective_df(alpha)


def solve_coefficients(cache: RidgeSolveCache, rhs: np.ndarray, alpha: float) -> np.ndarray:
    """Ridge-regularized coefficient solve (C^OO + alpha I)^-1 rhs."""
    return cache.solve(rhs, alpha)


def default_alpha_grid(eig: EigenSystem, size: int = 20,
                       span: tuple[float, float] = (1e-6, 1e1)) -> np.ndarray:
    """Log-spaced ridge grid scaled by the leading eigenvalue."""
    lead = eig.values[0] if eig.values.size and eig.values[0] > 0 else 1.0
    return np.geomspace(span[0] * lead, span[1] * lead, size)


@dataclass
class ImputationResult:
    """Completion of one realization: imputed missing-score parts, the
    reconstructed curves (observed points copied through), and the ridge
    diagnostics used."""

    mu_miss: np.ndarray        # (p, L)
    reconstructed: np.ndarray  # (p, d)
    alpha_used: float
    df: float


def _centered(data: FunctionalDataset, mean: np.ndarray) -> np.ndarray:
    return np.where(data.observed, data.values - mean[None, :, :], 0.0)


def select_alpha_gcv(data: FunctionalDataset, cov: CovarianceField,
                     pattern: ObservedPattern, alpha_grid: np.ndarray,
                     complete_rows: np.ndarray,
                     cache: RidgeSolveCache | None = None) -> tuple[float, dict]:
    """Generalized cross-validation choice of the ridge level for a pattern.

    Every completely observed realization is masked with the pattern and
    reconstructed; the criterion is the accumulated squared restricted-L2
    error on the missing domain over the squared factor (1 - df/|O|).
    Candidates with df/|O| >= 1 are skipped; ties break toward larger alpha.
    """
    complete_rows = np.asarray(complete_rows)
    if complete_rows.size == 0:
        raise NoCompleteCurvesError(
            "no completely observed realization is available for GCV")
    if cache is None:
        cache = build_ridge_cache(cov, pattern)
    if pattern.fully_observed:
        return float(alpha_grid[-1]), {"alphas": np.asarray(alpha_grid),
                                       "gcv": np.full(len(alpha_grid), np.nan),
                                       "df": np.zeros(len(alpha_grid))}

    donors = _centered(data, cov.mean)[complete_rows]          # (n_c, p, d)
    frag = pattern.flatten_observed(donors).T                  # (m_obs, n_c)
    truth = pattern.flatten_missing(donors).T                  # (m_miss, n_c)
    A_mo = build_cross_block(cov, pattern)
    n_c = complete_rows.size

    # precompute per-block projections so every alpha is a diagonal filter
    appliers = [blk.alpha_applier(A_mo[:, blk.idx], frag[blk.idx])
                for blk in cache._blocks]

    gcv = np.full(len(alpha_grid), np.inf)
    dfs = np.empty(len(alpha_grid))
    errs = np.full(len(alpha_grid), np.nan)
    for a, alpha in enumerate(alpha_grid):
        dfs[a] = cache.effective_df(alpha)
        if dfs[a] / n_c >= 1.0:
            continue
        recon = np.zeros_like(truth)
        for apply_alpha in appliers:
            recon += apply_alpha(alpha)
        errs[a] = float(np.sum(pattern.w_miss[:, None] * (recon - truth) ** 2))
        gcv[a] = errs[a] / (1.0 - dfs[a] / n_c) ** 2
    if not np.isfinite(gcv).any():
        raise NumericalSolveError(
            "every ridge candidate was skipped (df/|O| >= 1); enlarge the grid")
    best = None
    for a in range(len(alpha_grid)):
        if np.isfinite(gcv[a]) and (best is None or gcv[a] <= gcv[best]):
            best = a
    diag = {"alphas": np.asarray(alpha_grid, dtype=float), "gcv": gcv,
            "df": dfs, "error": errs}
    return float(alpha_grid[best]), diag


def _complete_group(data: FunctionalDataset, cov: CovarianceField,
                    eig: EigenSystem, L: int, pattern: ObservedPattern,
                    rows: np.ndarray, alpha: float,
                    cache: RidgeSolveCache) -> list[ImputationResult]:
    """Impute scores and reconstruct curves for all rows sharing a pattern."""
    p, d = data.p, data.d
    if pattern.fully_observed:
        out = []
        for i in rows:
            out.append(ImputationResult(
                mu_miss=np.zeros((p, L)),
                reconstructed=data.values[i].copy(),
                alpha_used=alpha, df=0.0))
        return out

    centered = _centered(data, cov.mean)[rows]                 # (g, p, d)
    frag = pattern.flatten_observed(centered).T                # (m_obs, g)
    R = build_score_rhs(cov, pattern, eig, L)                  # (m_obs, p, L)
    B = cache.solve(R.reshape(pattern.m_obs, p * L), alpha)
    mu = B.T @ (pattern.w_obs[:, None] * frag)                 # (p*L, g)
    mu = mu.reshape(p, L, rows.size)

    g_hat = cache.solve(frag, alpha)
    miss_hat = build_cross_block(cov, pattern) @ g_hat         # (m_miss, g)
    df = cache.effective_df(alpha)

    out = []
    for c, i in enumerate(rows):
        recon = data.values[i].copy()
        recon[pattern.miss_var, pattern.miss_pt] = (
            miss_hat[:, c] + cov.mean[pattern.miss_var, pattern.miss_pt])
        out.append(ImputationResult(mu_miss=mu[:, :, c].copy(),
                                    reconstructed=recon, alpha_used=alpha, df=df))
    return out


def impute_scores(data: FunctionalDataset, i: int, cov: CovarianceField,
                  eig: EigenSystem, alpha: float, L: int | None = None) -> ImputationResult:
    """Impute the missing-score parts of realization i at a fixed ridge level."""
    L = eig.L if L is None else L
    pat = pattern_of(data, i)
    cache = build_ridge_cache(cov, pat)
    return _complete_group(data, cov, eig, L, pat, np.asarray([i]), alpha, cache)[0]


def reconstruct_curves(data: FunctionalDataset, i: int, cov: CovarianceField,
                       alpha: float) -> np.ndarray:
    """Completed curves of realization i: the cross-covariance image of the
    ridge-solved observed fragment on the missing domain, mean added back,
    observed points copied through."""
    pat = pattern_of(data, i)
    cache = build_ridge_cache(cov, pat)
    eig_dummy = EigenSystem(functions=np.zeros((0, data.d)), values=np.empty(0),
                            L=0, explained=np.empty(0))
    res = _complete_group(data, cov, eig_dummy, 0, pat, np.asarray([i]), alpha, cache)[0]
    return res.reconstructed


def kraus_univariate_impute(data: FunctionalDataset, i: int, cov: CovarianceField,
                            eig: EigenSystem, alpha: float,
                            L: int | None = None) -> ImputationResult:
    """Variable-by-variable baseline: identical contract to the multivariate
    imputation but with all cross-covariance blocks zeroed, so each variable
    is completed from its own observed fragment only."""
    L = eig.L if L is None else L
    diag_cov = cov.diagonal_only()
    pat = pattern_of(data, i)
    cache = build_ridge_cache(diag_cov, pat, block_diagonal=True)
    return _complete_group(data, diag_cov, eig, L, pat, np.asarray([i]), alpha, cache)[0]


def reconstruction_errors_by_alpha(data: FunctionalDataset, cov: CovarianceField,
                                   truth: np.ndarray, alpha_grid: np.ndarray,
                                   univariate: bool = False) -> np.ndarray:
    """Full-domain squared reconstruction error against known complete curves
    for every ridge level, sharing one factorization per pattern.

    Returns the per-alpha average over variables and samples of the squared
    L2 distance (observed points contribute zero by copy-through).
    """
    cov_eff = cov.diagonal_only() if univariate else cov
    n, p = data.n, data.p
    w_full = data.grid.weights
    totals = np.zeros(len(alpha_grid))
    for pat, rows in group_patterns(data):
        if pat.fully_observed:
            continue
        cache = build_ridge_cache(cov_eff, pat, block_diagonal=univariate)
        centered = _centered(data, cov_eff.mean)[rows]
        frag = pat.flatten_observed(centered).T               # (m_obs, g)
        true_miss = (truth[rows][..., pat.miss_var, pat.miss_pt]
                     - cov_eff.mean[pat.miss_var, pat.miss_pt]).T
        A_mo = build_cross_block(cov_eff, pat)
        appliers = [blk.alpha_applier(A_mo[:, blk.idx], frag[blk.idx])
                    for blk in cache._blocks]
        wf = w_full[pat.miss_pt]
        for a, alpha in enumerate(alpha_grid):
            recon = np.zeros_like(true_miss)
            for apply_alpha in appliers:
                recon += apply_alpha(alpha)
            totals[a] += float(np.sum(wf[:, None] * (recon - true_miss) ** 2))
    return totals / (n * p)


def complete_dataset(data: FunctionalDataset, cov: CovarianceField,
                     eig: EigenSystem, L: int,
                     alpha: float | str = "gcv",
                     alpha_grid: np.ndarray | None = None,
                     univariate: bool = False) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Impute every realization, sharing one factorization and one selected
    ridge level per distinct observation pattern.

    Returns (mu_miss (n,p,L), reconstructed (n,p,d), per-pattern diagnostics).
    """
    cov_eff = cov.diagonal_only() if univariate else cov
    if isinstance(alpha, str) and alpha != "gcv":
        raise ValueError(f"unknown alpha rule {alpha!r}")
    if alpha == "gcv" and alpha_grid is None:
        alpha_grid = default_alpha_grid(eig)

    n, p, d = data.n, data.p, data.d
    mu_miss = np.zeros((n, p, L))
    recon = np.empty((n, p, d))
    diags = []
    for pat, rows in group_patterns(data):
        cache = build_ridge_cache(cov_eff, pat, block_diagonal=univariate)
        if alpha == "gcv":
            if pat.fully_observed:
                a_used, gdiag = float(alpha_grid[-1]), None
            else:
                a_used, gdiag = select_alpha_gcv(
                    data, cov_eff, pat, alpha_grid, data.complete_rows, cache)
        else:
            a_used, gdiag = float(alpha), None
        results = _complete_group(data, cov_eff, eig, L, pat, rows, a_used, cache)
        for c, i in enumerate(rows):
            mu_miss[i] = results[c].mu_miss
            recon[i] = results[c].reconstructed
        diags.append({"rows": rows, "alpha": a_used,
                      "df": cache.effective_df(a_used),
                      "m_obs": pat.m_obs, "m_miss": pat.m_miss, "gcv": gdiag})
    return mu_miss, recon, diags
