"""Observed score components from curve fragments and layerwise sample
covariances of the completed scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from funggm.grids import FunctionalDataset
from funggm.moments import EigenSystem


@dataclass
class ScoreSet:
    """Completed functional principal component scores, split into the part
    computable from observed fragments and the imputed missing part."""

    xi_obs: np.ndarray    # (n, p, L)
    mu_miss: np.ndarray   # (n, p, L)

    def __post_init__(self):
        if self.xi_obs.shape != self.mu_miss.shape:
            raise ValueError("observed and imputed score arrays must match")

    @property
    def xi_hat(self) -> np.ndarray:
        return self.xi_obs + self.mu_miss

    @property
    def n(self) -> int:
        return self.xi_obs.shape[0]

    @property
    def L(self) -> int:
        return self.xi_obs.shape[2]


def observed_scores(data: FunctionalDataset, eig: EigenSystem,
                    mean: np.ndarray, L: int | None = None) -> np.ndarray:
    """Restricted projections of centered fragments on the eigenfunctions.

    Entry (i, j, l) is the quadrature inner product, over the observed
    domain of curve (i, j), of the centered fragment with the restriction
    of eigenfunction l.
    """
    L = eig.L if L is None else L
    phi = eig.functions[:L]                                   # (L, d)
    centered = np.where(data.observed, data.values - mean[None, :, :], 0.0)
    return np.einsum("npd,ld->npl", centered * data.obs_weights, phi)


def sample_covariances(scores: ScoreSet) -> np.ndarray:
    """Layerwise uncentered second-moment matrices S_l of the completed
    scores (divisor n); symmetric PSD by construction."""
    xi = scores.xi_hat
    S = np.einsum("npl,nql->lpq", xi, xi) / scores.n
    return 0.5 * (S + S.transpose(0, 2, 1))
