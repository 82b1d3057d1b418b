"""Discretized functional-data algebra: grids on [0, 1], observation masks,
trapezoidal inner products and restrictions to sub-domains."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class DimensionError(ValueError):
    """Shapes of functional operands do not match."""


class EmptyDomainError(ValueError):
    """An operation was asked to work on an empty observation domain."""


def trapezoid_weights(d: int, spacing: float) -> np.ndarray:
    """Composite trapezoid weights for d evenly spaced points."""
    w = np.full(d, spacing)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


@dataclass(frozen=True)
class Grid:
    """Evenly spaced evaluation grid on [0, 1] with quadrature weights."""

    d: int
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def regular(cls, d: int) -> "Grid":
        if d < 2:
            raise ValueError("grid needs at least 2 points")
        points = np.linspace(0.0, 1.0, d)
        weights = trapezoid_weights(d, 1.0 / (d - 1))
        points.flags.writeable = False
        weights.flags.writeable = False
        return cls(d=d, points=points, weights=weights)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.d - 1)


def _observed_runs(observed: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive observed indices as (start, stop) slices."""
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    stops = np.concatenate((idx[breaks] + 1, [idx[-1] + 1]))
    return list(zip(starts.tolist(), stops.tolist()))


def mask_weights(observed: np.ndarray, grid: Grid) -> np.ndarray:
    """Quadrature weights restricted to a mask, embedded in a full-length vector.

    Selected points keep their full-grid trapezoid weight; everything else
    gets 0.  This convention makes restriction additive over a partition of
    the domain (weights of a mask and of its complement sum to the full
    weights pointwise), so the observed/missing score decomposition is exact
    at the quadrature level.  The subdomain measure is matched up to half a
    spacing per run boundary.
    """
    if observed.shape != (grid.d,):
        raise DimensionError(f"mask has length {observed.shape}, grid has d={grid.d}")
    return np.where(observed, grid.weights, 0.0)


@dataclass(frozen=True)
class DomainMask:
    """Boolean observation mask for one curve on a grid."""

    observed: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if not obs.any():
            raise EmptyDomainError("mask with empty observed domain")
        obs.flags.writeable = False
        object.__setattr__(self, "observed", obs)

    @property
    def missing(self) -> np.ndarray:
        return ~self.observed

    @property
    def full(self) -> bool:
        return bool(self.observed.all())

    def runs(self) -> list[tuple[int, int]]:
        return _observed_runs(self.observed)


def inner_product(f: np.ndarray, g: np.ndarray, grid: Grid,
                  mask: DomainMask | np.ndarray | None = None) -> float:
    """Trapezoidal approximation of the L2 inner product, optionally restricted."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != (grid.d,) or g.shape != (grid.d,):
        raise DimensionError(f"operands {f.shape}/{g.shape} do not match grid d={grid.d}")
    if mask is None:
        w = grid.weights
    else:
        obs = mask.observed if isinstance(mask, DomainMask) else np.asarray(mask, dtype=bool)
        w = mask_weights(obs, grid)
    return float(np.dot(w * f, g))


def vector_inner_product(F: np.ndarray, G: np.ndarray, grid: Grid,
                         masks=None) -> float:
    """Sum of per-coordinate (restricted) inner products of two p-vectors of functions."""
    F = np.asarray(F, dtype=float)
    G = np.asarray(G, dtype=float)
    if F.shape != G.shape or F.ndim != 2:
        raise DimensionError(f"vector operands {F.shape}/{G.shape} do not match")
    if masks is not None and len(masks) != F.shape[0]:
        raise DimensionError("number of masks does not match p")
    total = 0.0
    for j in range(F.shape[0]):
        total += inner_product(F[j], G[j], grid, None if masks is None else masks[j])
    return total


def restrict(f: np.ndarray, mask: DomainMask, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Values and restricted quadrature weights of f at the observed points."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.d,):
        raise DimensionError(f"operand {f.shape} does not match grid d={grid.d}")
    w = mask_weights(mask.observed, grid)
    return f[mask.observed], w[mask.observed]


@dataclass
class FunctionalDataset:
    """Sample of n multivariate curves on a shared grid with observation masks.

    values holds NaN at unobserved points; estimators must branch on
    `observed`, never on the sentinel.  For simulated data, `complete`
    retains the ground-truth curves before masking.
    """

    values: np.ndarray            # (n, p, d), NaN where unobserved
    observed: np.ndarray          # (n, p, d) bool
    grid: Grid
    complete: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        observed = np.asarray(self.observed, dtype=bool)
        if values.ndim != 3 or observed.shape != values.shape:
            raise DimensionError("values must be (n, p, d) with matching mask array")
        if values.shape[2] != self.grid.d:
            raise DimensionError("last axis must match the grid")
        if not observed.any(axis=2).all():
            raise EmptyDomainError("every curve needs at least one observed point")
        values = values.copy()
        values[~observed] = np.nan
        for arr in (values, observed):
            arr.flags.writeable = False
        self.values = values
        self.observed = observed
        if self.complete is not None:
            comp = np.asarray(self.complete, dtype=float)
            if comp.shape != values.shape:
                raise DimensionError("complete copy must match values shape")
            comp = comp.copy()
            comp.flags.writeable = False
            self.complete = comp

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())

    @cached_property
    def obs_weights(self) -> np.ndarray:
        """(n, p, d) restricted quadrature weights per curve (0 off-domain)."""
        n, p, _ = self.values.shape
        w = np.empty_like(self.values)
        for i in range(n):
            for j in range(p):
                w[i, j] = mask_weights(self.observed[i, j], self.grid)
        w.flags.writeable = False
        return w

    @cached_property
    def complete_rows(self) -> np.ndarray:
        """Indices of realizations observed on the full domain in every variable."""
        return np.flatnonzero(self.observed.all(axis=(1, 2)))

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """values with the NaN sentinel replaced at unobserved points."""
        return np.where(self.observed, self.values, fill)

    def mask(self, i: int, j: int) -> DomainMask:
        return DomainMask(self.observed[i, j])
