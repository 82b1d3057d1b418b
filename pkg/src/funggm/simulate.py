"""Synthetic data generation: graph structures, layer-scaled precision
matrices, Gaussian scores combined on a Fourier system, empirical-basis
refinement, and injection of contiguous missing windows."""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from funggm.grids import FunctionalDataset, Grid
from funggm.moments import (
    averaged_kernel,
    eigendecompose_kernel,
    estimate_covariance,
    select_truncation,
)

STRUCTURES = ("star", "banded", "small-world")


@dataclass(frozen=True)
class GraphSpec:
    """Recipe for a simulation adjacency structure."""

    structure: str
    p: int
    group_size: int = 5           # star: hub-and-spoke group size
    bandwidth: int = 1            # banded: |j - k| <= bandwidth
    neighbors: int = 1            # small-world: ring neighbors per side
    rewire: float = 0.1           # small-world: rewiring probability
    seed: int = 0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}; "
                             f"expected one of {STRUCTURES}")
        if self.p < 2:
            raise ValueError("p must be at least 2")


def make_adjacency(spec: GraphSpec) -> np.ndarray:
    """Symmetric boolean adjacency with zero diagonal."""
    p = spec.p
    adj = np.zeros((p, p), dtype=bool)
    if spec.structure == "star":
        if p % spec.group_size != 0:
            raise ValueError(
                f"star structure needs p divisible by {spec.group_size}, got p={p}")
        for start in range(0, p, spec.group_size):
            hub = start
            for member in range(start + 1, start + spec.group_size):
                adj[hub, member] = adj[member, hub] = True
    elif spec.structure == "banded":
        for j in range(p):
            for k in range(j + 1, min(j + spec.bandwidth + 1, p)):
                adj[j, k] = adj[k, j] = True
    else:
        graph = nx.watts_strogatz_graph(p, 2 * spec.neighbors, spec.rewire,
                                        seed=spec.seed)
        for h, k in graph.edges:
            adj[h, k] = adj[k, h] = True
    return adj


def layer_scalings(L: int) -> np.ndarray:
    """Decaying layer factors a_l = 3 * l^(-1.8), l = 1..L."""
    l = np.arange(1, L + 1, dtype=float)
    return 3.0 * l ** -1.8


def make_precisions(adjacency: np.ndarray, L: int,
                    scalings: np.ndarray | None = None,
                    edge_value: float = 0.45) -> tuple[np.ndarray, np.ndarray]:
    """Layer precision matrices sharing one support.

    The base matrix puts `edge_value` on edges, adds |min eigenvalue| + 1 to
    the diagonal to force positive definiteness, and is rescaled to a unit
    diagonal.  Layer l is the base divided by the decaying factor a_l, so
    the covariance traces decrease in l.  Returns (theta, sigma), both
    (L, p, p).
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    p = adjacency.shape[0]
    a = layer_scalings(L) if scalings is None else np.asarray(scalings, dtype=float)
    base = edge_value * adjacency.astype(float)
    lam_min = np.linalg.eigvalsh(base).min()
    base += (abs(lam_min) + 1.0) * np.eye(p)
    dinv = 1.0 / np.sqrt(np.diag(base))
    base = dinv[:, None] * base * dinv[None, :]
    assert np.linalg.eigvalsh(base).min() > 0

    theta = base[None, :, :] / a[:, None, None]
    sigma = np.stack([np.linalg.inv(theta[l]) for l in range(L)])
    return theta, sigma


def fourier_basis(L: int, points: np.ndarray) -> np.ndarray:
    """First L elements of the orthonormal Fourier system on [0, 1]:
    1, sqrt(2) sin(2 pi t), sqrt(2) cos(2 pi t), continuing in pairs."""
    basis = np.empty((L, points.size))
    for l in range(L):
        if l == 0:
            basis[l] = 1.0
        elif l % 2 == 1:
            freq = (l + 1) // 2
            basis[l] = np.sqrt(2.0) * np.sin(2 * np.pi * freq * points)
        else:
            freq = l // 2
            basis[l] = np.sqrt(2.0) * np.cos(2 * np.pi * freq * points)
    return basis


@dataclass
class GroundTruth:
    """Everything the generator knows: the graph, the layer precisions and
    covariances, sampled and refined scores, the synthesis basis, and the
    complete curves before masking."""

    adjacency: np.ndarray          # (p, p) bool
    theta: np.ndarray              # (L, p, p)
    sigma: np.ndarray              # (L, p, p)
    scalings: np.ndarray           # (L,)
    scores: np.ndarray             # (n, p, L) sampled synthesis scores
    basis: np.ndarray              # (L, d) synthesis Fourier system
    curves: np.ndarray             # (n, p, d) complete data after refinement
    refined_basis: np.ndarray | None = None
    refined_scores: np.ndarray | None = None
    seed: int | None = None
    masks: np.ndarray | None = None   # (n, p, d) bool, set after injection

    @property
    def edge_count(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())


def synthesize(theta: np.ndarray, sigma: np.ndarray, adjacency: np.ndarray,
               n: int, d: int, seed: int, refine: bool = True,
               refine_threshold: float = 0.9999) -> tuple[FunctionalDataset, GroundTruth]:
    """Draw layerwise Gaussian scores, assemble curves on the grid through
    the Fourier system, and optionally re-express them in the empirical
    eigensystem keeping `refine_threshold` of the variance."""
    L, p = theta.shape[0], theta.shape[1]
    grid = Grid.regular(d)
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    scores = np.empty((n, p, L))
    for l in range(L):
        chol = np.linalg.cholesky(sigma[l])
        scores[:, :, l] = rng.standard_normal((n, p)) @ chol.T

    basis = fourier_basis(L, grid.points)
    curves = np.einsum("npl,ld->npd", scores, basis)

    refined_basis = refined_scores = None
    if refine:
        complete = FunctionalDataset(values=curves,
                                     observed=np.ones_like(curves, dtype=bool),
                                     grid=grid)
        cov = estimate_covariance(complete)
        eig = eigendecompose_kernel(averaged_kernel(cov), grid)
        L_ref = select_truncation(eig, refine_threshold)
        refined_basis = eig.functions[:L_ref].copy()
        refined_scores = np.einsum("npd,ld->npl", curves * grid.weights, refined_basis)
        curves = np.einsum("npl,ld->npd", refined_scores, refined_basis)

    dataset = FunctionalDataset(values=curves,
                                observed=np.ones_like(curves, dtype=bool),
                                grid=grid, complete=curves)
    truth = GroundTruth(adjacency=np.asarray(adjacency, dtype=bool), theta=theta,
                        sigma=sigma, scalings=layer_scalings(L), scores=scores,
                        basis=basis, curves=curves, refined_basis=refined_basis,
                        refined_scores=refined_scores, seed=seed)
    return dataset, truth


def inject_missingness(data: FunctionalDataset, pi_po: float, pi_w: float,
                       seed: int, unit: str = "curve",
                       max_redraws: int = 1000) -> FunctionalDataset:
    """Remove one window of w = round(pi_w * d) consecutive points from each
    selected curve.

    unit="curve" selects each univariate curve (i, j) independently with
    probability pi_po; unit="realization" selects whole multivariate
    observations and windows every variable of a selected one (independent
    window positions).  Draws are repeated until every variable keeps at
    least one complete curve and, under unit="realization", at least one
    realization stays fully observed.
    """
    if not (0 <= pi_po < 1 and 0 <= pi_w < 1):
        raise ValueError("pi_po and pi_w must lie in [0, 1)")
    if unit not in ("curve", "realization"):
        raise ValueError(f"unknown selection unit {unit!r}")
    n, p, d = data.n, data.p, data.d
    w = round(pi_w * d)
    base = data.complete if data.complete is not None else data.values
    if w == 0 or pi_po == 0:
        return FunctionalDataset(values=base.copy(), observed=np.ones((n, p, d), bool),
                                 grid=data.grid, complete=base)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for _ in range(max_redraws):
        observed = np.ones((n, p, d), dtype=bool)
        if unit == "curve":
            selected = rng.random((n, p)) < pi_po
        else:
            selected = np.repeat(rng.random(n)[:, None] < pi_po, p, axis=1)
        starts = rng.integers(0, d - w + 1, size=(n, p))
        for i, j in zip(*np.nonzero(selected)):
            s = starts[i, j]
            observed[i, j, s:s + w] = False
        per_variable_ok = observed.all(axis=2).any(axis=0).all()
        unit_ok = unit == "curve" or observed.all(axis=(1, 2)).any()
        if per_variable_ok and unit_ok:
            return FunctionalDataset(values=base.copy(), observed=observed,
                                     grid=data.grid, complete=base)
    raise RuntimeError(
        f"could not draw masks satisfying completeness guards in {max_redraws} tries")


@dataclass(frozen=True)
class ReplicationConfig:
    """One cell of a simulation campaign."""

    graph: GraphSpec
    n: int = 100
    d: int = 50
    L: int = 3
    pi_po: float = 0.25
    pi_w: float = 0.25
    unit: str = "curve"
    master_seed: int = 0
    edge_value: float = 0.45


def generate_replication(cfg: ReplicationConfig, rep: int) -> tuple[FunctionalDataset, GroundTruth]:
    """Deterministic replication: seed = master XOR replication index, with
    independent child streams for graph, scores, and masks."""
    seed = cfg.master_seed ^ rep
    children = np.random.SeedSequence(seed).spawn(3)
    graph_seed = int(children[0].generate_state(1)[0] % (2 ** 31))
    adj = make_adjacency(GraphSpec(structure=cfg.graph.structure, p=cfg.graph.p,
                                   group_size=cfg.graph.group_size,
                                   bandwidth=cfg.graph.bandwidth,
                                   neighbors=cfg.graph.neighbors,
                                   rewire=cfg.graph.rewire, seed=graph_seed))
    theta, sigma = make_precisions(adj, cfg.L, edge_value=cfg.edge_value)
    synth_seed = int(children[1].generate_state(1)[0] % (2 ** 31))
    complete, truth = synthesize(theta, sigma, adj, cfg.n, cfg.d, seed=synth_seed)
    mask_seed = int(children[2].generate_state(1)[0] % (2 ** 31))
    masked = inject_missingness(complete, cfg.pi_po, cfg.pi_w, seed=mask_seed,
                                unit=cfg.unit)
    truth.masks = masked.observed
    truth.seed = seed
    return masked, truth
