import numpy as np
import pytest

from funggm.grids import FunctionalDataset, Grid
from funggm.moments import (
    DegenerateSpectrumError,
    DegenerateVarianceError,
    EigenSystem,
    averaged_kernel,
    eigen_residual,
    eigendecompose_kernel,
    estimate_covariance,
    estimate_mean,
    kernel_trace,
    select_truncation,
    standardize,
)
from funggm.simulate import fourier_basis


def make_ds(values, observed=None, complete=None):
    values = np.asarray(values, dtype=float)
    grid = Grid.regular(values.shape[2])
    if observed is None:
        observed = np.ones(values.shape, dtype=bool)
    return FunctionalDataset(values=values, observed=observed, grid=grid,
                             complete=complete)


class TestMean:
    def test_opposite_pair_averages_to_zero(self):
        ds = make_ds(np.stack([np.ones((1, 20)), -np.ones((1, 20))]))
        mean, defined = estimate_mean(ds)
        assert np.allclose(mean, 0.0)
        assert defined.all()

    def test_single_sample_is_its_own_mean(self):
        vals = np.sin(np.linspace(0, 1, 20))[None, None, :]
        ds = make_ds(vals)
        mean, _ = estimate_mean(ds)
        assert np.allclose(mean[0], vals[0, 0])

    def test_partial_observation_averages_observed_only(self):
        grid = Grid.regular(20)
        vals = np.stack([np.full((1, 20), 1.0), np.full((1, 20), 2.0),
                         np.full((1, 20), 6.0)])
        observed = np.ones((3, 1, 20), dtype=bool)
        observed[2, 0, grid.points >= 0.5] = False   # third curve missing on [0.5, 1]
        ds = FunctionalDataset(values=vals, observed=observed, grid=grid)
        mean, _ = estimate_mean(ds)
        late = grid.points >= 0.5
        assert np.allclose(mean[0, late], 1.5)       # only curves 1 and 2 observed
        assert np.allclose(mean[0, ~late], 3.0)

    def test_never_observed_point_flagged(self):
        observed = np.ones((2, 1, 20), dtype=bool)
        observed[:, 0, 3] = False
        ds = make_ds(np.random.default_rng(0).standard_normal((2, 1, 20)), observed)
        _, defined = estimate_mean(ds)
        assert not defined[0, 3]
        assert defined[0, 4]


class TestStandardize:
    def test_idempotent_on_standardized_data(self):
        rng = np.random.default_rng(1)
        ds = make_ds(rng.standard_normal((200, 2, 15)))
        once = standardize(ds)
        twice = standardize(once)
        assert np.allclose(once.values, twice.values, atol=1e-10)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        vals = rng.standard_normal((50, 2, 15))
        a = standardize(make_ds(vals))
        b = standardize(make_ds(10.0 * vals))
        assert np.allclose(a.values, b.values, atol=1e-10)

    def test_constant_variable_rejected(self):
        vals = np.ones((5, 1, 10))
        with pytest.raises(DegenerateVarianceError):
            standardize(make_ds(vals))


class TestCovariance:
    def test_matches_dense_empirical_covariance(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_normal((40, 1, 12))
        cov = estimate_covariance(make_ds(vals))
        x = vals[:, 0, :]
        dense = (x - x.mean(0)).T @ (x - x.mean(0)) / 40.0     # divisor n
        assert np.allclose(cov.kernels[0, 0], dense, atol=1e-12)

    def test_two_point_symmetric_sample(self):
        c = np.sin(np.linspace(0, 2, 16))
        ds = make_ds(np.stack([c[None, :], -c[None, :]]))
        cov = estimate_covariance(ds)
        assert np.allclose(cov.kernels[0, 0], np.outer(c, c), atol=1e-12)

    def test_never_coobserved_entries_flagged_rest_match(self):
        rng = np.random.default_rng(4)
        vals = rng.standard_normal((30, 2, 10))
        observed = np.ones((30, 2, 10), dtype=bool)
        observed[:, 0, 2] = False          # point 2 of variable 0 never observed
        with pytest.warns(RuntimeWarning, match="zero-filled"):
            cov = estimate_covariance(make_ds(vals, observed))
        assert (cov.counts[0, 1][2, :] == 0).all()
        assert np.allclose(cov.kernels[0, 1][2, :], 0.0)
        full = estimate_covariance(make_ds(vals))
        keep = np.ones(10, dtype=bool)
        keep[2] = False
        assert np.allclose(cov.kernels[0, 1][np.ix_(keep, keep)],
                           full.kernels[0, 1][np.ix_(keep, keep)], atol=1e-12)

    def test_blockwise_symmetry_under_missingness(self):
        rng = np.random.default_rng(5)
        vals = rng.standard_normal((25, 3, 12))
        observed = rng.random((25, 3, 12)) > 0.2
        observed[:, :, 0] = True
        cov = estimate_covariance(make_ds(vals, observed))
        sym = cov.kernels.transpose(1, 0, 3, 2)
        assert np.allclose(cov.kernels, sym, atol=1e-12)

    def test_diagonal_only_zeroes_cross_blocks(self):
        rng = np.random.default_rng(6)
        cov = estimate_covariance(make_ds(rng.standard_normal((20, 3, 8))))
        diag = cov.diagonal_only()
        assert np.allclose(diag.kernels[0, 1], 0.0)
        assert np.allclose(diag.kernels[1, 1], cov.kernels[1, 1])


class TestAveragedKernel:
    def test_single_variable_passthrough(self):
        rng = np.random.default_rng(7)
        cov = estimate_covariance(make_ds(rng.standard_normal((20, 1, 9))))
        assert np.allclose(averaged_kernel(cov), cov.kernels[0, 0], atol=1e-14)

    def test_two_variable_average(self):
        rng = np.random.default_rng(8)
        cov = estimate_covariance(make_ds(rng.standard_normal((20, 2, 9))))
        expected = 0.5 * (cov.kernels[0, 0] + cov.kernels[1, 1])
        assert np.allclose(averaged_kernel(cov), expected, atol=1e-14)


class TestEigendecomposition:
    def test_rank_one_kernel(self):
        grid = Grid.regular(40)
        phi = np.sqrt(2) * np.sin(2 * np.pi * grid.points)
        phi = phi / np.sqrt(np.sum(grid.weights * phi ** 2))
        eig = eigendecompose_kernel(np.outer(phi, phi), grid)
        assert eig.values[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all(eig.values[1:] <= 1e-10)
        agree = min(np.abs(eig.functions[0] - phi).max(),
                    np.abs(eig.functions[0] + phi).max())
        assert agree < 1e-8

    def test_zero_kernel(self):
        grid = Grid.regular(20)
        eig = eigendecompose_kernel(np.zeros((20, 20)), grid)
        assert np.allclose(eig.values, 0.0)

    def test_non_symmetric_rejected(self):
        grid = Grid.regular(10)
        H = np.eye(10)
        H[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            eigendecompose_kernel(H, grid)

    def test_orthonormality_and_trace(self):
        rng = np.random.default_rng(9)
        grid = Grid.regular(30)
        A = rng.standard_normal((30, 30))
        H = A @ A.T / 30
        eig = eigendecompose_kernel(H, grid)
        G = (eig.functions * grid.weights) @ eig.functions.T
        assert np.abs(G - np.eye(30)).max() < 1e-8
        assert eig.values.sum() == pytest.approx(kernel_trace(H, grid), rel=1e-6)
        assert eigen_residual(H, eig, grid) < 1e-6

    def test_fourier_synthesis_subspace_recovery(self):
        # curves built from 3 Fourier components; empirical eigenfunctions
        # must span the same subspace at large n
        from funggm.simulate import make_adjacency, make_precisions, synthesize, GraphSpec
        adj = make_adjacency(GraphSpec(structure="banded", p=4, seed=0))
        theta, sigma = make_precisions(adj, 3)
        data, truth = synthesize(theta, sigma, adj, n=500, d=50, seed=42,
                                 refine=False)
        cov = estimate_covariance(data)
        grid = data.grid
        eig = eigendecompose_kernel(averaged_kernel(cov), grid)
        basis = fourier_basis(3, grid.points)
        # project each true basis function on the span of the top 3 estimates
        top = eig.functions[:3]
        G = (top * grid.weights) @ top.T
        for b in basis:
            coef = np.linalg.solve(G, (top * grid.weights) @ b)
            resid = b - coef @ top
            assert np.sum(grid.weights * resid ** 2) < 1e-2

    def test_sign_convention_deterministic(self):
        rng = np.random.default_rng(10)
        grid = Grid.regular(25)
        A = rng.standard_normal((25, 25))
        H = A @ A.T / 25
        e1 = eigendecompose_kernel(H, grid)
        e2 = eigendecompose_kernel(H.copy(), grid)
        assert np.array_equal(e1.functions, e2.functions)
        for row in e1.functions:
            nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())
            assert row[nz[0]] > 0


class TestSelectTruncation:
    def test_rank_one_spectrum(self):
        eig = EigenSystem(functions=np.zeros((3, 5)), values=np.array([1.0, 0, 0]),
                          L=3, explained=np.array([1.0, 1.0, 1.0]))
        assert select_truncation(eig, 0.9999) == 1

    def test_partial_mass(self):
        vals = np.array([3.0, 1.0, 1.0, 0.0])
        eig = EigenSystem(functions=np.zeros((4, 5)), values=vals, L=4,
                          explained=np.cumsum(vals) / vals.sum())
        assert select_truncation(eig, 0.79) == 2    # 4/5 >= 0.79 but 3/5 < 0.79

    def test_threshold_one_returns_full_positive_length(self):
        vals = np.array([2.0, 1.0, 0.5])
        eig = EigenSystem(functions=np.zeros((3, 5)), values=vals, L=3,
                          explained=np.cumsum(vals) / vals.sum())
        assert select_truncation(eig, 1.0) == 3

    def test_zero_spectrum_rejected(self):
        eig = EigenSystem(functions=np.zeros((2, 5)), values=np.zeros(2), L=2,
                          explained=np.zeros(2))
        with pytest.raises(DegenerateSpectrumError):
            select_truncation(eig, 0.9)
