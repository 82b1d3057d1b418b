import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funggm.grids import (
    DimensionError,
    DomainMask,
    EmptyDomainError,
    FunctionalDataset,
    Grid,
    inner_product,
    mask_weights,
    restrict,
    vector_inner_product,
)
from oracles import highres_inner_product


@pytest.fixture
def grid50():
    return Grid.regular(50)


def test_grid_invariants(grid50):
    assert grid50.points[0] == 0.0 and grid50.points[-1] == 1.0
    assert np.all(np.diff(grid50.points) > 0)
    assert abs(grid50.weights.sum() - 1.0) < 1e-12
    assert np.all(grid50.weights > 0)


def test_inner_product_constants(grid50):
    one = np.ones(50)
    assert inner_product(one, one, grid50) == pytest.approx(1.0, abs=1e-12)


def test_inner_product_left_half_mask(grid50):
    one = np.ones(50)
    mask = grid50.points <= 0.5
    # measure of the left half up to grid error O(1/d)
    assert inner_product(one, one, grid50, mask) == pytest.approx(0.5, abs=1.0 / 50)


def test_inner_product_fourier_orthogonality(grid50):
    f = np.sqrt(2) * np.sin(2 * np.pi * grid50.points)
    g = np.sqrt(2) * np.cos(2 * np.pi * grid50.points)
    oracle = highres_inner_product(lambda t: np.sqrt(2) * np.sin(2 * np.pi * t),
                                   lambda t: np.sqrt(2) * np.cos(2 * np.pi * t))
    assert abs(oracle) < 1e-9
    assert inner_product(f, g, grid50) == pytest.approx(oracle, abs=1e-3)


def test_inner_product_length_mismatch(grid50):
    with pytest.raises(DimensionError):
        inner_product(np.ones(10), np.ones(50), grid50)


@given(seed=st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_inner_product_symmetric_bilinear(seed):
    grid = Grid.regular(31)
    rng = np.random.default_rng(seed)
    f, g, h = rng.standard_normal((3, 31))
    a, b = rng.standard_normal(2)
    assert inner_product(f, g, grid) == pytest.approx(inner_product(g, f, grid), abs=1e-12)
    lhs = inner_product(a * f + b * h, g, grid)
    rhs = a * inner_product(f, g, grid) + b * inner_product(h, g, grid)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert inner_product(f, f, grid) >= 0


def test_vector_inner_product(grid50):
    F = np.ones((2, 50))
    assert vector_inner_product(F, F, grid50) == pytest.approx(2.0, abs=1e-12)
    F2 = F.copy()
    F2[1] = 0.0
    assert vector_inner_product(F2, F, grid50) == pytest.approx(1.0, abs=1e-12)


def test_vector_inner_product_matches_coordinate_sum(grid50):
    rng = np.random.default_rng(7)
    F, G = rng.standard_normal((2, 3, 50))
    total = sum(inner_product(F[j], G[j], grid50) for j in range(3))
    assert vector_inner_product(F, G, grid50) == pytest.approx(total, abs=1e-12)


def test_vector_inner_product_p_mismatch(grid50):
    with pytest.raises(DimensionError):
        vector_inner_product(np.ones((2, 50)), np.ones((3, 50)), grid50)


def test_restrict_full_mask_is_identity(grid50):
    f = np.sin(grid50.points)
    vals, w = restrict(f, DomainMask(np.ones(50, dtype=bool)), grid50)
    assert np.array_equal(vals, f)
    assert np.allclose(w, grid50.weights)


def test_restrict_single_run_measure():
    grid = Grid.regular(49)        # 0.25 and 0.75 are grid points
    obs = (grid.points >= 0.25) & (grid.points <= 0.75)
    vals, w = restrict(np.ones(49), DomainMask(obs), grid)
    # subdomain measure up to half a spacing per run boundary
    assert w.sum() == pytest.approx(0.5, abs=1.5 * grid.spacing)
    assert np.dot(vals * w, vals) == pytest.approx(0.5, abs=1.5 * grid.spacing)


def test_restrict_two_runs_additive(grid50):
    rng = np.random.default_rng(3)
    f = rng.standard_normal(50)
    run_a = np.zeros(50, dtype=bool)
    run_a[5:15] = True
    run_b = np.zeros(50, dtype=bool)
    run_b[30:45] = True
    both = run_a | run_b
    def sq_norm(mask):
        vals, w = restrict(f, DomainMask(mask), grid50)
        return float(np.dot(vals * w, vals))
    assert sq_norm(both) == pytest.approx(sq_norm(run_a) + sq_norm(run_b), abs=1e-12)


def test_restrict_empty_mask_rejected():
    with pytest.raises(EmptyDomainError):
        DomainMask(np.zeros(50, dtype=bool))


def test_disjoint_split_recovers_full_inner_product(grid50):
    # the observed/missing decomposition of the inner product is exact at
    # the quadrature level
    rng = np.random.default_rng(5)
    f, g = rng.standard_normal((2, 50))
    obs = np.ones(50, dtype=bool)
    obs[20:35] = False
    full = inner_product(f, g, grid50)
    parts = inner_product(f, g, grid50, obs) + inner_product(f, g, grid50, ~obs)
    assert parts == pytest.approx(full, abs=1e-12)


def test_mask_weights_partition_additivity(grid50):
    rng = np.random.default_rng(6)
    obs = rng.random(50) > 0.4
    obs[0] = True
    total = mask_weights(obs, grid50) + mask_weights(~obs, grid50)
    assert np.array_equal(total, grid50.weights)
    assert np.all(mask_weights(obs, grid50)[obs] > 0)


def test_dataset_sentinel_and_immutability(grid50):
    values = np.tile(np.sin(grid50.points), (3, 2, 1))
    observed = np.ones((3, 2, 50), dtype=bool)
    observed[0, 0, :10] = False
    ds = FunctionalDataset(values=values, observed=observed, grid=grid50)
    assert np.isnan(ds.values[0, 0, :10]).all()
    assert not np.isnan(ds.values[ds.observed]).any()
    with pytest.raises(ValueError):
        ds.values[0, 0, 0] = 1.0


def test_dataset_rejects_empty_curve(grid50):
    values = np.zeros((1, 1, 50))
    observed = np.zeros((1, 1, 50), dtype=bool)
    with pytest.raises(EmptyDomainError):
        FunctionalDataset(values=values, observed=observed, grid=grid50)
