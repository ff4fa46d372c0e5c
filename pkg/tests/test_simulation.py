"""Brownian ensembles: determinism, substream independence, statistics,
Euler paths, bridge refinement and the binary dump format."""

import numpy as np
import pytest
from scipy import stats

from fbsde_pc import (
    AllocationTooLarge,
    GridSpec,
    NonFiniteState,
    brownian_increments,
    euler_paths,
    load_ensemble,
    sample_ensemble,
    save_ensemble,
)
from fbsde_pc.problems import FbsdeProblem, constant_problem, example2
from fbsde_pc.simulation import iter_trajectory_blocks, refine_increments


def brownian_problem(d=2):
    return constant_problem(value=1.0, d=d, diffusion=1.0)


class TestGridSpec:
    def test_step_size(self):
        grid = GridSpec(T=1.0, N=20)
        assert grid.h * grid.N == pytest.approx(grid.T, abs=1e-15)
        assert grid.times[0] == 0.0
        assert grid.times[-1] == 1.0

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(T=0.0, N=5)
        with pytest.raises(ValueError):
            GridSpec(T=1.0, N=0)


class TestBrownianIncrements:
    def test_bit_identical_given_seed(self):
        grid = GridSpec(T=1.0, N=8)
        a = brownian_increments(grid, 2, 64, seed=42)
        b = brownian_increments(grid, 2, 64, seed=42)
        assert np.array_equal(a, b)

    def test_substream_prefix_invariance(self):
        grid = GridSpec(T=1.0, N=6)
        big = brownian_increments(grid, 3, 10_000, seed=5)
        small = brownian_increments(grid, 3, 17, seed=5)
        assert np.array_equal(big[:17], small)

    def test_seed_changes_draws(self):
        grid = GridSpec(T=1.0, N=6)
        assert not np.array_equal(
            brownian_increments(grid, 1, 8, seed=0),
            brownian_increments(grid, 1, 8, seed=1),
        )

    def test_moments(self):
        grid = GridSpec(T=1.0, N=10)
        d, M = 2, 100_000
        dw = brownian_increments(grid, d, M, seed=3)
        n = dw.size
        # zero-mean Gaussian with variance h per entry
        assert abs(dw.mean()) <= 4.0 * np.sqrt(grid.h / n)
        assert dw.var() == pytest.approx(grid.h, rel=0.01)

    def test_kolmogorov_smirnov(self):
        grid = GridSpec(T=1.0, N=10)
        dw = brownian_increments(grid, 1, 100_000, seed=11)
        z = (dw / np.sqrt(grid.h)).ravel()
        assert z.size == 1_000_000
        stat, pvalue = stats.kstest(z, "norm")
        assert pvalue > 0.001

    def test_allocation_budget(self):
        grid = GridSpec(T=1.0, N=1000)
        with pytest.raises(AllocationTooLarge):
            brownian_increments(grid, 10, 10_000, seed=0, max_elements=10_000)


class TestEulerPaths:
    def test_degenerate_dynamics_constant(self):
        problem = constant_problem(d=2, diffusion=0.0)
        grid = GridSpec(T=1.0, N=5)
        dw = brownian_increments(grid, 2, 16, seed=0)
        ens = euler_paths(problem, grid, dw, x0=np.array([2.0, -1.0]))
        assert np.all(ens.X == np.array([2.0, -1.0]))

    def test_pure_drift_tracks_time(self):
        problem = FbsdeProblem(
            name="drift", d=2, T=1.0, x0=np.zeros(2),
            b=lambda t, x: np.ones_like(x),
            sigma=lambda t, x: np.zeros((2, 2)),
            f=lambda t, x, y, z: np.zeros(x.shape[0]),
            phi=lambda x: np.zeros(x.shape[0]),
        )
        grid = GridSpec(T=1.0, N=4)
        dw = brownian_increments(grid, 2, 8, seed=0)
        ens = euler_paths(problem, grid, dw)
        for i, t in enumerate(grid.times):
            assert ens.X[:, i, :] == pytest.approx(np.full((8, 2), t))

    def test_identity_diffusion_is_cumsum(self):
        problem = brownian_problem(d=2)
        grid = GridSpec(T=1.0, N=6)
        dw = brownian_increments(grid, 2, 32, seed=1)
        ens = euler_paths(problem, grid, dw, x0=np.zeros(2))
        assert ens.X[:, 1:, :] == pytest.approx(np.cumsum(dw, axis=1))
        assert ens.W[:, 1:, :] == pytest.approx(np.cumsum(dw, axis=1))

    def test_state_dependent_sigma_shape(self):
        problem = example2()
        grid = GridSpec(T=1.0, N=10)
        ens = sample_ensemble(problem, grid, 50, seed=2)
        assert ens.X.shape == (50, 11, 1)
        assert np.all(np.isfinite(ens.X))

    def test_non_finite_state_reported(self):
        problem = FbsdeProblem(
            name="blowup", d=1, T=1.0, x0=np.zeros(1),
            b=lambda t, x: np.full_like(x, np.inf if t > 0.4 else 0.0),
            sigma=lambda t, x: np.zeros((1, 1)),
            f=lambda t, x, y, z: np.zeros(x.shape[0]),
            phi=lambda x: np.zeros(x.shape[0]),
        )
        grid = GridSpec(T=1.0, N=4)
        dw = brownian_increments(grid, 1, 4, seed=0)
        with pytest.raises(NonFiniteState, match="step"):
            euler_paths(problem, grid, dw)


class TestBridgeRefinement:
    def test_fine_sums_reproduce_coarse_increments(self):
        problem = brownian_problem()
        grid = GridSpec(T=1.0, N=8)
        ens = sample_ensemble(problem, grid, 40, seed=9)
        fine = refine_increments(ens, first_step=5, substeps=7)
        assert fine.shape == (40, 21, 2)
        sums = fine.reshape(40, 3, 7, 2).sum(axis=2)
        assert sums == pytest.approx(ens.dW[:, 5:, :], abs=1e-12)

    def test_single_substep_returns_coarse(self):
        problem = brownian_problem()
        grid = GridSpec(T=1.0, N=4)
        ens = sample_ensemble(problem, grid, 10, seed=9)
        fine = refine_increments(ens, first_step=2, substeps=1)
        assert np.array_equal(fine, ens.dW[:, 2:, :])

    def test_fine_increment_variance(self):
        problem = brownian_problem(d=1)
        grid = GridSpec(T=1.0, N=2)
        ens = sample_ensemble(problem, grid, 30_000, seed=1)
        r = 4
        fine = refine_increments(ens, first_step=0, substeps=r)
        h_f = grid.h / r
        # bridge increments have variance h_f (unconditionally)
        assert fine.var() == pytest.approx(h_f, rel=0.02)

    def test_deterministic(self):
        problem = brownian_problem()
        grid = GridSpec(T=1.0, N=4)
        ens = sample_ensemble(problem, grid, 12, seed=3)
        assert np.array_equal(refine_increments(ens, 1, 5), refine_increments(ens, 1, 5))


class TestDumpLoad:
    def test_roundtrip(self, tmp_path):
        problem = brownian_problem()
        grid = GridSpec(T=0.5, N=6)
        ens = sample_ensemble(problem, grid, 25, seed=77)
        path = tmp_path / "ens.bin"
        save_ensemble(path, ens)
        again = load_ensemble(path)
        assert again.grid == ens.grid
        assert again.d == ens.d and again.M == ens.M and again.seed == ens.seed
        assert np.array_equal(again.dW, ens.dW)
        assert np.array_equal(again.X, ens.X)

    def test_header_layout(self, tmp_path):
        problem = brownian_problem()
        grid = GridSpec(T=0.5, N=6)
        ens = sample_ensemble(problem, grid, 3, seed=8)
        path = tmp_path / "ens.bin"
        save_ensemble(path, ens)
        raw = path.read_bytes()
        assert raw[:8] == b"FBSDEENS"
        assert len(raw) == 40 + 8 * (ens.dW.size + ens.X.size)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_ensemble(path)


class TestStreaming:
    def test_blocks_match_dense_ensemble(self):
        problem = brownian_problem()
        grid = GridSpec(T=1.0, N=5)
        dense = sample_ensemble(problem, grid, 103, seed=6)
        got = [blk.X for blk in iter_trajectory_blocks(problem, grid, 103, seed=6,
                                                       block_size=40)]
        assert np.array_equal(np.concatenate(got, axis=0), dense.X)
