"""Reproducible Brownian ensembles and forward Euler paths on uniform grids.

Every trajectory draws from its own counter-based substream keyed by
(seed, trajectory index), so trajectory m is bit-identical no matter how many
trajectories are requested alongside it and generation parallelizes trivially.
Gaussians come from the inverse normal CDF applied to strictly-interior
uniforms, keeping the stream layout transparent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .exceptions import AllocationTooLarge, NonFiniteState

# trajectory substream tags; packed into the high bits of the Philox key word
MAIN_STREAM = 0
BRIDGE_STREAM = 1

DEFAULT_MAX_ELEMENTS = 2**27  # ~1 GiB of float64 per array

_HEADER = struct.Struct("<8sHHIQdQ")
_MAGIC = b"FBSDEENS"
_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Uniform partition of [0, T] into N steps of size h = T/N."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ValueError("step count N must be a positive integer")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.N + 1)


def _substream(seed: int, trajectory: int, stream: int) -> Generator:
    key = [np.uint64(seed), np.uint64(trajectory) | (np.uint64(stream) << np.uint64(56))]
    return Generator(Philox(key=key))


def _normals(gen: Generator, n: int) -> np.ndarray:
    # strictly interior uniforms -> ndtri never sees 0 or 1
    u = (gen.integers(0, 1 << 53, size=n) + 0.5) * 2.0**-53
    return ndtri(u)


def substream_normals(seed: int, n_trajectories: int, per_trajectory: int,
                      stream: int = MAIN_STREAM) -> np.ndarray:
    """(n_trajectories, per_trajectory) standard normals, one substream per row.

    Bit-identical to drawing each row from _substream(seed, row, stream); one
    bit-generator object is recycled by resetting its (counter, key) state,
    which skips numpy's per-construction entropy setup.
    """
    out = np.empty((n_trajectories, per_trajectory))
    bitgen = Philox(key=[np.uint64(0), np.uint64(0)])
    gen = Generator(bitgen)
    template = bitgen.state
    template["state"]["counter"][:] = 0
    key = template["state"]["key"]
    key[0] = np.uint64(seed)
    high = np.uint64(stream) << np.uint64(56)
    for m in range(n_trajectories):
        key[1] = np.uint64(m) | high
        bitgen.state = template
        out[m] = gen.integers(0, 1 << 53, size=per_trajectory)
    out += 0.5
    out *= 2.0**-53
    return ndtri(out, out=out)


def brownian_increments(
    grid: GridSpec,
    d: int,
    M: int,
    seed: int,
    max_elements: int = DEFAULT_MAX_ELEMENTS,
) -> np.ndarray:
    """(M, N, d) increments W_{t_{i+1}} - W_{t_i}, each coordinate N(0, h).

    Deterministic in (grid, d, M, seed); the first k trajectories agree with a
    fresh call at M = k.
    """
    if M < 1 or d < 1:
        raise ValueError("need M >= 1 and d >= 1")
    n_elements = M * grid.N * d
    if n_elements > max_elements:
        raise AllocationTooLarge(
            f"{n_elements} elements exceed the budget of {max_elements}; "
            "use iter_trajectory_blocks for a streaming pass"
        )
    z = substream_normals(seed, M, grid.N * d, MAIN_STREAM)
    return z.reshape(M, grid.N, d) * np.sqrt(grid.h)


@dataclass
class PathEnsemble:
    """Simulated increments plus the forward Euler states that consumed them."""

    grid: GridSpec
    d: int
    M: int
    seed: int
    dW: np.ndarray  # (M, N, d)
    X: np.ndarray   # (M, N+1, d)

    @property
    def x0(self) -> np.ndarray:
        return self.X[0, 0].copy()

    @cached_property
    def W(self) -> np.ndarray:
        """Brownian node values (M, N+1, d) with W_0 = 0."""
        w = np.zeros((self.M, self.grid.N + 1, self.d))
        np.cumsum(self.dW, axis=1, out=w[:, 1:, :])
        return w


def _apply_sigma(sigma_val: np.ndarray, dw: np.ndarray) -> np.ndarray:
    if sigma_val.ndim == 2:
        return dw @ sigma_val.T
    return np.einsum("mij,mj->mi", sigma_val, dw)


def euler_paths(problem, grid: GridSpec, increments: np.ndarray,
                x0: Optional[np.ndarray] = None, seed: int = 0) -> PathEnsemble:
    """Forward Euler: X_{i+1} = X_i + h b(t_i, X_i) + sigma(t_i, X_i) dW_i."""
    dW = np.asarray(increments, dtype=float)
    if dW.ndim != 3:
        raise ValueError("increments must have shape (M, N, d)")
    M, N, d = dW.shape
    if N != grid.N or d != problem.d:
        raise ValueError("increments disagree with the grid or problem dimension")
    start = np.asarray(problem.x0 if x0 is None else x0, dtype=float).reshape(d)
    X = np.empty((M, N + 1, d))
    X[:, 0, :] = start
    times = grid.times
    h = grid.h
    for i in range(N):
        xi = X[:, i, :]
        drift = np.asarray(problem.b(times[i], xi), dtype=float)
        diffusion = np.asarray(problem.sigma(times[i], xi), dtype=float)
        nxt = xi + h * drift + _apply_sigma(diffusion, dW[:, i, :])
        if not np.all(np.isfinite(nxt)):
            bad = np.argwhere(~np.isfinite(nxt))[0]
            raise NonFiniteState(
                f"non-finite state at trajectory {bad[0]}, step {i + 1}")
        X[:, i + 1, :] = nxt
    return PathEnsemble(grid=grid, d=d, M=M, seed=seed, dW=dW, X=X)


def sample_ensemble(problem, grid: GridSpec, M: int, seed: int,
                    max_elements: int = DEFAULT_MAX_ELEMENTS) -> PathEnsemble:
    """brownian_increments followed by euler_paths from the problem's x0."""
    dW = brownian_increments(grid, problem.d, M, seed, max_elements=max_elements)
    return euler_paths(problem, grid, dW, seed=seed)


def refine_increments(ensemble: PathEnsemble, first_step: int, substeps: int) -> np.ndarray:
    """Brownian-bridge refinement of coarse steps first_step..N-1 into substeps
    pieces each: (M, (N - first_step) * substeps, d) fine increments whose
    per-coarse-step sums reproduce the stored increments exactly.
    """
    r = int(substeps)
    if r < 1:
        raise ValueError("substeps must be >= 1")
    N = ensemble.grid.N
    if not 0 <= first_step < N:
        raise ValueError("first_step outside the grid")
    coarse = ensemble.dW[:, first_step:, :]  # (M, k, d)
    M, k, d = coarse.shape
    if r == 1:
        return coarse.copy()
    h_fine = ensemble.grid.h / r
    z = substream_normals(ensemble.seed, M, k * r * d, BRIDGE_STREAM)
    g = z.reshape(M, k, r, d) * np.sqrt(h_fine)
    # condition the free draws on the known coarse sum
    correction = (g.sum(axis=2) - coarse) / r
    fine = g - correction[:, :, None, :]
    return fine.reshape(M, k * r, d)


def save_ensemble(path, ensemble: PathEnsemble) -> None:
    """Flat binary dump: 40-byte header, then dW and X as little-endian f64."""
    header = _HEADER.pack(
        _MAGIC, _VERSION, ensemble.d, ensemble.grid.N,
        ensemble.M, ensemble.grid.T, ensemble.seed,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.dW, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.X, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, d, N, M, T, seed = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise ValueError("not an ensemble file (bad magic)")
        if version != _VERSION:
            raise ValueError(f"unsupported ensemble file version {version}")
        dW = np.fromfile(fh, dtype="<f8", count=M * N * d).reshape(M, N, d)
        X = np.fromfile(fh, dtype="<f8", count=M * (N + 1) * d).reshape(M, N + 1, d)
    grid = GridSpec(T=T, N=N)
    return PathEnsemble(grid=grid, d=d, M=M, seed=seed,
                        dW=dW.astype(float), X=X.astype(float))


def iter_trajectory_blocks(problem, grid: GridSpec, M: int, seed: int,
                           block_size: int = 4096) -> Iterator[PathEnsemble]:
    """Stream the ensemble in trajectory blocks, regenerating each block from
    (seed, trajectory) substreams; memory stays bounded by the block size."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    d = problem.d
    for start in range(0, M, block_size):
        stop = min(start + block_size, M)
        out = np.empty((stop - start, grid.N * d))
        for m in range(start, stop):
            out[m - start] = _normals(_substream(seed, m, MAIN_STREAM), grid.N * d)
        dW = out.reshape(stop - start, grid.N, d) * np.sqrt(grid.h)
        yield euler_paths(problem, grid, dW, seed=seed)
