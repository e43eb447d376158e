"""Bandwidth calibration and the block-average (histogram) estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, ScalarField, write_field


def _round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


@dataclass(frozen=True)
class Bandwidth:
    """Blocks of ``block`` consecutive grid indices per axis on a grid of ``N`` points."""

    block: int
    N: int

    def __post_init__(self):
        if int(self.block) != self.block or not 1 <= self.block <= self.N:
            raise ValueError(f"block must be an integer in [1, {self.N}], got {self.block}")

    @property
    def h(self) -> float:
        return self.block / self.N

    @property
    def blocks_per_axis(self) -> int:
        return -(-self.N // self.block)

    @property
    def complete_blocks_per_axis(self) -> int:
        return self.N // self.block


def calibrate_bandwidth(N: int, d: int, alpha: float, prefactor: float) -> Bandwidth:
    """Block size closest to ``prefactor * (log n / n)**(1 / (d + 2 alpha))``, clamped to [1, N]."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if prefactor <= 0:
        raise ValueError("prefactor must be positive")
    n = N**d
    h_star = prefactor * (math.log(n) / n) ** (1.0 / (d + 2 * alpha))
    b = min(max(_round_half_away(N * h_star), 1), N)
    return Bandwidth(b, N)


def target_bandwidth(N: int, d: int, alpha: float, prefactor: float) -> float:
    n = N**d
    return prefactor * (math.log(n) / n) ** (1.0 / (d + 2 * alpha))


def calibration_holds(bw: Bandwidth, d: int, alpha: float) -> bool:
    """Whether ``h**alpha > sqrt(log(1/h^d) / (n h^d))`` for this block size."""
    h = bw.h
    if h >= 1:
        return False
    return h**alpha > math.sqrt(math.log(h ** (-d)) / bw.block**d)


def _block_sums(arr: np.ndarray, b: int) -> tuple[np.ndarray, np.ndarray]:
    sums = arr.astype(float)
    counts = np.ones_like(sums)
    for ax in range(arr.ndim):
        starts = np.arange(0, arr.shape[ax], b)
        sums = np.add.reduceat(sums, starts, axis=ax)
        counts = np.add.reduceat(counts, starts, axis=ax)
    return sums, counts


@dataclass(frozen=True, eq=False)
class BlockField:
    """Block averages on a ``blocks_per_axis**d`` grid, with their provenance."""

    values: np.ndarray
    bandwidth: Bandwidth
    source: GridSpec
    counts: np.ndarray | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        shape = (self.bandwidth.blocks_per_axis,) * self.source.d
        if vals.shape != shape:
            raise ValueError(f"block values must have shape {shape}, got {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.source.d

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def block_of(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        """0-based block indices of points ``x`` (``(m, d)``) using ``((J-1)h, J h]`` cells."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        j = np.ceil(x * self.source.N / self.bandwidth.block - 1e-9).astype(np.int64) - 1
        j = np.clip(j, 0, self.bandwidth.blocks_per_axis - 1)
        return tuple(j[:, a] for a in range(self.d))

    def value_at(self, x: np.ndarray) -> np.ndarray:
        return self.values[self.block_of(x)]

    def cube_bounds(self) -> np.ndarray:
        """Per-axis block edges ``[0, h, 2h, ..., 1]``; the last block may be shorter."""
        bw = self.bandwidth
        edges = np.arange(bw.blocks_per_axis + 1) * bw.block / bw.N
        edges[-1] = 1.0
        return edges

    def save(self, path) -> None:
        write_field(path, self.values, self.d, self.bandwidth.blocks_per_axis,
                    kind="block_field", block=self.bandwidth.block, source_N=self.source.N)


def block_average(obs: ScalarField, bw: Bandwidth) -> BlockField:
    if bw.N != obs.grid.N:
        raise ValueError(f"bandwidth built for N={bw.N} but field has N={obs.grid.N}")
    sums, counts = _block_sums(obs.array, bw.block)
    return BlockField(sums / counts, bw, obs.grid, counts.astype(np.int64))


def sublevel_mask(est: BlockField, lam: float) -> np.ndarray:
    return est.values <= lam
