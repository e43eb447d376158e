"""Error metrics: bottleneck distance, sup-norm loss, KL divergence, the N_h
noise statistic and the sublevel-set sandwich check."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.special import ndtr

from .estimator import Bandwidth, BlockField, block_average, calibration_holds
from .grid import GridSpec, PersistenceDiagram, ScalarField
from .signals import Signal, sample_on_grid, signal_from_json

# bottleneck distance --------------------------------------------------------


@dataclass(frozen=True)
class Matching:
    """Pairs of ``(birth, death)`` tuples; ``None`` stands for the diagonal."""

    pairs: tuple
    cost: float


def _pair_cost(p, q) -> float:
    if p is None and q is None:
        return 0.0
    if p is None or q is None:
        b, d = p if q is None else q
        return (d - b) / 2
    return max(abs(p[0] - q[0]), abs(p[1] - q[1]))


def _linf(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(A[:, None, 0] - B[None, :, 0]), np.abs(A[:, None, 1] - B[None, :, 1]))


def _perfect_matching(A, B, dist, r):
    """A matching between finite point sets within cost ``r``, or None if none exists.

    Returns a list of ``(i, j)`` with ``-1`` meaning the diagonal.
    """
    m, n = len(A), len(B)
    small_a = (A[:, 1] - A[:, 0]) / 2 <= r
    small_b = (B[:, 1] - B[:, 0]) / 2 <= r
    edge = dist <= r
    # two points that may both sit on the diagonal never need each other
    edge &= ~(small_a[:, None] & small_b[None, :])
    live_a = ~small_a | edge.any(axis=1)
    live_b = ~small_b | edge.any(axis=0)
    ia, ib = np.flatnonzero(live_a), np.flatnonzero(live_b)
    E = edge[np.ix_(ia, ib)]
    if np.any(~E.any(axis=1) & ~small_a[ia]) or np.any(~E.any(axis=0) & ~small_b[ib]):
        return None
    p, q = len(ia), len(ib)
    if p + q == 0:
        return [(i, -1) for i in range(m)] + [(-1, j) for j in range(n)]
    # left: A then diagonal copies of B; right: B then diagonal copies of A
    ei, ej = np.nonzero(E)
    rows = [ei, np.flatnonzero(small_a[ia]), p + np.flatnonzero(small_b[ib]), p + ej]
    cols = [ej, q + np.flatnonzero(small_a[ia]), np.flatnonzero(small_b[ib]), q + ei]
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    G = sparse.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(p + q, q + p))
    match = maximum_bipartite_matching(G, perm_type="column")
    if np.any(match < 0):
        return None
    out = [(int(ia[i]), int(ib[match[i]]) if match[i] < q else -1) for i in range(p)]
    matched_b = {j for _, j in out if j >= 0}
    out += [(-1, j) for j in range(n) if j not in matched_b]
    out += [(i, -1) for i in range(m) if not live_a[i]]
    return out


def _finite_matching(A: np.ndarray, B: np.ndarray) -> Matching:
    A = np.asarray(A, dtype=float).reshape(-1, 2)
    B = np.asarray(B, dtype=float).reshape(-1, 2)
    if len(A) == 0 and len(B) == 0:
        return Matching((), 0.0)
    dist = _linf(A, B)
    half = np.concatenate([(A[:, 1] - A[:, 0]) / 2, (B[:, 1] - B[:, 0]) / 2])
    hi = half.max()
    cand = np.unique(np.concatenate([dist.ravel(), half, [0.0]]))
    cand = cand[cand <= hi]
    lo_i, hi_i = 0, len(cand) - 1
    best = _perfect_matching(A, B, dist, cand[hi_i])
    while lo_i < hi_i:
        mid = (lo_i + hi_i) // 2
        m = _perfect_matching(A, B, dist, cand[mid])
        if m is None:
            lo_i = mid + 1
        else:
            hi_i, best = mid, m
    pairs = tuple((tuple(A[i]) if i >= 0 else None, tuple(B[j]) if j >= 0 else None)
                  for i, j in best)
    return Matching(pairs, float(cand[hi_i]))


def _essential_matching(a: np.ndarray, b: np.ndarray) -> Matching:
    if len(a) != len(b):
        return Matching((), math.inf)
    a, b = np.sort(a), np.sort(b)
    pairs = tuple(((x, math.inf), (y, math.inf)) for x, y in zip(a.tolist(), b.tolist()))
    return Matching(pairs, float(np.max(np.abs(a - b))) if len(a) else 0.0)


def bottleneck_matching(D1: PersistenceDiagram, D2: PersistenceDiagram, degree: int) -> Matching:
    fin = _finite_matching(D1.finite(degree), D2.finite(degree))
    ess = _essential_matching(D1.essential(degree), D2.essential(degree))
    if math.isinf(ess.cost):
        return ess
    return Matching(fin.pairs + ess.pairs, max(fin.cost, ess.cost))


def bottleneck(D1: PersistenceDiagram, D2: PersistenceDiagram, degree: int = 0) -> float:
    """Exact bottleneck distance between the degree-``degree`` parts of two diagrams.

    Unequal numbers of essential classes give ``inf``.
    """
    ess = _essential_matching(D1.essential(degree), D2.essential(degree))
    if math.isinf(ess.cost):
        return math.inf
    return max(_finite_matching(D1.finite(degree), D2.finite(degree)).cost, ess.cost)


def bottleneck_all_degrees(D1: PersistenceDiagram, D2: PersistenceDiagram) -> float:
    degs = set(np.unique(D1.degrees).tolist()) | set(np.unique(D2.degrees).tolist())
    return max((bottleneck(D1, D2, s) for s in degs), default=0.0)


# estimation losses ----------------------------------------------------------

def _block_index(eval_N: int, bw: Bandwidth) -> np.ndarray:
    # point k / eval_N lies in block J = ceil(k N / (eval_N b)), 1-based
    k = np.arange(1, eval_N + 1, dtype=np.int64)
    J = -(-(k * bw.N) // (eval_N * bw.block))
    return np.minimum(J, bw.blocks_per_axis) - 1


def sup_norm_error(spec: Signal, est: BlockField, eval_N: int) -> float:
    """Max over the grid ``{k / eval_N}^d`` of ``|f(x) - est(x)|``."""
    if eval_N < est.source.N:
        raise ValueError("evaluation grid must be at least as fine as the observation grid")
    truth = sample_on_grid(spec, GridSpec(est.d, eval_N)).array
    j = _block_index(eval_N, est.bandwidth)
    approx = est.values[np.ix_(*([j] * est.d))]
    return float(np.max(np.abs(truth - approx)))


def kl_product_gaussians(spec1: Signal, spec0: Signal, grid: GridSpec, sigma: float) -> float:
    """KL divergence between the product Gaussian laws of observations of two signals."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    f1 = sample_on_grid(spec1, grid).values
    f0 = sample_on_grid(spec0, grid).values
    return float(np.sum((f1 - f0) ** 2) / (2 * sigma**2))


# the N_h statistic ----------------------------------------------------------

@dataclass(frozen=True)
class NhStatistic:
    value: float
    h: float
    d: int
    n: int
    block: int
    n_blocks: int


def noise_statistic(noise_field: ScalarField, bw: Bandwidth, sigma: float = 1.0) -> NhStatistic:
    """Largest normalised block mean of the standardised noise ``noise_field / sigma``.

    Only blocks holding the full ``b**d`` samples enter the maximum.
    """
    if bw.h >= 1:
        raise ValueError("N_h needs h < 1")
    if bw.N != noise_field.grid.N:
        raise ValueError("bandwidth and field disagree on N")
    d, b = noise_field.grid.d, bw.block
    nb = bw.complete_blocks_per_axis
    arr = noise_field.array[(slice(0, nb * b),) * d]
    if sigma > 0:
        arr = arr / sigma
    means = arr.reshape(sum(((nb, b) for _ in range(d)), ())).mean(axis=tuple(range(1, 2 * d, 2)))
    scale = math.sqrt(2 * math.log(bw.h ** (-d)) / b**d)
    return NhStatistic(float(np.max(np.abs(means)) / scale), bw.h, d, noise_field.grid.n, b, nb**d)


def nh_tail_bound(t: float, h: float, d: int) -> float:
    """Tail bound ``2 h**-d exp(-t**2 log(1/h**d))`` on ``P(N_h >= t)``."""
    logc = math.log(h ** (-d))
    return 2 * h ** (-d) * math.exp(-t * t * logc)


def noise_statistic_cdf(x, h: float, d: int, n_blocks: int):
    """Exact CDF of N_h for i.i.d. standard Gaussian noise."""
    s = math.sqrt(2 * math.log(h ** (-d)))
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, (2 * ndtr(np.maximum(x, 0) * s) - 1) ** n_blocks, 0.0)


# sandwich check --------------------------------------------------------------

@dataclass(frozen=True)
class SandwichReport:
    lam: float
    inner_ok: bool
    outer_ok: bool
    Nh: float
    shift: float
    radius: float
    calibration_ok: bool


@functools.lru_cache(maxsize=8)
def _raster(spec_json: str, oracle_N: int) -> np.ndarray:
    spec = signal_from_json(spec_json)
    c = (np.arange(oracle_N) + 0.5) / oracle_N
    axes = np.meshgrid(*([c] * spec.d), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    return spec.evaluate(pts).reshape((oracle_N,) * spec.d)


def _erode(mask: np.ndarray, r: float, px: float) -> np.ndarray:
    if mask.all() or not mask.any():
        return mask.copy()
    # distance from each inside pixel to the nearest outside pixel
    return ndimage.distance_transform_edt(mask, sampling=px) > r


def _dilate(mask: np.ndarray, r: float, px: float) -> np.ndarray:
    if mask.all() or not mask.any():
        return mask.copy()
    return ndimage.distance_transform_edt(~mask, sampling=px) <= r


def sandwich_check(spec: Signal, obs: ScalarField, bw: Bandwidth, lam: float,
                   oracle_N: int, sigma: float) -> SandwichReport:
    """Check ``F^{-r}_{lam - s} ⊂ est_lam ⊂ F^{r}_{lam + s}`` on a raster of side ``oracle_N``.

    ``r = sqrt(d) h`` and ``s = sqrt(2) sigma N_h h**alpha`` with N_h computed
    from the realised noise ``(obs - f) / sigma``. Both radii get one pixel
    diagonal of slack to absorb rasterisation.
    """
    d = spec.d
    if sigma > 0:
        eps = (obs.values - sample_on_grid(spec, obs.grid).values) / sigma
        Nh = noise_statistic(ScalarField(obs.grid, eps), bw).value
    else:
        Nh = 0.0
    h = bw.h
    shift = math.sqrt(2) * sigma * Nh * h**spec.alpha
    radius = math.sqrt(d) * h
    px = 1.0 / oracle_N
    slack = math.sqrt(d) * px

    f = _raster(spec.to_json(), oracle_N)
    est = block_average(obs, bw)
    idx = np.minimum(np.ceil((np.arange(oracle_N) + 0.5) * bw.N / (oracle_N * bw.block)).astype(np.int64),
                     bw.blocks_per_axis) - 1
    est_set = est.values[np.ix_(*([idx] * d))] <= lam

    inner = _erode(f <= lam - shift, radius + slack, px)
    outer = _dilate(f <= lam + shift, radius + slack, px)
    return SandwichReport(
        lam=float(lam),
        inner_ok=not bool(np.any(inner & ~est_set)),
        outer_ok=not bool(np.any(est_set & ~outer)),
        Nh=float(Nh), shift=shift, radius=radius,
        calibration_ok=calibration_holds(bw, d, spec.alpha),
    )
