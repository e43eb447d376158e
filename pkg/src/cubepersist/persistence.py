"""Sublevel-set persistence of top-cell valued cubical complexes.

Each input value sits on a top-dimensional cube; every lower cell takes the
minimum over the top cubes containing it. A sublevel set is then the union of
the *closed* cubes below the threshold, so cubes meeting at a single corner are
connected.

Cells live on the ``(2 s_1 + 1) x ... x (2 s_d + 1)`` grid: a coordinate is odd
along the axes the cell extends in, so a cell's dimension is its number of odd
coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import BlockField
from .grid import PersistenceDiagram, ScalarField

MAX_DIM = 3


@dataclass(frozen=True, eq=False)
class CubicalFiltration:
    shape: tuple[int, ...]
    values: np.ndarray  # per cell, flat over the full cell grid
    dims: np.ndarray
    order: np.ndarray  # cells sorted by (value, dim, index)
    rank: np.ndarray  # inverse permutation of order

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def full_shape(self) -> tuple[int, ...]:
        return tuple(2 * s + 1 for s in self.shape)

    @property
    def strides(self) -> tuple[int, ...]:
        fs = self.full_shape
        return tuple(int(np.prod(fs[a + 1:])) for a in range(self.d))

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    def cells_of_dim(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.dims == q)

    def faces(self, cells: np.ndarray) -> np.ndarray:
        """Codimension-one faces of equal-dimension ``cells`` as an ``(m, 2q)`` index array."""
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return np.empty((0, 0), dtype=np.int64)
        coords = np.unravel_index(cells, self.full_shape)
        out = []
        for a, stride in enumerate(self.strides):
            odd = (coords[a] % 2) == 1
            out.append(np.where(odd, cells - stride, -1))
            out.append(np.where(odd, cells + stride, -1))
        faces = np.stack(out, axis=1)
        q = int(self.dims[cells[0]])
        # keep the 2q real faces per row, preserving axis order
        keep = faces >= 0
        return faces[keep].reshape(len(cells), 2 * q)


def _top_values(source) -> np.ndarray:
    if isinstance(source, BlockField):
        return np.asarray(source.values, dtype=float)
    if isinstance(source, ScalarField):
        return source.array
    return np.asarray(source, dtype=float)


def build_filtration(source) -> CubicalFiltration:
    """Cubical filtration whose top cells carry the values of ``source``.

    ``source`` may be a :class:`ScalarField`, a :class:`BlockField` or any
    numeric array (top-cell grid of arbitrary shape).
    """
    top = _top_values(source)
    if top.ndim == 0:
        top = top.reshape(1)
    d = top.ndim
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"cubical persistence supports 1 <= d <= {MAX_DIM}, got d={d}")
    if top.size == 0:
        raise ValueError("empty field")
    if not np.all(np.isfinite(top)):
        raise ValueError("filtration values must be finite")
    full = np.full(tuple(2 * s + 1 for s in top.shape), np.inf)
    full[tuple(slice(1, None, 2) for _ in range(d))] = top
    for ax in range(d):
        f = np.moveaxis(full, ax, 0)  # view
        odd = f[1::2]
        even = np.full((odd.shape[0] + 1,) + odd.shape[1:], np.inf)
        even[:-1] = odd
        even[1:] = np.minimum(even[1:], odd)
        f[0::2] = even
    values = full.ravel()
    coords = np.indices(full.shape).reshape(d, -1)
    dims = (coords % 2).sum(axis=0).astype(np.int8)
    order = np.lexsort((np.arange(values.size), dims, values))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return CubicalFiltration(tuple(top.shape), values, dims, order, rank)


# pairing ------------------------------------------------------------------

@dataclass
class Pairing:
    """Birth/death cells (as ranks) plus unpaired (essential) creators."""

    pairs: list[tuple[int, int]]
    essential: list[int]
    positive: dict[int, np.ndarray]


def _reduce_columns(filt: CubicalFiltration, q: int, cleared: np.ndarray):
    """Reduce the boundary columns of ``q``-cells over Z/2 in filtration order.

    Columns whose rank is flagged in ``cleared`` are skipped: they are already
    known to reduce to zero. Returns ``(pivot_of, zero_cols)`` where
    ``pivot_of`` maps a (q-1)-cell rank to the rank of the column it kills.
    """
    cells = filt.cells_of_dim(q)
    col_rank = filt.rank[cells]
    srt = np.argsort(col_rank)
    cells, col_rank = cells[srt], col_rank[srt]
    live = ~cleared[col_rank]
    cells, col_rank = cells[live], col_rank[live]
    face_rank = filt.rank[filt.faces(cells)]
    lows = face_rank.max(axis=1).tolist()
    col_rank = col_rank.tolist()

    owner: dict[int, int] = {}  # low -> column position
    reduced: dict[int, set] = {}  # columns changed by additions
    zero_cols = []
    for j, low in enumerate(lows):
        if low not in owner:
            owner[low] = j
            continue
        col = set(face_rank[j].tolist())
        while True:
            k = owner[low]
            col.symmetric_difference_update(reduced[k] if k in reduced else face_rank[k].tolist())
            if not col:
                zero_cols.append(col_rank[j])
                break
            low = max(col)
            if low not in owner:
                owner[low] = j
                reduced[j] = col
                break
    pivot_of = {low: col_rank[j] for low, j in owner.items()}
    return pivot_of, zero_cols


def _union_find_h0(filt: CubicalFiltration):
    """Elder-rule union-find over edges. Returns (pairs, roots, cycle-creating edges)."""
    verts = filt.cells_of_dim(0)
    vid = np.full(filt.n_cells, -1, dtype=np.int64)
    vid[verts] = np.arange(verts.size)
    vrank = filt.rank[verts].tolist()

    edges = filt.cells_of_dim(1)
    erank = filt.rank[edges]
    srt = np.argsort(erank)
    edges, erank = edges[srt], erank[srt]
    ends = vid[filt.faces(edges)]
    us, vs = ends[:, 0].tolist(), ends[:, 1].tolist()
    erank = erank.tolist()

    parent = list(range(verts.size))
    pairs, cyc = [], []
    for u, v, er in zip(us, vs, erank):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        if u == v:
            cyc.append(er)
            continue
        if vrank[u] < vrank[v]:
            u, v = v, u
        # u is the younger root and dies here
        pairs.append((vrank[u], er))
        parent[u] = v
    roots = [vrank[i] for i in range(verts.size) if parent[i] == i]
    return pairs, roots, cyc


def persistence_pairing(filt: CubicalFiltration, h0: str = "union_find") -> Pairing:
    """All persistence pairs, zero-length ones included, as filtration ranks."""
    if h0 not in ("union_find", "reduction"):
        raise ValueError("h0 must be 'union_find' or 'reduction'")
    d = filt.d
    cleared = np.zeros(filt.n_cells, dtype=bool)
    pairs: list[tuple[int, int]] = []
    positive: dict[int, np.ndarray] = {}
    pivots_above: dict[int, dict] = {}
    lowest_q = 1 if h0 == "reduction" else 2
    for q in range(d, lowest_q - 1, -1):
        pivot_of, zero_cols = _reduce_columns(filt, q, cleared)
        pivots_above[q - 1] = pivot_of
        pairs.extend(pivot_of.items())
        cleared = np.zeros(filt.n_cells, dtype=bool)
        if pivot_of:
            cleared[np.fromiter(pivot_of.keys(), dtype=np.int64)] = True
        positive[q] = np.asarray(zero_cols, dtype=np.int64)
    if h0 == "union_find":
        uf_pairs, roots, cyc = _union_find_h0(filt)
        pairs.extend(uf_pairs)
        essential = list(roots)
        positive[1] = np.asarray(cyc, dtype=np.int64)
    else:
        killed = pivots_above.get(0, {})
        verts = filt.rank[filt.cells_of_dim(0)].tolist()
        essential = [v for v in verts if v not in killed]
        # positive edges: zero columns plus cleared ones (pivots of 2-cells)
        pos1 = list(positive.get(1, []))
        pos1 += list(pivots_above.get(1, {}).keys())
        positive[1] = np.asarray(pos1, dtype=np.int64)
    # essential classes in degrees 1..d-1: positive cells nobody kills
    for k in range(1, d):
        killed = pivots_above.get(k, {})
        pos = positive.get(k, np.empty(0, dtype=np.int64))
        if k >= 2:
            pos = np.concatenate([pos, np.fromiter(pivots_above.get(k, {}).keys(), dtype=np.int64)])
        essential.extend(int(c) for c in pos if int(c) not in killed)
    return Pairing(pairs, sorted(essential), positive)


def compute_persistence(filt: CubicalFiltration, h0: str = "union_find") -> PersistenceDiagram:
    """Persistence diagram in degrees ``0..d-1``; zero-length pairs are dropped."""
    pairing = persistence_pairing(filt, h0=h0)
    vals = filt.values[filt.order]
    dims = filt.dims[filt.order]
    degs, births, deaths = [], [], []
    if pairing.pairs:
        p = np.asarray(pairing.pairs, dtype=np.int64)
        b, dth = vals[p[:, 0]], vals[p[:, 1]]
        keep = b < dth
        degs.append(dims[p[keep, 0]])
        births.append(b[keep])
        deaths.append(dth[keep])
    if pairing.essential:
        e = np.asarray(pairing.essential, dtype=np.int64)
        degs.append(dims[e])
        births.append(vals[e])
        deaths.append(np.full(e.size, math.inf))
    if not degs:
        return PersistenceDiagram(dim=filt.d)
    return PersistenceDiagram(np.concatenate(degs), np.concatenate(births),
                              np.concatenate(deaths), dim=filt.d)


def diagram_of(source, h0: str = "union_find") -> PersistenceDiagram:
    return compute_persistence(build_filtration(source), h0=h0)


def cell_table(filt: CubicalFiltration, pairing: Pairing | None = None):
    """Rows ``(cell_id, dim, value, partner_id)`` for debugging; partner -1 when unpaired."""
    pairing = pairing or persistence_pairing(filt)
    partner = np.full(filt.n_cells, -1, dtype=np.int64)
    for a, b in pairing.pairs:
        ca, cb = filt.order[a], filt.order[b]
        partner[ca], partner[cb] = cb, ca
    return [(int(c), int(filt.dims[c]), float(filt.values[c]), int(partner[c]))
            for c in filt.order]


# independent Betti numbers -------------------------------------------------

def _gf2_rank(rows) -> int:
    pivots: dict[int, int] = {}
    rank = 0
    for v in rows:
        while v:
            hb = v.bit_length() - 1
            if hb in pivots:
                v ^= pivots[hb]
            else:
                pivots[hb] = v
                rank += 1
                break
    return rank


def betti_at(filt: CubicalFiltration, lam: float) -> list[int]:
    """Betti numbers ``b_0..b_d`` of the subcomplex at level ``lam`` by Z/2 rank counting."""
    fs = filt.full_shape
    d = filt.d
    members = np.flatnonzero(filt.values <= lam)
    by_dim = [members[filt.dims[members] == k] for k in range(d + 1)]
    index = [{int(c): i for i, c in enumerate(cells)} for cells in by_dim]

    def boundary_rows(k):
        # one bitmask per k-cell over the (k-1)-cells present
        rows = []
        for c in by_dim[k]:
            coord = np.unravel_index(int(c), fs)
            mask = 0
            for a in range(d):
                if coord[a] % 2:
                    for step in (-1, 1):
                        nb = list(coord)
                        nb[a] += step
                        mask ^= 1 << index[k - 1][int(np.ravel_multi_index(nb, fs))]
            rows.append(mask)
        return rows

    ranks = [0] * (d + 2)
    for k in range(1, d + 1):
        ranks[k] = _gf2_rank(boundary_rows(k))
    return [len(by_dim[k]) - ranks[k] - ranks[k + 1] for k in range(d + 1)]
