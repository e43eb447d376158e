"""Grids, scalar fields, persistence diagrams and seeded random streams.

Grid points sit at ``k / N`` for ``k in {1..N}`` along every axis, so a run of
``b`` consecutive indices covers a cube of side ``b / N`` holding exactly
``b**d`` samples. Values are stored row-major with the first axis slowest.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"CPF1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"grid dimension must be a positive integer, got {self.d!r}")
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"grid needs N >= 2 samples per axis, got {self.N!r}")

    @property
    def n(self) -> int:
        return self.N**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    def index_to_point(self, k: Sequence[int]) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k))
        if k.shape != (self.d,):
            raise ValueError(f"expected a {self.d}-index, got shape {k.shape}")
        if np.any(k < 1) or np.any(k > self.N) or not np.all(k == np.round(k)):
            raise ValueError(f"index {tuple(k.tolist())} outside {{1..{self.N}}}^{self.d}")
        return k.astype(float) / self.N

    def point_to_nearest_index(self, x: Sequence[float]) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        k = np.clip(np.floor(x * self.N + 0.5).astype(int), 1, self.N)
        return tuple(int(v) for v in k)

    def axis(self) -> np.ndarray:
        return np.arange(1, self.N + 1) / self.N

    def points(self) -> np.ndarray:
        """All grid points as an ``(n, d)`` array in storage order."""
        axes = np.meshgrid(*([self.axis()] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)


def index_to_point(grid: GridSpec, k: Sequence[int]) -> np.ndarray:
    return grid.index_to_point(k)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Samples of a signal (or noisy observations) on a :class:`GridSpec`."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size != self.grid.n:
            raise ValueError(f"field needs {self.grid.n} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_array(cls, arr) -> "ScalarField":
        arr = np.asarray(arr, dtype=float)
        if len(set(arr.shape)) != 1:
            raise ValueError(f"field array must be cubic, got shape {arr.shape}")
        return cls(GridSpec(arr.ndim, arr.shape[0]), arr.ravel())

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class DiagramPoint:
    birth: float
    death: float
    degree: int

    def __post_init__(self):
        if not self.birth < self.death:
            raise ValueError(f"diagram point needs birth < death, got ({self.birth}, {self.death})")
        if self.degree < 0:
            raise ValueError("homology degree must be non-negative")

    @property
    def essential(self) -> bool:
        return math.isinf(self.death)

    @property
    def persistence(self) -> float:
        return self.death - self.birth


class PersistenceDiagram:
    """Multiset of (degree, birth, death) triples; essential classes have death ``inf``."""

    def __init__(self, degrees=(), births=(), deaths=(), dim: int | None = None):
        self.degrees = np.asarray(degrees, dtype=np.int64).ravel()
        self.births = np.asarray(births, dtype=float).ravel()
        self.deaths = np.asarray(deaths, dtype=float).ravel()
        if not (self.degrees.size == self.births.size == self.deaths.size):
            raise ValueError("degree, birth and death arrays differ in length")
        if np.any(~(self.births < self.deaths)):
            raise ValueError("every diagram point needs birth < death")
        if np.any(~np.isfinite(self.births)) or np.any(np.isneginf(self.deaths)):
            raise ValueError("births must be finite and deaths finite or +inf")
        order = np.lexsort((self.deaths, self.births, self.degrees))
        self.degrees, self.births, self.deaths = (
            self.degrees[order], self.births[order], self.deaths[order])
        for a in (self.degrees, self.births, self.deaths):
            a.setflags(write=False)
        self.dim = dim

    @classmethod
    def from_points(cls, points: Iterable[DiagramPoint | tuple], dim: int | None = None):
        degs, bs, ds = [], [], []
        for p in points:
            if isinstance(p, DiagramPoint):
                p = (p.degree, p.birth, p.death)
            degs.append(p[0])
            bs.append(p[1])
            ds.append(p[2])
        return cls(degs, bs, ds, dim=dim)

    def __len__(self):
        return int(self.degrees.size)

    def __iter__(self):
        for s, b, d in zip(self.degrees, self.births, self.deaths):
            yield DiagramPoint(float(b), float(d), int(s))

    def __eq__(self, other):
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return (np.array_equal(self.degrees, other.degrees)
                and np.array_equal(self.births, other.births)
                and np.array_equal(self.deaths, other.deaths))

    def __repr__(self):
        pts = ", ".join(f"H{s}({b:.6g}, {d:.6g})" for s, b, d in
                        zip(self.degrees, self.births, self.deaths))
        return f"PersistenceDiagram([{pts}])"

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if len(self) else -1

    def in_degree(self, s: int) -> np.ndarray:
        """``(m, 2)`` array of (birth, death) pairs of degree ``s``."""
        sel = self.degrees == s
        return np.column_stack([self.births[sel], self.deaths[sel]])

    def finite(self, s: int) -> np.ndarray:
        pts = self.in_degree(s)
        return pts[np.isfinite(pts[:, 1])]

    def essential(self, s: int) -> np.ndarray:
        pts = self.in_degree(s)
        return pts[np.isinf(pts[:, 1]), 0]

    def betti_at(self, lam: float) -> dict[int, int]:
        active = (self.births <= lam) & (lam < self.deaths)
        return {int(s): int(np.sum(active & (self.degrees == s))) for s in np.unique(self.degrees)}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["degree", "birth", "death"])
        for s, b, d in zip(self.degrees, self.births, self.deaths):
            w.writerow([int(s), repr(float(b)), "inf" if math.isinf(d) else repr(float(d))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "PersistenceDiagram":
        """Parse diagram CSV from a path or from CSV text containing a header line."""
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
            text = Path(source).read_text()
        else:
            text = source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["degree", "birth", "death"]:
            raise ValueError("diagram CSV must start with header 'degree,birth,death'")
        degs, bs, ds = [], [], []
        for row in rows[1:]:
            if not row:
                continue
            degs.append(int(row[0]))
            bs.append(float(row[1]))
            ds.append(float(row[2]))  # float("inf") parses the literal
        return cls(degs, bs, ds)


@dataclass(frozen=True)
class SeedStream:
    """Master seed plus a derivation path; ``rng(path)`` yields independent generators."""

    master_seed: int
    path: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) % 2**64)
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def child(self, *path: int) -> "SeedStream":
        return SeedStream(self.master_seed, self.path + tuple(path))

    def seed_sequence(self, *path: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=self.path + tuple(path))

    def rng(self, *path: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence(*path)))

    def derived_seed(self, *path: int) -> int:
        """A 64-bit integer fingerprint of the stream at ``path`` (for logging)."""
        lo, hi = self.seed_sequence(*path).generate_state(2, dtype=np.uint32)
        return int(lo) | (int(hi) << 32)


def derive_rng(stream: SeedStream, path: Sequence[int] = ()) -> np.random.Generator:
    return stream.rng(*path)


# binary field format ------------------------------------------------------

def write_field(path, values: np.ndarray, d: int, N: int, **meta) -> None:
    """Write ``CPF1`` binary (little-endian float64) plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    vals = np.ascontiguousarray(np.asarray(values, dtype="<f8").ravel())
    if vals.size != N**d:
        raise ValueError(f"expected {N**d} values for d={d}, N={N}, got {vals.size}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, N, 0))
        fh.write(vals.tobytes())
    side = {"magic": MAGIC.decode(), "d": int(d), "N": int(N), "dtype": "float64-le"}
    side.update(meta)
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_field(path) -> tuple[np.ndarray, dict]:
    """Return ``(values shaped (N,)*d, metadata)``; metadata merges header and sidecar."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, d, N, _ = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * N**d:
        raise ValueError(f"{path}: expected {N**d} float64 values, got {len(body) // 8}")
    vals = np.frombuffer(body, dtype="<f8").astype(float).reshape((N,) * d)
    meta = {"d": d, "N": N}
    side = Path(str(path) + ".json")
    if side.exists():
        extra = json.loads(side.read_text())
        if extra.get("d", d) != d or extra.get("N", N) != N:
            raise ValueError(f"{side}: sidecar disagrees with binary header")
        meta.update(extra)
    return vals, meta


def save_scalar_field(path, fld: ScalarField, **meta) -> None:
    write_field(path, fld.values, fld.grid.d, fld.grid.N, **meta)


def load_scalar_field(path) -> ScalarField:
    vals, _ = read_field(path)
    return ScalarField.from_array(vals)
