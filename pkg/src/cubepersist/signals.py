"""Analytic test signals, grid sampling, Gaussian noise and known true diagrams.

Every family evaluates exactly at any point of ``[0, 1]^d``. On a jump the
value is the smaller of the one-sided limits, which makes each sublevel set
closed and the signal lower semicontinuous.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import ClassVar

import numpy as np

from .grid import GridSpec, PersistenceDiagram, ScalarField

_REGISTRY: dict[str, type] = {}

# relative slack when deciding whether a point lies on a circle
_EDGE_RTOL = 1e-12


def _register(cls):
    _REGISTRY[cls.variant] = cls
    return cls


def _on_circle(rho, r):
    return np.abs(rho - r) <= _EDGE_RTOL * max(r, 1.0)


class Signal:
    """Base class for analytic signals; subclasses are frozen dataclasses."""

    variant: ClassVar[str]

    @property
    def d(self) -> int:
        raise NotImplementedError

    @property
    def bound(self) -> float:
        """Sup-norm bound ``M``."""
        raise NotImplementedError

    @property
    def holder(self) -> float:
        """Hölder constant ``L`` on each regular piece."""
        raise NotImplementedError

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        out = {"variant": self.variant}
        for k, v in asdict(self).items():
            out[k] = [list(t) for t in v] if k == "centers" else (list(v) if isinstance(v, tuple) else v)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def with_alpha(self, alpha: float) -> "Signal":
        from dataclasses import replace
        return replace(self, alpha=alpha)


def signal_from_dict(doc: dict) -> Signal:
    doc = dict(doc)
    try:
        cls = _REGISTRY[doc.pop("variant")]
    except KeyError as exc:
        raise ValueError(f"unknown or missing signal variant: {exc}") from None
    if "centers" in doc:
        doc["centers"] = tuple(tuple(float(c) for c in p) for p in doc["centers"])
    if "radii" in doc:
        doc["radii"] = tuple(float(r) for r in doc["radii"])
    if "center" in doc:
        doc["center"] = tuple(float(c) for c in doc["center"])
    return cls(**doc)


def signal_from_json(text: str) -> Signal:
    return signal_from_dict(json.loads(text))


@_register
@dataclass(frozen=True)
class DiscBumps(Signal):
    """Alternating-sign cone bumps on disjoint discs inside the unit square.

    Disc ``i`` (counting from 1) carries ``(-1)**i * (2 - (|x - c_i| / r_i)**alpha)``,
    so the first disc is a well of depth -2 and the second a peak of height 2.
    """

    variant: ClassVar[str] = "DiscBumps"
    centers: tuple[tuple[float, float], ...]
    radii: tuple[float, ...]
    alpha: float = 1.0

    def __post_init__(self):
        if len(self.centers) != len(self.radii) or not self.radii:
            raise ValueError("DiscBumps needs one radius per centre and at least one disc")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        c = np.asarray(self.centers, dtype=float)
        r = np.asarray(self.radii, dtype=float)
        if c.shape != (len(r), 2) or np.any(r <= 0):
            raise ValueError("centres must be 2D points and radii positive")
        if self.frame_margin <= 0:
            raise ValueError("discs must stay strictly inside the unit square")
        if self.separation_margin <= 0:
            raise ValueError("discs must be pairwise disjoint")

    @property
    def frame_margin(self) -> float:
        c = np.asarray(self.centers)
        r = np.asarray(self.radii)
        return float(np.min(np.minimum(c, 1 - c).min(axis=1) - r))

    @property
    def separation_margin(self) -> float:
        c = np.asarray(self.centers)
        r = np.asarray(self.radii)
        if len(r) < 2:
            return math.inf
        gap = np.linalg.norm(c[:, None] - c[None], axis=2) - (r[:, None] + r[None])
        return float(gap[~np.eye(len(r), dtype=bool)].min())

    @property
    def d(self):
        return 2

    @property
    def bound(self):
        return 2.0

    @property
    def holder(self):
        return (1.0 / min(self.radii)) ** self.alpha

    @property
    def n_wells(self) -> int:
        return (len(self.radii) + 1) // 2

    @property
    def n_peaks(self) -> int:
        return len(self.radii) // 2

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(len(x))
        for i, (c, r) in enumerate(zip(self.centers, self.radii), start=1):
            rho = np.hypot(x[:, 0] - c[0], x[:, 1] - c[1])
            edge = _on_circle(rho, r)
            sign = -1.0 if i % 2 else 1.0
            # wells keep their -1 rim; peaks drop to the 0 background on the rim
            inside = (rho < r) | edge if sign < 0 else (rho < r) & ~edge
            out[inside] = sign * (2.0 - (rho[inside] / r) ** self.alpha)
        return out

    @classmethod
    def random(cls, k: int, alpha: float, rng: np.random.Generator,
               r_range=(0.05, 0.12), gap: float = 0.02, max_tries: int = 100_000) -> "DiscBumps":
        """Rejection-sample ``k`` discs with at least ``gap`` between discs and frame."""
        centers, radii = [], []
        for _ in range(max_tries):
            if len(radii) == k:
                break
            r = rng.uniform(*r_range)
            c = rng.uniform(r + gap, 1 - r - gap, size=2)
            if all(math.dist(c, c2) > r + r2 + gap for c2, r2 in zip(centers, radii)):
                centers.append((float(c[0]), float(c[1])))
                radii.append(float(r))
        else:
            raise RuntimeError(f"could not place {k} discs in {max_tries} draws")
        return cls(tuple(centers), tuple(radii), alpha)


# Drawn once with DiscBumps.random(8, 1.0, SeedStream(20240611).rng()) and frozen
# here so the layout never depends on the numpy version.
DEFAULT_DISC_CENTERS = (
    (0.9166178959747603, 0.5722275499020588),
    (0.32590402641382665, 0.21204026124643782),
    (0.5149557172556776, 0.8271790948509221),
    (0.265774111809621, 0.5064022917130022),
    (0.7159387463913521, 0.3365146570056111),
    (0.2334656749219981, 0.8369667751858516),
    (0.658851053947822, 0.13430560565618377),
    (0.524911631183098, 0.3914512479824416),
)
DEFAULT_DISC_RADII = (
    0.06327486280427609,
    0.10845703654172548,
    0.10502176347756637,
    0.09511408642519811,
    0.09741365055672785,
    0.09160911819375929,
    0.06948764537285665,
    0.08028563968426314,
)


def default_disc_bumps(alpha: float = 1.0) -> DiscBumps:
    return DiscBumps(DEFAULT_DISC_CENTERS, DEFAULT_DISC_RADII, alpha)


@_register
@dataclass(frozen=True)
class NestedDiscs(Signal):
    """Concentric rings with alternating sign; value ``|x - c|**alpha`` outside the last disc."""

    variant: ClassVar[str] = "NestedDiscs"
    radii: tuple[float, ...] = (1 / 12, 1 / 6, 1 / 4, 1 / 3, 1 / 2.2)
    alpha: float = 1.0
    center: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.size == 0 or np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("NestedDiscs radii must be positive and strictly increasing")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        c = np.asarray(self.center, dtype=float)
        if r[-1] >= np.min(np.minimum(c, 1 - c)):
            raise ValueError("outermost disc must stay off the frame")

    @property
    def d(self):
        return 2

    @property
    def bound(self):
        return max(1.0, math.sqrt(2) ** self.alpha)

    @property
    def holder(self):
        gaps = np.diff((0.0,) + tuple(self.radii))
        return (1.0 / min(self.radii)) ** self.alpha if gaps.min() > 0 else math.inf

    def _ring(self, i: int, rho):
        """Formula of ring ``i`` (1-based; ``p + 1`` is the outside region)."""
        p = len(self.radii)
        if i == 1:
            return -((rho / self.radii[0]) ** self.alpha)
        if i <= p:
            return (-1.0) ** i * (rho / self.radii[i - 1]) ** self.alpha
        return rho**self.alpha

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rho = np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1])
        ring = np.searchsorted(np.asarray(self.radii), rho, side="left") + 1
        out = np.empty(len(x))
        for i in range(1, len(self.radii) + 2):
            sel = ring == i
            out[sel] = self._ring(i, rho[sel])
        for i, r in enumerate(self.radii, start=1):
            edge = _on_circle(rho, r)
            if np.any(edge):
                out[edge] = np.minimum(self._ring(i, rho[edge]), self._ring(i + 1, rho[edge]))
        return out


@_register
@dataclass(frozen=True)
class LowerBoundBase(Signal):
    """``f0(x) = min(M, L) / (2 sqrt(d)) * |x_1|**alpha``."""

    variant: ClassVar[str] = "LowerBoundBase"
    M: float = 1.0
    L: float = 1.0
    alpha: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if self.M <= 0 or self.L <= 0 or not 0 < self.alpha <= 1 or self.dim < 1:
            raise ValueError("need M, L > 0, alpha in (0, 1] and dim >= 1")

    @property
    def d(self):
        return self.dim

    @property
    def scale(self) -> float:
        return min(self.M, self.L) / (2 * math.sqrt(self.dim))

    @property
    def bound(self):
        return self.M

    @property
    def holder(self):
        return self.L

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.scale * np.abs(x[:, 0]) ** self.alpha


@_register
@dataclass(frozen=True)
class LowerBoundBump(Signal):
    """``f0`` minus a cone-shaped dip of sup-radius ``h`` centred at ``m / floor(1/h) * (1,...,1)``."""

    variant: ClassVar[str] = "LowerBoundBump"
    M: float = 1.0
    L: float = 1.0
    alpha: float = 1.0
    dim: int = 1
    h: float = 0.1
    m: int = 1

    def __post_init__(self):
        if self.M <= 0 or self.L <= 0 or not 0 < self.alpha <= 1 or self.dim < 1:
            raise ValueError("need M, L > 0, alpha in (0, 1] and dim >= 1")
        if not 0 < self.h < 1:
            raise ValueError("h must lie in (0, 1)")
        if int(self.m) != self.m or not 0 < self.m < self.K:
            raise ValueError(f"m must be an integer in (0, {self.K})")

    @property
    def K(self) -> int:
        return math.floor(1 / self.h + 1e-12)

    @property
    def d(self):
        return self.dim

    @property
    def scale(self) -> float:
        return min(self.M, self.L) / (2 * math.sqrt(self.dim))

    @property
    def bound(self):
        return self.M

    @property
    def holder(self):
        return self.L

    @property
    def center(self) -> float:
        return self.m / self.K

    def bump(self, x) -> np.ndarray:
        """The non-negative dip ``f0 - f`` at ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.abs(x - self.center).max(axis=1)
        depth = 2 * self.scale
        return depth * np.clip(self.h**self.alpha - t**self.alpha, 0, None)

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.scale * np.abs(x[:, 0]) ** self.alpha - self.bump(x)


@_register
@dataclass(frozen=True)
class CosSineDisc(Signal):
    """``cos(2 pi x) sin(2 pi x)`` plus one on the open disc of radius sqrt(1/8) at the centre."""

    variant: ClassVar[str] = "CosSineDisc"
    alpha: float = 1.0

    @property
    def d(self):
        return 2

    @property
    def bound(self):
        return 1.5

    @property
    def holder(self):
        return 2 * math.pi

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        base = np.cos(2 * np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 0])
        q = (x[:, 0] - 0.5) ** 2 + (x[:, 1] - 0.5) ** 2
        # strict inequality: the rim takes the outside (lower) value
        return base + (q < 1 / 8)


@_register
@dataclass(frozen=True)
class OneDimCos(Signal):
    """``x cos(8 pi x)`` on the unit interval."""

    variant: ClassVar[str] = "OneDimCos"
    alpha: float = 1.0

    @property
    def d(self):
        return 1

    @property
    def bound(self):
        return 1.0

    @property
    def holder(self):
        return 1 + 8 * math.pi

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0] * np.cos(8 * np.pi * x[:, 0])


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"noise level must be finite and non-negative, got {self.sigma}")


def eval_exact(spec: Signal, x) -> float | np.ndarray:
    """Evaluate ``spec`` at one point (returns float) or at an ``(m, d)`` array of points."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    pts = arr.reshape(1, -1) if single else arr
    if spec.d == 1 and arr.ndim == 0:
        pts = arr.reshape(1, 1)
    if pts.shape[1] != spec.d:
        raise ValueError(f"{spec.variant} is {spec.d}-dimensional, got points of dimension {pts.shape[1]}")
    if np.any(pts < 0) or np.any(pts > 1):
        raise ValueError("evaluation points must lie in the unit cube")
    vals = spec.evaluate(pts)
    return float(vals[0]) if single else vals


def sample_on_grid(spec: Signal, grid: GridSpec) -> ScalarField:
    if grid.d != spec.d:
        raise ValueError(f"{spec.variant} is {spec.d}-dimensional but the grid has d={grid.d}")
    return ScalarField(grid, spec.evaluate(grid.points()))


def add_noise(fld: ScalarField, noise: NoiseModel, rng: np.random.Generator) -> ScalarField:
    z = rng.standard_normal(fld.grid.n)
    return ScalarField(fld.grid, fld.values + noise.sigma * z)


def true_diagram_closed_form(spec: Signal) -> PersistenceDiagram:
    """Exact diagram of families whose topology is known in closed form.

    For ``LowerBoundBump`` the dip bottoms out at ``c (m/K)^alpha - 2 c h^alpha``
    and joins the base slab at the cube's left face, ``c (m/K - h)^alpha``, with
    ``c = min(M, L) / (2 sqrt(d))``. With ``alpha = 1`` and ``L <= M`` this is
    the familiar ``{(0, inf), (c (m/K)^alpha - L h^alpha / sqrt(d),
    c (m/K)^alpha - c h^alpha)}`` as long as the dip stays above 0; a deeper
    dip (always the case for ``m = 1``) carries the essential class instead,
    and the base minimum at 0 is the one that dies.
    """
    inf = math.inf
    if isinstance(spec, LowerBoundBump):
        c = spec.scale
        birth = c * spec.center**spec.alpha - 2 * c * spec.h**spec.alpha
        death = c * max(spec.center - spec.h, 0.0) ** spec.alpha
        if birth < 0:
            pts = [(0, birth, inf)] + ([(0, 0.0, death)] if death > 0 else [])
        else:
            pts = [(0, 0.0, inf)] + ([(0, birth, death)] if birth < death else [])
        return PersistenceDiagram.from_points(pts, dim=spec.d)
    if isinstance(spec, LowerBoundBase):
        return PersistenceDiagram.from_points([(0, 0.0, inf)], dim=spec.d)
    if isinstance(spec, DiscBumps):
        # wells are born at -2 and merge through the 0 background; peaks leave
        # a hole from 0 (background closes around them) until their tip at 2
        pts = []
        if spec.n_wells:
            pts.append((0, -2.0, inf))
            pts += [(0, -2.0, 0.0)] * (spec.n_wells - 1)
        else:
            pts.append((0, 0.0, inf))
        pts += [(1, 0.0, 2.0)] * spec.n_peaks
        return PersistenceDiagram.from_points(pts, dim=2)
    raise TypeError(f"no closed-form diagram for {spec.variant}")


def has_closed_form(spec: Signal) -> bool:
    return isinstance(spec, (LowerBoundBase, LowerBoundBump, DiscBumps))


def true_diagram_oracle(spec: Signal, oracle_N: int, min_N: int = 800) -> PersistenceDiagram:
    """Diagram of the noiseless samples at resolution ``oracle_N``.

    Ground truth up to a discretisation error of order ``L * (sqrt(d) / oracle_N)**alpha``.
    """
    from .persistence import build_filtration, compute_persistence

    if oracle_N < min_N:
        raise ValueError(f"oracle resolution must be at least {min_N}, got {oracle_N}")
    fld = sample_on_grid(spec, GridSpec(spec.d, oracle_N))
    return compute_persistence(build_filtration(fld))


def oracle_tolerance(spec: Signal, oracle_N: int) -> float:
    return spec.holder * (math.sqrt(spec.d) / oracle_N) ** spec.alpha
